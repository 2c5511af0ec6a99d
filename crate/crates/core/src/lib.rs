//! Allocation-only core of the merge pipeline.
//!
//! Generates minimal, reasoning-preserving variants of NLI problems by
//! replacing open-class words shared between premise and hypothesis with
//! masked-LM suggestions, and scores NLI predictions on those variants with
//! Sample Accuracy and Pattern Accuracy.
//!
//! The crate is `no_std` and needs only `alloc`. Everything that touches
//! files, the network or threads lives in the `merge-cli` crate, which talks
//! to this one through the [`scorer::MaskFillScorer`] and
//! [`lexical::Tagger`] traits.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod evaluation;
pub mod hash;
pub mod lexical;
pub mod scorer;
pub mod stats;
pub mod suggestion;
pub mod types;
pub mod variant;

pub use types::{Label, NliProblem, SharedWord, TaggedSentence, Variant, WordClass};
