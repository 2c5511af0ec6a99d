//! Mask-fill scorer interface and the deterministic synthetic scorer.
//!
//! # Synthetic scoring scheme
//!
//! For model `m`, sentence `s`, masked position `i` and vocabulary word `w`:
//!
//! 1. Hash with [`StableHasher`]: `m`, then for offsets `-2, -1, +1, +2` the
//!    lowercased token at `i + offset` (or `<pad>` outside the sentence),
//!    then `w`. Every field is written as a string.
//! 2. `logit(w) = (hash >> 11) · 2⁻⁵³ · 8`, a value in `[0, 8)`.
//! 3. `p(w) = exp(logit(w) − max) / Σ_v exp(logit(v) − max)` over the
//!    vocabulary in its configured order, using `libm::exp` so the result is
//!    bit-identical on every platform.
//!
//! The masked token itself never enters the hash.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::StableHasher;
use crate::lexical::Lexicon;
use crate::types::WordClass;

/// A mask-fill candidate with its probability under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub token: String,
    #[serde(rename = "prob")]
    pub probability: f64,
    /// Set by scorers whose tokenizer produced a subword continuation piece.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub fragment: bool,
}

/// Result of scoring one specific token at a masked position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TokenScore {
    Probability(f64),
    NotInVocab,
}

impl TokenScore {
    pub fn probability(self) -> Option<f64> {
        match self {
            TokenScore::Probability(p) => Some(p),
            TokenScore::NotInVocab => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScorerError {
    #[error("SCORER_UNAVAILABLE: {0}")]
    Unavailable(String),
    #[error("SCORER_PROTOCOL: {0}")]
    Protocol(String),
    #[error("POSITION_OUT_OF_RANGE: position {position} in a sentence of {len} tokens")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("top_k must be at least 1")]
    InvalidTopK,
}

/// A masked language model seen through the fill/score interface.
pub trait MaskFillScorer {
    fn model_id(&self) -> &str;

    /// At most `top_k` candidates, by probability descending, ties broken by token.
    fn fill_mask(
        &self,
        sentence: &[String],
        position: usize,
        top_k: usize,
    ) -> Result<Vec<ScoredCandidate>, ScorerError>;

    fn score_token(
        &self,
        sentence: &[String],
        position: usize,
        token: &str,
    ) -> Result<TokenScore, ScorerError>;
}

/// Sorts candidates into the canonical fill order.
pub fn sort_candidates(candidates: &mut [ScoredCandidate]) {
    candidates.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.token.cmp(&b.token))
    });
}

pub fn check_position(sentence: &[String], position: usize) -> Result<(), ScorerError> {
    if position >= sentence.len() {
        return Err(ScorerError::PositionOutOfRange {
            position,
            len: sentence.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ScorerKind {
    Synthetic,
    Remote,
}

/// A configured scorer: identity, architecture metadata and backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub id: String,
    pub architecture: String,
    pub size_tag: String,
    pub kind: ScorerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RosterError {
    #[error("scorer roster is empty")]
    Empty,
    #[error("REMOTE scorer {0:?} requires an endpoint")]
    MissingEndpoint(String),
    #[error("scorer id {0:?} is listed twice")]
    DuplicateId(String),
    #[error("architecture/size pair ({0}, {1}) is listed twice")]
    DuplicateArchitecture(String, String),
}

pub fn validate_roster(models: &[ScorerModel]) -> Result<(), RosterError> {
    if models.is_empty() {
        return Err(RosterError::Empty);
    }
    let mut ids = BTreeSet::new();
    let mut archs = BTreeSet::new();
    for m in models {
        if m.kind == ScorerKind::Remote && m.endpoint.is_none() {
            return Err(RosterError::MissingEndpoint(m.id.clone()));
        }
        if !ids.insert(m.id.as_str()) {
            return Err(RosterError::DuplicateId(m.id.clone()));
        }
        if !archs.insert((m.architecture.as_str(), m.size_tag.as_str())) {
            return Err(RosterError::DuplicateArchitecture(
                m.architecture.clone(),
                m.size_tag.clone(),
            ));
        }
    }
    Ok(())
}

/// Words the synthetic scorer can propose, each with its word class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<(String, WordClass)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabularyError {
    #[error("vocabulary is empty")]
    Empty,
    #[error("vocabulary line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("vocabulary word {0:?} is listed twice")]
    Duplicate(String),
}

impl Vocabulary {
    pub fn new(words: Vec<(String, WordClass)>) -> Result<Self, VocabularyError> {
        if words.is_empty() {
            return Err(VocabularyError::Empty);
        }
        let mut seen = BTreeSet::new();
        let words: Vec<_> = words
            .into_iter()
            .map(|(w, c)| (w.to_lowercase(), c))
            .collect();
        for (w, _) in &words {
            if !seen.insert(w.clone()) {
                return Err(VocabularyError::Duplicate(w.clone()));
            }
        }
        Ok(Vocabulary { words })
    }

    /// Same `surface<TAB>class` format as the lexicon; one reading per word.
    pub fn parse(text: &str) -> Result<Self, VocabularyError> {
        let mut words = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((w, c)) = line.split_once('\t') else {
                return Err(VocabularyError::Line {
                    line: n + 1,
                    reason: "expected surface<TAB>class".into(),
                });
            };
            let class = c.parse().map_err(|e: crate::types::UnknownWordClass| {
                VocabularyError::Line {
                    line: n + 1,
                    reason: e.to_string(),
                }
            })?;
            words.push((w.trim().to_string(), class));
        }
        Self::new(words)
    }

    pub fn words(&self) -> &[(String, WordClass)] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn position(&self, word: &str) -> Option<usize> {
        let lower = word.to_lowercase();
        self.words.iter().position(|(w, _)| *w == lower)
    }

    /// Adds every vocabulary word the lexicon knows neither directly nor
    /// through its lemma.
    pub fn extend_lexicon(&self, lexicon: &mut Lexicon) {
        for (w, c) in &self.words {
            let lemma = crate::lexical::lemmatize(w, Some(lexicon));
            if !lexicon.contains(w) && !lexicon.contains(&lemma) {
                lexicon.insert(w, *c);
            }
        }
    }
}

pub const PAD_TOKEN: &str = "<pad>";
const LOGIT_SCALE: f64 = 8.0;
const CONTEXT_OFFSETS: [isize; 4] = [-2, -1, 1, 2];

/// Hash-based scorer with a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct SyntheticScorer {
    model_id: String,
    vocabulary: Vocabulary,
}

impl SyntheticScorer {
    pub fn new(model_id: impl Into<String>, vocabulary: Vocabulary) -> Self {
        SyntheticScorer {
            model_id: model_id.into(),
            vocabulary,
        }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    fn context_hasher(&self, sentence: &[String], position: usize) -> StableHasher {
        let mut h = StableHasher::new();
        h.str(&self.model_id);
        for off in CONTEXT_OFFSETS {
            let token = position
                .checked_add_signed(off)
                .and_then(|j| sentence.get(j))
                .map(|t| t.to_lowercase());
            h.str(token.as_deref().unwrap_or(PAD_TOKEN));
        }
        h
    }

    /// Probability of every vocabulary word, in vocabulary order.
    pub fn distribution(&self, sentence: &[String], position: usize) -> Result<Vec<f64>, ScorerError> {
        check_position(sentence, position)?;
        let base = self.context_hasher(sentence, position);
        let logits: Vec<f64> = self
            .vocabulary
            .words
            .iter()
            .map(|(w, _)| {
                let mut h = base.clone();
                let bits = h.str(w).finish() >> 11;
                bits as f64 * (1.0 / (1u64 << 53) as f64) * LOGIT_SCALE
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| libm::exp(l - max)).collect();
        let total: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / total).collect())
    }
}

impl fmt::Display for SyntheticScorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "synthetic:{} ({} words)", self.model_id, self.vocabulary.len())
    }
}

impl MaskFillScorer for SyntheticScorer {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn fill_mask(
        &self,
        sentence: &[String],
        position: usize,
        top_k: usize,
    ) -> Result<Vec<ScoredCandidate>, ScorerError> {
        if top_k == 0 {
            return Err(ScorerError::InvalidTopK);
        }
        let probs = self.distribution(sentence, position)?;
        let mut candidates: Vec<ScoredCandidate> = self
            .vocabulary
            .words
            .iter()
            .zip(probs)
            .map(|((w, _), p)| ScoredCandidate {
                token: w.clone(),
                probability: p,
                fragment: false,
            })
            .collect();
        sort_candidates(&mut candidates);
        candidates.truncate(top_k);
        Ok(candidates)
    }

    fn score_token(
        &self,
        sentence: &[String],
        position: usize,
        token: &str,
    ) -> Result<TokenScore, ScorerError> {
        check_position(sentence, position)?;
        let Some(idx) = self.vocabulary.position(token) else {
            return Ok(TokenScore::NotInVocab);
        };
        Ok(TokenScore::Probability(self.distribution(sentence, position)?[idx]))
    }
}

impl<T: MaskFillScorer + ?Sized> MaskFillScorer for &T {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn fill_mask(
        &self,
        sentence: &[String],
        position: usize,
        top_k: usize,
    ) -> Result<Vec<ScoredCandidate>, ScorerError> {
        (**self).fill_mask(sentence, position, top_k)
    }

    fn score_token(
        &self,
        sentence: &[String],
        position: usize,
        token: &str,
    ) -> Result<TokenScore, ScorerError> {
        (**self).score_token(sentence, position, token)
    }
}

/// The vocabulary shipped for hermetic runs.
pub const DEFAULT_SYNTHETIC_VOCABULARY: &str = include_str!("../data/synthetic_vocabulary.tsv");

pub fn default_vocabulary() -> Vocabulary {
    Vocabulary::parse(DEFAULT_SYNTHETIC_VOCABULARY).expect("shipped vocabulary is well-formed")
}

impl ScorerModel {
    pub fn synthetic(id: &str, architecture: &str, size_tag: &str) -> Self {
        ScorerModel {
            id: id.to_string(),
            architecture: architecture.to_string(),
            size_tag: size_tag.to_string(),
            kind: ScorerKind::Synthetic,
            endpoint: None,
        }
    }
}
