//! Shared domain types and their validation.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gold or predicted inference label. Files carry the single letters `E`, `C`, `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "E")]
    Entailment,
    #[serde(rename = "C")]
    Contradiction,
    #[serde(rename = "N")]
    Neutral,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Contradiction, Label::Neutral];

    pub fn as_char(self) -> char {
        match self {
            Label::Entailment => 'E',
            Label::Contradiction => 'C',
            Label::Neutral => 'N',
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Open word classes. Only these are candidates for replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum WordClass {
    Noun,
    Verb,
    #[serde(alias = "ADJ")]
    Adjective,
    #[serde(alias = "ADV")]
    Adverb,
}

impl WordClass {
    pub const ALL: [WordClass; 4] = [
        WordClass::Noun,
        WordClass::Verb,
        WordClass::Adjective,
        WordClass::Adverb,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WordClass::Noun => "NOUN",
            WordClass::Verb => "VERB",
            WordClass::Adjective => "ADJECTIVE",
            WordClass::Adverb => "ADVERB",
        }
    }

    /// One-letter dataset prefix (`N_Var`, `V_Var`, `A_Var`, `R_Var`).
    pub fn letter(self) -> char {
        match self {
            WordClass::Noun => 'N',
            WordClass::Verb => 'V',
            WordClass::Adjective => 'A',
            WordClass::Adverb => 'R',
        }
    }
}

impl fmt::Display for WordClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown word class {0:?}")]
pub struct UnknownWordClass(pub String);

impl FromStr for WordClass {
    type Err = UnknownWordClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NOUN" | "N" => Ok(WordClass::Noun),
            "VERB" | "V" => Ok(WordClass::Verb),
            "ADJECTIVE" | "ADJ" | "A" => Ok(WordClass::Adjective),
            "ADVERB" | "ADV" | "R" => Ok(WordClass::Adverb),
            _ => Err(UnknownWordClass(s.to_string())),
        }
    }
}

/// Which sentence of a problem a field or position belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Premise,
    Hypothesis,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Premise, Side::Hypothesis];
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Premise => "premise",
            Side::Hypothesis => "hypothesis",
        })
    }
}

/// A seed NLI problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliProblem {
    pub id: String,
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: Label,
}

impl NliProblem {
    pub fn sentence(&self, side: Side) -> &[String] {
        match side {
            Side::Premise => &self.premise,
            Side::Hypothesis => &self.hypothesis,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("EMPTY_SENTENCE: {field} of problem {id:?} is empty")]
    EmptySentence { id: String, field: Side },
    #[error("DUPLICATE_ID: problem id {id:?} occurs more than once")]
    DuplicateId { id: String },
    #[error("BAD_TOKEN: {field} token {index} of problem {id:?} is {token:?}; tokens must be non-empty and free of whitespace")]
    BadToken {
        id: String,
        field: Side,
        index: usize,
        token: String,
    },
}

impl ValidationError {
    pub fn code(&self) -> &'static str {
        match self {
            ValidationError::EmptySentence { .. } => "EMPTY_SENTENCE",
            ValidationError::DuplicateId { .. } => "DUPLICATE_ID",
            ValidationError::BadToken { .. } => "BAD_TOKEN",
        }
    }
}

pub fn is_valid_token(token: &str) -> bool {
    !token.is_empty() && !token.chars().any(char::is_whitespace)
}

/// Checks a single problem's invariants and hands it back unchanged.
pub fn validate_problem(p: NliProblem) -> Result<NliProblem, ValidationError> {
    for side in Side::BOTH {
        let sentence = p.sentence(side);
        if sentence.is_empty() {
            return Err(ValidationError::EmptySentence {
                id: p.id.clone(),
                field: side,
            });
        }
        if let Some((index, token)) = sentence.iter().enumerate().find(|(_, t)| !is_valid_token(t)) {
            return Err(ValidationError::BadToken {
                id: p.id.clone(),
                field: side,
                index,
                token: token.clone(),
            });
        }
    }
    Ok(p)
}

/// Validates every problem and rejects duplicate ids.
pub fn validate_dataset(problems: Vec<NliProblem>) -> Result<Vec<NliProblem>, ValidationError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(problems.len());
    for p in problems {
        let p = validate_problem(p)?;
        if !seen.insert(p.id.clone()) {
            return Err(ValidationError::DuplicateId { id: p.id });
        }
        out.push(p);
    }
    Ok(out)
}

/// Tokens with per-token word class (absent for closed-class words and
/// punctuation) and lowercase lemma.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub classes: Vec<Option<WordClass>>,
    pub lemmas: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("tagged sentence has {tokens} tokens but {classes} classes and {lemmas} lemmas")]
pub struct LengthMismatch {
    pub tokens: usize,
    pub classes: usize,
    pub lemmas: usize,
}

impl TaggedSentence {
    pub fn new(
        tokens: Vec<String>,
        classes: Vec<Option<WordClass>>,
        lemmas: Vec<String>,
    ) -> Result<Self, LengthMismatch> {
        if tokens.len() != classes.len() || tokens.len() != lemmas.len() {
            return Err(LengthMismatch {
                tokens: tokens.len(),
                classes: classes.len(),
                lemmas: lemmas.len(),
            });
        }
        Ok(TaggedSentence {
            tokens,
            classes,
            lemmas,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// An open-class surface form shared between premise and hypothesis.
///
/// `surface` is stored lowercased; positions are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedWord {
    pub surface: String,
    pub word_class: WordClass,
    pub premise_positions: Vec<usize>,
    pub hypothesis_positions: Vec<usize>,
}

impl SharedWord {
    pub fn positions(&self, side: Side) -> &[usize] {
        match side {
            Side::Premise => &self.premise_positions,
            Side::Hypothesis => &self.hypothesis_positions,
        }
    }
}

/// A seed with one shared word replaced at every occurrence in both sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub id: String,
    pub seed_id: String,
    pub shared_word: SharedWord,
    pub replacement: String,
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: Label,
    /// Scorer models that validated the replacement in the premise.
    pub provenance_p: BTreeSet<String>,
    /// Scorer models that validated the replacement in the hypothesis.
    pub provenance_h: BTreeSet<String>,
    pub replaced_class: WordClass,
}

impl Variant {
    /// Every model that validated the replacement in either sentence.
    pub fn provenance(&self) -> BTreeSet<String> {
        self.provenance_p.union(&self.provenance_h).cloned().collect()
    }
}
