//! Tokenization, word-class tagging, lemmatization and shared-word extraction.
//!
//! The builtin tagger is a lexicon lookup with a handful of rules. It is a
//! pure function of its lexicon and input, so tests are hermetic. Its rules:
//!
//! * A token is untagged when it contains no letter, contains anything other
//!   than letters, `-` or `'`, or is a closed-class word (determiners,
//!   pronouns, auxiliaries, prepositions, conjunctions, numerals, negation).
//! * Otherwise the lowercase token is looked up in the lexicon, then its lemma.
//! * A word with several lexicon readings is resolved by its left neighbour:
//!   after a determiner, possessive or adjective it is a noun; after `to`, a
//!   pronoun or an auxiliary it is a verb; an `-ing` form is a verb; otherwise
//!   the first listed reading wins.
//! * Unknown words fall back to suffix rules, checked in order:
//!   `-ly` adverb; `-ing`/`-ed` verb; `-ous -ful -ive -able -ible -less -ish
//!   -ic -al` adjective; anything else is a noun. Suffix rules only fire for
//!   words longer than four letters.
//!
//! Lemmas are lowercase and only undo plural/third-person `-s`:
//!
//! | rule | example |
//! |------|---------|
//! | irregular plural table | `men` → `man` |
//! | length ≤ 3, or ends in `ss`/`us`/`is`, or no final `s` | unchanged |
//! | word itself in lexicon | unchanged (`pants`) |
//! | first of `-ies→-y`, `-es→∅`, `-s→∅` found in lexicon | `puppies` → `puppy`, `buses` → `bus` |
//! | otherwise `-ies→-y`; `-sses -xes -zes -ches -shes` drop `es`; else drop `s` | `girls` → `girl` |

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{SharedWord, TaggedSentence, WordClass};

pub const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.tsv");

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "no",
    "another", "either", "neither", "both", "all", "several", "many", "much", "few",
];
const POSSESSIVES: &[&str] = &["my", "your", "his", "her", "its", "our", "their"];
const PRONOUNS: &[&str] = &[
    "i", "you", "he", "she", "it", "we", "they", "me", "him", "us", "them", "someone",
    "somebody", "something", "anyone", "anything", "everyone", "everybody", "everything",
    "nobody", "nothing", "who", "whom", "whose", "which", "what", "myself", "yourself",
    "himself", "herself", "itself", "ourselves", "themselves",
];
const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "having",
    "do", "does", "did", "can", "could", "will", "would", "shall", "should", "may", "might",
    "must", "'s", "'re", "'ve", "'m", "'ll", "'d",
];
const PREPOSITIONS: &[&str] = &[
    "in", "on", "at", "of", "to", "for", "with", "by", "from", "into", "onto", "upon", "near",
    "over", "under", "above", "below", "behind", "beside", "between", "among", "around",
    "through", "across", "along", "against", "about", "after", "before", "during", "without",
    "within", "toward", "towards", "off", "out", "up", "down", "like", "than", "via", "past",
];
const CONJUNCTIONS: &[&str] = &[
    "and", "or", "but", "nor", "so", "yet", "while", "as", "because", "if", "although",
    "though", "when", "where", "whether",
];
const OTHER_CLOSED: &[&str] = &[
    "not", "n't", "there", "here", "yes", "too", "also", "just", "then", "one", "two", "three",
    "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve", "hundred",
    "thousand",
];

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("people", "person"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("mice", "mouse"),
    ("geese", "goose"),
];

const ADJECTIVE_SUFFIXES: &[&str] = &[
    "ous", "ful", "ive", "able", "ible", "less", "ish", "ic", "al",
];

fn contains(list: &[&str], w: &str) -> bool {
    list.contains(&w)
}

pub fn is_closed_class(lower: &str) -> bool {
    [
        DETERMINERS,
        POSSESSIVES,
        PRONOUNS,
        AUXILIARIES,
        PREPOSITIONS,
        CONJUNCTIONS,
        OTHER_CLOSED,
    ]
    .iter()
    .any(|list| contains(list, lower))
}

fn is_wordlike(token: &str) -> bool {
    token.chars().any(char::is_alphabetic)
        && token
            .chars()
            .all(|c| c.is_alphabetic() || c == '-' || c == '\'')
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexicalError {
    #[error("EMPTY_TEXT: nothing to tokenize")]
    EmptyText,
    #[error("lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
}

/// Splits on whitespace and detaches leading and trailing ASCII punctuation,
/// one token per punctuation character.
pub fn tokenize(text: &str) -> Result<Vec<String>, LexicalError> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let start = chunk.len() - chunk.trim_start_matches(|c: char| c.is_ascii_punctuation()).len();
        if start == chunk.len() {
            tokens.extend(chunk.chars().map(|c| c.to_string()));
            continue;
        }
        let end = chunk.trim_end_matches(|c: char| c.is_ascii_punctuation()).len();
        tokens.extend(chunk[..start].chars().map(|c| c.to_string()));
        tokens.push(chunk[start..end].to_string());
        tokens.extend(chunk[end..].chars().map(|c| c.to_string()));
    }
    if tokens.is_empty() {
        return Err(LexicalError::EmptyText);
    }
    Ok(tokens)
}

/// Word → class readings, in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<WordClass>>,
}

impl Lexicon {
    /// Parses `surface<TAB>class` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, LexicalError> {
        let mut lexicon = Lexicon::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (Some(word), Some(class), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(LexicalError::Lexicon {
                    line: n + 1,
                    reason: "expected surface<TAB>class".into(),
                });
            };
            let class = WordClass::from_str(class).map_err(|e| LexicalError::Lexicon {
                line: n + 1,
                reason: e.to_string(),
            })?;
            let word = word.trim();
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(LexicalError::Lexicon {
                    line: n + 1,
                    reason: "surface must be a single non-empty word".into(),
                });
            }
            lexicon.insert(word, class);
        }
        Ok(lexicon)
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_LEXICON).expect("shipped lexicon is well-formed")
    }

    /// Adds a reading after any existing ones. Duplicate readings are ignored.
    pub fn insert(&mut self, word: &str, class: WordClass) {
        let readings = self.entries.entry(word.to_lowercase()).or_default();
        if !readings.contains(&class) {
            readings.push(class);
        }
    }

    pub fn readings(&self, lower: &str) -> Option<&[WordClass]> {
        self.entries.get(lower).map(Vec::as_slice)
    }

    pub fn contains(&self, lower: &str) -> bool {
        self.entries.contains_key(lower)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Lowercase lemma under the plural-stripping rules. Without a lexicon only
/// the fallback rules apply.
pub fn lemmatize(token: &str, lexicon: Option<&Lexicon>) -> String {
    let lower = token.to_lowercase();
    if is_closed_class(&lower) {
        return lower;
    }
    if let Some((_, lemma)) = IRREGULAR_PLURALS.iter().find(|(plural, _)| *plural == lower) {
        return (*lemma).to_string();
    }
    let n = lower.chars().count();
    if !lower.ends_with('s')
        || n <= 3
        || lower.ends_with("ss")
        || lower.ends_with("us")
        || lower.ends_with("is")
    {
        return lower;
    }
    let ies = (lower.ends_with("ies") && n > 4).then(|| {
        let mut s = lower[..lower.len() - 3].to_string();
        s.push('y');
        s
    });
    if let Some(lex) = lexicon {
        if lex.contains(&lower) {
            return lower;
        }
        let es = lower.ends_with("es").then(|| lower[..lower.len() - 2].to_string());
        let s = lower[..lower.len() - 1].to_string();
        if let Some(hit) = [ies.clone(), es, Some(s)]
            .into_iter()
            .flatten()
            .find(|c| lex.contains(c))
        {
            return hit;
        }
    }
    if let Some(y) = ies {
        return y;
    }
    if ["sses", "xes", "zes", "ches", "shes"]
        .iter()
        .any(|suf| lower.ends_with(suf))
    {
        return lower[..lower.len() - 2].to_string();
    }
    lower[..lower.len() - 1].to_string()
}

fn suffix_class(lower: &str) -> WordClass {
    if lower.chars().count() > 4 {
        if lower.ends_with("ly") {
            return WordClass::Adverb;
        }
        if lower.ends_with("ing") || lower.ends_with("ed") {
            return WordClass::Verb;
        }
        if ADJECTIVE_SUFFIXES.iter().any(|s| lower.ends_with(s)) {
            return WordClass::Adjective;
        }
    }
    WordClass::Noun
}

fn disambiguate(
    lower: &str,
    readings: &[WordClass],
    prev: Option<&str>,
    prev_class: Option<WordClass>,
) -> WordClass {
    let has = |c| readings.contains(&c);
    if let Some(prev) = prev {
        let nominal_context = contains(DETERMINERS, prev)
            || contains(POSSESSIVES, prev)
            || prev_class == Some(WordClass::Adjective);
        if nominal_context && has(WordClass::Noun) {
            return WordClass::Noun;
        }
        let verbal_context =
            prev == "to" || contains(PRONOUNS, prev) || contains(AUXILIARIES, prev);
        if verbal_context && has(WordClass::Verb) {
            return WordClass::Verb;
        }
    }
    if lower.ends_with("ing") && has(WordClass::Verb) {
        return WordClass::Verb;
    }
    readings[0]
}

/// Errors a tagger backend can report.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("TAGGER_UNAVAILABLE: {0}")]
    Unavailable(String),
    #[error("TAGGER_PROTOCOL: {0}")]
    Protocol(String),
}

/// Assigns word classes and lemmas to a token sequence.
pub trait Tagger {
    fn tag(&self, tokens: &[String]) -> Result<TaggedSentence, TagError>;
}

impl<T: Tagger + ?Sized> Tagger for &T {
    fn tag(&self, tokens: &[String]) -> Result<TaggedSentence, TagError> {
        (**self).tag(tokens)
    }
}

/// Deterministic lexicon and suffix-rule tagger.
#[derive(Debug, Clone)]
pub struct BuiltinTagger {
    lexicon: Lexicon,
}

impl Default for BuiltinTagger {
    fn default() -> Self {
        Self::new()
    }
}

impl BuiltinTagger {
    pub fn new() -> Self {
        BuiltinTagger {
            lexicon: Lexicon::builtin(),
        }
    }

    pub fn with_lexicon(lexicon: Lexicon) -> Self {
        BuiltinTagger { lexicon }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn lexicon_mut(&mut self) -> &mut Lexicon {
        &mut self.lexicon
    }

    pub fn lemma(&self, token: &str) -> String {
        lemmatize(token, Some(&self.lexicon))
    }

    fn classify(
        &self,
        lower: &str,
        lemma: &str,
        prev: Option<&str>,
        prev_class: Option<WordClass>,
    ) -> Option<WordClass> {
        if !is_wordlike(lower) || is_closed_class(lower) {
            return None;
        }
        let readings = self
            .lexicon
            .readings(lower)
            .or_else(|| self.lexicon.readings(lemma));
        Some(match readings {
            None => suffix_class(lower),
            Some([only]) => *only,
            Some(many) => disambiguate(lower, many, prev, prev_class),
        })
    }
}

impl Tagger for BuiltinTagger {
    fn tag(&self, tokens: &[String]) -> Result<TaggedSentence, TagError> {
        let mut classes = Vec::with_capacity(tokens.len());
        let mut lemmas = Vec::with_capacity(tokens.len());
        let mut prev: Option<String> = None;
        let mut prev_class = None;
        for token in tokens {
            let lower = token.to_lowercase();
            let lemma = self.lemma(&lower);
            let class = self.classify(&lower, &lemma, prev.as_deref(), prev_class);
            classes.push(class);
            lemmas.push(lemma);
            prev_class = class;
            prev = Some(lower);
        }
        TaggedSentence::new(tokens.to_vec(), classes, lemmas)
            .map_err(|e| TagError::Protocol(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TaggerKind {
    Builtin,
    Remote,
}

/// Which tagger backend a pipeline uses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggerProvider {
    pub kind: TaggerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("REMOTE tagger requires an endpoint")]
pub struct MissingEndpoint;

impl TaggerProvider {
    pub fn builtin() -> Self {
        TaggerProvider {
            kind: TaggerKind::Builtin,
            endpoint: None,
        }
    }

    pub fn validate(&self) -> Result<(), MissingEndpoint> {
        match (self.kind, &self.endpoint) {
            (TaggerKind::Remote, None) => Err(MissingEndpoint),
            _ => Ok(()),
        }
    }
}

/// A clean word token: non-empty and made of letters only.
pub fn is_word_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(char::is_alphabetic)
}

/// `replacement` with its first letter uppercased iff `original` starts
/// with an uppercase letter.
pub fn match_case(original: &str, replacement: &str) -> String {
    let starts_upper = original.chars().next().is_some_and(char::is_uppercase);
    let mut chars = replacement.chars();
    match chars.next() {
        Some(first) if starts_upper => first.to_uppercase().chain(chars).collect(),
        _ => replacement.to_string(),
    }
}

/// True iff `candidate` (lowercased, or its rule-based lemma) matches a
/// token or lemma of `s`.
pub fn occurs_in(candidate: &str, s: &TaggedSentence) -> bool {
    let lower = candidate.to_lowercase();
    let lemma = lemmatize(&lower, None);
    s.lemmas.iter().any(|l| *l == lower || *l == lemma)
        || s.tokens.iter().any(|t| t.to_lowercase() == lower)
}

/// Open-class surface forms occurring in both sentences with one consistent
/// class at every occurrence, sorted by first premise position.
pub fn extract_shared_words(p: &TaggedSentence, h: &TaggedSentence) -> Vec<SharedWord> {
    fn occurrences(s: &TaggedSentence) -> BTreeMap<String, (Vec<usize>, Vec<Option<WordClass>>)> {
        let mut map: BTreeMap<String, (Vec<usize>, Vec<Option<WordClass>>)> = BTreeMap::new();
        for (i, (tok, class)) in s.tokens.iter().zip(&s.classes).enumerate() {
            let e = map.entry(tok.to_lowercase()).or_default();
            e.0.push(i);
            e.1.push(*class);
        }
        map
    }
    let in_h = occurrences(h);
    let mut shared: Vec<SharedWord> = occurrences(p)
        .into_iter()
        .filter_map(|(surface, (p_pos, p_classes))| {
            let (h_pos, h_classes) = in_h.get(&surface)?;
            let class = p_classes[0]?;
            p_classes
                .iter()
                .chain(h_classes)
                .all(|c| *c == Some(class))
                .then(|| SharedWord {
                    surface,
                    word_class: class,
                    premise_positions: p_pos,
                    hypothesis_positions: h_pos.clone(),
                })
        })
        .collect();
    shared.sort_by_key(|w| w.premise_positions[0]);
    shared
}
