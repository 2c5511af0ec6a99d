//! Variant datasets: substitution, seed eligibility, subsampling and the
//! relaxed or perturbed filtering regimes.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{keyed_stream, StableHasher};
use crate::lexical::{is_word_token, lemmatize, match_case};
use crate::suggestion::{CandidateProvenance, Constraints, SentenceCombination, SuggestionSet};
use crate::types::{NliProblem, SharedWord, Side, Variant, WordClass};

pub const DEFAULT_DEGREE: usize = 20;
pub const DEFAULT_REPEATS: usize = 10;
pub const DEFAULT_MIN_TOTAL: usize = 20;

/// What a subsample of size `d` is drawn from inside one (seed, class) cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleUnit {
    /// `d` variants per shared word, so a cell with `k` words holds `k × d`.
    #[default]
    Word,
    /// `d` variants per cell regardless of how many words it shares.
    Class,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubsamplePlan {
    pub degree_d: usize,
    pub repeats: usize,
    pub rng_seed: u64,
    pub unit: SampleUnit,
}

impl SubsamplePlan {
    pub fn new(degree_d: usize, repeats: usize, rng_seed: u64) -> Self {
        SubsamplePlan {
            degree_d,
            repeats,
            rng_seed,
            unit: SampleUnit::Word,
        }
    }

    pub fn validate(&self) -> Result<(), BuildError> {
        if self.degree_d == 0 {
            return Err(BuildError::InvalidPlan("degree_d must be at least 1"));
        }
        if self.repeats == 0 {
            return Err(BuildError::InvalidPlan("repeats must be at least 1"));
        }
        Ok(())
    }
}

impl Default for SubsamplePlan {
    fn default() -> Self {
        SubsamplePlan::new(DEFAULT_DEGREE, DEFAULT_REPEATS, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AblationMode {
    Standard,
    UnionPh,
    PosOnly,
    ProbOnly,
    None,
    Scrambled,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::Standard,
        AblationMode::UnionPh,
        AblationMode::PosOnly,
        AblationMode::ProbOnly,
        AblationMode::None,
        AblationMode::Scrambled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Standard => "STANDARD",
            AblationMode::UnionPh => "UNION_PH",
            AblationMode::PosOnly => "POS_ONLY",
            AblationMode::ProbOnly => "PROB_ONLY",
            AblationMode::None => "NONE",
            AblationMode::Scrambled => "SCRAMBLED",
        }
    }

    /// The filtering regime a mode rebuilds from harvested flags, if any.
    fn regime(self) -> Option<(Constraints, SentenceCombination)> {
        use SentenceCombination::*;
        match self {
            AblationMode::Standard | AblationMode::Scrambled => None,
            AblationMode::UnionPh => Some((Constraints::STRICT, Union)),
            AblationMode::PosOnly => Some((
                Constraints {
                    probability: false,
                    word_class: true,
                },
                Intersection,
            )),
            AblationMode::ProbOnly => Some((
                Constraints {
                    probability: true,
                    word_class: false,
                },
                Intersection,
            )),
            AblationMode::None => Some((Constraints::NONE, Intersection)),
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown ablation mode {0:?}")]
pub struct UnknownMode(pub String);

impl FromStr for AblationMode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase().replace('-', "_");
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == upper)
            .ok_or_else(|| UnknownMode(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("POSITION_MISMATCH: {side} position {position} of seed {seed_id:?} does not hold {surface:?}")]
    PositionMismatch {
        seed_id: String,
        surface: String,
        side: Side,
        position: usize,
    },
    #[error("MISSING_FLAGS: suggestions for {surface:?} in seed {seed_id:?} lack per-constraint flags needed by {mode}")]
    MissingFlags {
        seed_id: String,
        surface: String,
        mode: AblationMode,
    },
    #[error("suggestion set refers to unknown seed {0:?}")]
    UnknownSeed(String),
    #[error("invalid subsample plan: {0}")]
    InvalidPlan(&'static str),
}

/// Writes `v` at every occurrence of `w` in both sentences, matching the
/// capitalization of each replaced token.
pub fn substitute(
    seed: &NliProblem,
    w: &SharedWord,
    v: &str,
) -> Result<(Vec<String>, Vec<String>), BuildError> {
    let replace = |side: Side| -> Result<Vec<String>, BuildError> {
        let mut out = seed.sentence(side).to_vec();
        for &i in w.positions(side) {
            match out.get(i) {
                Some(t) if t.to_lowercase() == w.surface.to_lowercase() => {
                    out[i] = match_case(t, v);
                }
                _ => {
                    return Err(BuildError::PositionMismatch {
                        seed_id: seed.id.clone(),
                        surface: w.surface.clone(),
                        side,
                        position: i,
                    })
                }
            }
        }
        Ok(out)
    };
    Ok((replace(Side::Premise)?, replace(Side::Hypothesis)?))
}

pub fn variant_id(seed_id: &str, surface: &str, replacement: &str) -> String {
    format!("{seed_id}:{surface}:{replacement}")
}

/// Builds the variant for one candidate. The id depends only on the seed, the
/// replaced word and the replacement, so the same variant keeps its id across
/// every regime that produces it.
pub fn make_variant(
    seed: &NliProblem,
    w: &SharedWord,
    replacement: &str,
    provenance: &CandidateProvenance,
) -> Result<Variant, BuildError> {
    let (premise, hypothesis) = substitute(seed, w, replacement)?;
    Ok(Variant {
        id: variant_id(&seed.id, &w.surface, replacement),
        seed_id: seed.id.clone(),
        shared_word: w.clone(),
        replacement: replacement.to_string(),
        premise,
        hypothesis,
        label: seed.label,
        provenance_p: provenance.models_p(),
        provenance_h: provenance.models_h(),
        replaced_class: w.word_class,
    })
}

/// Seeds whose candidates, summed over all their shared words, reach `min_total`.
pub fn eligible_seeds(sets: &[SuggestionSet], min_total: usize) -> BTreeSet<String> {
    let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
    for s in sets {
        *totals.entry(&s.seed_id).or_default() += s.len();
    }
    totals
        .into_iter()
        .filter(|&(_, n)| n >= min_total)
        .map(|(id, _)| id.to_string())
        .collect()
}

/// Expected variant count for `k` shared words at inflation degree `d`.
pub fn count_property(k_shared: usize, d: usize) -> usize {
    k_shared * d
}

/// Self-check of one (seed, class) cell against `k × d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCheck {
    pub seed_id: String,
    pub class: WordClass,
    pub shared_words: usize,
    pub expected: usize,
    pub actual: usize,
    /// Words holding fewer than `d` candidates, with how many they hold.
    pub deficits: Vec<(String, usize)>,
}

impl CountCheck {
    pub fn holds(&self) -> bool {
        self.expected == self.actual
    }
}

/// Checks every cell of one subsample repeat against `k × d`.
pub fn count_check(pool: &[Variant], repeat: &[Variant], d: usize) -> Vec<CountCheck> {
    let mut available: BTreeMap<(&str, WordClass), BTreeMap<&str, usize>> = BTreeMap::new();
    for v in pool {
        *available
            .entry((&v.seed_id, v.replaced_class))
            .or_default()
            .entry(&v.shared_word.surface)
            .or_default() += 1;
    }
    let mut actual: BTreeMap<(&str, WordClass), usize> = BTreeMap::new();
    for v in repeat {
        *actual.entry((&v.seed_id, v.replaced_class)).or_default() += 1;
    }
    available
        .into_iter()
        .map(|((seed, class), words)| CountCheck {
            seed_id: seed.to_string(),
            class,
            shared_words: words.len(),
            expected: count_property(words.len(), d),
            actual: actual.get(&(seed, class)).copied().unwrap_or(0),
            deficits: words
                .into_iter()
                .filter(|&(_, n)| n < d)
                .map(|(w, n)| (w.to_string(), n))
                .collect(),
        })
        .collect()
}

/// A (seed, class) cell that could not be filled to size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortCell {
    pub seed_id: String,
    pub class: WordClass,
    pub available: usize,
    pub wanted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subsamples {
    /// One entry per repeat, each sorted by seed id, class and variant id.
    pub repeats: Vec<Vec<Variant>>,
    /// Cells kept whole because fewer variants than requested existed.
    pub short_cells: Vec<ShortCell>,
}

fn cell_key(rng_seed: u64, repeat: usize, seed_id: &str, class: WordClass) -> u64 {
    StableHasher::new()
        .u64(rng_seed)
        .u64(repeat as u64)
        .str(seed_id)
        .str(class.as_str())
        .finish()
}

/// Draws `plan.repeats` subsamples without replacement.
///
/// Each (repeat, seed, class) cell draws from its own keyed stream, so the
/// result does not depend on processing order.
pub fn build_subsamples(pool: &[Variant], plan: &SubsamplePlan) -> Result<Subsamples, BuildError> {
    plan.validate()?;
    let d = plan.degree_d;
    let mut cells: BTreeMap<(&str, WordClass), BTreeMap<&str, Vec<&Variant>>> = BTreeMap::new();
    for v in pool {
        cells
            .entry((&v.seed_id, v.replaced_class))
            .or_default()
            .entry(&v.shared_word.surface)
            .or_default()
            .push(v);
    }
    for words in cells.values_mut() {
        for vs in words.values_mut() {
            vs.sort_by(|a, b| a.id.cmp(&b.id));
            vs.dedup_by(|a, b| a.id == b.id);
        }
    }

    let mut short_cells = Vec::new();
    for (&(seed, class), words) in &cells {
        let available: usize = words.values().map(Vec::len).sum();
        let wanted = match plan.unit {
            SampleUnit::Word => count_property(words.len(), d),
            SampleUnit::Class => d,
        };
        let short = match plan.unit {
            SampleUnit::Word => words.values().any(|vs| vs.len() < d),
            SampleUnit::Class => available < d,
        };
        if short {
            short_cells.push(ShortCell {
                seed_id: seed.to_string(),
                class,
                available,
                wanted,
            });
        }
    }

    let mut repeats = Vec::with_capacity(plan.repeats);
    for r in 0..plan.repeats {
        let mut picked: Vec<Variant> = Vec::new();
        for (&(seed, class), words) in &cells {
            let mut rng = keyed_stream(cell_key(plan.rng_seed, r, seed, class));
            let groups: Vec<Vec<&Variant>> = match plan.unit {
                SampleUnit::Word => words.values().cloned().collect(),
                SampleUnit::Class => {
                    let mut all: Vec<&Variant> = words.values().flatten().copied().collect();
                    all.sort_by(|a, b| a.id.cmp(&b.id));
                    alloc::vec![all]
                }
            };
            let mut cell: Vec<Variant> = Vec::new();
            for group in groups {
                let amount = d.min(group.len());
                for i in rand::seq::index::sample(&mut rng, group.len(), amount) {
                    cell.push(group[i].clone());
                }
            }
            cell.sort_by(|a, b| a.id.cmp(&b.id));
            picked.extend(cell);
        }
        repeats.push(picked);
    }
    Ok(Subsamples {
        repeats,
        short_cells,
    })
}

/// Uniform permutation of the characters of `token`, keyed by
/// `(rng_seed, token, seed_id)`.
///
/// Tokens longer than one character are reshuffled until they differ from
/// the input, at most 16 times, then rotated left by one. A token of one
/// repeated character has no distinct permutation and comes back unchanged.
pub fn scramble(token: &str, rng_seed: u64, seed_id: &str) -> String {
    let original: Vec<char> = token.chars().collect();
    if original.len() < 2 {
        return token.to_string();
    }
    let key = StableHasher::new()
        .str("scramble")
        .u64(rng_seed)
        .str(token)
        .str(seed_id)
        .finish();
    let mut rng = keyed_stream(key);
    let mut chars = original.clone();
    for _ in 0..16 {
        chars.shuffle(&mut rng);
        if chars != original {
            return chars.into_iter().collect();
        }
    }
    let mut rotated = original;
    rotated.rotate_left(1);
    rotated.into_iter().collect()
}

/// Candidate set for one word under `mode`, before any scrambling.
pub fn mode_candidates(
    set: &SuggestionSet,
    mode: AblationMode,
) -> Result<BTreeMap<String, CandidateProvenance>, BuildError> {
    match mode.regime() {
        None => Ok(set.entries.clone()),
        Some((constraints, combination)) => match &set.harvest {
            Some(h) => Ok(h.select(constraints, combination)),
            None => Err(BuildError::MissingFlags {
                seed_id: set.seed_id.clone(),
                surface: set.shared_word.surface.clone(),
                mode,
            }),
        },
    }
}

fn problem_lexemes(seed: &NliProblem) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for t in seed.premise.iter().chain(&seed.hypothesis) {
        let lower = t.to_lowercase();
        out.insert(lemmatize(&lower, None));
        out.insert(lower);
    }
    out
}

/// Scrambles every standard candidate, dropping results that are not
/// scrambled, collide with an earlier result, or already occur in the problem.
pub fn scrambled_candidates(
    set: &SuggestionSet,
    seed: &NliProblem,
    rng_seed: u64,
) -> BTreeMap<String, CandidateProvenance> {
    let present = problem_lexemes(seed);
    let mut out = BTreeMap::new();
    for (token, prov) in &set.entries {
        let s = scramble(token, rng_seed, &seed.id);
        if s == *token
            || !is_word_token(&s)
            || present.contains(&s)
            || present.contains(&lemmatize(&s, None))
            || out.contains_key(&s)
        {
            continue;
        }
        out.insert(s, prov.clone());
    }
    out
}

/// Every variant (before subsampling) that `mode` produces from `sets`.
///
/// Output is sorted by seed id, class and variant id.
pub fn build_ablation(
    seeds: &BTreeMap<String, NliProblem>,
    sets: &[SuggestionSet],
    mode: AblationMode,
    rng_seed: u64,
) -> Result<Vec<Variant>, BuildError> {
    let mut out = Vec::new();
    for set in sets {
        let seed = seeds
            .get(&set.seed_id)
            .ok_or_else(|| BuildError::UnknownSeed(set.seed_id.clone()))?;
        let candidates = match mode {
            AblationMode::Scrambled => scrambled_candidates(set, seed, rng_seed),
            _ => mode_candidates(set, mode)?,
        };
        for (replacement, prov) in &candidates {
            out.push(make_variant(seed, &set.shared_word, replacement, prov)?);
        }
    }
    out.sort_by(|a, b| {
        (&a.seed_id, a.replaced_class, &a.id).cmp(&(&b.seed_id, b.replaced_class, &b.id))
    });
    out.dedup_by(|a, b| a.id == b.id);
    Ok(out)
}
