//! Suggestion set algebra.
//!
//! For one model, sentence `S` and open-class position `i`, the position set
//! holds the fill-mask candidates that are strictly more probable than the
//! original word, do not occur (lemma-level) in `S`, and tag to the original
//! word class when substituted at `i`. Candidates must also be clean word
//! tokens different from the original word. The word set for one model is the
//! intersection of its position sets over every occurrence of the word; the
//! multi-model set is the union over models; the problem set intersects the
//! premise and hypothesis multi-model sets.
//!
//! Harvesting records the probability and class checks per candidate instead
//! of dropping failures, so relaxed regimes can be rebuilt later without
//! querying the scorers again.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexical::{is_word_token, match_case, occurs_in, TagError, Tagger};
use crate::scorer::{MaskFillScorer, ScorerError};
use crate::types::{SharedWord, Side, TaggedSentence};

/// Default number of fill-mask candidates harvested per position.
pub const DEFAULT_TOP_K: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Tagger(#[from] TagError),
    #[error("position {position} holds {token:?}, which is not an open-class word")]
    NotOpenClass { position: usize, token: String },
    #[error("position {position} is outside a sentence of {len} tokens")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("shared word {0:?} has no occurrence positions")]
    NoPositions(String),
    #[error("no scorer models given")]
    NoModels,
    #[error("TAGGER_PROTOCOL: tagger returned {got} tokens for a sentence of {expected}")]
    TaggerLength { expected: usize, got: usize },
}

/// Which of the two filterable constraints a regime enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Constraints {
    pub probability: bool,
    pub word_class: bool,
}

impl Constraints {
    pub const STRICT: Constraints = Constraints {
        probability: true,
        word_class: true,
    };
    pub const NONE: Constraints = Constraints {
        probability: false,
        word_class: false,
    };
}

/// How the premise and hypothesis sets are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SentenceCombination {
    Intersection,
    Union,
}

/// Per-constraint outcome for one harvested candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateCheck {
    #[serde(rename = "prob")]
    pub probability: f64,
    pub more_probable: bool,
    pub same_class: bool,
}

/// Everything one model proposed at one position, after the hard filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionHarvest {
    pub model_id: String,
    pub side: Side,
    pub position: usize,
    /// `None` when the original word is outside the model's vocabulary.
    pub original_prob: Option<f64>,
    pub candidates: BTreeMap<String, CandidateCheck>,
}

impl PositionHarvest {
    /// Candidates allowed under `constraints`, with their probabilities.
    ///
    /// An out-of-vocabulary original yields nothing while the probability
    /// constraint is enforced.
    pub fn passing(&self, constraints: Constraints) -> BTreeMap<String, f64> {
        if constraints.probability && self.original_prob.is_none() {
            return BTreeMap::new();
        }
        self.candidates
            .iter()
            .filter(|(_, c)| {
                (!constraints.probability || c.more_probable)
                    && (!constraints.word_class || c.same_class)
            })
            .map(|(t, c)| (t.clone(), c.probability))
            .collect()
    }
}

/// Harvests one position.
///
/// The candidate is written at `position` and at every index in `also_fill`
/// before tagging, so its class is judged in the sentence the variant will
/// actually contain. Candidates that are subword fragments, contain non-letters, equal the
/// original word, or occur in any of the `excluded` sentences are dropped
/// outright. Duplicates after lowercasing keep their first (most probable)
/// occurrence.
#[allow(clippy::too_many_arguments)]
pub fn harvest_position(
    scorer: &dyn MaskFillScorer,
    tagger: &dyn Tagger,
    s: &TaggedSentence,
    position: usize,
    top_k: usize,
    side: Side,
    also_fill: &[usize],
    excluded: &[&TaggedSentence],
) -> Result<PositionHarvest, EngineError> {
    let Some(class) = s.classes.get(position).copied() else {
        return Err(EngineError::PositionOutOfRange {
            position,
            len: s.len(),
        });
    };
    let original = &s.tokens[position];
    let Some(class) = class else {
        return Err(EngineError::NotOpenClass {
            position,
            token: original.clone(),
        });
    };
    let original_lower = original.to_lowercase();
    let original_prob = scorer
        .score_token(&s.tokens, position, original)?
        .probability();
    let fill = scorer.fill_mask(&s.tokens, position, top_k)?;

    let mut seen = BTreeSet::new();
    let mut candidates = BTreeMap::new();
    let mut substituted = s.tokens.clone();
    for c in fill {
        if c.fragment || !is_word_token(&c.token) {
            continue;
        }
        let token = c.token.to_lowercase();
        if token == original_lower || !seen.insert(token.clone()) {
            continue;
        }
        for &j in also_fill.iter().chain(core::iter::once(&position)) {
            if let Some(slot) = substituted.get_mut(j) {
                *slot = match_case(&s.tokens[j], &token);
            }
        }
        let tagged = tagger.tag(&substituted)?;
        if tagged.len() != s.len() {
            return Err(EngineError::TaggerLength {
                expected: s.len(),
                got: tagged.len(),
            });
        }
        let lemma = &tagged.lemmas[position];
        if excluded
            .iter()
            .any(|e| occurs_in(&token, e) || e.lemmas.contains(lemma))
        {
            continue;
        }
        candidates.insert(
            token,
            CandidateCheck {
                probability: c.probability,
                more_probable: original_prob.is_some_and(|p0| c.probability > p0),
                same_class: tagged.classes[position] == Some(class),
            },
        );
    }
    Ok(PositionHarvest {
        model_id: scorer.model_id().to_string(),
        side,
        position,
        original_prob,
        candidates,
    })
}

/// Intersects position sets, keeping each candidate's lowest probability.
fn intersect_positions<I>(sets: I) -> BTreeMap<String, f64>
where
    I: IntoIterator<Item = BTreeMap<String, f64>>,
{
    let mut iter = sets.into_iter();
    let Some(mut acc) = iter.next() else {
        return BTreeMap::new();
    };
    for next in iter {
        acc.retain(|token, prob| match next.get(token) {
            Some(p) => {
                *prob = prob.min(*p);
                true
            }
            None => false,
        });
    }
    acc
}

/// Suggestions for one occurrence under all constraints.
pub fn position_suggestions(
    scorer: &dyn MaskFillScorer,
    tagger: &dyn Tagger,
    s: &TaggedSentence,
    position: usize,
    top_k: usize,
) -> Result<BTreeMap<String, f64>, EngineError> {
    Ok(harvest_position(scorer, tagger, s, position, top_k, Side::Premise, &[], &[s])?
        .passing(Constraints::STRICT))
}

/// Intersection of [`position_suggestions`] over every occurrence.
pub fn word_suggestions_one_model(
    scorer: &dyn MaskFillScorer,
    tagger: &dyn Tagger,
    s: &TaggedSentence,
    positions: &[usize],
    top_k: usize,
) -> Result<BTreeMap<String, f64>, EngineError> {
    if positions.is_empty() {
        return Err(EngineError::NoPositions(String::new()));
    }
    let sets = positions
        .iter()
        .map(|&i| position_suggestions(scorer, tagger, s, i, top_k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(intersect_positions(sets))
}

/// Union over models of the one-model word sets, with per-model probability.
///
/// A failing model aborts the whole union.
pub fn word_suggestions_multi_model(
    scorers: &[&dyn MaskFillScorer],
    tagger: &dyn Tagger,
    s: &TaggedSentence,
    positions: &[usize],
    top_k: usize,
) -> Result<BTreeMap<String, BTreeMap<String, f64>>, EngineError> {
    if scorers.is_empty() {
        return Err(EngineError::NoModels);
    }
    let mut union: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for scorer in scorers {
        let set = word_suggestions_one_model(*scorer, tagger, s, positions, top_k)?;
        for (token, prob) in set {
            union
                .entry(token)
                .or_default()
                .insert(scorer.model_id().to_string(), prob);
        }
    }
    Ok(union)
}

/// Which models validated a candidate in each sentence, and with what
/// probability (the lowest over that sentence's occurrences).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateProvenance {
    pub prob_p: BTreeMap<String, f64>,
    pub prob_h: BTreeMap<String, f64>,
}

/// Models a variant is attributed to for origin analyses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OriginModels {
    pub models: BTreeSet<String>,
    /// True when no model validated the candidate in both sentences and the
    /// union was used instead.
    pub union_fallback: bool,
}

impl CandidateProvenance {
    pub fn models_p(&self) -> BTreeSet<String> {
        self.prob_p.keys().cloned().collect()
    }

    pub fn models_h(&self) -> BTreeSet<String> {
        self.prob_h.keys().cloned().collect()
    }

    pub fn validating_models(&self) -> BTreeSet<String> {
        self.prob_p.keys().chain(self.prob_h.keys()).cloned().collect()
    }

    pub fn origin_models(&self) -> OriginModels {
        origin_models(&self.models_p(), &self.models_h())
    }
}

/// Intersection of the per-sentence validators when non-empty, else their union.
pub fn origin_models(models_p: &BTreeSet<String>, models_h: &BTreeSet<String>) -> OriginModels {
    let both: BTreeSet<String> = models_p.intersection(models_h).cloned().collect();
    if both.is_empty() {
        OriginModels {
            models: models_p.union(models_h).cloned().collect(),
            union_fallback: true,
        }
    } else {
        OriginModels {
            models: both,
            union_fallback: false,
        }
    }
}

/// All position harvests for one shared word of one problem.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WordHarvest {
    pub positions: Vec<PositionHarvest>,
}

impl WordHarvest {
    fn model_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for h in &self.positions {
            if !ids.contains(&h.model_id.as_str()) {
                ids.push(&h.model_id);
            }
        }
        ids
    }

    /// Multi-model union for one sentence under `constraints`.
    pub fn side_union(
        &self,
        side: Side,
        constraints: Constraints,
    ) -> BTreeMap<String, BTreeMap<String, f64>> {
        let mut union: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for model in self.model_ids() {
            let per_position = self
                .positions
                .iter()
                .filter(|h| h.model_id == model && h.side == side)
                .map(|h| h.passing(constraints));
            for (token, prob) in intersect_positions(per_position) {
                union.entry(token).or_default().insert(model.to_string(), prob);
            }
        }
        union
    }

    /// Rebuilds the candidate set under a filtering regime.
    pub fn select(
        &self,
        constraints: Constraints,
        combination: SentenceCombination,
    ) -> BTreeMap<String, CandidateProvenance> {
        let mut p = self.side_union(Side::Premise, constraints);
        let mut h = self.side_union(Side::Hypothesis, constraints);
        let tokens: BTreeSet<String> = match combination {
            SentenceCombination::Intersection => {
                p.keys().filter(|t| h.contains_key(*t)).cloned().collect()
            }
            SentenceCombination::Union => p.keys().chain(h.keys()).cloned().collect(),
        };
        tokens
            .into_iter()
            .map(|t| {
                let prov = CandidateProvenance {
                    prob_p: p.remove(&t).unwrap_or_default(),
                    prob_h: h.remove(&t).unwrap_or_default(),
                };
                (t, prov)
            })
            .collect()
    }
}

/// Candidate replacements for one shared word of one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionSet {
    pub seed_id: String,
    pub shared_word: SharedWord,
    pub entries: BTreeMap<String, CandidateProvenance>,
    /// Per-constraint flags; required to rebuild relaxed regimes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harvest: Option<WordHarvest>,
}

impl SuggestionSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Harvests every occurrence of `w` in both sentences for every model.
///
/// Hard filters exclude words from both sentences, so every regime built on
/// the harvest keeps replacements out of the whole problem.
pub fn harvest_word(
    scorers: &[&dyn MaskFillScorer],
    tagger: &dyn Tagger,
    p: &TaggedSentence,
    h: &TaggedSentence,
    w: &SharedWord,
    top_k: usize,
) -> Result<WordHarvest, EngineError> {
    if scorers.is_empty() {
        return Err(EngineError::NoModels);
    }
    for side in Side::BOTH {
        if w.positions(side).is_empty() {
            return Err(EngineError::NoPositions(w.surface.clone()));
        }
    }
    let excluded = [p, h];
    let mut positions = Vec::new();
    for scorer in scorers {
        for side in Side::BOTH {
            let s = match side {
                Side::Premise => p,
                Side::Hypothesis => h,
            };
            for &i in w.positions(side) {
                positions.push(harvest_position(
                    *scorer, tagger, s, i, top_k, side, w.positions(side), &excluded,
                )?);
            }
        }
    }
    Ok(WordHarvest { positions })
}

/// The problem-level suggestion set: premise ∩ hypothesis of the multi-model
/// unions, with the harvest attached.
pub fn problem_suggestions(
    scorers: &[&dyn MaskFillScorer],
    tagger: &dyn Tagger,
    seed_id: &str,
    p: &TaggedSentence,
    h: &TaggedSentence,
    w: &SharedWord,
    top_k: usize,
) -> Result<SuggestionSet, EngineError> {
    let harvest = harvest_word(scorers, tagger, p, h, w, top_k)?;
    let entries = harvest.select(Constraints::STRICT, SentenceCombination::Intersection);
    Ok(SuggestionSet {
        seed_id: seed_id.to_string(),
        shared_word: w.clone(),
        entries,
        harvest: Some(harvest),
    })
}
