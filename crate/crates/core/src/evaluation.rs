//! Sample Accuracy, Pattern Accuracy curves and the derived reports.
//!
//! A seed passes Pattern Accuracy at threshold `x` iff the fraction of its
//! variants predicted correctly is at least `x`. Seeds without variants in a
//! subsample are left out of the denominator.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::suggestion::origin_models;
use crate::types::{Label, NliProblem, Variant, WordClass};

/// Quality threshold at which variant-set Pattern Accuracy is reported.
pub const QUALITY_THRESHOLD: f64 = 0.9;
/// Default mean-accuracy floor of the hard-seed report.
pub const DEFAULT_HARD_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("MISSING_PREDICTION: no prediction for item {0:?}")]
    MissingPrediction(String),
    #[error("UNKNOWN_ITEM: prediction refers to unknown item {0:?}")]
    UnknownItem(String),
    #[error("DUPLICATE_PREDICTION: model {model:?} predicts item {item:?} twice")]
    DuplicatePrediction { model: String, item: String },
    #[error("INCOMPLETE_REPEATS: expected {expected} subsample repeats, got {got}")]
    IncompleteRepeats { expected: usize, got: usize },
    #[error("threshold grid must be non-empty, ascending and inside [0, 1]")]
    BadGrid,
    #[error("no seed has any item to score")]
    EmptyDataset,
    #[error("UNKNOWN_PROVENANCE_MODEL: variant {variant:?} names scorer model {model:?} missing from the roster")]
    UnknownProvenanceModel { variant: String, model: String },
    #[error("internal invariant violated: {0}")]
    InvariantViolation(String),
}

/// Anything that can be scored against a prediction.
pub trait Scored {
    fn item_id(&self) -> &str;
    fn seed_id(&self) -> &str;
    fn gold(&self) -> Label;
}

impl Scored for Variant {
    fn item_id(&self) -> &str {
        &self.id
    }
    fn seed_id(&self) -> &str {
        &self.seed_id
    }
    fn gold(&self) -> Label {
        self.label
    }
}

impl Scored for NliProblem {
    fn item_id(&self) -> &str {
        &self.id
    }
    fn seed_id(&self) -> &str {
        &self.id
    }
    fn gold(&self) -> Label {
        self.label
    }
}

impl<T: Scored + ?Sized> Scored for &T {
    fn item_id(&self) -> &str {
        (**self).item_id()
    }
    fn seed_id(&self) -> &str {
        (**self).seed_id()
    }
    fn gold(&self) -> Label {
        (**self).gold()
    }
}

/// One predicted label. Seed-set predictions may name their item `seed_id`,
/// variant predictions `variant_id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub nli_model_id: String,
    #[serde(alias = "variant_id", alias = "seed_id")]
    pub item_id: String,
    pub predicted: Label,
}

/// Predictions of one NLI model keyed by item id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionTable {
    pub model_id: String,
    pub labels: BTreeMap<String, Label>,
}

impl PredictionTable {
    /// Collects `model_id`'s records. Every id must be in `known`; records of
    /// other models are ignored.
    pub fn from_records<'a, I>(
        model_id: &str,
        records: I,
        known: &BTreeSet<String>,
    ) -> Result<Self, EvalError>
    where
        I: IntoIterator<Item = &'a PredictionRecord>,
    {
        let mut labels = BTreeMap::new();
        for r in records.into_iter().filter(|r| r.nli_model_id == model_id) {
            if !known.contains(&r.item_id) {
                return Err(EvalError::UnknownItem(r.item_id.clone()));
            }
            if labels.insert(r.item_id.clone(), r.predicted).is_some() {
                return Err(EvalError::DuplicatePrediction {
                    model: model_id.to_string(),
                    item: r.item_id.clone(),
                });
            }
        }
        Ok(PredictionTable {
            model_id: model_id.to_string(),
            labels,
        })
    }

    pub fn get(&self, item: &str) -> Result<Label, EvalError> {
        self.labels
            .get(item)
            .copied()
            .ok_or_else(|| EvalError::MissingPrediction(item.to_string()))
    }

    fn is_correct<T: Scored>(&self, item: &T) -> Result<bool, EvalError> {
        Ok(self.get(item.item_id())? == item.gold())
    }
}

/// Fraction of items predicted correctly.
pub fn sample_accuracy<T: Scored>(preds: &PredictionTable, items: &[T]) -> Result<f64, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut correct = 0usize;
    for item in items {
        correct += usize::from(preds.is_correct(item)?);
    }
    Ok(correct as f64 / items.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedScore {
    pub correct: usize,
    pub total: usize,
}

impl SeedScore {
    pub fn fraction(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }

    /// Closed comparison: passing at `x` means a fraction of at least `x`.
    pub fn passes(&self, x: f64) -> bool {
        self.total > 0 && self.fraction() >= x
    }
}

/// Correct and total counts per seed.
pub fn per_seed_scores<T: Scored>(
    preds: &PredictionTable,
    items: &[T],
) -> Result<BTreeMap<String, SeedScore>, EvalError> {
    let mut out: BTreeMap<String, SeedScore> = BTreeMap::new();
    for item in items {
        let ok = preds.is_correct(item)?;
        let s = out.entry(item.seed_id().to_string()).or_default();
        s.total += 1;
        s.correct += usize::from(ok);
    }
    Ok(out)
}

/// Fraction of seeds passing at `x`; `None` when no seed has any item.
pub fn pattern_accuracy_of(scores: &BTreeMap<String, SeedScore>, x: f64) -> Option<f64> {
    let active: Vec<&SeedScore> = scores.values().filter(|s| s.total > 0).collect();
    if active.is_empty() {
        return None;
    }
    let passing = active.iter().filter(|s| s.passes(x)).count();
    Some(passing as f64 / active.len() as f64)
}

pub fn pattern_accuracy<T: Scored>(
    preds: &PredictionTable,
    items: &[T],
    x: f64,
) -> Result<f64, EvalError> {
    pattern_accuracy_of(&per_seed_scores(preds, items)?, x).ok_or(EvalError::EmptyDataset)
}

/// Percent grid `0, 1, ..., 100` expressed as fractions.
pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|t| f64::from(t) / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaCurve {
    pub thresholds: Vec<f64>,
    /// Mean over repeats at each threshold.
    pub scores: Vec<f64>,
    pub per_repeat: Vec<Vec<f64>>,
    pub repeats_averaged: usize,
}

impl PaCurve {
    /// Score at a grid threshold, matched exactly.
    pub fn at(&self, x: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| t == x)
            .map(|i| self.scores[i])
    }
}

fn check_grid(grid: &[f64]) -> Result<(), EvalError> {
    let sorted = grid.windows(2).all(|w| w[0] < w[1]);
    let bounded = grid.iter().all(|t| (0.0..=1.0).contains(t));
    if grid.is_empty() || !sorted || !bounded {
        return Err(EvalError::BadGrid);
    }
    Ok(())
}

fn curve_of(scores: &BTreeMap<String, SeedScore>, grid: &[f64]) -> Result<Vec<f64>, EvalError> {
    grid.iter()
        .map(|&x| pattern_accuracy_of(scores, x).ok_or(EvalError::EmptyDataset))
        .collect()
}

/// PA curve averaged over subsample repeats.
///
/// `expected_repeats`, when given, must equal the number of repeats supplied.
pub fn pa_curve<T: Scored>(
    preds: &PredictionTable,
    repeats: &[Vec<T>],
    grid: &[f64],
    expected_repeats: Option<usize>,
) -> Result<PaCurve, EvalError> {
    check_grid(grid)?;
    let expected = expected_repeats.unwrap_or(repeats.len().max(1));
    if repeats.is_empty() || repeats.len() != expected {
        return Err(EvalError::IncompleteRepeats {
            expected,
            got: repeats.len(),
        });
    }
    let per_repeat = repeats
        .iter()
        .map(|items| curve_of(&per_seed_scores(preds, items)?, grid))
        .collect::<Result<Vec<_>, _>>()?;
    let n = per_repeat.len() as f64;
    let scores: Vec<f64> = (0..grid.len())
        .map(|i| per_repeat.iter().map(|c| c[i]).sum::<f64>() / n)
        .collect();
    for (r, curve) in per_repeat.iter().chain(core::iter::once(&scores)).enumerate() {
        if curve.windows(2).any(|w| w[1] > w[0]) || curve.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(EvalError::InvariantViolation(alloc::format!(
                "PA curve {r} is not a non-increasing sequence in [0, 1]"
            )));
        }
    }
    Ok(PaCurve {
        thresholds: grid.to_vec(),
        scores,
        per_repeat,
        repeats_averaged: repeats.len(),
    })
}

/// Signed difference `pa_at_90 - seed_sa`, as a fraction.
pub fn qt_delta(seed_sa: f64, pa_at_90: f64) -> f64 {
    pa_at_90 - seed_sa
}

/// Grid threshold whose PA is closest to `target_sa`; ties go to the larger
/// threshold.
pub fn matching_threshold(curve: &PaCurve, target_sa: f64) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (&t, &s) in curve.thresholds.iter().zip(&curve.scores) {
        let gap = (s - target_sa).abs();
        match best {
            Some((g, _)) if gap > g => {}
            _ => best = Some((gap, t)),
        }
    }
    best.map(|(_, t)| t)
}

/// Most frequent label; ties resolve as entailment, then neutral, then
/// contradiction.
pub fn majority_label<I: IntoIterator<Item = Label>>(labels: I) -> Option<Label> {
    let mut counts = [0usize; 3];
    for l in labels {
        counts[match l {
            Label::Entailment => 0,
            Label::Neutral => 1,
            Label::Contradiction => 2,
        }] += 1;
    }
    let order = [Label::Entailment, Label::Neutral, Label::Contradiction];
    let max = *counts.iter().max()?;
    if max == 0 {
        return None;
    }
    order.into_iter().zip(counts).find(|&(_, c)| c == max).map(|(l, _)| l)
}

/// Predicts the seeds' majority label for every item.
pub fn majority_baseline<S: Scored, T: Scored>(
    seeds: &[S],
    items: &[T],
    model_id: &str,
) -> Result<PredictionTable, EvalError> {
    let label = majority_label(seeds.iter().map(Scored::gold)).ok_or(EvalError::EmptyDataset)?;
    Ok(PredictionTable {
        model_id: model_id.to_string(),
        labels: items.iter().map(|i| (i.item_id().to_string(), label)).collect(),
    })
}

/// Architecture and size of a scorer model or of an NLI model's base.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelBase {
    pub architecture: String,
    pub size_tag: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OriginBucket {
    Equiv,
    Size,
    Multi,
    Arch,
}

impl OriginBucket {
    pub const ALL: [OriginBucket; 4] = [
        OriginBucket::Equiv,
        OriginBucket::Size,
        OriginBucket::Multi,
        OriginBucket::Arch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OriginBucket::Equiv => "EQUIV",
            OriginBucket::Size => "SIZE",
            OriginBucket::Multi => "MULTI",
            OriginBucket::Arch => "ARCH",
        }
    }
}

impl fmt::Display for OriginBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OriginSplit<'a> {
    pub buckets: BTreeMap<OriginBucket, Vec<&'a Variant>>,
    /// The evaluated model has no known base, so everything sits in `ARCH`.
    pub no_base: bool,
    /// Variants attributed through the premise/hypothesis union because no
    /// model validated them in both sentences.
    pub union_fallback: Vec<&'a str>,
}

/// Partitions variants by which scorer models produced them relative to the
/// base of the evaluated NLI model.
pub fn origin_split<'a>(
    variants: &'a [Variant],
    roster: &BTreeMap<String, ModelBase>,
    base: Option<&ModelBase>,
) -> Result<OriginSplit<'a>, EvalError> {
    let mut buckets: BTreeMap<OriginBucket, Vec<&Variant>> =
        OriginBucket::ALL.into_iter().map(|b| (b, Vec::new())).collect();
    let mut union_fallback = Vec::new();
    for v in variants {
        let origin = origin_models(&v.provenance_p, &v.provenance_h);
        if origin.union_fallback {
            union_fallback.push(v.id.as_str());
        }
        let mut meta = Vec::new();
        for m in &origin.models {
            meta.push(roster.get(m).ok_or_else(|| EvalError::UnknownProvenanceModel {
                variant: v.id.clone(),
                model: m.clone(),
            })?);
        }
        let bucket = match (base, meta.as_slice()) {
            (None, _) => OriginBucket::Arch,
            (Some(_), [_, _, ..]) => OriginBucket::Multi,
            (Some(b), [only]) if only.architecture == b.architecture => {
                if only.size_tag == b.size_tag {
                    OriginBucket::Equiv
                } else {
                    OriginBucket::Size
                }
            }
            (Some(_), _) => OriginBucket::Arch,
        };
        buckets.entry(bucket).or_default().push(v);
    }
    Ok(OriginSplit {
        buckets,
        no_base: base.is_none(),
        union_fallback,
    })
}

/// Seeds sharing words of both classes, with each class's variants kept apart.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSplit<'a> {
    pub classes: (WordClass, WordClass),
    pub seeds: BTreeSet<&'a str>,
    pub first: Vec<&'a Variant>,
    pub second: Vec<&'a Variant>,
}

impl PairSplit<'_> {
    pub fn name(&self) -> String {
        alloc::format!("{}-{}", self.classes.0.letter(), self.classes.1.letter())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSplits<'a> {
    pub per_class: BTreeMap<WordClass, Vec<&'a Variant>>,
    pub pairs: Vec<PairSplit<'a>>,
}

pub const CLASS_PAIRS: [(WordClass, WordClass); 3] = [
    (WordClass::Noun, WordClass::Verb),
    (WordClass::Noun, WordClass::Adjective),
    (WordClass::Verb, WordClass::Adjective),
];

pub fn class_splits(variants: &[Variant]) -> ClassSplits<'_> {
    let mut per_class: BTreeMap<WordClass, Vec<&Variant>> = BTreeMap::new();
    let mut seeds_of: BTreeMap<WordClass, BTreeSet<&str>> = BTreeMap::new();
    for v in variants {
        per_class.entry(v.replaced_class).or_default().push(v);
        seeds_of.entry(v.replaced_class).or_default().insert(&v.seed_id);
    }
    let empty = BTreeSet::new();
    let pairs = CLASS_PAIRS
        .into_iter()
        .map(|(a, b)| {
            let sa = seeds_of.get(&a).unwrap_or(&empty);
            let sb = seeds_of.get(&b).unwrap_or(&empty);
            let seeds: BTreeSet<&str> = sa.intersection(sb).copied().collect();
            let pick = |c: WordClass| -> Vec<&Variant> {
                per_class
                    .get(&c)
                    .map(|vs| vs.iter().copied().filter(|v| seeds.contains(v.seed_id.as_str())).collect())
                    .unwrap_or_default()
            };
            PairSplit {
                classes: (a, b),
                first: pick(a),
                second: pick(b),
                seeds,
            }
        })
        .collect();
    ClassSplits { per_class, pairs }
}

/// Original and replacement token of one variant, for external frequency
/// analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacementPair {
    pub original: String,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardSeed {
    pub seed_id: String,
    pub gold: Label,
    /// Mean over models of the per-seed fraction correct.
    pub mean_accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub zero_correct: bool,
    pub pairs: Vec<ReplacementPair>,
}

/// Seeds whose mean accuracy over all models is below `floor`, or that no
/// model gets right on any variant.
pub fn hard_seed_report(
    tables: &[PredictionTable],
    variants: &[Variant],
    floor: f64,
) -> Result<Vec<HardSeed>, EvalError> {
    if tables.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let per_model = tables
        .iter()
        .map(|t| per_seed_scores(t, variants))
        .collect::<Result<Vec<_>, _>>()?;
    let mut seeds: BTreeMap<&str, (Label, Vec<ReplacementPair>)> = BTreeMap::new();
    for v in variants {
        let e = seeds.entry(&v.seed_id).or_insert_with(|| (v.label, Vec::new()));
        e.1.push(ReplacementPair {
            original: v.shared_word.surface.clone(),
            replacement: v.replacement.clone(),
        });
    }
    let mut out = Vec::new();
    for (seed, (gold, pairs)) in seeds {
        let mut fraction_sum = 0.0;
        let mut correct = 0;
        let mut total = 0;
        for scores in &per_model {
            let s = scores[seed];
            fraction_sum += s.fraction();
            correct += s.correct;
            total += s.total;
        }
        let mean_accuracy = fraction_sum / per_model.len() as f64;
        let zero_correct = correct == 0;
        if zero_correct || mean_accuracy < floor {
            out.push(HardSeed {
                seed_id: seed.to_string(),
                gold,
                mean_accuracy,
                correct,
                total,
                zero_correct,
                pairs,
            });
        }
    }
    Ok(out)
}

/// How many seeds of a dataset have at least one item in a subsample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub seeds: usize,
    pub covered: usize,
}

pub fn coverage<T: Scored>(seed_ids: &BTreeSet<String>, items: &[T]) -> Coverage {
    let covered: BTreeSet<&str> = items
        .iter()
        .map(Scored::seed_id)
        .filter(|s| seed_ids.contains(*s))
        .collect();
    Coverage {
        seeds: seed_ids.len(),
        covered: covered.len(),
    }
}
