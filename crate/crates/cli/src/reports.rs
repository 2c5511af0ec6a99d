//! The `evaluate` and `stats` stages.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::info;
use merge_core::evaluation::{
    class_splits, coverage, hard_seed_report, majority_label, matching_threshold, origin_split,
    pa_curve, pattern_accuracy, per_seed_scores, qt_delta, sample_accuracy, OriginBucket, PaCurve,
    PredictionRecord, PredictionTable, CLASS_PAIRS, QUALITY_THRESHOLD,
};
use merge_core::stats::{independent_t_test, paired_t_test, TTestKind, TTestResult};
use merge_core::variant::AblationMode;
use merge_core::{NliProblem, Variant, WordClass};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::formats::{read_json, read_jsonl, write_atomic, write_jsonl};
use crate::pipeline::{load_mode, load_seeds, manifest_path, Manifest, ModeManifest};

/// Model id under which the majority-label baseline is reported.
pub const MAJORITY_MODEL: &str = "majority-baseline";

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::Invariant(format!("csv: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| CliError::Invariant(format!("csv: {e}")))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

/// Everything `evaluate` and `stats` share for one mode.
struct ModeData {
    mode: AblationMode,
    repeats: Vec<Vec<Variant>>,
    /// Distinct variants over all repeats, sorted by id.
    distinct: Vec<Variant>,
}

struct Context {
    seeds: Vec<NliProblem>,
    modes: Vec<ModeData>,
    tables: Vec<PredictionTable>,
    repeats: usize,
}

fn distinct(repeats: &[Vec<Variant>]) -> Vec<Variant> {
    let mut by_id: BTreeMap<&str, &Variant> = BTreeMap::new();
    for v in repeats.iter().flatten() {
        by_id.entry(&v.id).or_insert(v);
    }
    by_id.into_values().cloned().collect()
}

fn load_context(cfg: &PipelineConfig, only: Option<AblationMode>) -> Result<Context> {
    if cfg.predictions.is_empty() {
        return Err(CliError::Config("no prediction files configured".into()));
    }
    let manifest: Manifest = read_json(&manifest_path(cfg))?;
    let repeats = manifest.plan.repeats;
    let seeds = load_seeds(cfg)?;
    let chosen: Vec<&ModeManifest> = match only {
        Some(m) => vec![manifest
            .modes
            .iter()
            .find(|x| x.mode == m)
            .ok_or_else(|| CliError::Config(format!("mode {m} has not been built")))?],
        None => manifest.modes.iter().collect(),
    };
    let mut known: BTreeSet<String> = seeds.iter().map(|s| s.id.clone()).collect();
    let mut modes = Vec::new();
    for m in &manifest.modes {
        let reps = load_mode(cfg, m, repeats)?;
        if chosen.iter().any(|c| c.mode == m.mode) {
            let d = distinct(&reps);
            known.extend(d.iter().map(|v| v.id.clone()));
            modes.push(ModeData { mode: m.mode, repeats: reps, distinct: d });
        } else {
            known.extend(reps.iter().flatten().map(|v| v.id.clone()));
        }
    }
    let mut records: Vec<PredictionRecord> = Vec::new();
    for p in &cfg.predictions {
        records.extend(read_jsonl::<PredictionRecord>(p)?);
    }
    let models: BTreeSet<&str> = records.iter().map(|r| r.nli_model_id.as_str()).collect();
    let tables = models
        .into_iter()
        .map(|m| PredictionTable::from_records(m, &records, &known))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Context { seeds, modes, tables, repeats })
}

fn majority_table(seeds: &[NliProblem], mode: &ModeData) -> Result<PredictionTable> {
    let label = majority_label(seeds.iter().map(|s| s.label))
        .ok_or_else(|| CliError::Validation("no eligible seeds to take a majority over".into()))?;
    let labels = seeds
        .iter()
        .map(|s| s.id.clone())
        .chain(mode.distinct.iter().map(|v| v.id.clone()))
        .map(|id| (id, label))
        .collect();
    Ok(PredictionTable { model_id: MAJORITY_MODEL.into(), labels })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-repeat SA and PA@90 over the variants accepted by `keep`; `None` when
/// the filter leaves a repeat empty.
fn filtered_scores<F: Fn(&Variant) -> bool>(
    table: &PredictionTable,
    repeats: &[Vec<Variant>],
    keep: F,
) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let mut sa = Vec::new();
    let mut pa = Vec::new();
    for rep in repeats {
        let items: Vec<&Variant> = rep.iter().filter(|v| keep(v)).collect();
        if items.is_empty() {
            return Ok(None);
        }
        sa.push(sample_accuracy(table, &items)?);
        pa.push(pattern_accuracy(table, &items, QUALITY_THRESHOLD)?);
    }
    Ok(Some((sa, pa)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub nli_model_id: String,
    pub sa_seed: f64,
    pub sa_var: f64,
    pub pa_at_90: f64,
    /// `(PA@90 - SA_seed) × 100`.
    pub qt: f64,
    /// Matching threshold, in percent.
    pub mt: Option<f64>,
    pub seeds: usize,
    pub covered_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SplitRow {
    split: String,
    variants: usize,
    seeds: usize,
    sa: Option<f64>,
    pa_at_90: Option<f64>,
    note: String,
}

struct ModelEval {
    summary: SummaryRow,
    curve: PaCurve,
    pa90_per_repeat: Vec<f64>,
}

fn evaluate_model(
    cfg: &PipelineConfig,
    ctx: &Context,
    mode: &ModeData,
    table: &PredictionTable,
) -> Result<ModelEval> {
    let sa_seed = sample_accuracy(table, &ctx.seeds)?;
    let curve = pa_curve(table, &mode.repeats, &cfg.threshold_grid, Some(ctx.repeats))?;
    let sa_per_repeat = mode
        .repeats
        .iter()
        .map(|r| sample_accuracy(table, r))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let pa90_per_repeat = mode
        .repeats
        .iter()
        .map(|r| pattern_accuracy(table, r, QUALITY_THRESHOLD))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let pa_at_90 = mean(&pa90_per_repeat);
    let seed_ids: BTreeSet<String> = ctx.seeds.iter().map(|s| s.id.clone()).collect();
    let cov = coverage(&seed_ids, &mode.repeats[0]);
    Ok(ModelEval {
        summary: SummaryRow {
            nli_model_id: table.model_id.clone(),
            sa_seed,
            sa_var: mean(&sa_per_repeat),
            pa_at_90,
            qt: qt_delta(sa_seed, pa_at_90) * 100.0,
            mt: matching_threshold(&curve, sa_seed).map(|t| t * 100.0),
            seeds: cov.seeds,
            covered_seeds: cov.covered,
        },
        curve,
        pa90_per_repeat,
    })
}

fn pa_curve_csv(curve: &PaCurve) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["threshold".to_string(), "mean".to_string()];
    header.extend((0..curve.per_repeat.len()).map(|r| format!("repeat_{r}")));
    let err = |e: csv::Error| CliError::Invariant(format!("csv: {e}"));
    w.write_record(&header).map_err(err)?;
    for (i, t) in curve.thresholds.iter().enumerate() {
        let mut row = vec![t.to_string(), curve.scores[i].to_string()];
        row.extend(curve.per_repeat.iter().map(|c| c[i].to_string()));
        w.write_record(&row).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Invariant(format!("csv: {e}")))
}

fn split_row<F: Fn(&Variant) -> bool>(
    name: String,
    table: &PredictionTable,
    mode: &ModeData,
    keep: F,
    note: String,
) -> Result<SplitRow> {
    let members: Vec<&Variant> = mode.distinct.iter().filter(|v| keep(v)).collect();
    let seeds = members.iter().map(|v| v.seed_id.as_str()).collect::<BTreeSet<_>>().len();
    let scores = filtered_scores(table, &mode.repeats, &keep)?;
    Ok(SplitRow {
        split: name,
        variants: members.len(),
        seeds,
        sa: scores.as_ref().map(|(sa, _)| mean(sa)),
        pa_at_90: scores.as_ref().map(|(_, pa)| mean(pa)),
        note,
    })
}

fn write_splits(cfg: &PipelineConfig, dir: &Path, table: &PredictionTable, mode: &ModeData) -> Result<()> {
    let classes = class_splits(&mode.distinct);
    let mut rows = Vec::new();
    for c in WordClass::ALL {
        if classes.per_class.contains_key(&c) {
            rows.push(split_row(format!("{}_Var", c.letter()), table, mode, |v| v.replaced_class == c, String::new())?);
        }
    }
    write_csv(&dir.join("class.csv"), &rows)?;

    let mut rows = Vec::new();
    for pair in &classes.pairs {
        for c in [pair.classes.0, pair.classes.1] {
            let seeds = &pair.seeds;
            rows.push(split_row(
                format!("{}:{}", pair.name(), c.letter()),
                table,
                mode,
                |v| v.replaced_class == c && seeds.contains(v.seed_id.as_str()),
                String::new(),
            )?);
        }
    }
    write_csv(&dir.join("pairs.csv"), &rows)?;

    let base = cfg.base_models.get(&table.model_id).and_then(Option::as_ref);
    let split = origin_split(&mode.distinct, &cfg.roster(), base)?;
    let fallback: BTreeSet<&str> = split.union_fallback.iter().copied().collect();
    let mut rows = Vec::new();
    for bucket in OriginBucket::ALL {
        let ids: BTreeSet<&str> = split.buckets[&bucket].iter().map(|v| v.id.as_str()).collect();
        let flagged = ids.iter().filter(|i| fallback.contains(*i)).count();
        let mut note = Vec::new();
        if split.no_base {
            note.push("no base model".to_string());
        }
        if flagged > 0 {
            note.push(format!("{flagged} by premise/hypothesis union"));
        }
        rows.push(split_row(
            bucket.as_str().to_string(),
            table,
            mode,
            |v| ids.contains(v.id.as_str()),
            note.join("; "),
        )?);
    }
    write_csv(&dir.join("origin.csv"), &rows)
}

fn safe_name(model: &str) -> String {
    model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn all_tables(ctx: &Context, mode: &ModeData, cfg: &PipelineConfig) -> Result<Vec<PredictionTable>> {
    let mut tables = ctx.tables.clone();
    if cfg.majority_baseline {
        tables.push(majority_table(&ctx.seeds, mode)?);
    }
    Ok(tables)
}

/// Writes per-model curves, summaries and splits, plus the hard-seed report,
/// for each built mode.
pub fn evaluate(cfg: &PipelineConfig, only: Option<AblationMode>) -> Result<Vec<(AblationMode, Vec<SummaryRow>)>> {
    let ctx = load_context(cfg, only)?;
    let mut out = Vec::new();
    for mode in &ctx.modes {
        let dir = cfg.reports_dir().join(mode.mode.as_str());
        let mut summaries = Vec::new();
        for table in all_tables(&ctx, mode, cfg)? {
            let eval = evaluate_model(cfg, &ctx, mode, &table)?;
            let mdir = dir.join(safe_name(&table.model_id));
            write_atomic(&mdir.join("pa_curve.csv"), &pa_curve_csv(&eval.curve)?)?;
            write_csv(&mdir.join("summary.csv"), std::slice::from_ref(&eval.summary))?;
            write_splits(cfg, &mdir.join("splits"), &table, mode)?;
            summaries.push(eval.summary);
        }
        write_csv(&dir.join("summary.csv"), &summaries)?;
        let hard = hard_seed_report(&ctx.tables, &mode.distinct, cfg.hard_seed_floor)?;
        write_jsonl(&dir.join("hard_seeds.jsonl"), &hard)?;
        info!("evaluate: {} scored for {} models", mode.mode, summaries.len());
        out.push((mode.mode, summaries));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub comparison: String,
    pub kind: Option<TTestKind>,
    pub n: usize,
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p: Option<f64>,
    pub note: String,
}

fn stats_row(comparison: String, n: usize, r: std::result::Result<TTestResult, merge_core::stats::StatsError>) -> StatsRow {
    match r {
        Ok(r) => StatsRow {
            comparison,
            kind: Some(r.kind),
            n,
            t: Some(r.statistic),
            df: Some(r.degrees_freedom),
            p: Some(r.p_value),
            note: String::new(),
        },
        Err(e) => StatsRow {
            comparison,
            kind: None,
            n,
            t: None,
            df: None,
            p: None,
            note: e.to_string(),
        },
    }
}

/// Significance tests per mode.
///
/// * seed against variant accuracy, paired per seed (seed correctness
///   against mean per-seed variant accuracy over repeats);
/// * model against model at the quality threshold, paired per repeat;
/// * class dataset against class dataset, Welch over per-repeat PA@90.
pub fn stats(cfg: &PipelineConfig, only: Option<AblationMode>) -> Result<Vec<(AblationMode, Vec<StatsRow>)>> {
    let ctx = load_context(cfg, only)?;
    let mut out = Vec::new();
    for mode in &ctx.modes {
        let mut rows = Vec::new();
        let mut pa90: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for table in &ctx.tables {
            let per_repeat = mode
                .repeats
                .iter()
                .map(|r| per_seed_scores(table, r))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let mut a = Vec::new();
            let mut b = Vec::new();
            for seed in &ctx.seeds {
                let fractions: Vec<f64> = per_repeat
                    .iter()
                    .filter_map(|m| m.get(&seed.id).map(|s| s.fraction()))
                    .collect();
                if fractions.is_empty() {
                    continue;
                }
                a.push(f64::from(u8::from(table.get(&seed.id)? == seed.label)));
                b.push(mean(&fractions));
            }
            rows.push(stats_row(format!("sa_seed_vs_var/{}", table.model_id), a.len(), paired_t_test(&a, &b)));
            let eval = evaluate_model(cfg, &ctx, mode, table)?;
            pa90.insert(table.model_id.clone(), eval.pa90_per_repeat);

            for (x, y) in CLASS_PAIRS {
                let px = filtered_scores(table, &mode.repeats, |v| v.replaced_class == x)?;
                let py = filtered_scores(table, &mode.repeats, |v| v.replaced_class == y)?;
                if let (Some((_, px)), Some((_, py))) = (px, py) {
                    rows.push(stats_row(
                        format!("class_pa90/{}/{}_vs_{}", table.model_id, x.letter(), y.letter()),
                        px.len() + py.len(),
                        independent_t_test(&px, &py),
                    ));
                }
            }
        }
        let models: Vec<&String> = pa90.keys().collect();
        for (i, m1) in models.iter().enumerate() {
            for m2 in &models[i + 1..] {
                rows.push(stats_row(
                    format!("pa90/{m1}_vs_{m2}"),
                    pa90[*m1].len(),
                    paired_t_test(&pa90[*m1], &pa90[*m2]),
                ));
            }
        }
        write_csv(&cfg.reports_dir().join(mode.mode.as_str()).join("stats.csv"), &rows)?;
        out.push((mode.mode, rows));
    }
    Ok(out)
}
