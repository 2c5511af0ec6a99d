//! The `analyze`, `suggest` and `build` stages.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use log::info;
use merge_core::lexical::{extract_shared_words, BuiltinTagger, Lexicon, TaggerKind, Tagger, BUILTIN_LEXICON};
use merge_core::scorer::{default_vocabulary, MaskFillScorer, ScorerKind, SyntheticScorer, Vocabulary};
use merge_core::suggestion::{problem_suggestions, SuggestionSet};
use merge_core::variant::{
    build_ablation, build_subsamples, count_check, eligible_seeds, AblationMode, SampleUnit, ShortCell,
    SubsamplePlan,
};
use merge_core::{Label, NliProblem, TaggedSentence, WordClass};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::formats::{
    read_json, read_jsonl, read_jsonl_prefix, read_problems, to_line, write_atomic, write_json,
    write_jsonl, ProblemRecord, SentenceField, SharedWordRecord, SuggestionRecord, VariantRecord,
};
use crate::remote::{CallError, RemoteScorer, RemoteTagger, SidecarClient};

pub type SharedScorer = Box<dyn MaskFillScorer + Send + Sync>;
pub type SharedTagger = Box<dyn Tagger + Send + Sync>;

fn call_error(e: CallError) -> CliError {
    match e {
        CallError::Unavailable(m) => CliError::Unavailable(m),
        CallError::Protocol(m) => CliError::Validation(m),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn synthetic_vocabulary(cfg: &PipelineConfig) -> Result<Vocabulary> {
    match &cfg.synthetic_vocabulary {
        None => Ok(default_vocabulary()),
        Some(p) => Vocabulary::parse(&read_text(p)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", p.display()))),
    }
}

/// The configured tagger. The builtin tagger also learns the synthetic
/// vocabulary so every word a synthetic scorer proposes has a reading.
pub fn make_tagger(cfg: &PipelineConfig) -> Result<SharedTagger> {
    if cfg.tagger.kind == TaggerKind::Remote {
        let url = cfg.tagger.endpoint.as_deref().unwrap_or_default();
        let client = SidecarClient::new(url, cfg.max_in_flight).map_err(call_error)?;
        return Ok(Box::new(RemoteTagger::new(client)));
    }
    let mut lexicon = match &cfg.lexicon {
        None => Lexicon::builtin(),
        Some(p) => {
            let extra = read_text(p)?;
            Lexicon::parse(&extra).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            Lexicon::parse(&format!("{BUILTIN_LEXICON}\n{extra}"))
                .map_err(|e| CliError::Config(e.to_string()))?
        }
    };
    if cfg.scorers.iter().any(|m| m.kind == ScorerKind::Synthetic) {
        synthetic_vocabulary(cfg)?.extend_lexicon(&mut lexicon);
    }
    Ok(Box::new(BuiltinTagger::with_lexicon(lexicon)))
}

/// The configured scorers, in roster order. Remote models must be listed by
/// the sidecar serving them.
pub fn make_scorers(cfg: &PipelineConfig) -> Result<Vec<SharedScorer>> {
    let vocabulary = if cfg.scorers.iter().any(|m| m.kind == ScorerKind::Synthetic) {
        Some(synthetic_vocabulary(cfg)?)
    } else {
        None
    };
    let mut served: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut out: Vec<SharedScorer> = Vec::new();
    for m in &cfg.scorers {
        match m.kind {
            ScorerKind::Synthetic => {
                let v = vocabulary.clone().expect("vocabulary loaded for synthetic scorers");
                out.push(Box::new(SyntheticScorer::new(m.id.clone(), v)));
            }
            ScorerKind::Remote => {
                let url = m.endpoint.clone().unwrap_or_default();
                let client = SidecarClient::new(&url, cfg.max_in_flight).map_err(call_error)?;
                if !served.contains_key(&url) {
                    let ids = client
                        .list_models()
                        .map_err(call_error)?
                        .into_iter()
                        .map(|i| i.model_id)
                        .collect();
                    served.insert(url.clone(), ids);
                }
                if !served[&url].contains(&m.id) {
                    return Err(CliError::Unavailable(format!(
                        "SCORER_UNAVAILABLE: sidecar at {url} does not serve model {:?}",
                        m.id
                    )));
                }
                out.push(Box::new(RemoteScorer::new(&m.id, client)));
            }
        }
    }
    Ok(out)
}

/// Runs `work` over `jobs` on `workers` threads and hands results to `sink`
/// on the calling thread, in completion order. The first error stops the
/// pool and is returned.
pub fn run_pool<J, R, W, S>(jobs: &[J], workers: usize, work: W, mut sink: S) -> Result<()>
where
    J: Sync,
    R: Send,
    W: Fn(&J) -> Result<R> + Sync,
    S: FnMut(usize, R) -> Result<()>,
{
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<R>)>();
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1).min(jobs.len().max(1)) {
            let tx = tx.clone();
            let (next, stop, work) = (&next, &stop, &work);
            scope.spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                if tx.send((i, work(job))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut first_error = None;
        for (i, r) in rx {
            if first_error.is_some() {
                continue;
            }
            if let Err(e) = r.and_then(|r| sink(i, r)) {
                stop.store(true, Ordering::Relaxed);
                first_error = Some(e);
            }
        }
        first_error.map_or(Ok(()), Err)
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AnalyzeSummary {
    pub problems: usize,
    pub shared_words: usize,
    /// Shared words per class.
    pub words_by_class: BTreeMap<WordClass, usize>,
    /// Seeds sharing at least one word of each class.
    pub seeds_by_class: BTreeMap<WordClass, usize>,
}

fn tag_problem(tagger: &dyn Tagger, p: &NliProblem) -> Result<(TaggedSentence, TaggedSentence)> {
    Ok((tagger.tag(&p.premise)?, tagger.tag(&p.hypothesis)?))
}

/// Extracts shared open-class words of every problem.
pub fn analyze(cfg: &PipelineConfig) -> Result<AnalyzeSummary> {
    let problems = read_problems(&cfg.problems)?;
    let tagger = make_tagger(cfg)?;
    let mut per_problem: Vec<Vec<SharedWordRecord>> = vec![Vec::new(); problems.len()];
    run_pool(
        &problems,
        cfg.workers,
        |p| {
            let (tp, th) = tag_problem(tagger.as_ref(), p)?;
            Ok(extract_shared_words(&tp, &th)
                .iter()
                .map(|w| SharedWordRecord::new(&p.id, w))
                .collect::<Vec<_>>())
        },
        |i, words| {
            per_problem[i] = words;
            Ok(())
        },
    )?;
    let mut summary = AnalyzeSummary {
        problems: problems.len(),
        ..Default::default()
    };
    for words in &per_problem {
        let mut classes = BTreeSet::new();
        for w in words {
            *summary.words_by_class.entry(w.class).or_default() += 1;
            classes.insert(w.class);
        }
        for c in classes {
            *summary.seeds_by_class.entry(c).or_default() += 1;
        }
    }
    let records: Vec<&SharedWordRecord> = per_problem.iter().flatten().collect();
    summary.shared_words = records.len();
    write_jsonl(&cfg.shared_words_path(), records)?;
    info!("analyze: {} problems, {} shared words", summary.problems, summary.shared_words);
    Ok(summary)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SuggestSummary {
    pub words: usize,
    pub resumed: usize,
    pub computed: usize,
}

fn problems_by_id(problems: &[NliProblem]) -> BTreeMap<&str, (usize, &NliProblem)> {
    problems.iter().enumerate().map(|(i, p)| (p.id.as_str(), (i, p))).collect()
}

fn canonical_key(order: &BTreeMap<&str, (usize, &NliProblem)>, r: &SuggestionRecord) -> (usize, usize, String) {
    (
        order.get(r.seed_id.as_str()).map_or(usize::MAX, |(i, _)| *i),
        r.premise_positions.first().copied().unwrap_or(usize::MAX),
        r.surface.clone(),
    )
}

/// Harvests suggestion sets for every shared word of a replaced class.
///
/// Finished words found in an existing `suggestions.jsonl` are kept, so an
/// interrupted run resumes where it stopped. The file is rewritten in
/// canonical order at the end.
pub fn suggest(cfg: &PipelineConfig, workers: Option<usize>) -> Result<SuggestSummary> {
    let problems = read_problems(&cfg.problems)?;
    let order = problems_by_id(&problems);
    let words: Vec<SharedWordRecord> = read_jsonl(&cfg.shared_words_path())?;
    let replaced: BTreeSet<WordClass> = cfg.replace_classes.iter().copied().collect();
    let words: Vec<SharedWordRecord> = words.into_iter().filter(|w| replaced.contains(&w.class)).collect();
    for w in &words {
        if !order.contains_key(w.seed_id.as_str()) {
            return Err(CliError::Validation(format!(
                "shared word {:?} refers to unknown seed {:?}",
                w.surface, w.seed_id
            )));
        }
    }
    let wanted: BTreeSet<(&str, &str)> = words.iter().map(|w| (w.seed_id.as_str(), w.surface.as_str())).collect();

    let path = cfg.suggestions_path();
    let mut done: BTreeMap<(String, String), SuggestionRecord> = BTreeMap::new();
    if path.exists() {
        for r in read_jsonl_prefix::<SuggestionRecord>(&path)? {
            if wanted.contains(&(r.seed_id.as_str(), r.surface.as_str())) {
                done.insert((r.seed_id.clone(), r.surface.clone()), r);
            }
        }
    }
    let resumed = done.len();
    write_jsonl(&path, done.values())?;

    let mut jobs: BTreeMap<&str, Vec<&SharedWordRecord>> = BTreeMap::new();
    for w in &words {
        if !done.contains_key(&(w.seed_id.clone(), w.surface.clone())) {
            jobs.entry(&w.seed_id).or_default().push(w);
        }
    }
    let mut jobs: Vec<(&str, Vec<&SharedWordRecord>)> = jobs.into_iter().collect();
    jobs.sort_by_key(|(id, _)| order[id].0);

    let mut computed = 0;
    if !jobs.is_empty() {
        let scorers = make_scorers(cfg)?;
        let tagger = make_tagger(cfg)?;
        let mut file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        let scorers = &scorers;
        let tagger = tagger.as_ref();
        run_pool(
            &jobs,
            workers.unwrap_or(cfg.workers),
            |(seed_id, ws)| {
                let seed = order[seed_id].1;
                let (tp, th) = tag_problem(tagger, seed)?;
                let refs: Vec<&dyn MaskFillScorer> =
                    scorers.iter().map(|s| s.as_ref() as &dyn MaskFillScorer).collect();
                ws.iter()
                    .map(|w| {
                        let set = problem_suggestions(&refs, tagger, seed_id, &tp, &th, &w.shared_word(), cfg.top_k)?;
                        Ok(SuggestionRecord::new(&set))
                    })
                    .collect::<Result<Vec<_>>>()
            },
            |_, records| {
                for r in records {
                    file.write_all(to_line(&r).as_bytes())
                        .and_then(|_| file.flush())
                        .map_err(|e| CliError::io(&path, e))?;
                    computed += 1;
                    done.insert((r.seed_id.clone(), r.surface.clone()), r);
                }
                Ok(())
            },
        )?;
    }

    let mut all: Vec<&SuggestionRecord> = done.values().collect();
    all.sort_by_cached_key(|r| canonical_key(&order, r));
    write_jsonl(&path, all)?;
    info!("suggest: {resumed} resumed, {computed} computed");
    Ok(SuggestSummary {
        words: words.len(),
        resumed,
        computed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelShare {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

impl LabelShare {
    fn of<I: IntoIterator<Item = Label>>(labels: I) -> Self {
        let mut counts = [0usize; 3];
        for l in labels {
            counts[match l {
                Label::Entailment => 0,
                Label::Neutral => 1,
                Label::Contradiction => 2,
            }] += 1;
        }
        let total = counts.iter().sum::<usize>().max(1) as f64;
        LabelShare {
            entailment: counts[0] as f64 * 100.0 / total,
            neutral: counts[1] as f64 * 100.0 / total,
            contradiction: counts[2] as f64 * 100.0 / total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCounts {
    pub problems: usize,
    pub with_suggestions: usize,
    pub eligible: usize,
    pub eligible_by_class: BTreeMap<WordClass, usize>,
    pub labels: LabelShare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeManifest {
    pub mode: AblationMode,
    pub file: String,
    /// Distinct variants before subsampling.
    pub variants: usize,
    pub variants_by_class: BTreeMap<WordClass, usize>,
    pub seeds_with_variants: usize,
    pub labels: LabelShare,
    /// Variant count of each subsample repeat.
    pub subsample_sizes: Vec<usize>,
    /// Cells kept whole because fewer than the requested variants existed.
    pub short_cells: Vec<ShortCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub plan: SubsamplePlan,
    pub min_total: usize,
    pub replace_classes: Vec<WordClass>,
    pub seeds: SeedCounts,
    pub modes: Vec<ModeManifest>,
}

pub fn manifest_path(cfg: &PipelineConfig) -> std::path::PathBuf {
    cfg.datasets_dir().join("manifest.json")
}

pub fn mode_file(mode: AblationMode) -> String {
    format!("{}.jsonl", mode.as_str())
}

fn problem_record(p: &NliProblem) -> ProblemRecord {
    ProblemRecord {
        id: p.id.clone(),
        premise: SentenceField::Tokens(p.premise.clone()),
        hypothesis: SentenceField::Tokens(p.hypothesis.clone()),
        label: p.label,
    }
}

/// Builds the eligible seed set and one subsampled dataset per mode.
pub fn build(cfg: &PipelineConfig, mode: Option<AblationMode>, rng_seed: Option<u64>) -> Result<Manifest> {
    let problems = read_problems(&cfg.problems)?;
    let replaced: BTreeSet<WordClass> = cfg.replace_classes.iter().copied().collect();
    let sets: Vec<SuggestionSet> = read_jsonl::<SuggestionRecord>(&cfg.suggestions_path())?
        .into_iter()
        .map(SuggestionRecord::into_set)
        .filter(|s| replaced.contains(&s.shared_word.word_class))
        .collect();
    let with_suggestions = sets
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.seed_id.as_str())
        .collect::<BTreeSet<_>>()
        .len();
    let eligible = eligible_seeds(&sets, cfg.min_total);
    let sets: Vec<SuggestionSet> = sets.into_iter().filter(|s| eligible.contains(&s.seed_id)).collect();

    let seeds: Vec<&NliProblem> = problems.iter().filter(|p| eligible.contains(&p.id)).collect();
    let seed_map: BTreeMap<String, NliProblem> = seeds.iter().map(|p| (p.id.clone(), (*p).clone())).collect();
    let dir = cfg.datasets_dir();
    write_jsonl(&dir.join("seeds.jsonl"), &seeds.iter().map(|p| problem_record(p)).collect::<Vec<_>>())?;

    let mut eligible_by_class: BTreeMap<WordClass, BTreeSet<&str>> = BTreeMap::new();
    for s in &sets {
        if !s.is_empty() {
            eligible_by_class.entry(s.shared_word.word_class).or_default().insert(&s.seed_id);
        }
    }
    let mut plan = cfg.plan;
    if let Some(seed) = rng_seed {
        plan.rng_seed = seed;
    }
    let modes = match mode {
        Some(m) => vec![m],
        None => cfg.modes.clone(),
    };
    let seed_counts = SeedCounts {
        problems: problems.len(),
        with_suggestions,
        eligible: seeds.len(),
        eligible_by_class: eligible_by_class.iter().map(|(c, s)| (*c, s.len())).collect(),
        labels: LabelShare::of(seeds.iter().map(|p| p.label)),
    };

    let mut manifests = Vec::new();
    for mode in modes {
        let pool = build_ablation(&seed_map, &sets, mode, plan.rng_seed)?;
        let subs = build_subsamples(&pool, &plan)?;
        if plan.unit == SampleUnit::Word {
            for rep in &subs.repeats {
                if let Some(bad) = count_check(&pool, rep, plan.degree_d)
                    .into_iter()
                    .find(|c| c.deficits.is_empty() && !c.holds())
                {
                    return Err(CliError::Invariant(format!(
                        "{mode}: seed {:?} class {} holds {} variants, expected {}",
                        bad.seed_id, bad.class, bad.actual, bad.expected
                    )));
                }
            }
        }
        let mut lines = String::new();
        for (r, rep) in subs.repeats.iter().enumerate() {
            for v in rep {
                lines.push_str(&to_line(&VariantRecord::new(v, mode, r)));
            }
        }
        let file = mode_file(mode);
        write_atomic(&dir.join(&file), lines.as_bytes())?;
        let mut by_class: BTreeMap<WordClass, usize> = BTreeMap::new();
        for v in &pool {
            *by_class.entry(v.replaced_class).or_default() += 1;
        }
        manifests.push(ModeManifest {
            mode,
            file,
            variants: pool.len(),
            variants_by_class: by_class,
            seeds_with_variants: pool.iter().map(|v| v.seed_id.as_str()).collect::<BTreeSet<_>>().len(),
            labels: LabelShare::of(pool.iter().map(|v| v.label)),
            subsample_sizes: subs.repeats.iter().map(Vec::len).collect(),
            short_cells: subs.short_cells,
        });
        info!("build: {mode} holds {} variants", pool.len());
    }
    // Keep entries for modes built earlier with the same plan.
    let path = manifest_path(cfg);
    if mode.is_some() && path.exists() {
        let old: Manifest = read_json(&path)?;
        if old.plan == plan {
            for m in old.modes {
                if !manifests.iter().any(|n| n.mode == m.mode) {
                    manifests.push(m);
                }
            }
        }
    }
    manifests.sort_by_key(|m| m.mode);
    let manifest = Manifest {
        plan,
        min_total: cfg.min_total,
        replace_classes: cfg.replace_classes.clone(),
        seeds: seed_counts,
        modes: manifests,
    };
    write_json(&path, &manifest)?;
    Ok(manifest)
}

/// Subsample repeats of one built mode, in repeat order.
pub fn load_mode(cfg: &PipelineConfig, m: &ModeManifest, repeats: usize) -> Result<Vec<Vec<merge_core::Variant>>> {
    let path = cfg.datasets_dir().join(&m.file);
    let mut out = vec![Vec::new(); repeats];
    for r in read_jsonl::<VariantRecord>(&path)? {
        let slot = out.get_mut(r.repeat).ok_or_else(|| {
            CliError::Validation(format!("{}: variant {:?} names repeat {} of {repeats}", path.display(), r.id, r.repeat))
        })?;
        slot.push(r.into_variant());
    }
    Ok(out)
}

pub fn load_seeds(cfg: &PipelineConfig) -> Result<Vec<NliProblem>> {
    read_problems(&cfg.datasets_dir().join("seeds.jsonl"))
}
