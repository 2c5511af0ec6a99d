//! Pipeline configuration, loaded from a single JSON file.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every tunable constant of the method has a field whose default is
//! the published setting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use merge_core::evaluation::{default_grid, ModelBase, DEFAULT_HARD_FLOOR};
use merge_core::lexical::{TaggerKind, TaggerProvider};
use merge_core::scorer::{validate_roster, ScorerKind, ScorerModel};
use merge_core::suggestion::DEFAULT_TOP_K;
use merge_core::variant::{AblationMode, SubsamplePlan, DEFAULT_MIN_TOTAL};
use merge_core::WordClass;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Overrides the endpoint of every remote scorer and of a remote tagger.
pub const SCORER_URL_ENV: &str = "MERGE_SCORER_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed problems, one JSON object per line.
    pub problems: PathBuf,
    /// Directory receiving every intermediate and final output.
    pub work_dir: PathBuf,
    /// Prediction files consumed by `evaluate` and `stats`.
    #[serde(default)]
    pub predictions: Vec<PathBuf>,
    pub scorers: Vec<ScorerModel>,
    #[serde(default = "TaggerProvider::builtin")]
    pub tagger: TaggerProvider,
    /// Extra `word<TAB>CLASS` entries for the builtin tagger.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    /// Word list for synthetic scorers; the shipped list when absent.
    #[serde(default)]
    pub synthetic_vocabulary: Option<PathBuf>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_min_total")]
    pub min_total: usize,
    #[serde(default)]
    pub plan: SubsamplePlan,
    /// Word classes whose shared words are replaced.
    #[serde(default = "default_replace_classes")]
    pub replace_classes: Vec<WordClass>,
    #[serde(default = "default_modes")]
    pub modes: Vec<AblationMode>,
    #[serde(default = "default_grid")]
    pub threshold_grid: Vec<f64>,
    /// NLI model id to the architecture and size of its base masked LM.
    #[serde(default)]
    pub base_models: BTreeMap<String, Option<ModelBase>>,
    #[serde(default = "default_hard_floor")]
    pub hard_seed_floor: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Concurrent requests allowed per remote model.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Also score a majority-label baseline in `evaluate`.
    #[serde(default = "default_true")]
    pub majority_baseline: bool,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_min_total() -> usize {
    DEFAULT_MIN_TOTAL
}
fn default_replace_classes() -> Vec<WordClass> {
    vec![WordClass::Noun, WordClass::Verb, WordClass::Adjective]
}
fn default_modes() -> Vec<AblationMode> {
    vec![AblationMode::Standard]
}
fn default_hard_floor() -> f64 {
    DEFAULT_HARD_FLOOR
}
fn default_workers() -> usize {
    1
}
fn default_in_flight() -> usize {
    4
}
fn default_true() -> bool {
    true
}

impl PipelineConfig {
    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| CliError::Format {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply_env(std::env::var(SCORER_URL_ENV).ok().as_deref());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.problems);
        fix(&mut self.work_dir);
        self.predictions.iter_mut().for_each(fix);
        if let Some(p) = self.lexicon.as_mut() {
            fix(p);
        }
        if let Some(p) = self.synthetic_vocabulary.as_mut() {
            fix(p);
        }
    }

    pub fn apply_env(&mut self, url: Option<&str>) {
        let Some(url) = url.filter(|u| !u.is_empty()) else {
            return;
        };
        for m in &mut self.scorers {
            if m.kind == ScorerKind::Remote {
                m.endpoint = Some(url.to_string());
            }
        }
        if self.tagger.kind == TaggerKind::Remote {
            self.tagger.endpoint = Some(url.to_string());
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_roster(&self.scorers).map_err(|e| CliError::Config(e.to_string()))?;
        self.tagger
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.plan
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.top_k == 0 {
            return Err(CliError::Config("top_k must be at least 1".into()));
        }
        if self.min_total == 0 {
            return Err(CliError::Config("min_total must be at least 1".into()));
        }
        if self.workers == 0 || self.max_in_flight == 0 {
            return Err(CliError::Config("workers and max_in_flight must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(CliError::Config("at least one mode is required".into()));
        }
        let grid = &self.threshold_grid;
        if grid.is_empty()
            || grid.windows(2).any(|w| w[0] >= w[1])
            || grid.iter().any(|t| !(0.0..=1.0).contains(t))
        {
            return Err(CliError::Config(
                "threshold_grid must be ascending fractions in [0, 1]".into(),
            ));
        }
        // Prediction files are checked by the stages that read them, so the
        // generation stages can run before any model has been evaluated.
        let mut paths = vec![&self.problems];
        paths.extend(self.lexicon.iter());
        paths.extend(self.synthetic_vocabulary.iter());
        for p in paths {
            if !p.exists() {
                return Err(CliError::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn datasets_dir(&self) -> PathBuf {
        self.work_dir.join("datasets")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.work_dir.join("reports")
    }

    pub fn shared_words_path(&self) -> PathBuf {
        self.work_dir.join("shared_words.jsonl")
    }

    pub fn suggestions_path(&self) -> PathBuf {
        self.work_dir.join("suggestions.jsonl")
    }

    /// Architecture metadata of every configured scorer, keyed by id.
    pub fn roster(&self) -> BTreeMap<String, ModelBase> {
        self.scorers
            .iter()
            .map(|m| {
                (
                    m.id.clone(),
                    ModelBase {
                        architecture: m.architecture.clone(),
                        size_tag: m.size_tag.clone(),
                    },
                )
            })
            .collect()
    }
}
