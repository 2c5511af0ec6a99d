//! JSONL record shapes and line-numbered readers and writers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use merge_core::lexical::tokenize;
use merge_core::suggestion::{CandidateProvenance, PositionHarvest, SuggestionSet, WordHarvest};
use merge_core::types::validate_dataset;
use merge_core::variant::AblationMode;
use merge_core::{Label, NliProblem, SharedWord, Variant, WordClass};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Parses every non-blank line of a JSONL file.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CliError::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Like [`read_jsonl`], but stops quietly at a malformed final line, which is
/// what an interrupted appender leaves behind.
pub fn read_jsonl_prefix<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => {
                return Err(CliError::Format {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub fn to_line<T: Serialize>(record: &T) -> String {
    let mut s = serde_json::to_string(record).expect("records serialize");
    s.push('\n');
    s
}

/// Writes a file through a temporary sibling so readers never see half of it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_jsonl<'a, T: Serialize + 'a, I: IntoIterator<Item = &'a T>>(
    path: &Path,
    records: I,
) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = BufWriter::new(&mut buf);
        for r in records {
            w.write_all(to_line(r).as_bytes())
                .map_err(|e| CliError::io(path, e))?;
        }
    }
    write_atomic(path, &buf)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("values serialize");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// A sentence given either pre-tokenized or as raw text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SentenceField {
    Tokens(Vec<String>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: String,
    pub premise: SentenceField,
    pub hypothesis: SentenceField,
    pub label: Label,
}

fn tokens_of(field: SentenceField) -> Vec<String> {
    match field {
        SentenceField::Tokens(t) => t,
        // Empty text turns into an empty sentence, which validation reports.
        SentenceField::Text(s) => tokenize(&s).unwrap_or_default(),
    }
}

/// Reads and validates seed problems.
pub fn read_problems(path: &Path) -> Result<Vec<NliProblem>> {
    let records: Vec<ProblemRecord> = read_jsonl(path)?;
    let problems = records
        .into_iter()
        .map(|r| NliProblem {
            id: r.id,
            premise: tokens_of(r.premise),
            hypothesis: tokens_of(r.hypothesis),
            label: r.label,
        })
        .collect();
    validate_dataset(problems).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedWordRecord {
    pub seed_id: String,
    pub surface: String,
    pub class: WordClass,
    pub premise_positions: Vec<usize>,
    pub hypothesis_positions: Vec<usize>,
}

impl SharedWordRecord {
    pub fn new(seed_id: &str, w: &SharedWord) -> Self {
        SharedWordRecord {
            seed_id: seed_id.to_string(),
            surface: w.surface.clone(),
            class: w.word_class,
            premise_positions: w.premise_positions.clone(),
            hypothesis_positions: w.hypothesis_positions.clone(),
        }
    }

    pub fn shared_word(&self) -> SharedWord {
        SharedWord {
            surface: self.surface.clone(),
            word_class: self.class,
            premise_positions: self.premise_positions.clone(),
            hypothesis_positions: self.hypothesis_positions.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub token: String,
    pub models_p: BTreeSet<String>,
    pub models_h: BTreeSet<String>,
    pub prob_p: BTreeMap<String, f64>,
    pub prob_h: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionRecord {
    pub seed_id: String,
    pub surface: String,
    pub class: WordClass,
    pub premise_positions: Vec<usize>,
    pub hypothesis_positions: Vec<usize>,
    pub candidates: Vec<CandidateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub harvest: Option<Vec<PositionHarvest>>,
}

impl SuggestionRecord {
    pub fn new(set: &SuggestionSet) -> Self {
        let w = &set.shared_word;
        SuggestionRecord {
            seed_id: set.seed_id.clone(),
            surface: w.surface.clone(),
            class: w.word_class,
            premise_positions: w.premise_positions.clone(),
            hypothesis_positions: w.hypothesis_positions.clone(),
            candidates: set
                .entries
                .iter()
                .map(|(token, prov)| CandidateRecord {
                    token: token.clone(),
                    models_p: prov.models_p(),
                    models_h: prov.models_h(),
                    prob_p: prov.prob_p.clone(),
                    prob_h: prov.prob_h.clone(),
                })
                .collect(),
            harvest: set.harvest.as_ref().map(|h| h.positions.clone()),
        }
    }

    pub fn into_set(self) -> SuggestionSet {
        SuggestionSet {
            shared_word: SharedWord {
                surface: self.surface,
                word_class: self.class,
                premise_positions: self.premise_positions,
                hypothesis_positions: self.hypothesis_positions,
            },
            seed_id: self.seed_id,
            entries: self
                .candidates
                .into_iter()
                .map(|c| {
                    (
                        c.token,
                        CandidateProvenance {
                            prob_p: c.prob_p,
                            prob_h: c.prob_h,
                        },
                    )
                })
                .collect(),
            harvest: self.harvest.map(|positions| WordHarvest { positions }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantRecord {
    pub id: String,
    pub seed_id: String,
    pub class: WordClass,
    pub surface: String,
    pub replacement: String,
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: Label,
    pub provenance_p: BTreeSet<String>,
    pub provenance_h: BTreeSet<String>,
    pub mode: AblationMode,
    pub repeat: usize,
    pub premise_positions: Vec<usize>,
    pub hypothesis_positions: Vec<usize>,
}

impl VariantRecord {
    pub fn new(v: &Variant, mode: AblationMode, repeat: usize) -> Self {
        VariantRecord {
            id: v.id.clone(),
            seed_id: v.seed_id.clone(),
            class: v.replaced_class,
            surface: v.shared_word.surface.clone(),
            replacement: v.replacement.clone(),
            premise: v.premise.clone(),
            hypothesis: v.hypothesis.clone(),
            label: v.label,
            provenance_p: v.provenance_p.clone(),
            provenance_h: v.provenance_h.clone(),
            mode,
            repeat,
            premise_positions: v.shared_word.premise_positions.clone(),
            hypothesis_positions: v.shared_word.hypothesis_positions.clone(),
        }
    }

    pub fn into_variant(self) -> Variant {
        Variant {
            id: self.id,
            seed_id: self.seed_id,
            shared_word: SharedWord {
                surface: self.surface,
                word_class: self.class,
                premise_positions: self.premise_positions,
                hypothesis_positions: self.hypothesis_positions,
            },
            replacement: self.replacement,
            premise: self.premise,
            hypothesis: self.hypothesis,
            label: self.label,
            provenance_p: self.provenance_p,
            provenance_h: self.provenance_h,
            replaced_class: self.class,
        }
    }
}
