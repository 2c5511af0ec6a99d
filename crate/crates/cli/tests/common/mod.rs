#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use merge_cli::{pipeline, reports, PipelineConfig};
use merge_core::hash::{keyed_stream, StableHasher};
use merge_core::Label;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Value};

const NOUNS: [&str; 12] = [
    "man", "woman", "girl", "boy", "dog", "cat", "horse", "child", "bird", "teen", "car", "bike",
];
const PLACES: [&str; 6] = ["park", "beach", "street", "field", "water", "tree"];
const VERBS: [&str; 8] = ["runs", "walks", "sits", "stands", "jumps", "plays", "swims", "climbs"];
const ADJS: [&str; 6] = ["small", "big", "young", "old", "happy", "tall"];

/// Seed problems assembled from the synthetic vocabulary, so every shared
/// word has in-vocabulary competitors.
pub fn problems(n: usize, seed: u64) -> Vec<Value> {
    let mut rng = keyed_stream(seed);
    (0..n)
        .map(|i| {
            let noun = *NOUNS.choose(&mut rng).unwrap();
            let place = *PLACES.choose(&mut rng).unwrap();
            let verb = *VERBS.choose(&mut rng).unwrap();
            let adj = *ADJS.choose(&mut rng).unwrap();
            let (premise, hypothesis) = match rng.random_range(0..3) {
                0 => (
                    format!("A {adj} {noun} {verb} in the {place} ."),
                    format!("The {noun} {verb} ."),
                ),
                1 => (
                    format!("The {adj} {noun} {verb} near a {place} ."),
                    format!("A {adj} {noun} is in the {place} ."),
                ),
                _ => (
                    format!("A {noun} {verb} and the {noun} is {adj} ."),
                    format!("The {adj} {noun} {verb} ."),
                ),
            };
            let label = ["E", "N", "C"][rng.random_range(0..3)];
            json!({"id": format!("p{i:03}"), "premise": premise, "hypothesis": hypothesis, "label": label})
        })
        .collect()
}

pub fn write_lines(path: &Path, rows: &[Value]) {
    let mut text = String::new();
    for r in rows {
        text.push_str(&r.to_string());
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

pub fn synthetic_scorers(ids: &[(&str, &str, &str)]) -> Value {
    Value::Array(
        ids.iter()
            .map(|(id, arch, size)| json!({"id": id, "architecture": arch, "size_tag": size, "kind": "SYNTHETIC"}))
            .collect(),
    )
}

/// Writes a problems file and a config into `dir`; `extra` fields override
/// the defaults. Returns the config path.
pub fn workspace(dir: &Path, problems: &[Value], extra: Value) -> PathBuf {
    write_lines(&dir.join("problems.jsonl"), problems);
    let mut cfg = json!({
        "problems": "problems.jsonl",
        "work_dir": "work",
        "predictions": ["predictions.jsonl"],
        "scorers": synthetic_scorers(&[("syn-bert-base", "bert", "base"), ("syn-roberta-large", "roberta", "large")]),
        "min_total": 4,
        "plan": {"degree_d": 3, "repeats": 4, "rng_seed": 7},
        "modes": ["STANDARD", "UNION_PH", "POS_ONLY", "PROB_ONLY", "NONE", "SCRAMBLED"],
        "base_models": {
            "nli-bert": {"architecture": "bert", "size_tag": "base"},
            "nli-roberta": {"architecture": "roberta", "size_tag": "large"},
        },
    });
    if let (Some(base), Value::Object(over)) = (cfg.as_object_mut(), extra) {
        for (k, v) in over {
            base.insert(k, v);
        }
    }
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn ids_in(path: &Path, key: &str) -> Vec<(String, Label)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            let label: Label = serde_json::from_value(v["label"].clone()).unwrap();
            (v[key].as_str().unwrap().to_string(), label)
        })
        .collect()
}

/// Deterministic pseudo-model: correct on roughly `accuracy_pct` percent of
/// items, chosen by hashing the model and item ids.
pub fn predict(model: &str, id: &str, gold: Label, accuracy_pct: u64) -> Label {
    let h = StableHasher::new().str(model).str(id).finish() % 100;
    if h < accuracy_pct {
        return gold;
    }
    let i = Label::ALL.iter().position(|l| *l == gold).unwrap();
    Label::ALL[(i + 1 + (h as usize % 2)) % 3]
}

/// Predictions for every seed and built variant from two pseudo-models.
pub fn write_predictions(cfg: &PipelineConfig) {
    let datasets = cfg.datasets_dir();
    let mut items: BTreeMap<String, Label> = ids_in(&datasets.join("seeds.jsonl"), "id").into_iter().collect();
    for entry in fs::read_dir(&datasets).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "jsonl") && p.file_name().unwrap() != "seeds.jsonl" {
            items.extend(ids_in(&p, "id"));
        }
    }
    let mut rows = Vec::new();
    for (model, acc) in [("nli-bert", 88), ("nli-roberta", 72)] {
        for (id, gold) in &items {
            rows.push(json!({"nli_model_id": model, "item_id": id, "predicted": predict(model, id, *gold, acc)}));
        }
    }
    write_lines(&cfg.predictions[0], &rows);
}

/// analyze, suggest, build, evaluate and stats in process.
pub fn run_all(config: &Path, workers: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(config).unwrap();
    cfg.workers = workers;
    pipeline::analyze(&cfg).unwrap();
    pipeline::suggest(&cfg, Some(workers)).unwrap();
    pipeline::build(&cfg, None, None).unwrap();
    write_predictions(&cfg);
    let cfg = PipelineConfig::load(config).unwrap();
    reports::evaluate(&cfg, None).unwrap();
    reports::stats(&cfg, None).unwrap();
    cfg
}

/// Relative path to contents for every file under `root`.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
