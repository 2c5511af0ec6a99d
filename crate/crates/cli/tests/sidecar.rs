//! The sidecar HTTP contract, exercised against an in-process mock that
//! serves the synthetic scorer and the builtin tagger.

mod common;

use std::fs;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use merge_cli::pipeline;
use merge_cli::remote::{RemoteScorer, RemoteTagger, SidecarClient};
use merge_cli::PipelineConfig;
use merge_core::lexical::{tokenize, BuiltinTagger, Tagger};
use merge_core::scorer::{default_vocabulary, MaskFillScorer, ScorerError, SyntheticScorer, TokenScore};
use serde_json::{json, Value};

const MODEL: &str = "syn-a";

struct Mock {
    scorer: SyntheticScorer,
    tagger: BuiltinTagger,
    /// Number of upcoming requests answered with 503.
    loading: AtomicUsize,
    hits: AtomicUsize,
    corrupt: AtomicBool,
}

type Shared = Arc<Mock>;

fn bad_request(msg: &str) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({"error": msg}))).into_response()
}

fn gate(m: &Mock) -> Option<Response> {
    m.hits.fetch_add(1, Ordering::SeqCst);
    let busy = m
        .loading
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok();
    busy.then(|| (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "loading"}))).into_response())
}

#[allow(clippy::result_large_err)]
fn masked(body: &Value) -> Result<(Vec<String>, usize), Response> {
    if body["model_id"] != MODEL {
        return Err(bad_request("unknown model_id"));
    }
    let tokens: Vec<String> = serde_json::from_value(body["tokens"].clone()).map_err(|_| bad_request("tokens"))?;
    let i = body["mask_index"].as_u64().ok_or_else(|| bad_request("mask_index"))? as usize;
    if i >= tokens.len() {
        return Err(bad_request("mask_index out of range"));
    }
    Ok((tokens, i))
}

async fn models(State(m): State<Shared>) -> Response {
    m.hits.fetch_add(1, Ordering::SeqCst);
    Json(json!({"models": [{"model_id": MODEL, "architecture": "bert", "size_tag": "base"}]})).into_response()
}

async fn fill(State(m): State<Shared>, Json(body): Json<Value>) -> Response {
    if let Some(r) = gate(&m) {
        return r;
    }
    let (tokens, i) = match masked(&body) {
        Ok(x) => x,
        Err(r) => return r,
    };
    let k = body["top_k"].as_u64().unwrap_or(0) as usize;
    let mut cands = m.scorer.fill_mask(&tokens, i, k.max(1)).unwrap();
    // Ascending on the wire; the client must not rely on order.
    cands.reverse();
    let corrupt = m.corrupt.load(Ordering::SeqCst);
    let out: Vec<Value> = cands
        .iter()
        .map(|c| json!({"token": c.token, "prob": if corrupt { 1.5 } else { c.probability }}))
        .collect();
    Json(json!({"candidates": out})).into_response()
}

async fn score(State(m): State<Shared>, Json(body): Json<Value>) -> Response {
    if let Some(r) = gate(&m) {
        return r;
    }
    let (tokens, i) = match masked(&body) {
        Ok(x) => x,
        Err(r) => return r,
    };
    match m.scorer.score_token(&tokens, i, body["token"].as_str().unwrap_or("")).unwrap() {
        TokenScore::Probability(p) => Json(json!({"prob": p})).into_response(),
        TokenScore::NotInVocab => Json(json!({"not_in_vocab": true})).into_response(),
    }
}

async fn tag(State(m): State<Shared>, Json(body): Json<Value>) -> Response {
    if let Some(r) = gate(&m) {
        return r;
    }
    let tokens: Vec<String> = match serde_json::from_value(body["tokens"].clone()) {
        Ok(t) => t,
        Err(_) => return bad_request("tokens"),
    };
    let t = m.tagger.tag(&tokens).unwrap();
    let mut lemmas = t.lemmas;
    if m.corrupt.load(Ordering::SeqCst) {
        lemmas.pop();
    }
    Json(json!({"classes": t.classes, "lemmas": lemmas})).into_response()
}

fn mock() -> Shared {
    let vocab = default_vocabulary();
    let mut tagger = BuiltinTagger::new();
    vocab.extend_lexicon(tagger.lexicon_mut());
    Arc::new(Mock {
        scorer: SyntheticScorer::new(MODEL, vocab),
        tagger,
        loading: AtomicUsize::new(0),
        hits: AtomicUsize::new(0),
        corrupt: AtomicBool::new(false),
    })
}

fn serve(state: Shared) -> String {
    let app = Router::new()
        .route("/v1/models", get(models))
        .route("/v1/fill", post(fill))
        .route("/v1/score", post(score))
        .route("/v1/tag", post(tag))
        .with_state(state);
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

fn client(url: &str) -> SidecarClient {
    SidecarClient::new(url, 2).unwrap().with_backoff(Duration::from_millis(5))
}

fn sentences() -> Vec<Vec<String>> {
    [
        "A small girl runs in the park .",
        "The old man walks a dog near the water .",
        "Two happy boys play together outside .",
        "A teen rides a red bike on the street .",
        "The cat sits and the bird watches .",
    ]
    .iter()
    .map(|s| tokenize(s).unwrap())
    .collect()
}

#[test]
fn models_are_listed() {
    let url = serve(mock());
    let models = client(&url).list_models().unwrap();
    assert_eq!(models.len(), 1);
    assert_eq!(models[0].model_id, MODEL);
    assert_eq!(models[0].size_tag, "base");
}

#[test]
fn fill_is_sorted_and_matches_the_model() {
    let m = mock();
    let url = serve(m.clone());
    let remote = RemoteScorer::new(MODEL, client(&url));
    for s in sentences() {
        for i in 0..s.len() {
            let got = remote.fill_mask(&s, i, 10).unwrap();
            assert_eq!(got.len(), 10);
            assert!(got.windows(2).all(|w| w[0].probability >= w[1].probability));
            assert_eq!(got, m.scorer.fill_mask(&s, i, 10).unwrap());
        }
    }
}

#[test]
fn score_agrees_with_fill_on_sampled_triples() {
    let url = serve(mock());
    let remote = RemoteScorer::new(MODEL, client(&url));
    let mut checked = 0;
    'outer: for s in sentences().iter().cycle() {
        for i in 0..s.len() {
            let fill = remote.fill_mask(s, i, 200).unwrap();
            for c in fill.iter().step_by(7).take(3) {
                let score = remote.score_token(s, i, &c.token).unwrap();
                assert_eq!(score, TokenScore::Probability(c.probability), "{s:?} @ {i} {}", c.token);
                checked += 1;
                if checked == 100 {
                    break 'outer;
                }
            }
        }
    }
    assert_eq!(checked, 100);
    let s = &sentences()[0];
    assert_eq!(remote.score_token(s, 1, "zeppelin").unwrap(), TokenScore::NotInVocab);
}

#[test]
fn loading_answers_are_retried() {
    let m = mock();
    let url = serve(m.clone());
    let remote = RemoteScorer::new(MODEL, client(&url));
    m.loading.store(2, Ordering::SeqCst);
    let s = &sentences()[0];
    assert_eq!(remote.fill_mask(s, 2, 5).unwrap().len(), 5);
    assert_eq!(m.hits.load(Ordering::SeqCst), 3);

    m.hits.store(0, Ordering::SeqCst);
    m.loading.store(10, Ordering::SeqCst);
    let err = remote.fill_mask(s, 2, 5).unwrap_err();
    assert!(matches!(err, ScorerError::Unavailable(_)), "{err:?}");
    assert_eq!(m.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn rejected_requests_are_protocol_errors_without_retry() {
    let m = mock();
    let url = serve(m.clone());
    let wrong = RemoteScorer::new("not-served", client(&url));
    let err = wrong.fill_mask(&sentences()[0], 1, 5).unwrap_err();
    match err {
        ScorerError::Protocol(msg) => assert!(msg.contains("unknown model_id"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert_eq!(m.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn out_of_range_positions_never_reach_the_wire() {
    let m = mock();
    let url = serve(m.clone());
    let remote = RemoteScorer::new(MODEL, client(&url));
    let s = &sentences()[0];
    assert!(matches!(
        remote.fill_mask(s, s.len(), 5),
        Err(ScorerError::PositionOutOfRange { .. })
    ));
    assert!(matches!(remote.fill_mask(s, 0, 0), Err(ScorerError::InvalidTopK)));
    assert_eq!(m.hits.load(Ordering::SeqCst), 0);
}

#[test]
fn malformed_responses_are_rejected() {
    let m = mock();
    let url = serve(m.clone());
    m.corrupt.store(true, Ordering::SeqCst);
    let remote = RemoteScorer::new(MODEL, client(&url));
    assert!(matches!(remote.fill_mask(&sentences()[0], 1, 5), Err(ScorerError::Protocol(_))));
    let tagger = RemoteTagger::new(client(&url));
    assert!(tagger.tag(&sentences()[0]).is_err());
}

#[test]
fn unreachable_sidecar_is_unavailable() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let remote = RemoteScorer::new(MODEL, client(&format!("http://127.0.0.1:{port}")));
    let err = remote.fill_mask(&sentences()[0], 1, 5).unwrap_err();
    assert!(matches!(err, ScorerError::Unavailable(_)), "{err:?}");
}

#[test]
fn remote_tagger_matches_the_builtin() {
    let m = mock();
    let url = serve(m.clone());
    let tagger = RemoteTagger::new(client(&url));
    for s in sentences() {
        assert_eq!(tagger.tag(&s).unwrap(), m.tagger.tag(&s).unwrap());
    }
}

#[test]
fn remote_pipeline_reproduces_the_in_process_run() {
    let url = serve(mock());
    let problems = common::problems(30, 9);
    let scorer = |kind: &str| {
        let mut s = json!({"id": MODEL, "architecture": "bert", "size_tag": "base", "kind": kind});
        if kind == "REMOTE" {
            s["endpoint"] = json!(url);
        }
        json!([s])
    };
    let local = tempfile::tempdir().unwrap();
    let remote = tempfile::tempdir().unwrap();
    let local_cfg = common::workspace(local.path(), &problems, json!({"scorers": scorer("SYNTHETIC")}));
    let remote_cfg = common::workspace(
        remote.path(),
        &problems,
        json!({"scorers": scorer("REMOTE"), "tagger": {"kind": "REMOTE", "endpoint": url}, "workers": 3, "max_in_flight": 2}),
    );
    for config in [&local_cfg, &remote_cfg] {
        let cfg = PipelineConfig::load(config).unwrap();
        pipeline::analyze(&cfg).unwrap();
        pipeline::suggest(&cfg, None).unwrap();
        pipeline::build(&cfg, None, None).unwrap();
    }
    let a = common::snapshot(&local.path().join("work"));
    let b = common::snapshot(&remote.path().join("work"));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (path, bytes) in &a {
        assert!(bytes == &b[path], "{} differs", path.display());
    }
}

#[test]
fn unserved_roster_models_are_unavailable() {
    let url = serve(mock());
    let dir = tempfile::tempdir().unwrap();
    let scorers = json!([{"id": "missing", "architecture": "bert", "size_tag": "base", "kind": "REMOTE", "endpoint": url}]);
    let config = common::workspace(dir.path(), &common::problems(5, 1), json!({"scorers": scorers}));
    let cfg = PipelineConfig::load(&config).unwrap();
    pipeline::analyze(&cfg).unwrap();
    let err = pipeline::suggest(&cfg, None).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    assert!(!fs::read_to_string(cfg.suggestions_path()).unwrap_or_default().contains("missing"));
}
