//! Blocking client for the mask-fill sidecar.
//!
//! Requests are stateless JSON over HTTP. A request is retried, up to three
//! attempts with exponential backoff, when the connection fails or the
//! sidecar answers 503 (model still loading). A 400 answer is a protocol
//! error and is not retried.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use log::{debug, warn};
use merge_core::lexical::{TagError, Tagger};
use merge_core::scorer::{
    check_position, sort_candidates, MaskFillScorer, ScoredCandidate, ScorerError, TokenScore,
};
use merge_core::{TaggedSentence, WordClass};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const MAX_ATTEMPTS: u32 = 3;

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    free: Mutex<usize>,
    ready: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        InFlight {
            free: Mutex::new(limit.max(1)),
            ready: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.ready.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a InFlight);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.ready.notify_one();
    }
}

/// Why a request failed after retries.
#[derive(Debug)]
pub enum CallError {
    Unavailable(String),
    Protocol(String),
}

/// Shared HTTP plumbing for scorer and tagger clients.
#[derive(Debug)]
pub struct SidecarClient {
    http: Client,
    base: String,
    backoff: Duration,
    limit: InFlight,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

impl SidecarClient {
    pub fn new(base_url: &str, max_in_flight: usize) -> Result<Self, CallError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| CallError::Unavailable(e.to_string()))?;
        Ok(SidecarClient {
            http,
            base: base_url.trim_end_matches('/').to_string(),
            backoff: Duration::from_millis(200),
            limit: InFlight::new(max_in_flight),
        })
    }

    /// Sets the delay before the first retry; later retries double it.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn call<B: Serialize, R: DeserializeOwned>(
        &self,
        path: &str,
        body: Option<&B>,
    ) -> Result<R, CallError> {
        let url = format!("{}{}", self.base, path);
        let _permit = self.limit.acquire();
        let mut last = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            let request = match body {
                Some(b) => self.http.post(&url).json(b),
                None => self.http.get(&url),
            };
            let response = match request.send() {
                Ok(r) => r,
                Err(e) => {
                    warn!("{url}: attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                    continue;
                }
            };
            let status = response.status();
            if status == StatusCode::SERVICE_UNAVAILABLE {
                debug!("{url}: model loading, attempt {}", attempt + 1);
                last = "503 service unavailable".into();
                continue;
            }
            let text = response
                .text()
                .map_err(|e| CallError::Protocol(format!("{url}: unreadable body: {e}")))?;
            if status == StatusCode::BAD_REQUEST {
                let msg = serde_json::from_str::<ErrorBody>(&text)
                    .map(|b| b.error)
                    .unwrap_or(text);
                return Err(CallError::Protocol(format!("{url}: rejected: {msg}")));
            }
            if !status.is_success() {
                return Err(CallError::Protocol(format!("{url}: unexpected status {status}")));
            }
            return serde_json::from_str(&text)
                .map_err(|e| CallError::Protocol(format!("{url}: malformed response: {e}")));
        }
        Err(CallError::Unavailable(format!(
            "{url}: gave up after {MAX_ATTEMPTS} attempts: {last}"
        )))
    }

    pub fn list_models(&self) -> Result<Vec<ModelInfo>, CallError> {
        let r: ModelsResponse = self.call::<(), _>("/v1/models", None)?;
        Ok(r.models)
    }
}

impl From<CallError> for ScorerError {
    fn from(e: CallError) -> Self {
        match e {
            CallError::Unavailable(m) => ScorerError::Unavailable(m),
            CallError::Protocol(m) => ScorerError::Protocol(m),
        }
    }
}

impl From<CallError> for TagError {
    fn from(e: CallError) -> Self {
        match e {
            CallError::Unavailable(m) => TagError::Unavailable(m),
            CallError::Protocol(m) => TagError::Protocol(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub architecture: String,
    pub size_tag: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelsResponse {
    pub models: Vec<ModelInfo>,
}

#[derive(Debug, Serialize)]
pub struct FillRequest<'a> {
    pub model_id: &'a str,
    pub tokens: &'a [String],
    pub mask_index: usize,
    pub top_k: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FillResponse {
    pub candidates: Vec<ScoredCandidate>,
}

#[derive(Debug, Serialize)]
pub struct ScoreRequest<'a> {
    pub model_id: &'a str,
    pub tokens: &'a [String],
    pub mask_index: usize,
    pub token: &'a str,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ScoreResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
    #[serde(default)]
    pub not_in_vocab: bool,
}

#[derive(Debug, Serialize)]
pub struct TagRequest<'a> {
    pub tokens: &'a [String],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TagResponse {
    pub classes: Vec<Option<WordClass>>,
    pub lemmas: Vec<String>,
}

fn valid_probability(p: f64) -> bool {
    p > 0.0 && p <= 1.0
}

/// One masked LM served by the sidecar.
#[derive(Debug)]
pub struct RemoteScorer {
    model_id: String,
    client: SidecarClient,
}

impl RemoteScorer {
    pub fn new(model_id: &str, client: SidecarClient) -> Self {
        RemoteScorer {
            model_id: model_id.to_string(),
            client,
        }
    }
}

impl MaskFillScorer for RemoteScorer {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn fill_mask(
        &self,
        sentence: &[String],
        position: usize,
        top_k: usize,
    ) -> Result<Vec<ScoredCandidate>, ScorerError> {
        if top_k == 0 {
            return Err(ScorerError::InvalidTopK);
        }
        check_position(sentence, position)?;
        let body = FillRequest {
            model_id: &self.model_id,
            tokens: sentence,
            mask_index: position,
            top_k,
        };
        let r: FillResponse = self.client.call("/v1/fill", Some(&body))?;
        let mut candidates = r.candidates;
        if let Some(bad) = candidates
            .iter()
            .find(|c| c.token.is_empty() || !valid_probability(c.probability))
        {
            return Err(ScorerError::Protocol(format!(
                "invalid candidate {:?} with probability {}",
                bad.token, bad.probability
            )));
        }
        sort_candidates(&mut candidates);
        candidates.truncate(top_k);
        Ok(candidates)
    }

    fn score_token(
        &self,
        sentence: &[String],
        position: usize,
        token: &str,
    ) -> Result<TokenScore, ScorerError> {
        check_position(sentence, position)?;
        let body = ScoreRequest {
            model_id: &self.model_id,
            tokens: sentence,
            mask_index: position,
            token,
        };
        let r: ScoreResponse = self.client.call("/v1/score", Some(&body))?;
        match (r.prob, r.not_in_vocab) {
            (_, true) => Ok(TokenScore::NotInVocab),
            (Some(p), false) if valid_probability(p) => Ok(TokenScore::Probability(p)),
            (p, _) => Err(ScorerError::Protocol(format!(
                "score response carries neither a valid prob nor not_in_vocab: {p:?}"
            ))),
        }
    }
}

/// Tagger backed by the sidecar's `/v1/tag`.
#[derive(Debug)]
pub struct RemoteTagger {
    client: SidecarClient,
}

impl RemoteTagger {
    pub fn new(client: SidecarClient) -> Self {
        RemoteTagger { client }
    }
}

impl Tagger for RemoteTagger {
    fn tag(&self, tokens: &[String]) -> Result<TaggedSentence, TagError> {
        let r: TagResponse = self.client.call("/v1/tag", Some(&TagRequest { tokens }))?;
        let lemmas = r.lemmas.into_iter().map(|l| l.to_lowercase()).collect();
        TaggedSentence::new(tokens.to_vec(), r.classes, lemmas)
            .map_err(|e| TagError::Protocol(e.to_string()))
    }
}
