//! Second-stage reranking of the top-k first-stage candidates.
//!
//! The neural scorers themselves live outside this crate. This module builds
//! their inputs, talks to them (HTTP JSON or an offline scores file) and
//! merges their scores back into the first-stage ranking.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MONOBERT_QUERY_TOKENS: usize = 64;
pub const MONOBERT_DOC_TOKENS: usize = 445;

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("topic {topic_id} iteration {iteration}: scorer at {endpoint} timed out")]
    Timeout {
        topic_id: String,
        iteration: usize,
        endpoint: String,
    },
    #[error("topic {topic_id} iteration {iteration}: malformed scorer response: {detail}")]
    Malformed {
        topic_id: String,
        iteration: usize,
        detail: String,
    },
    #[error("topic {topic_id} iteration {iteration}: scorer response lacks doc_id {doc_id:?}")]
    Coverage {
        topic_id: String,
        iteration: usize,
        doc_id: String,
    },
    #[error("topic {topic_id} iteration {iteration}: scorer transport error: {detail}")]
    Transport {
        topic_id: String,
        iteration: usize,
        detail: String,
    },
    #[error("rerank response lacks doc_id {0:?}")]
    MissingScore(String),
    #[error("scores file {path}:{line}: {message}")]
    BadScoresFile {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("rerank k must be at least 1")]
    InvalidK,
    #[error("rerank policy has no usable scorer endpoint")]
    NoScorer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    #[default]
    MinmaxWithinK,
}

/// Which model-input template candidates are rendered with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputTemplate {
    #[default]
    Monobert,
    Monot5,
    /// Document text only (truncated to the document budget), as fed to a
    /// per-topic fine-tuned classifier.
    DocumentOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScorerEndpoint {
    Http {
        url: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
    ScoresFile {
        path: PathBuf,
    },
    /// A scorer supplied programmatically (see `Session::with_scorer`).
    Injected,
}

fn default_timeout_ms() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankPolicy {
    pub k: usize,
    #[serde(default)]
    pub fuse_sum: bool,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub template: InputTemplate,
    #[serde(default = "default_query_tokens")]
    pub query_tokens: usize,
    #[serde(default = "default_doc_tokens")]
    pub doc_tokens: usize,
    pub endpoint: ScorerEndpoint,
}

fn default_query_tokens() -> usize {
    MONOBERT_QUERY_TOKENS
}

fn default_doc_tokens() -> usize {
    MONOBERT_DOC_TOKENS
}

impl RerankPolicy {
    pub fn new(k: usize, endpoint: ScorerEndpoint) -> Self {
        RerankPolicy {
            k,
            fuse_sum: false,
            normalization: Normalization::MinmaxWithinK,
            template: InputTemplate::Monobert,
            query_tokens: MONOBERT_QUERY_TOKENS,
            doc_tokens: MONOBERT_DOC_TOKENS,
            endpoint,
        }
    }

    pub fn validate(&self) -> Result<(), RerankError> {
        if self.k == 0 {
            return Err(RerankError::InvalidK);
        }
        Ok(())
    }

    pub fn build_input(&self, query: &str, doc_text: &str) -> String {
        match self.template {
            InputTemplate::Monobert => monobert_input(query, doc_text, self.query_tokens, self.doc_tokens),
            InputTemplate::Monot5 => monot5_input(query, doc_text, self.query_tokens, self.doc_tokens),
            InputTemplate::DocumentOnly => truncate_tokens(doc_text, self.doc_tokens),
        }
    }
}

/// First `n` whitespace-separated tokens of `text`, joined by single spaces.
pub fn truncate_tokens(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

/// `[CLS] q [SEP] d [SEP]` with the query cut to 64 and the document to 445 tokens.
pub fn build_monobert_input(query: &str, doc_text: &str) -> String {
    monobert_input(query, doc_text, MONOBERT_QUERY_TOKENS, MONOBERT_DOC_TOKENS)
}

pub fn monobert_input(query: &str, doc_text: &str, query_tokens: usize, doc_tokens: usize) -> String {
    format!(
        "[CLS] {} [SEP] {} [SEP]",
        truncate_tokens(query, query_tokens),
        truncate_tokens(doc_text, doc_tokens)
    )
}

/// `Query: q Document: d Relevant: ` (note the trailing space), with the
/// same truncation budgets as the monoBERT input.
pub fn build_monot5_input(query: &str, doc_text: &str) -> String {
    monot5_input(query, doc_text, MONOBERT_QUERY_TOKENS, MONOBERT_DOC_TOKENS)
}

pub fn monot5_input(query: &str, doc_text: &str, query_tokens: usize, doc_tokens: usize) -> String {
    format!(
        "Query: {} Document: {} Relevant: ",
        truncate_tokens(query, query_tokens),
        truncate_tokens(doc_text, doc_tokens)
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankCandidate {
    pub doc_id: String,
    pub input: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub doc_id: String,
    /// 1 relevant, 0 nonrelevant.
    pub label: u8,
}

/// Body of a scorer call. `history` carries every relevance judgment so far,
/// which lets a stateful scorer fine-tune itself between iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRequest {
    pub topic_id: String,
    pub query: String,
    pub candidates: Vec<RerankCandidate>,
    pub history: Vec<HistoryItem>,
    #[serde(skip)]
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RerankResponse {
    pub scores: Vec<ScoredDoc>,
}

impl RerankResponse {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        RerankResponse {
            scores: pairs
                .into_iter()
                .map(|(d, s)| ScoredDoc {
                    doc_id: d.to_string(),
                    score: s,
                })
                .collect(),
        }
    }

    /// Checks the response covers exactly the requested documents with finite scores.
    pub fn validate(&self, request: &RerankRequest) -> Result<(), RerankError> {
        let malformed = |detail: String| RerankError::Malformed {
            topic_id: request.topic_id.clone(),
            iteration: request.iteration,
            detail,
        };
        let wanted: HashSet<&str> = request.candidates.iter().map(|c| c.doc_id.as_str()).collect();
        let mut seen = HashSet::new();
        for s in &self.scores {
            if !s.score.is_finite() {
                return Err(malformed(format!("non-finite score for {:?}", s.doc_id)));
            }
            if !wanted.contains(s.doc_id.as_str()) {
                return Err(malformed(format!("unrequested doc_id {:?}", s.doc_id)));
            }
            if !seen.insert(s.doc_id.as_str()) {
                return Err(malformed(format!("duplicate doc_id {:?}", s.doc_id)));
            }
        }
        if let Some(missing) = request.candidates.iter().find(|c| !seen.contains(c.doc_id.as_str())) {
            return Err(RerankError::Coverage {
                topic_id: request.topic_id.clone(),
                iteration: request.iteration,
                doc_id: missing.doc_id.clone(),
            });
        }
        Ok(())
    }
}

/// Anything that can score a batch of prepared candidates.
pub trait RerankScorer: Send + Sync {
    fn score(&self, request: &RerankRequest) -> Result<RerankResponse, RerankError>;
}

impl<F> RerankScorer for F
where
    F: Fn(&RerankRequest) -> Result<RerankResponse, RerankError> + Send + Sync,
{
    fn score(&self, request: &RerankRequest) -> Result<RerankResponse, RerankError> {
        self(request)
    }
}

/// POSTs requests as JSON; one retry on timeout or transport failure.
pub struct HttpScorer {
    url: String,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .new_agent();
        HttpScorer { url: url.into(), agent }
    }

    fn attempt(&self, request: &RerankRequest) -> Result<RerankResponse, RerankError> {
        let result = self.agent.post(&self.url).send_json(request);
        let mut response = result.map_err(|e| match e {
            ureq::Error::Timeout(_) => RerankError::Timeout {
                topic_id: request.topic_id.clone(),
                iteration: request.iteration,
                endpoint: self.url.clone(),
            },
            other => RerankError::Transport {
                topic_id: request.topic_id.clone(),
                iteration: request.iteration,
                detail: other.to_string(),
            },
        })?;
        response
            .body_mut()
            .read_json::<RerankResponse>()
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => RerankError::Timeout {
                    topic_id: request.topic_id.clone(),
                    iteration: request.iteration,
                    endpoint: self.url.clone(),
                },
                other => RerankError::Malformed {
                    topic_id: request.topic_id.clone(),
                    iteration: request.iteration,
                    detail: other.to_string(),
                },
            })
    }
}

impl RerankScorer for HttpScorer {
    fn score(&self, request: &RerankRequest) -> Result<RerankResponse, RerankError> {
        match self.attempt(request) {
            Err(RerankError::Timeout { .. }) | Err(RerankError::Transport { .. }) => self.attempt(request),
            other => other,
        }
    }
}

/// Precomputed scores from a `topic_id<TAB>iteration<TAB>doc_id<TAB>score` file.
///
/// Lookups try the exact iteration first; rows with iteration `0` act as
/// iteration-independent scores.
#[derive(Debug, Clone, Default)]
pub struct OfflineScores {
    scores: HashMap<(String, usize, String), f64>,
}

impl OfflineScores {
    pub fn load(path: &Path) -> Result<Self, RerankError> {
        let file = File::open(path).map_err(|e| RerankError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::read(BufReader::new(file), path)
    }

    pub fn read(reader: impl BufRead, path: &Path) -> Result<Self, RerankError> {
        let bad = |line: usize, message: String| RerankError::BadScoresFile {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut scores = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| RerankError::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(lineno, format!("expected 4 tab-separated fields, found {}", fields.len())));
            }
            let iteration: usize = fields[1].parse().map_err(|_| bad(lineno, format!("bad iteration {:?}", fields[1])))?;
            let score: f64 = fields[3].parse().map_err(|_| bad(lineno, format!("bad score {:?}", fields[3])))?;
            if !score.is_finite() {
                return Err(bad(lineno, "non-finite score".into()));
            }
            scores.insert((fields[0].to_string(), iteration, fields[2].to_string()), score);
        }
        Ok(OfflineScores { scores })
    }

    pub fn insert(&mut self, topic_id: &str, iteration: usize, doc_id: &str, score: f64) {
        self.scores.insert((topic_id.to_string(), iteration, doc_id.to_string()), score);
    }

    fn lookup(&self, topic_id: &str, iteration: usize, doc_id: &str) -> Option<f64> {
        let key = |it| (topic_id.to_string(), it, doc_id.to_string());
        self.scores.get(&key(iteration)).or_else(|| self.scores.get(&key(0))).copied()
    }
}

impl RerankScorer for OfflineScores {
    fn score(&self, request: &RerankRequest) -> Result<RerankResponse, RerankError> {
        let mut scores = Vec::with_capacity(request.candidates.len());
        for c in &request.candidates {
            let score = self
                .lookup(&request.topic_id, request.iteration, &c.doc_id)
                .ok_or_else(|| RerankError::Coverage {
                    topic_id: request.topic_id.clone(),
                    iteration: request.iteration,
                    doc_id: c.doc_id.clone(),
                })?;
            scores.push(ScoredDoc {
                doc_id: c.doc_id.clone(),
                score,
            });
        }
        Ok(RerankResponse { scores })
    }
}

/// Builds the scorer named by `endpoint`; `Injected` yields `None`.
pub fn scorer_for(endpoint: &ScorerEndpoint) -> Result<Option<Arc<dyn RerankScorer>>, RerankError> {
    Ok(match endpoint {
        ScorerEndpoint::Http { url, timeout_ms } => Some(Arc::new(HttpScorer::new(url.clone(), Duration::from_millis(*timeout_ms)))),
        ScorerEndpoint::ScoresFile { path } => Some(Arc::new(OfflineScores::load(path)?)),
        ScorerEndpoint::Injected => None,
    })
}

/// Calls the scorer behind `endpoint` and validates the response.
pub fn call_external_scorer(request: &RerankRequest, endpoint: &ScorerEndpoint) -> Result<RerankResponse, RerankError> {
    let scorer = scorer_for(endpoint)?.ok_or(RerankError::NoScorer)?;
    call_scorer(scorer.as_ref(), request)
}

pub fn call_scorer(scorer: &dyn RerankScorer, request: &RerankRequest) -> Result<RerankResponse, RerankError> {
    let response = scorer.score(request)?;
    response.validate(request)?;
    Ok(response)
}

fn minmax(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Reorders the top `k` of a first-stage ranking by reranker score.
///
/// `first_stage` must already be in ranking order. With `fuse_sum` the
/// sort key is first-stage plus reranker score (each min-max normalized over
/// the k candidates unless normalization is `None`). Ties keep first-stage
/// order, and documents below rank k follow unchanged.
pub fn apply_rerank(
    first_stage: &[(String, f64)],
    policy: &RerankPolicy,
    response: &RerankResponse,
) -> Result<Vec<(String, f64)>, RerankError> {
    policy.validate()?;
    let k = policy.k.min(first_stage.len());
    let by_doc: HashMap<&str, f64> = response.scores.iter().map(|s| (s.doc_id.as_str(), s.score)).collect();
    let top = &first_stage[..k];
    let rerank: Vec<f64> = top
        .iter()
        .map(|(d, _)| by_doc.get(d.as_str()).copied().ok_or_else(|| RerankError::MissingScore(d.clone())))
        .collect::<Result<_, _>>()?;

    let keys: Vec<f64> = if policy.fuse_sum {
        let first: Vec<f64> = top.iter().map(|(_, s)| *s).collect();
        match policy.normalization {
            Normalization::MinmaxWithinK => minmax(&first).iter().zip(minmax(&rerank)).map(|(a, b)| a + b).collect(),
            Normalization::None => first.iter().zip(&rerank).map(|(a, b)| a + b).collect(),
        }
    } else {
        rerank
    };

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    let mut out: Vec<(String, f64)> = order.into_iter().map(|i| (top[i].0.clone(), keys[i])).collect();
    out.extend_from_slice(&first_stage[k..]);
    Ok(out)
}
