//! The per-topic continuous active learning loop.
//!
//! A [`Session`] starts from a synthetic seed (the topic query featurized as
//! a relevant pseudo-document) plus pseudo-negatives, then alternates between
//! offering the best-scoring unjudged documents and retraining on judgments.
//!
//! All randomness flows through one seeded generator per session. Each
//! training round first samples pseudo-negatives, then shuffles inside the
//! SGD epochs; under E4 the sparse model trains before the dense one.
//!
//! Single-model sessions rank by the linear form `w.x + b` rather than its
//! sigmoid: with the default regularization the sigmoid saturates to exactly
//! 1.0 for many documents, which would collapse the ranking into doc-id ties.
//! E4 ranks by the sum of the two models' probabilities.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{score_dual, train_with_rng, ClassifierError, Label, LabeledExample, Model, Provenance, TrainConfig, TrainMode};
use crate::embeddings::{fuse, EmbeddingError, EmbeddingStore, FeatureRef, FeatureVector, FusionLayout, FusionStrategy};
use crate::eval::{MetricsReport, DEFAULT_CUTOFFS};
use crate::features::{FeatureError, FeatureIndex, FeatureParams, SparseVector};
use crate::ingest::{Judgment, QrelsOracle, Topic};
use crate::rerank::{apply_rerank, call_scorer, scorer_for, HistoryItem, RerankCandidate, RerankError, RerankPolicy, RerankRequest, RerankScorer};
use crate::runlog::{RunLog, RunLogError};

pub const DEFAULT_PSEUDO_NEGATIVES: usize = 100;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid session config: {field}: {message}")]
    InvalidConfig { field: &'static str, message: String },
    #[error("fusion {0:?} needs an embedding store")]
    MissingEmbeddings(FusionStrategy),
    #[error("fusion {fusion:?} needs a query embedding for topic {topic_id:?}")]
    MissingQueryEmbedding { fusion: FusionStrategy, topic_id: String },
    #[error("document {0:?} was not offered")]
    NotOffered(String),
    #[error("document {0:?} is already judged")]
    AlreadyJudged(String),
    #[error("rerank endpoint is `injected` but no scorer was attached")]
    NoScorer,
    #[error("snapshot does not match this corpus: {0}")]
    SnapshotMismatch(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    RunLog(#[from] RunLogError),
}

impl EngineError {
    pub fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        EngineError::InvalidConfig {
            field,
            message: message.into(),
        }
    }
}

/// How many unjudged documents are drawn as pseudo-negatives per training round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSampling {
    /// `negatives_count` documents (100 by default), or all unjudged if fewer.
    #[default]
    #[serde(alias = "bmi")]
    BmiFixed,
    /// `max(p - n, 0)` for `p` positive and `n` negative judgments.
    Balanced,
    /// `min(p - n, 0)` clamped at zero, i.e. never any pseudo-negatives.
    BalancedLiteral,
}

impl NegativeSampling {
    pub fn count(self, fixed: usize, positives: usize, negatives: usize) -> usize {
        match self {
            NegativeSampling::BmiFixed => fixed,
            NegativeSampling::Balanced => positives.saturating_sub(negatives),
            // min(p - n, 0) is never positive.
            NegativeSampling::BalancedLiteral => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColdStart {
    #[default]
    None,
    /// Rank by query similarity until the first relevant judgment arrives.
    StaticRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BudgetRule {
    #[serde(rename = "4r+1000")]
    FourRPlus1000,
}

/// A review budget: a fixed count, or `4 R_t + 1000` (needs the qrels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StopAfter {
    Count(usize),
    Rule(BudgetRule),
}

impl StopAfter {
    pub fn resolve(self, r_t: usize) -> usize {
        match self {
            StopAfter::Count(n) => n,
            StopAfter::Rule(BudgetRule::FourRPlus1000) => crate::eval::budget_4r_1000(r_t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub fusion: FusionStrategy,
    pub features: FeatureParams,
    /// `train.seed` is unused here: session training draws from the session RNG.
    pub train: TrainConfig,
    pub negatives: NegativeSampling,
    pub negatives_count: usize,
    pub retrain_every: usize,
    pub batch_size: usize,
    pub rerank: Option<RerankPolicy>,
    pub stop_after: Option<StopAfter>,
    pub seed: u64,
    pub cold_start: ColdStart,
    /// Multiplier applied to every dense feature.
    pub dense_scale: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            fusion: FusionStrategy::E1,
            features: FeatureParams::default(),
            train: TrainConfig::default(),
            negatives: NegativeSampling::BmiFixed,
            negatives_count: DEFAULT_PSEUDO_NEGATIVES,
            retrain_every: 1,
            batch_size: 1,
            rerank: None,
            stop_after: None,
            seed: 0,
            cold_start: ColdStart::None,
            dense_scale: 1.0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.batch_size == 0 {
            return Err(EngineError::invalid("batch_size", "must be at least 1"));
        }
        if self.retrain_every == 0 {
            return Err(EngineError::invalid("retrain_every", "must be at least 1"));
        }
        if !self.dense_scale.is_finite() {
            return Err(EngineError::invalid("dense_scale", "must be finite"));
        }
        self.features
            .validate()
            .map_err(|e| EngineError::invalid("features", e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| EngineError::invalid("train", e.to_string()))?;
        if let Some(policy) = &self.rerank {
            policy.validate().map_err(|e| EngineError::invalid("rerank.k", e.to_string()))?;
        }
        Ok(())
    }
}

/// A document offered for review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub doc_id: String,
    pub first_stage_score: f64,
    pub final_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Next {
    Batch(Vec<Candidate>),
    /// Nothing left to offer: corpus (or review budget) exhausted.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Models {
    Single(Model),
    Dual { sparse: Model, dense: Model },
}

impl Models {
    pub fn steps_taken(&self) -> u64 {
        match self {
            Models::Single(m) => m.steps_taken(),
            Models::Dual { sparse, .. } => sparse.steps_taken(),
        }
    }

    /// Ranking key of one document (see the module docs).
    pub fn rank_score(&self, x: FeatureRef<'_>) -> f64 {
        match self {
            Models::Single(m) => m.margin(x),
            Models::Dual { sparse, dense } => score_dual(sparse, dense, x).unwrap_or(f64::NEG_INFINITY),
        }
    }
}

/// Serializable session state; the corpus, embeddings and scorer are reattached on restore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub topic: Topic,
    pub config: SessionConfig,
    pub log: RunLog,
    pub pending: Vec<Candidate>,
    pub models: Models,
    pub rng: ChaCha8Rng,
    pub trained_through: usize,
    pub needs_retrain: bool,
    pub model_version: u64,
}

pub struct Session {
    topic: Topic,
    index: Arc<FeatureIndex>,
    embeddings: Option<Arc<EmbeddingStore>>,
    /// Embedding row of each corpus document, when the fusion uses dense features.
    dense_rows: Option<Vec<usize>>,
    config: SessionConfig,
    layout: FusionLayout,
    seed_features: FeatureVector,
    query_vector: SparseVector,
    judged: Vec<Option<Judgment>>,
    log: RunLog,
    pending: Vec<Candidate>,
    models: Models,
    rng: ChaCha8Rng,
    /// Number of log entries already folded into the model (incremental mode).
    trained_through: usize,
    needs_retrain: bool,
    model_version: u64,
    scorer: Option<Arc<dyn RerankScorer>>,
    rerank_cache: HashMap<usize, f64>,
    rerank_cache_version: usize,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("topic", &self.topic)
            .field("iteration", &self.log.len())
            .field("model_version", &self.model_version)
            .finish_non_exhaustive()
    }
}

impl Session {
    /// Builds the seed, trains the initial model and returns a session at iteration 0.
    pub fn new(
        topic: Topic,
        index: Arc<FeatureIndex>,
        embeddings: Option<Arc<EmbeddingStore>>,
        config: SessionConfig,
    ) -> Result<Self, EngineError> {
        let mut session = Self::assemble(topic, index, embeddings, config, None)?;
        session.retrain()?;
        Ok(session)
    }

    /// Like [`Session::new`] with a programmatic reranker for `injected` endpoints.
    pub fn with_scorer(
        topic: Topic,
        index: Arc<FeatureIndex>,
        embeddings: Option<Arc<EmbeddingStore>>,
        config: SessionConfig,
        scorer: Arc<dyn RerankScorer>,
    ) -> Result<Self, EngineError> {
        let mut session = Self::assemble(topic, index, embeddings, config, Some(scorer))?;
        session.retrain()?;
        Ok(session)
    }

    fn assemble(
        topic: Topic,
        index: Arc<FeatureIndex>,
        embeddings: Option<Arc<EmbeddingStore>>,
        config: SessionConfig,
        scorer: Option<Arc<dyn RerankScorer>>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        if config.features != *index.space().params() {
            return Err(EngineError::invalid(
                "features",
                "session feature parameters differ from the feature index",
            ));
        }
        let corpus = index.corpus().clone();
        let fusion = config.fusion;
        let embeddings = if fusion.needs_dense() {
            Some(embeddings.ok_or(EngineError::MissingEmbeddings(fusion))?)
        } else {
            // E1 never looks at embeddings, so attaching a store cannot change a score.
            None
        };
        let dense_rows = match &embeddings {
            Some(store) => Some(
                corpus
                    .docs()
                    .iter()
                    .map(|d| store.row_of(&d.id).ok_or_else(|| EmbeddingError::MissingDense(d.id.clone())))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            None => None,
        };
        let layout = FusionLayout {
            strategy: fusion,
            sparse_dim: index.space().sparse_dim(),
            dense_scale: config.dense_scale,
        };
        let query_vector = index.space().featurize_query(&corpus, &topic.query);
        let query_dense = match &embeddings {
            Some(store) => Some(
                store
                    .query(&topic.id)
                    .ok_or_else(|| EngineError::MissingQueryEmbedding {
                        fusion,
                        topic_id: topic.id.clone(),
                    })?
                    .values(),
            ),
            None => None,
        };
        let seed_features = fuse(&format!("seed:{}", topic.id), &query_vector, query_dense, &layout)?;
        let scorer = match (&config.rerank, scorer) {
            (_, Some(s)) => Some(s),
            (Some(policy), None) => scorer_for(&policy.endpoint)?,
            (None, None) => None,
        };
        let models = match fusion {
            FusionStrategy::E4 => Models::Dual {
                sparse: Model::zero(),
                dense: Model::zero(),
            },
            _ => Models::Single(Model::zero()),
        };
        Ok(Session {
            judged: vec![None; corpus.n_docs()],
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            topic,
            index,
            embeddings,
            dense_rows,
            config,
            layout,
            seed_features,
            query_vector,
            log: RunLog::new(),
            pending: Vec::new(),
            models,
            trained_through: 0,
            needs_retrain: true,
            model_version: 0,
            scorer,
            rerank_cache: HashMap::new(),
            rerank_cache_version: usize::MAX,
        })
    }

    pub fn topic(&self) -> &Topic {
        &self.topic
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn index(&self) -> &Arc<FeatureIndex> {
        &self.index
    }

    pub fn iteration(&self) -> usize {
        self.log.len()
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    /// Incremented on every retraining.
    pub fn model_version(&self) -> u64 {
        self.model_version
    }

    pub fn pending(&self) -> &[Candidate] {
        &self.pending
    }

    pub fn judgment(&self, doc_id: &str) -> Option<Judgment> {
        self.index.corpus().index_of(doc_id).and_then(|i| self.judged[i])
    }

    pub fn unjudged_count(&self) -> usize {
        self.judged.iter().filter(|j| j.is_none()).count()
    }

    pub fn metrics(&self, r_t: usize) -> MetricsReport {
        MetricsReport::compute(&self.topic.id, &self.log, r_t, &DEFAULT_CUTOFFS)
    }

    fn view(&self, doc: usize) -> FeatureRef<'_> {
        let dense = match (&self.embeddings, &self.dense_rows) {
            (Some(store), Some(rows)) => Some(store.row(rows[doc])),
            _ => None,
        };
        self.layout.view(self.index.vector(doc), dense)
    }

    fn example(&self, doc: usize, label: Label, provenance: Provenance) -> Result<LabeledExample, EngineError> {
        let v = self.view(doc);
        let features = FeatureVector {
            sparse: v.sparse.cloned(),
            dense: v.dense.map(|d| crate::embeddings::DenseVector::new(d.to_vec()).expect("store values are finite")),
            dense_offset: v.dense_offset,
            dense_scale: v.dense_scale,
        };
        Ok(LabeledExample::new(features, label, provenance)?)
    }

    fn pseudo_negative_count(&self, unjudged: usize) -> usize {
        let (p, n) = self.log.entries().iter().fold((0, 0), |(p, n), e| {
            if e.judgment.is_relevant() {
                (p + 1, n)
            } else {
                (p, n + 1)
            }
        });
        self.config
            .negatives
            .count(self.config.negatives_count, p, n)
            .min(unjudged)
    }

    /// The next training set: human judgments (all of them, or in incremental
    /// mode only those since the last round), the synthetic seed, and freshly
    /// sampled pseudo-negatives. Advances the session RNG.
    pub fn assemble_training_set(&mut self) -> Result<Vec<LabeledExample>, EngineError> {
        let incremental = self.config.train.mode == TrainMode::Incremental && self.model_version > 0;
        let corpus = self.index.corpus().clone();
        let mut examples = Vec::new();
        let from = if incremental { self.trained_through } else { 0 };
        for e in &self.log.entries()[from..] {
            let doc = corpus.index_of(&e.doc_id).expect("logged documents belong to the corpus");
            let label = if e.judgment.is_relevant() { Label::Positive } else { Label::Negative };
            examples.push(self.example(doc, label, Provenance::HumanJudgment)?);
        }
        if !incremental {
            examples.push(LabeledExample::new(
                self.seed_features.clone(),
                Label::Positive,
                Provenance::SyntheticSeed,
            )?);
        }
        let unjudged: Vec<usize> = (0..self.judged.len()).filter(|&i| self.judged[i].is_none()).collect();
        let count = self.pseudo_negative_count(unjudged.len());
        let mut picks: Vec<usize> = index::sample(&mut self.rng, unjudged.len(), count).into_vec();
        picks.sort_unstable();
        for k in picks {
            examples.push(self.example(unjudged[k], Label::Negative, Provenance::PseudoNegative)?);
        }
        Ok(examples)
    }

    fn retrain(&mut self) -> Result<(), EngineError> {
        let examples = self.assemble_training_set()?;
        let train = self.config.train;
        let first_round = self.model_version == 0;
        let config = TrainConfig {
            mode: if first_round { TrainMode::Scratch } else { train.mode },
            ..train
        };
        self.models = match &self.models {
            Models::Single(prior) => Models::Single(train_with_rng(&examples, &config, Some(prior), &mut self.rng, |e| {
                e.features.as_ref()
            })?),
            Models::Dual { sparse, dense } => {
                let sparse = train_with_rng(&examples, &config, Some(sparse), &mut self.rng, |e| {
                    e.features.as_ref().sparse_part().unwrap_or(FeatureRef {
                        sparse: None,
                        dense: None,
                        dense_offset: 0,
                        dense_scale: 1.0,
                    })
                })?;
                let dense = train_with_rng(&examples, &config, Some(dense), &mut self.rng, |e| {
                    e.features.as_ref().dense_part().unwrap_or(FeatureRef {
                        sparse: None,
                        dense: None,
                        dense_offset: 0,
                        dense_scale: 1.0,
                    })
                })?;
                Models::Dual { sparse, dense }
            }
        };
        self.trained_through = self.log.len();
        self.needs_retrain = false;
        self.model_version += 1;
        Ok(())
    }

    /// Performs a retraining that a deferred judgment scheduled, if any.
    pub fn flush(&mut self) -> Result<(), EngineError> {
        if self.needs_retrain {
            self.retrain()?;
        }
        Ok(())
    }

    fn use_static_rank(&self) -> bool {
        self.config.cold_start == ColdStart::StaticRank && !self.log.entries().iter().any(|e| e.judgment.is_relevant())
    }

    /// First-stage scores for every unjudged document, in corpus order.
    fn score_unjudged(&self) -> Vec<(usize, f64)> {
        let static_rank = self.use_static_rank();
        (0..self.judged.len())
            .into_par_iter()
            .filter(|&i| self.judged[i].is_none())
            .map(|i| {
                let s = if static_rank {
                    self.query_vector.dot(self.index.vector(i))
                } else {
                    self.models.rank_score(self.view(i))
                };
                (i, s)
            })
            .collect()
    }

    fn remaining_budget(&self) -> Option<usize> {
        match self.config.stop_after {
            Some(StopAfter::Count(n)) => Some(n.saturating_sub(self.log.len())),
            _ => None,
        }
    }

    /// The best unjudged documents, best first. Repeated calls without a
    /// judgment return the same batch.
    pub fn next_candidates(&mut self) -> Result<Next, EngineError> {
        self.flush()?;
        if !self.pending.is_empty() {
            return Ok(Next::Batch(self.pending.clone()));
        }
        let mut want = self.config.batch_size;
        if let Some(left) = self.remaining_budget() {
            want = want.min(left);
        }
        if want == 0 {
            return Ok(Next::Exhausted);
        }
        let mut scored = self.score_unjudged();
        if scored.is_empty() {
            return Ok(Next::Exhausted);
        }
        let corpus = self.index.corpus().clone();
        let cmp = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then_with(|| corpus.doc(a.0).id.cmp(&corpus.doc(b.0).id));
        let head = self
            .config
            .rerank
            .as_ref()
            .map_or(want, |p| p.k.max(want))
            .min(scored.len());
        if head < scored.len() {
            scored.select_nth_unstable_by(head - 1, cmp);
            scored.truncate(head);
        }
        scored.sort_by(cmp);

        let first_stage: Vec<(String, f64)> = scored.iter().map(|&(i, s)| (corpus.doc(i).id.clone(), s)).collect();
        let final_ranking = match self.config.rerank.clone() {
            Some(policy) => self.rerank(&policy, &scored, &first_stage)?,
            None => first_stage.clone(),
        };
        let first: HashMap<&str, f64> = first_stage.iter().map(|(d, s)| (d.as_str(), *s)).collect();
        self.pending = final_ranking
            .into_iter()
            .take(want)
            .map(|(doc_id, final_score)| Candidate {
                first_stage_score: first[doc_id.as_str()],
                doc_id,
                final_score,
            })
            .collect();
        Ok(Next::Batch(self.pending.clone()))
    }

    fn rerank(
        &mut self,
        policy: &RerankPolicy,
        scored: &[(usize, f64)],
        first_stage: &[(String, f64)],
    ) -> Result<Vec<(String, f64)>, EngineError> {
        let scorer = self.scorer.clone().ok_or(EngineError::NoScorer)?;
        let corpus = self.index.corpus().clone();
        // The scorer may adapt to judgments, so cached scores are only valid
        // while the judgment history is unchanged.
        if self.rerank_cache_version != self.log.len() {
            self.rerank_cache.clear();
            self.rerank_cache_version = self.log.len();
        }
        let k = policy.k.min(scored.len());
        let missing: Vec<usize> = scored[..k]
            .iter()
            .map(|&(i, _)| i)
            .filter(|i| !self.rerank_cache.contains_key(i))
            .collect();
        if !missing.is_empty() {
            let request = RerankRequest {
                topic_id: self.topic.id.clone(),
                query: self.topic.query.clone(),
                candidates: missing
                    .iter()
                    .map(|&i| RerankCandidate {
                        doc_id: corpus.doc(i).id.clone(),
                        input: policy.build_input(&self.topic.query, &corpus.doc(i).text),
                    })
                    .collect(),
                history: self
                    .log
                    .entries()
                    .iter()
                    .map(|e| HistoryItem {
                        doc_id: e.doc_id.clone(),
                        label: u8::from(e.judgment.is_relevant()),
                    })
                    .collect(),
                iteration: self.log.len() + 1,
            };
            let response = call_scorer(scorer.as_ref(), &request)?;
            for s in response.scores {
                let i = corpus.index_of(&s.doc_id).expect("validated against the request");
                self.rerank_cache.insert(i, s.score);
            }
        }
        let response = crate::rerank::RerankResponse::from_pairs(
            scored[..k]
                .iter()
                .map(|&(i, _)| (corpus.doc(i).id.as_str(), self.rerank_cache[&i])),
        );
        Ok(apply_rerank(first_stage, policy, &response)?)
    }

    /// Fails exactly when [`Session::record_judgment`] would reject `doc_id`.
    pub fn check_offered(&self, doc_id: &str) -> Result<(), EngineError> {
        if let Some(i) = self.index.corpus().index_of(doc_id) {
            if self.judged[i].is_some() {
                return Err(EngineError::AlreadyJudged(doc_id.to_string()));
            }
        }
        if self.pending.iter().any(|c| c.doc_id == doc_id) {
            Ok(())
        } else {
            Err(EngineError::NotOffered(doc_id.to_string()))
        }
    }

    fn take_offered(&mut self, doc_id: &str) -> Result<(usize, Candidate), EngineError> {
        let doc = self.index.corpus().index_of(doc_id);
        if let Some(i) = doc {
            if self.judged[i].is_some() {
                return Err(EngineError::AlreadyJudged(doc_id.to_string()));
            }
        }
        let pos = self
            .pending
            .iter()
            .position(|c| c.doc_id == doc_id)
            .ok_or_else(|| EngineError::NotOffered(doc_id.to_string()))?;
        let doc = doc.expect("offered documents belong to the corpus");
        Ok((doc, self.pending.remove(pos)))
    }

    /// Records a judgment and retrains immediately when the schedule says so.
    pub fn record_judgment(&mut self, doc_id: &str, judgment: Judgment) -> Result<(), EngineError> {
        self.record_judgment_deferred(doc_id, judgment)?;
        self.flush()
    }

    /// Records a judgment; any scheduled retraining runs on the next
    /// [`Session::flush`] or [`Session::next_candidates`]. The resulting
    /// state is identical to [`Session::record_judgment`].
    pub fn record_judgment_deferred(&mut self, doc_id: &str, judgment: Judgment) -> Result<(), EngineError> {
        let (doc, candidate) = self.take_offered(doc_id)?;
        self.log
            .append(doc_id, candidate.first_stage_score, candidate.final_score, judgment)?;
        self.judged[doc] = Some(judgment);
        if self.log.len().is_multiple_of(self.config.retrain_every) {
            self.needs_retrain = true;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            topic: self.topic.clone(),
            config: self.config.clone(),
            log: self.log.clone(),
            pending: self.pending.clone(),
            models: self.models.clone(),
            rng: self.rng.clone(),
            trained_through: self.trained_through,
            needs_retrain: self.needs_retrain,
            model_version: self.model_version,
        }
    }

    /// Rebuilds a session from a snapshot taken over the same corpus.
    pub fn restore(
        snapshot: SessionSnapshot,
        index: Arc<FeatureIndex>,
        embeddings: Option<Arc<EmbeddingStore>>,
        scorer: Option<Arc<dyn RerankScorer>>,
    ) -> Result<Self, EngineError> {
        let mut session = Self::assemble(snapshot.topic, index, embeddings, snapshot.config, scorer)?;
        for e in snapshot.log.entries() {
            let i = session
                .index
                .corpus()
                .index_of(&e.doc_id)
                .ok_or_else(|| EngineError::SnapshotMismatch(format!("unknown document {:?}", e.doc_id)))?;
            session.judged[i] = Some(e.judgment);
        }
        for c in &snapshot.pending {
            if session.index.corpus().index_of(&c.doc_id).is_none() {
                return Err(EngineError::SnapshotMismatch(format!("unknown document {:?}", c.doc_id)));
            }
        }
        session.log = snapshot.log;
        session.pending = snapshot.pending;
        session.models = snapshot.models;
        session.rng = snapshot.rng;
        session.trained_through = snapshot.trained_through;
        session.needs_retrain = snapshot.needs_retrain;
        session.model_version = snapshot.model_version;
        Ok(session)
    }
}

/// Reviews a topic with the qrels standing in for the reviewer until the
/// configured budget is spent or the corpus runs out.
pub fn run_simulation(
    topic: &Topic,
    index: Arc<FeatureIndex>,
    embeddings: Option<Arc<EmbeddingStore>>,
    oracle: &QrelsOracle,
    config: &SessionConfig,
) -> Result<RunLog, EngineError> {
    let session = Session::new(topic.clone(), index, embeddings, config.clone())?;
    simulate(session, oracle)
}

/// Drives an already-initialized session with the oracle.
pub fn simulate(mut session: Session, oracle: &QrelsOracle) -> Result<RunLog, EngineError> {
    let topic_id = session.topic().id.clone();
    let limit = session
        .config()
        .stop_after
        .map(|s| s.resolve(oracle.r_t(&topic_id)))
        .unwrap_or(usize::MAX);
    'outer: while session.iteration() < limit {
        match session.next_candidates()? {
            Next::Exhausted => break,
            Next::Batch(batch) => {
                for c in batch {
                    if session.iteration() >= limit {
                        break 'outer;
                    }
                    session.record_judgment(&c.doc_id, oracle.judge(&topic_id, &c.doc_id))?;
                }
            }
        }
    }
    Ok(session.log)
}
