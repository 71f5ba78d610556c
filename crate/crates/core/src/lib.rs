//! Continuous active learning for high-recall retrieval.
//!
//! The pipeline: [`ingest`] a corpus, build sparse [`features`] (optionally
//! fused with dense [`embeddings`]), run per-topic CAL [`engine`] sessions
//! around a logistic-regression [`classifier`] with an optional external
//! [`rerank`] stage, and score the resulting [`runlog`]s with [`eval`] and
//! [`stats`]. [`cli`] and [`service`] expose the same machinery as batch
//! commands and as an HTTP review service.

pub mod classifier;
pub mod cli;
pub mod embeddings;
pub mod engine;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod manifest;
pub mod rerank;
pub mod runlog;
pub mod service;
pub mod stats;

pub use classifier::{Model, TrainConfig, TrainMode};
pub use embeddings::{EmbeddingStore, FusionStrategy};
pub use engine::{run_simulation, Candidate, NegativeSampling, Next, Session, SessionConfig, StopAfter};
pub use eval::MetricsReport;
pub use features::{FeatureIndex, FeatureParams, SparseVector, Weighting};
pub use ingest::{Corpus, Document, Judgment, QrelsOracle, Topic};
pub use runlog::RunLog;
