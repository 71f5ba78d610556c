//! TOML run manifests: where the data lives and how sessions are configured.
//!
//! ```toml
//! [data]
//! corpus = "corpus.tsv"        # or [synthetic] instead of corpus/topics/qrels
//! topics = "topics.tsv"
//! qrels = "qrels.txt"
//! output = "runs/bmi"
//!
//! [session]
//! fusion = "e1"
//! negatives = "bmi_fixed"
//! stop_after = "4r+1000"
//! seed = 7
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::fs::{self, File};
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::TrainConfig;
use crate::embeddings::{load_embeddings, load_query_embeddings, EmbeddingError, EmbeddingStore, FusionStrategy};
use crate::engine::{ColdStart, EngineError, NegativeSampling, SessionConfig, StopAfter, DEFAULT_PSEUDO_NEGATIVES};
use crate::eval::DEFAULT_CUTOFFS;
use crate::features::{FeatureError, FeatureIndex, FeatureParams};
use crate::ingest::{generate_synthetic, Corpus, load_corpus, load_qrels, load_topics, CorpusFormat, IngestError, QrelsOracle, Topic};
use crate::rerank::RerankPolicy;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("{field}: file not found: {path}")]
    MissingFile { field: &'static str, path: PathBuf },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn invalid(field: &'static str, message: impl Into<String>) -> ManifestError {
    ManifestError::Invalid {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub corpus: Option<PathBuf>,
    pub format: Option<CorpusFormat>,
    pub topics: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub query_embeddings: Option<PathBuf>,
    pub embedding_dim: Option<usize>,
    /// Feature cache written by `ingest` and reused when its fingerprint matches.
    pub feature_cache: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub seed: u64,
    pub docs: usize,
    pub topics: usize,
    pub relevant_per_topic: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSection {
    pub fusion: FusionStrategy,
    pub negatives: NegativeSampling,
    pub negatives_count: usize,
    pub retrain_every: usize,
    pub batch_size: usize,
    pub stop_after: Option<StopAfter>,
    pub seed: u64,
    pub cold_start: ColdStart,
    pub dense_scale: f64,
}

impl Default for SessionSection {
    fn default() -> Self {
        let d = SessionConfig::default();
        SessionSection {
            fusion: d.fusion,
            negatives: d.negatives,
            negatives_count: DEFAULT_PSEUDO_NEGATIVES,
            retrain_every: d.retrain_every,
            batch_size: d.batch_size,
            stop_after: d.stop_after,
            seed: d.seed,
            cold_start: d.cold_start,
            dense_scale: d.dense_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub cutoffs: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub data: DataSection,
    pub synthetic: Option<SyntheticSection>,
    pub features: FeatureParams,
    pub classifier: TrainConfig,
    pub session: SessionSection,
    pub rerank: Option<RerankPolicy>,
    pub eval: EvalSection,
}

/// Command-line values that take precedence over the manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub fusion: Option<FusionStrategy>,
    pub negatives: Option<NegativeSampling>,
    pub stop_after: Option<StopAfter>,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn require_file(field: &'static str, path: &Option<PathBuf>) -> Result<(), ManifestError> {
    match path {
        Some(p) if !p.is_file() => Err(ManifestError::MissingFile {
            field,
            path: p.clone(),
        }),
        _ => Ok(()),
    }
}

impl RunManifest {
    pub fn parse(text: &str, base_dir: &Path, source: &Path) -> Result<Self, ManifestError> {
        let mut m: RunManifest = toml::from_str(text).map_err(|e| ManifestError::Parse {
            path: source.to_path_buf(),
            message: e.to_string(),
        })?;
        let d = &mut m.data;
        for p in [
            &mut d.corpus,
            &mut d.topics,
            &mut d.qrels,
            &mut d.embeddings,
            &mut d.query_embeddings,
            &mut d.feature_cache,
            &mut d.output,
        ] {
            resolve(base_dir, p);
        }
        if let Some(policy) = &mut m.rerank {
            if let crate::rerank::ScorerEndpoint::ScoresFile { path } = &mut policy.endpoint {
                if path.is_relative() {
                    *path = base_dir.join(&*path);
                }
            }
        }
        Ok(m)
    }

    /// Reads and validates a manifest, including that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|e| ManifestError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let m = Self::parse(&text, base, path)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let d = &self.data;
        match (&self.synthetic, &d.corpus) {
            (Some(_), Some(_)) => return Err(invalid("data.corpus", "give either [synthetic] or data.corpus, not both")),
            (None, None) => return Err(invalid("data.corpus", "no corpus: set data.corpus or a [synthetic] section")),
            (None, Some(_)) if d.topics.is_none() => return Err(invalid("data.topics", "required with data.corpus")),
            _ => {}
        }
        if let Some(s) = &self.synthetic {
            if s.docs == 0 || s.relevant_per_topic > s.docs {
                return Err(invalid("synthetic", "need docs > 0 and relevant_per_topic <= docs"));
            }
        }
        require_file("data.corpus", &d.corpus)?;
        require_file("data.topics", &d.topics)?;
        require_file("data.qrels", &d.qrels)?;
        require_file("data.embeddings", &d.embeddings)?;
        require_file("data.query_embeddings", &d.query_embeddings)?;
        if d.embeddings.is_some() && d.embedding_dim.is_none() {
            return Err(invalid("data.embedding_dim", "required with data.embeddings"));
        }
        if self.eval.cutoffs.is_empty() || self.eval.cutoffs.contains(&0) {
            return Err(invalid("eval.cutoffs", "need at least one positive cutoff"));
        }
        self.session_config(&Overrides::default())
            .validate()
            .map_err(|e| match e {
                EngineError::InvalidConfig { field, message } => ManifestError::Invalid { field, message },
                other => ManifestError::Engine(other),
            })?;
        if self.session.fusion.needs_dense() && d.embeddings.is_none() {
            return Err(invalid("data.embeddings", format!("fusion {:?} needs embeddings", self.session.fusion)));
        }
        Ok(())
    }

    pub fn session_config(&self, o: &Overrides) -> SessionConfig {
        let s = &self.session;
        let mut rerank = self.rerank.clone();
        if let (Some(policy), Some(k)) = (&mut rerank, o.k) {
            policy.k = k;
        }
        SessionConfig {
            fusion: o.fusion.unwrap_or(s.fusion),
            features: self.features,
            train: self.classifier,
            negatives: o.negatives.unwrap_or(s.negatives),
            negatives_count: s.negatives_count,
            retrain_every: s.retrain_every,
            batch_size: s.batch_size,
            rerank,
            stop_after: o.stop_after.or(s.stop_after),
            seed: o.seed.unwrap_or(s.seed),
            cold_start: s.cold_start,
            dense_scale: s.dense_scale,
        }
    }

    pub fn output_dir(&self) -> Option<&Path> {
        self.data.output.as_deref()
    }

    /// Loads (or generates) everything a run needs.
    pub fn load_data(&self) -> Result<LoadedData, ManifestError> {
        let (corpus, topics, qrels) = match &self.synthetic {
            Some(s) => {
                let syn = generate_synthetic(s.seed, s.docs, s.topics, s.relevant_per_topic)?;
                (syn.corpus, syn.topics, Some(syn.qrels))
            }
            None => {
                let path = self.data.corpus.as_ref().expect("validated");
                let format = self.data.format.unwrap_or_else(|| CorpusFormat::from_path(path));
                let corpus = load_corpus(path, format)?;
                let topics = load_topics(self.data.topics.as_ref().expect("validated"))?;
                let qrels = self.data.qrels.as_deref().map(load_qrels).transpose()?;
                (corpus, topics, qrels)
            }
        };
        let (index, _) = self.index(Arc::new(corpus))?;
        let embeddings = match &self.data.embeddings {
            Some(path) => {
                let mut store = load_embeddings(path, self.data.embedding_dim.expect("validated"))?;
                if let Some(q) = &self.data.query_embeddings {
                    load_query_embeddings(&mut store, q)?;
                }
                Some(Arc::new(store))
            }
            None => None,
        };
        Ok(LoadedData {
            index: Arc::new(index),
            topics,
            qrels,
            embeddings,
        })
    }

    /// Builds the feature index, going through `data.feature_cache` when set.
    pub fn index(&self, corpus: Arc<Corpus>) -> Result<(FeatureIndex, CacheStatus), ManifestError> {
        match (&self.data.feature_cache, &self.data.corpus) {
            (Some(cache), Some(source)) => index_with_cache(corpus, self.features, cache, source),
            _ => Ok((FeatureIndex::build(corpus, self.features)?, CacheStatus::Disabled)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
    Disabled,
}

impl CacheStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CacheStatus::Hit => "hit",
            CacheStatus::Miss => "miss",
            CacheStatus::Disabled => "off",
        }
    }
}

/// Reads the cached vectors when the fingerprint matches; otherwise builds
/// them and refreshes the cache.
pub fn index_with_cache(
    corpus: Arc<Corpus>,
    params: FeatureParams,
    cache: &Path,
    corpus_path: &Path,
) -> Result<(FeatureIndex, CacheStatus), ManifestError> {
    if cache_is_fresh(cache, corpus_path, &params)? {
        return Ok((FeatureIndex::from_cache(corpus, params, cache)?, CacheStatus::Hit));
    }
    let index = FeatureIndex::build(corpus, params)?;
    index.write_cache(cache)?;
    write_cache_meta(cache, corpus_path, &params)?;
    Ok((index, CacheStatus::Miss))
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub index: Arc<FeatureIndex>,
    pub topics: Vec<Topic>,
    pub qrels: Option<QrelsOracle>,
    pub embeddings: Option<Arc<EmbeddingStore>>,
}

impl LoadedData {
    pub fn topic(&self, topic_id: &str) -> Option<&Topic> {
        self.topics.iter().find(|t| t.id == topic_id)
    }
}

/// Hex SHA-256 over the corpus bytes and the feature parameters.
pub fn fingerprint(corpus_path: &Path, params: &FeatureParams) -> Result<String, ManifestError> {
    let io_err = |e| ManifestError::Io {
        path: corpus_path.to_path_buf(),
        source: e,
    };
    let mut hasher = Sha256::new();
    let mut file = File::open(corpus_path).map_err(io_err)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(io_err)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    hasher.update(serde_json::to_vec(params).expect("params serialize"));
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn cache_meta_path(cache: &Path) -> PathBuf {
    let mut name = cache.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

pub fn cache_is_fresh(cache: &Path, corpus_path: &Path, params: &FeatureParams) -> Result<bool, ManifestError> {
    let Ok(stored) = fs::read_to_string(cache_meta_path(cache)) else {
        return Ok(false);
    };
    Ok(cache.is_file() && stored.trim() == fingerprint(corpus_path, params)?)
}

pub fn write_cache_meta(cache: &Path, corpus_path: &Path, params: &FeatureParams) -> Result<(), ManifestError> {
    let meta = cache_meta_path(cache);
    fs::write(&meta, fingerprint(corpus_path, params)? + "\n").map_err(|e| ManifestError::Io { path: meta, source: e })
}
