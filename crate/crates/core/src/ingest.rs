//! Corpus, topic and relevance-judgment ingestion.
//!
//! Corpora are read from `doc_id<TAB>text` files or JSON lines
//! (`{"id": ..., "text": ...}`), topics from `topic_id<TAB>query` files and
//! judgments from standard four-column qrels (`topic 0 doc_id rel`).
//! [`generate_synthetic`] builds a planted, linearly learnable collection for
//! desk-scale experiments.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
    #[error("duplicate topic_id {0:?}")]
    DuplicateTopic(String),
    #[error("{source_name}:{line}: {message}")]
    Malformed {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("cannot write document {doc_id:?} as tsv: {reason}")]
    Unwritable { doc_id: String, reason: &'static str },
    #[error("invalid synthetic parameters: {0}")]
    InvalidSynthetic(String),
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn malformed(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        IngestError::Malformed {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }
}

/// Lowercases `text` and splits it on every non-alphanumeric character.
///
/// No stemming and no stopword removal; empty pieces are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|piece| !piece.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.text)
    }
}

/// Immutable document collection with vocabulary and document frequencies.
///
/// Term ids are assigned in order of first occurrence while scanning the
/// documents in file order, so they are stable for a given corpus file.
#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<Document>,
    id_index: HashMap<String, usize>,
    vocab: HashMap<String, u32>,
    terms: Vec<String>,
    df: Vec<u32>,
    total_tokens: u64,
}

impl Corpus {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self, IngestError> {
        if docs.is_empty() {
            return Err(IngestError::EmptyCorpus);
        }
        let mut id_index = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            if id_index.insert(doc.id.clone(), i).is_some() {
                return Err(IngestError::DuplicateDocId(doc.id.clone()));
            }
        }

        let mut vocab: HashMap<String, u32> = HashMap::new();
        let mut terms = Vec::new();
        let mut df: Vec<u32> = Vec::new();
        let mut total_tokens = 0u64;
        let mut seen_in_doc: Vec<u32> = Vec::new();
        for doc in &docs {
            let tokens = tokenize(&doc.text);
            total_tokens += tokens.len() as u64;
            seen_in_doc.clear();
            for token in tokens {
                let id = match vocab.get(&token) {
                    Some(&id) => id,
                    None => {
                        let id = terms.len() as u32;
                        terms.push(token.clone());
                        vocab.insert(token, id);
                        df.push(0);
                        id
                    }
                };
                seen_in_doc.push(id);
            }
            seen_in_doc.sort_unstable();
            seen_in_doc.dedup();
            for &id in &seen_in_doc {
                df[id as usize] += 1;
            }
        }

        Ok(Corpus {
            docs,
            id_index,
            vocab,
            terms,
            df,
            total_tokens,
        })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn doc(&self, index: usize) -> &Document {
        &self.docs[index]
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn index_of(&self, doc_id: &str) -> Option<usize> {
        self.id_index.get(doc_id).copied()
    }

    pub fn term_id(&self, term: &str) -> Option<u32> {
        self.vocab.get(term).copied()
    }

    pub fn term(&self, term_id: u32) -> &str {
        &self.terms[term_id as usize]
    }

    pub fn vocab_size(&self) -> usize {
        self.terms.len()
    }

    /// Number of documents containing `term_id`.
    pub fn df(&self, term_id: u32) -> u32 {
        self.df[term_id as usize]
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.total_tokens as f64 / self.docs.len() as f64
    }

    /// Term ids of `tokenize(text)` in order; out-of-vocabulary tokens are skipped.
    pub fn term_ids(&self, text: &str) -> Vec<u32> {
        tokenize(text)
            .iter()
            .filter_map(|t| self.vocab.get(t.as_str()).copied())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    /// Guesses the format from a file extension, defaulting to tsv.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Tsv,
        }
    }
}

#[derive(Deserialize)]
struct JsonDoc {
    id: String,
    text: String,
}

#[derive(Serialize)]
struct JsonDocRef<'a> {
    id: &'a str,
    text: &'a str,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let name = path.display().to_string();
    read_corpus(BufReader::new(file), format, &name).map_err(|e| match e {
        IngestError::Io { source, .. } => IngestError::io(path, source),
        other => other,
    })
}

pub fn read_corpus(
    reader: impl BufRead,
    format: CorpusFormat,
    source_name: &str,
) -> Result<Corpus, IngestError> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| IngestError::Io {
            path: PathBuf::from(source_name),
            source: e,
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let doc = match format {
            CorpusFormat::Tsv => {
                let (id, text) = line
                    .split_once('\t')
                    .ok_or_else(|| IngestError::malformed(source_name, lineno, "expected doc_id<TAB>text"))?;
                Document::new(id, text)
            }
            CorpusFormat::Jsonl => {
                let parsed: JsonDoc = serde_json::from_str(line)
                    .map_err(|e| IngestError::malformed(source_name, lineno, e.to_string()))?;
                Document::new(parsed.id, parsed.text)
            }
        };
        if doc.id.is_empty() {
            return Err(IngestError::malformed(source_name, lineno, "empty doc_id"));
        }
        docs.push(doc);
    }
    Corpus::from_documents(docs)
}

pub fn write_corpus(corpus: &Corpus, mut out: impl Write, format: CorpusFormat) -> Result<(), IngestError> {
    let io_err = |e| IngestError::Io {
        path: PathBuf::from("<output>"),
        source: e,
    };
    for doc in corpus.docs() {
        match format {
            CorpusFormat::Tsv => {
                if doc.id.contains('\t') {
                    return Err(IngestError::Unwritable {
                        doc_id: doc.id.clone(),
                        reason: "doc_id contains a tab",
                    });
                }
                if doc.text.contains('\n') || doc.text.contains('\r') {
                    return Err(IngestError::Unwritable {
                        doc_id: doc.id.clone(),
                        reason: "text contains a line break",
                    });
                }
                writeln!(out, "{}\t{}", doc.id, doc.text).map_err(io_err)?;
            }
            CorpusFormat::Jsonl => {
                let line = serde_json::to_string(&JsonDocRef {
                    id: &doc.id,
                    text: &doc.text,
                })
                .expect("string fields always serialize");
                writeln!(out, "{line}").map_err(io_err)?;
            }
        }
    }
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: &Path, format: CorpusFormat) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_corpus(corpus, &mut out, format)?;
    out.flush().map_err(|e| IngestError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub id: String,
    pub query: String,
}

pub fn read_topics(reader: impl BufRead, source_name: &str) -> Result<Vec<Topic>, IngestError> {
    let mut topics: Vec<Topic> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| IngestError::Io {
            path: PathBuf::from(source_name),
            source: e,
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let (id, query) = line
            .split_once('\t')
            .ok_or_else(|| IngestError::malformed(source_name, lineno, "expected topic_id<TAB>query"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(IngestError::malformed(source_name, lineno, "empty topic_id"));
        }
        if query.trim().is_empty() {
            return Err(IngestError::malformed(source_name, lineno, "empty query"));
        }
        if topics.iter().any(|t| t.id == id) {
            return Err(IngestError::DuplicateTopic(id.to_string()));
        }
        topics.push(Topic {
            id: id.to_string(),
            query: query.to_string(),
        });
    }
    Ok(topics)
}

pub fn load_topics(path: &Path) -> Result<Vec<Topic>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_topics(BufReader::new(file), &path.display().to_string())
}

pub fn save_topics(topics: &[Topic], path: &Path) -> Result<(), IngestError> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| IngestError::io(path, e))?);
    for t in topics {
        writeln!(out, "{}\t{}", t.id, t.query).map_err(|e| IngestError::io(path, e))?;
    }
    out.flush().map_err(|e| IngestError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Judgment {
    Relevant,
    Nonrelevant,
}

impl Judgment {
    pub fn from_relevant(relevant: bool) -> Self {
        if relevant {
            Judgment::Relevant
        } else {
            Judgment::Nonrelevant
        }
    }

    pub fn is_relevant(self) -> bool {
        self == Judgment::Relevant
    }
}

impl fmt::Display for Judgment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Judgment::Relevant => "relevant",
            Judgment::Nonrelevant => "nonrelevant",
        })
    }
}

/// Relevance judgments keyed by topic. Unjudged pairs read as nonrelevant.
#[derive(Debug, Clone, Default)]
pub struct QrelsOracle {
    judgments: BTreeMap<String, HashMap<String, bool>>,
    r_t: BTreeMap<String, usize>,
}

impl QrelsOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, topic_id: &str, doc_id: &str, relevant: bool) {
        let per_topic = self.judgments.entry(topic_id.to_string()).or_default();
        let previous = per_topic.insert(doc_id.to_string(), relevant);
        let count = self.r_t.entry(topic_id.to_string()).or_insert(0);
        if previous == Some(true) {
            *count -= 1;
        }
        if relevant {
            *count += 1;
        }
    }

    pub fn judge(&self, topic_id: &str, doc_id: &str) -> Judgment {
        let relevant = self
            .judgments
            .get(topic_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(false);
        Judgment::from_relevant(relevant)
    }

    /// Number of relevant documents for `topic_id` (0 when unknown).
    pub fn r_t(&self, topic_id: &str) -> usize {
        self.r_t.get(topic_id).copied().unwrap_or(0)
    }

    pub fn has_topic(&self, topic_id: &str) -> bool {
        self.judgments.contains_key(topic_id)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn relevant_docs(&self, topic_id: &str) -> Vec<&str> {
        let mut docs: Vec<&str> = self
            .judgments
            .get(topic_id)
            .into_iter()
            .flat_map(|m| m.iter().filter(|(_, &r)| r).map(|(d, _)| d.as_str()))
            .collect();
        docs.sort_unstable();
        docs
    }

    pub fn write(&self, mut out: impl Write) -> io::Result<()> {
        for (topic, docs) in &self.judgments {
            let mut sorted: Vec<_> = docs.iter().collect();
            sorted.sort();
            for (doc, &rel) in sorted {
                writeln!(out, "{topic} 0 {doc} {}", u8::from(rel))?;
            }
        }
        Ok(())
    }
}

pub fn read_qrels(reader: impl BufRead, source_name: &str) -> Result<QrelsOracle, IngestError> {
    let mut oracle = QrelsOracle::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| IngestError::Io {
            path: PathBuf::from(source_name),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(IngestError::malformed(
                source_name,
                lineno,
                format!("expected 4 fields `topic 0 doc_id rel`, found {}", fields.len()),
            ));
        }
        let rel: i64 = fields[3]
            .parse()
            .map_err(|_| IngestError::malformed(source_name, lineno, format!("bad relevance {:?}", fields[3])))?;
        oracle.insert(fields[0], fields[2], rel > 0);
    }
    Ok(oracle)
}

pub fn load_qrels(path: &Path) -> Result<QrelsOracle, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    read_qrels(BufReader::new(file), &path.display().to_string())
}

pub fn save_qrels(oracle: &QrelsOracle, path: &Path) -> Result<(), IngestError> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| IngestError::io(path, e))?);
    oracle.write(&mut out).map_err(|e| IngestError::io(path, e))?;
    out.flush().map_err(|e| IngestError::io(path, e))
}

/// Knobs of the synthetic collection beyond the four required parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    pub seed: u64,
    pub n_docs: usize,
    pub n_topics: usize,
    pub relevant_per_topic: usize,
    /// Background vocabulary size (Zipf-distributed).
    pub background_vocab: usize,
    /// Mean background document length in tokens.
    pub mean_doc_len: usize,
    /// Marker terms reserved per topic; the query uses the first half.
    pub markers_per_topic: usize,
}

impl SyntheticParams {
    pub fn new(seed: u64, n_docs: usize, n_topics: usize, relevant_per_topic: usize) -> Self {
        SyntheticParams {
            seed,
            n_docs,
            n_topics,
            relevant_per_topic,
            background_vocab: 20_000,
            mean_doc_len: 100,
            markers_per_topic: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCollection {
    pub corpus: Corpus,
    pub topics: Vec<Topic>,
    pub qrels: QrelsOracle,
}

const SYLLABLES: [&str; 24] = [
    "ba", "ko", "ri", "ne", "tu", "sa", "mi", "lo", "de", "fa", "gu", "hi", "pe", "zo", "ra", "vi", "mu",
    "te", "no", "ca", "la", "si", "po", "ge",
];

/// Background word for a Zipf rank; distinct ranks give distinct words.
fn background_word(rank: usize) -> String {
    let mut n = rank;
    let mut word = String::new();
    loop {
        word.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
        if n == 0 {
            break;
        }
        n -= 1;
    }
    word
}

fn marker_word(topic: usize, marker: usize) -> String {
    format!("topic{topic}key{marker}")
}

/// Generates a corpus where each topic's marker terms occur in exactly
/// `relevant_per_topic` documents, mixed into Zipfian background text.
pub fn generate_synthetic(
    seed: u64,
    n_docs: usize,
    n_topics: usize,
    relevant_per_topic: usize,
) -> Result<SyntheticCollection, IngestError> {
    generate_synthetic_with(SyntheticParams::new(seed, n_docs, n_topics, relevant_per_topic))
}

pub fn generate_synthetic_with(params: SyntheticParams) -> Result<SyntheticCollection, IngestError> {
    if params.n_docs == 0 {
        return Err(IngestError::InvalidSynthetic("n_docs must be positive".into()));
    }
    if params.relevant_per_topic > params.n_docs {
        return Err(IngestError::InvalidSynthetic(format!(
            "relevant_per_topic {} exceeds n_docs {}",
            params.relevant_per_topic, params.n_docs
        )));
    }
    if params.markers_per_topic < 2 || params.background_vocab == 0 || params.mean_doc_len < 2 {
        return Err(IngestError::InvalidSynthetic(
            "need ≥2 markers per topic, a background vocabulary and mean_doc_len ≥ 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // Zipf(s = 1) cumulative weights over background ranks.
    let mut cumulative = Vec::with_capacity(params.background_vocab);
    let mut acc = 0.0f64;
    for rank in 0..params.background_vocab {
        acc += 1.0 / (rank as f64 + 1.0);
        cumulative.push(acc);
    }
    let words: Vec<String> = (0..params.background_vocab).map(background_word).collect();

    let mut topics = Vec::with_capacity(params.n_topics);
    let mut qrels = QrelsOracle::new();
    let mut planted: Vec<Vec<usize>> = vec![Vec::new(); params.n_docs];
    for t in 0..params.n_topics {
        let topic_id = format!("{}", 101 + t);
        let query_len = params.markers_per_topic / 2;
        let query = (0..query_len)
            .map(|m| marker_word(t, m))
            .collect::<Vec<_>>()
            .join(" ");
        for doc in index::sample(&mut rng, params.n_docs, params.relevant_per_topic).into_iter() {
            planted[doc].push(t);
        }
        topics.push(Topic { id: topic_id, query });
    }

    let min_len = params.mean_doc_len / 2;
    let max_len = params.mean_doc_len + params.mean_doc_len / 2;
    let mut docs = Vec::with_capacity(params.n_docs);
    for (d, doc_topics) in planted.iter().enumerate() {
        let len = rng.random_range(min_len..=max_len);
        let mut tokens: Vec<String> = (0..len)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let rank = cumulative.partition_point(|&c| c < u).min(params.background_vocab - 1);
                words[rank].clone()
            })
            .collect();
        for &t in doc_topics {
            let count = rng.random_range(2..=params.markers_per_topic.min(4));
            for m in index::sample(&mut rng, params.markers_per_topic, count).into_iter() {
                let pos = rng.random_range(0..=tokens.len());
                tokens.insert(pos, marker_word(t, m));
            }
        }
        let mut text = String::with_capacity(tokens.len() * 7);
        for (i, tok) in tokens.iter().enumerate() {
            if i > 0 {
                text.push_str(if i % 12 == 0 { ". " } else { " " });
            }
            text.push_str(tok);
        }
        text.push('.');
        docs.push(Document::new(format!("doc{d:07}"), text));
    }

    for (d, doc_topics) in planted.iter().enumerate() {
        for &t in doc_topics {
            qrels.insert(&topics[t].id, &docs[d].id, true);
        }
    }
    // Every topic appears in the qrels even when nothing was planted.
    for topic in &topics {
        qrels.judgments.entry(topic.id.clone()).or_default();
        qrels.r_t.entry(topic.id.clone()).or_insert(0);
    }

    Ok(SyntheticCollection {
        corpus: Corpus::from_documents(docs)?,
        topics,
        qrels,
    })
}
