//! Sparse TF-IDF / BM25 document and query vectors.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Corpus;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("k1 must be positive, got {0}")]
    InvalidK1(f64),
    #[error("b must lie in [0, 1], got {0}")]
    InvalidB(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("feature cache {path}:{line}: {message}")]
    BadCache {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Sparse vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vector from arbitrary `(index, weight)` pairs: sorts them,
    /// sums duplicates and drops zeros.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut pairs: Vec<(u32, f64)> = pairs.into_iter().collect();
        pairs.sort_by_key(|&(i, _)| i);
        let mut indices: Vec<u32> = Vec::with_capacity(pairs.len());
        let mut values: Vec<f64> = Vec::with_capacity(pairs.len());
        for (i, w) in pairs {
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += w;
            } else {
                indices.push(i);
                values.push(w);
            }
        }
        let mut v = SparseVector { indices, values };
        v.drop_zeros();
        v
    }

    fn drop_zeros(&mut self) {
        if self.values.iter().all(|&w| w != 0.0) {
            return;
        }
        let (indices, values) = self
            .indices
            .iter()
            .zip(&self.values)
            .filter(|(_, &w)| w != 0.0)
            .map(|(&i, &w)| (i, w))
            .unzip();
        self.indices = indices;
        self.values = values;
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn max_index(&self) -> Option<u32> {
        self.indices.last().copied()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Scales to unit L2 norm; the empty vector is left alone.
    pub fn normalize(&mut self) {
        let norm = self.norm();
        if norm > 0.0 {
            for w in &mut self.values {
                *w /= norm;
            }
        }
    }

    /// Same weights with every index shifted by `offset`.
    pub fn shifted(&self, offset: u32) -> SparseVector {
        SparseVector {
            indices: self.indices.iter().map(|&i| i + offset).collect(),
            values: self.values.clone(),
        }
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

pub fn dot(a: &SparseVector, b: &SparseVector) -> f64 {
    a.dot(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    TfidfLog,
    Bm25,
    /// TF-IDF block at `[0, V)` followed by the BM25 block at `[V, 2V)`.
    TfidfBm25,
}

/// Weighting configuration, independent of any particular corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureParams {
    pub weighting: Weighting,
    pub k1: f64,
    pub b: f64,
    pub normalized: bool,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            weighting: Weighting::TfidfLog,
            k1: 0.9,
            b: 0.4,
            normalized: true,
        }
    }
}

impl FeatureParams {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !self.k1.is_finite() || self.k1 <= 0.0 {
            return Err(FeatureError::InvalidK1(self.k1));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(FeatureError::InvalidB(self.b));
        }
        Ok(())
    }
}

/// Weighting parameters bound to one corpus's statistics.
#[derive(Debug, Clone)]
pub struct FeatureSpace {
    params: FeatureParams,
    vocab_size: usize,
    avg_doc_len: f64,
    tfidf_idf: Vec<f64>,
    bm25_idf: Vec<f64>,
}

impl FeatureSpace {
    pub fn new(corpus: &Corpus, params: FeatureParams) -> Result<Self, FeatureError> {
        params.validate()?;
        let n = corpus.n_docs() as f64;
        let vocab_size = corpus.vocab_size();
        let mut tfidf_idf = Vec::with_capacity(vocab_size);
        let mut bm25_idf = Vec::with_capacity(vocab_size);
        for t in 0..vocab_size as u32 {
            let df = corpus.df(t) as f64;
            tfidf_idf.push((n / df).ln());
            bm25_idf.push(((n - df + 0.5) / (df + 0.5) + 1.0).ln());
        }
        Ok(FeatureSpace {
            params,
            vocab_size,
            avg_doc_len: corpus.avg_doc_len(),
            tfidf_idf,
            bm25_idf,
        })
    }

    pub fn params(&self) -> &FeatureParams {
        &self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Width of the sparse block (twice the vocabulary for concatenated weighting).
    pub fn sparse_dim(&self) -> usize {
        match self.params.weighting {
            Weighting::TfidfBm25 => 2 * self.vocab_size,
            _ => self.vocab_size,
        }
    }

    /// Weights for a bag of term ids; `doc_len` is the token count used by BM25.
    pub fn weigh_terms(&self, term_ids: &[u32], doc_len: usize) -> SparseVector {
        let mut sorted = term_ids.to_vec();
        sorted.sort_unstable();
        let mut counts: Vec<(u32, u32)> = Vec::with_capacity(sorted.len());
        for t in sorted {
            match counts.last_mut() {
                Some((last, c)) if *last == t => *c += 1,
                _ => counts.push((t, 1)),
            }
        }

        let length_ratio = if self.avg_doc_len > 0.0 {
            doc_len as f64 / self.avg_doc_len
        } else {
            1.0
        };
        let k1 = self.params.k1;
        let b = self.params.b;
        let tfidf = |t: u32, tf: u32| (1.0 + (tf as f64).ln()) * self.tfidf_idf[t as usize];
        let bm25 = |t: u32, tf: u32| {
            let tf = tf as f64;
            self.bm25_idf[t as usize] * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * length_ratio))
        };

        let mut indices = Vec::with_capacity(counts.len());
        let mut values = Vec::with_capacity(counts.len());
        let mut push = |i: u32, w: f64| {
            if w != 0.0 {
                indices.push(i);
                values.push(w);
            }
        };
        match self.params.weighting {
            Weighting::TfidfLog => counts.iter().for_each(|&(t, tf)| push(t, tfidf(t, tf))),
            Weighting::Bm25 => counts.iter().for_each(|&(t, tf)| push(t, bm25(t, tf))),
            Weighting::TfidfBm25 => {
                counts.iter().for_each(|&(t, tf)| push(t, tfidf(t, tf)));
                let offset = self.vocab_size as u32;
                counts.iter().for_each(|&(t, tf)| push(t + offset, bm25(t, tf)));
            }
        }
        let mut v = SparseVector { indices, values };
        if self.params.normalized {
            v.normalize();
        }
        v
    }

    pub fn featurize_doc(&self, corpus: &Corpus, doc_index: usize) -> SparseVector {
        let doc = corpus.doc(doc_index);
        let tokens = doc.tokens();
        let ids: Vec<u32> = tokens
            .iter()
            .map(|t| corpus.term_id(t).expect("corpus vocabulary covers its own documents"))
            .collect();
        self.weigh_terms(&ids, tokens.len())
    }

    /// Featurizes a query as a pseudo-document against the corpus statistics;
    /// out-of-vocabulary terms contribute nothing.
    pub fn featurize_query(&self, corpus: &Corpus, query: &str) -> SparseVector {
        let tokens = crate::ingest::tokenize(query);
        let ids: Vec<u32> = tokens.iter().filter_map(|t| corpus.term_id(t)).collect();
        self.weigh_terms(&ids, tokens.len())
    }
}

/// A corpus together with its precomputed document vectors.
#[derive(Debug)]
pub struct FeatureIndex {
    corpus: Arc<Corpus>,
    space: FeatureSpace,
    vectors: Vec<SparseVector>,
}

impl FeatureIndex {
    pub fn build(corpus: Arc<Corpus>, params: FeatureParams) -> Result<Self, FeatureError> {
        let space = FeatureSpace::new(&corpus, params)?;
        let vectors = (0..corpus.n_docs())
            .into_par_iter()
            .map(|i| space.featurize_doc(&corpus, i))
            .collect();
        Ok(FeatureIndex { corpus, space, vectors })
    }

    /// Uses vectors from a feature cache instead of recomputing them.
    pub fn from_cache(corpus: Arc<Corpus>, params: FeatureParams, path: &Path) -> Result<Self, FeatureError> {
        let space = FeatureSpace::new(&corpus, params)?;
        let vectors = read_feature_cache(path, &corpus)?;
        Ok(FeatureIndex { corpus, space, vectors })
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn vectors(&self) -> &[SparseVector] {
        &self.vectors
    }

    pub fn vector(&self, doc_index: usize) -> &SparseVector {
        &self.vectors[doc_index]
    }

    pub fn write_cache(&self, path: &Path) -> Result<(), FeatureError> {
        let io_err = |e| FeatureError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        for (doc, v) in self.corpus.docs().iter().zip(&self.vectors) {
            write!(out, "{}\t", doc.id).map_err(io_err)?;
            for (k, (i, w)) in v.iter().enumerate() {
                if k > 0 {
                    out.write_all(b",").map_err(io_err)?;
                }
                write!(out, "{i}:{w}").map_err(io_err)?;
            }
            out.write_all(b"\n").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Reads `doc_id<TAB>term_id:weight,...` lines; documents must appear in corpus order.
pub fn read_feature_cache(path: &Path, corpus: &Corpus) -> Result<Vec<SparseVector>, FeatureError> {
    let bad = |line: usize, message: String| FeatureError::BadCache {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(path).map_err(|e| FeatureError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut vectors = Vec::with_capacity(corpus.n_docs());
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| FeatureError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let (doc_id, body) = line
            .split_once('\t')
            .ok_or_else(|| bad(lineno, "expected doc_id<TAB>entries".into()))?;
        let expected = corpus
            .docs()
            .get(vectors.len())
            .ok_or_else(|| bad(lineno, "more lines than corpus documents".into()))?;
        if expected.id != doc_id {
            return Err(bad(lineno, format!("expected doc {:?}, found {doc_id:?}", expected.id)));
        }
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for entry in body.split(',').filter(|e| !e.is_empty()) {
            let (i, w) = entry
                .split_once(':')
                .ok_or_else(|| bad(lineno, format!("bad entry {entry:?}")))?;
            let i: u32 = i.parse().map_err(|_| bad(lineno, format!("bad index {i:?}")))?;
            let w: f64 = w.parse().map_err(|_| bad(lineno, format!("bad weight {w:?}")))?;
            if indices.last().is_some_and(|&last| last >= i) {
                return Err(bad(lineno, "indices not strictly increasing".into()));
            }
            indices.push(i);
            values.push(w);
        }
        vectors.push(SparseVector { indices, values });
    }
    if vectors.len() != corpus.n_docs() {
        return Err(bad(vectors.len(), "fewer lines than corpus documents".into()));
    }
    Ok(vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{read_corpus, CorpusFormat};
    use proptest::prelude::*;

    fn two_docs() -> Corpus {
        read_corpus("d1\tcat\nd2\tcat dog\n".as_bytes(), CorpusFormat::Tsv, "t").unwrap()
    }

    fn raw(weighting: Weighting) -> FeatureParams {
        FeatureParams {
            weighting,
            normalized: false,
            ..FeatureParams::default()
        }
    }

    #[test]
    #[allow(clippy::approx_constant)] // ln 2, written out by hand on purpose
    fn tfidf_hand_example() {
        let c = two_docs();
        let space = FeatureSpace::new(&c, raw(Weighting::TfidfLog)).unwrap();
        let d2 = space.featurize_doc(&c, 1);
        let dog = c.term_id("dog").unwrap();
        assert_eq!(d2.indices(), &[dog]);
        assert!((d2.values()[0] - 0.693_147_180_559_945_3).abs() < 1e-15);
    }

    #[test]
    fn bm25_hand_example() {
        let c = two_docs();
        let space = FeatureSpace::new(&c, raw(Weighting::Bm25)).unwrap();
        let d2 = space.featurize_doc(&c, 1);
        // dog: df=1, N=2, tf=1, |d|=2, avgdl=1.5
        let idf = ((2.0 - 1.0 + 0.5) / (1.0 + 0.5) + 1.0f64).ln();
        let expect = idf * 1.9 / (1.0 + 0.9 * (1.0 - 0.4 + 0.4 * 2.0 / 1.5));
        let dog = c.term_id("dog").unwrap();
        let got = d2.iter().find(|&(i, _)| i == dog).unwrap().1;
        assert!((got - expect).abs() < 1e-15);
        assert_eq!(d2.len(), 2, "bm25 keeps terms present everywhere");
    }

    #[test]
    fn concatenated_weighting_layout() {
        let c = two_docs();
        let space = FeatureSpace::new(&c, raw(Weighting::TfidfBm25)).unwrap();
        assert_eq!(space.sparse_dim(), 4);
        let d2 = space.featurize_doc(&c, 1);
        let dog = c.term_id("dog").unwrap();
        let cat = c.term_id("cat").unwrap();
        assert_eq!(d2.indices(), &[dog, cat + 2, dog + 2]);
    }

    #[test]
    fn query_examples() {
        let c = two_docs();
        let space = FeatureSpace::new(&c, raw(Weighting::TfidfLog)).unwrap();
        assert!(space.featurize_query(&c, "cat").is_empty());
        let q = space.featurize_query(&c, "dog zebra");
        assert_eq!(q.indices(), &[c.term_id("dog").unwrap()]);
        assert!(space.featurize_query(&c, "").is_empty());
    }

    #[test]
    fn empty_doc_gives_empty_vector() {
        let c = read_corpus("d1\t\nd2\tcat\n".as_bytes(), CorpusFormat::Tsv, "t").unwrap();
        let space = FeatureSpace::new(&c, FeatureParams::default()).unwrap();
        assert!(space.featurize_doc(&c, 0).is_empty());
    }

    #[test]
    fn normalized_vectors_have_unit_norm() {
        let s = crate::ingest::generate_synthetic(5, 200, 1, 10).unwrap();
        for weighting in [Weighting::TfidfLog, Weighting::Bm25, Weighting::TfidfBm25] {
            let params = FeatureParams {
                weighting,
                ..FeatureParams::default()
            };
            let index = FeatureIndex::build(Arc::new(s.corpus.clone()), params).unwrap();
            for v in index.vectors().iter().filter(|v| !v.is_empty()) {
                assert!((v.norm() - 1.0).abs() < 1e-12);
                assert!((v.dot(v) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dot_examples() {
        let a = SparseVector::from_pairs([(1, 0.5), (3, 2.0)]);
        let b = SparseVector::from_pairs([(3, 0.25)]);
        assert_eq!(dot(&a, &b), 0.5);
        let c = SparseVector::from_pairs([(0, 1.0), (2, 1.0)]);
        assert_eq!(dot(&a, &c), 0.0);
    }

    #[test]
    fn from_pairs_merges_and_drops_zeros() {
        let v = SparseVector::from_pairs([(4, 1.0), (1, 2.0), (4, -1.0), (2, 0.0)]);
        assert_eq!(v.indices(), &[1]);
        assert_eq!(v.values(), &[2.0]);
    }

    #[test]
    fn invalid_params_rejected() {
        let c = two_docs();
        let bad_k1 = FeatureParams { k1: 0.0, ..FeatureParams::default() };
        assert!(matches!(FeatureSpace::new(&c, bad_k1), Err(FeatureError::InvalidK1(_))));
        let bad_b = FeatureParams { b: 1.5, ..FeatureParams::default() };
        assert!(matches!(FeatureSpace::new(&c, bad_b), Err(FeatureError::InvalidB(_))));
    }

    #[test]
    fn feature_cache_roundtrip() {
        let s = crate::ingest::generate_synthetic(9, 50, 1, 5).unwrap();
        let corpus = Arc::new(s.corpus);
        let index = FeatureIndex::build(corpus.clone(), FeatureParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.tsv");
        index.write_cache(&path).unwrap();
        let cached = FeatureIndex::from_cache(corpus, FeatureParams::default(), &path).unwrap();
        assert_eq!(cached.vectors(), index.vectors());
    }

    fn arb_sparse() -> impl Strategy<Value = SparseVector> {
        proptest::collection::vec((0u32..40, -5.0f64..5.0), 0..20).prop_map(SparseVector::from_pairs)
    }

    proptest! {
        #[test]
        fn dot_symmetric_and_bilinear(a in arb_sparse(), b in arb_sparse(), c in arb_sparse(), s in -3.0f64..3.0) {
            prop_assert_eq!(a.dot(&b), b.dot(&a));
            prop_assert!(a.dot(&a) >= 0.0);
            let scaled = SparseVector::from_pairs(a.iter().map(|(i, w)| (i, s * w)));
            prop_assert!((scaled.dot(&b) - s * a.dot(&b)).abs() < 1e-9);
            let sum = SparseVector::from_pairs(a.iter().chain(c.iter()));
            prop_assert!((sum.dot(&b) - (a.dot(&b) + c.dot(&b))).abs() < 1e-9);
        }

        #[test]
        fn bm25_nondecreasing_in_tf(tf in 1u32..50, df in 1u32..100, extra in 0u32..100, len in 1usize..500, avg in 1usize..300) {
            // Build a one-term space by hand to probe the weighting formula.
            let n = df + extra;
            let space = FeatureSpace {
                params: FeatureParams { weighting: Weighting::Bm25, normalized: false, ..FeatureParams::default() },
                vocab_size: 1,
                avg_doc_len: avg as f64,
                tfidf_idf: vec![(n as f64 / df as f64).ln()],
                bm25_idf: vec![((n as f64 - df as f64 + 0.5) / (df as f64 + 0.5) + 1.0).ln()],
            };
            let w = |tf: u32| space.weigh_terms(&vec![0; tf as usize], len.max(tf as usize)).values()[0];
            let doc_len = len.max(tf as usize + 1);
            let lo = space.weigh_terms(&vec![0; tf as usize], doc_len).values()[0];
            let hi = space.weigh_terms(&vec![0; tf as usize + 1], doc_len).values()[0];
            prop_assert!(hi >= lo);
            prop_assert!(w(tf) > 0.0);
        }
    }

    #[test]
    fn featurize_independent_of_iteration_order() {
        let s = crate::ingest::generate_synthetic(2, 100, 1, 5).unwrap();
        let corpus = Arc::new(s.corpus);
        let space = FeatureSpace::new(&corpus, FeatureParams::default()).unwrap();
        let forward: Vec<_> = (0..corpus.n_docs()).map(|i| space.featurize_doc(&corpus, i)).collect();
        let mut backward: Vec<_> = (0..corpus.n_docs()).rev().map(|i| space.featurize_doc(&corpus, i)).collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }
}
