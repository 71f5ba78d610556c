//! Precomputed dense embeddings and the E1–E4 feature fusion strategies.
//!
//! Two on-disk formats are supported:
//!
//! * text: `id<TAB>v1,v2,...,v_dim` per line;
//! * binary: magic `EMB1`, `dim: u32`, `n: u32`, then `n` records of
//!   `id_len: u16`, id bytes, `dim` × `f32`; all integers and floats little-endian.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::SparseVector;

const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{source_name}:{line}: expected {expected} values, found {found}")]
    Arity {
        source_name: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{source_name}:{line}: {message}")]
    Malformed {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("non-finite embedding value for {id:?}")]
    NonFinite { id: String },
    #[error("duplicate embedding id {0:?}")]
    Duplicate(String),
    #[error("bad binary embedding file: {0}")]
    BadBinary(String),
    #[error("no dense vector for {0:?}")]
    MissingDense(String),
    #[error("embedding dimension mismatch: store has {store}, got {got}")]
    DimMismatch { store: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector(Vec<f32>);

impl DenseVector {
    pub fn new(values: Vec<f32>) -> Option<Self> {
        values.iter().all(|v| v.is_finite()).then_some(DenseVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }
}

/// Row-major store of document embeddings plus optional per-topic query embeddings.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
    queries: HashMap<String, DenseVector>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
            queries: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: &str, values: &[f32]) -> Result<(), EmbeddingError> {
        if values.len() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                store: self.dim,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { id: id.to_string() });
        }
        if self.index.contains_key(id) {
            return Err(EmbeddingError::Duplicate(id.to_string()));
        }
        self.index.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        self.data.extend_from_slice(values);
        Ok(())
    }

    pub fn insert_query(&mut self, topic_id: &str, vector: DenseVector) -> Result<(), EmbeddingError> {
        if vector.dim() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                store: self.dim,
                got: vector.dim(),
            });
        }
        self.queries.insert(topic_id.to_string(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.row_of(id).map(|r| self.row(r))
    }

    pub fn vector(&self, id: &str) -> Option<DenseVector> {
        self.get(id).map(|v| DenseVector(v.to_vec()))
    }

    pub fn query(&self, topic_id: &str) -> Option<&DenseVector> {
        self.queries.get(topic_id)
    }

    pub fn write_text(&self, mut out: impl Write) -> io::Result<()> {
        for (r, id) in self.ids.iter().enumerate() {
            write!(out, "{id}\t")?;
            for (k, v) in self.row(r).iter().enumerate() {
                if k > 0 {
                    out.write_all(b",")?;
                }
                write!(out, "{v}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_binary(&self, mut out: impl Write) -> io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.ids.len() as u32).to_le_bytes())?;
        for (r, id) in self.ids.iter().enumerate() {
            let len = u16::try_from(id.len())
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, format!("id too long: {id:?}")))?;
            out.write_all(&len.to_le_bytes())?;
            out.write_all(id.as_bytes())?;
            for v in self.row(r) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Parses the text format, checking every line has exactly `dim` values.
pub fn read_embeddings_text(reader: impl BufRead, dim: usize, source_name: &str) -> Result<EmbeddingStore, EmbeddingError> {
    let mut store = EmbeddingStore::new(dim);
    let mut values = Vec::with_capacity(dim);
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| EmbeddingError::Io {
            path: PathBuf::from(source_name),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, body) = line.split_once('\t').ok_or_else(|| EmbeddingError::Malformed {
            source_name: source_name.to_string(),
            line: lineno,
            message: "expected id<TAB>values".into(),
        })?;
        values.clear();
        for field in body.split(',') {
            let v: f32 = field.trim().parse().map_err(|_| EmbeddingError::Malformed {
                source_name: source_name.to_string(),
                line: lineno,
                message: format!("bad value {field:?}"),
            })?;
            values.push(v);
        }
        if values.len() != dim {
            return Err(EmbeddingError::Arity {
                source_name: source_name.to_string(),
                line: lineno,
                expected: dim,
                found: values.len(),
            });
        }
        store.insert(id, &values)?;
    }
    Ok(store)
}

pub fn read_embeddings_binary(mut reader: impl Read) -> Result<EmbeddingStore, EmbeddingError> {
    let bad = |what: &str| EmbeddingError::BadBinary(what.to_string());
    let mut header = [0u8; 12];
    reader.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    if &header[..4] != MAGIC {
        return Err(bad("missing EMB1 magic"));
    }
    let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut store = EmbeddingStore::new(dim);
    let mut values = vec![0f32; dim];
    let mut buf = vec![0u8; dim * 4];
    for k in 0..n {
        let mut len = [0u8; 2];
        reader
            .read_exact(&mut len)
            .map_err(|_| bad(&format!("truncated record {k}")))?;
        let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
        reader.read_exact(&mut id).map_err(|_| bad(&format!("truncated id in record {k}")))?;
        let id = String::from_utf8(id).map_err(|_| bad(&format!("non-UTF-8 id in record {k}")))?;
        reader
            .read_exact(&mut buf)
            .map_err(|_| bad(&format!("truncated values in record {k}")))?;
        for (v, chunk) in values.iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        store.insert(&id, &values)?;
    }
    Ok(store)
}

fn is_binary(path: &Path) -> io::Result<bool> {
    let mut magic = [0u8; 4];
    let mut f = File::open(path)?;
    Ok(f.read(&mut magic)? == 4 && &magic == MAGIC)
}

/// Loads either format (detected by magic bytes). For binary files `dim`
/// must match the header.
pub fn load_embeddings(path: &Path, dim: usize) -> Result<EmbeddingStore, EmbeddingError> {
    let io_err = |e| EmbeddingError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if is_binary(path).map_err(io_err)? {
        let store = read_embeddings_binary(BufReader::new(File::open(path).map_err(io_err)?))?;
        if store.dim() != dim {
            return Err(EmbeddingError::DimMismatch {
                store: store.dim(),
                got: dim,
            });
        }
        Ok(store)
    } else {
        read_embeddings_text(BufReader::new(File::open(path).map_err(io_err)?), dim, &path.display().to_string())
    }
}

/// Loads `topic_id`-keyed query embeddings (either format) into `store`.
pub fn load_query_embeddings(store: &mut EmbeddingStore, path: &Path) -> Result<(), EmbeddingError> {
    let queries = load_embeddings(path, store.dim())?;
    for (r, id) in queries.ids().iter().enumerate() {
        store.insert_query(id, DenseVector(queries.row(r).to_vec()))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EmbeddingFormat {
    Text,
    Binary,
}

/// Converts an embedding file between the text and binary formats.
pub fn convert_embeddings(input: &Path, output: &Path, dim: usize, to: EmbeddingFormat) -> Result<usize, EmbeddingError> {
    let store = load_embeddings(input, dim)?;
    let io_err = |e| EmbeddingError::Io {
        path: output.to_path_buf(),
        source: e,
    };
    let mut out = BufWriter::new(File::create(output).map_err(io_err)?);
    match to {
        EmbeddingFormat::Text => store.write_text(&mut out),
        EmbeddingFormat::Binary => store.write_binary(&mut out),
    }
    .map_err(io_err)?;
    out.flush().map_err(io_err)?;
    Ok(store.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    /// Sparse TF-IDF/BM25 features only.
    #[default]
    E1,
    /// Dense embeddings only.
    E2,
    /// Sparse block followed by the dense block in one feature space.
    E3,
    /// Separate sparse and dense models whose probabilities are summed.
    E4,
}

impl FusionStrategy {
    pub fn needs_dense(self) -> bool {
        self != FusionStrategy::E1
    }

    pub fn uses_sparse(self) -> bool {
        self != FusionStrategy::E2
    }
}

/// Borrowed view of a (possibly fused) feature vector.
///
/// The dense block, when present, occupies indices
/// `[dense_offset, dense_offset + dim)` and is multiplied by `dense_scale`.
#[derive(Debug, Clone, Copy)]
pub struct FeatureRef<'a> {
    pub sparse: Option<&'a SparseVector>,
    pub dense: Option<&'a [f32]>,
    pub dense_offset: usize,
    pub dense_scale: f64,
}

impl<'a> FeatureRef<'a> {
    pub fn sparse_only(sparse: &'a SparseVector) -> Self {
        FeatureRef {
            sparse: Some(sparse),
            dense: None,
            dense_offset: 0,
            dense_scale: 1.0,
        }
    }

    pub fn sparse_part(self) -> Option<FeatureRef<'a>> {
        self.sparse.map(FeatureRef::sparse_only)
    }

    /// The dense block alone, re-based at index 0.
    pub fn dense_part(self) -> Option<FeatureRef<'a>> {
        self.dense.map(|dense| FeatureRef {
            sparse: None,
            dense: Some(dense),
            dense_offset: 0,
            dense_scale: self.dense_scale,
        })
    }

    /// One past the largest feature index this vector can touch.
    pub fn extent(&self) -> usize {
        let sparse = self.sparse.and_then(|s| s.max_index()).map_or(0, |m| m as usize + 1);
        let dense = self.dense.map_or(0, |d| self.dense_offset + d.len());
        sparse.max(dense)
    }

    /// Logical `(index, value)` entries, sparse first; zeros are skipped.
    pub fn entries(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .sparse
            .map(|s| s.iter().map(|(i, w)| (i as usize, w)).collect())
            .unwrap_or_default();
        if let Some(dense) = self.dense {
            for (k, &v) in dense.iter().enumerate() {
                let v = self.dense_scale * v as f64;
                if v != 0.0 {
                    out.push((self.dense_offset + k, v));
                }
            }
        }
        out
    }
}

/// Owned feature vector, as produced by [`fuse`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub sparse: Option<SparseVector>,
    pub dense: Option<DenseVector>,
    pub dense_offset: usize,
    pub dense_scale: f64,
}

impl FeatureVector {
    pub fn sparse(sparse: SparseVector) -> Self {
        FeatureVector {
            sparse: Some(sparse),
            dense: None,
            dense_offset: 0,
            dense_scale: 1.0,
        }
    }

    pub fn as_ref(&self) -> FeatureRef<'_> {
        FeatureRef {
            sparse: self.sparse.as_ref(),
            dense: self.dense.as_ref().map(|d| d.values()),
            dense_offset: self.dense_offset,
            dense_scale: self.dense_scale,
        }
    }

    pub fn entries(&self) -> Vec<(usize, f64)> {
        self.as_ref().entries()
    }
}

/// Layout parameters shared by every fused vector of one session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionLayout {
    pub strategy: FusionStrategy,
    /// Width of the sparse block; the E3 dense block starts here.
    pub sparse_dim: usize,
    pub dense_scale: f64,
}

impl FusionLayout {
    pub fn view<'a>(&self, sparse: &'a SparseVector, dense: Option<&'a [f32]>) -> FeatureRef<'a> {
        match self.strategy {
            FusionStrategy::E1 => FeatureRef::sparse_only(sparse),
            FusionStrategy::E2 => FeatureRef {
                sparse: None,
                dense,
                dense_offset: 0,
                dense_scale: self.dense_scale,
            },
            FusionStrategy::E3 => FeatureRef {
                sparse: Some(sparse),
                dense,
                dense_offset: self.sparse_dim,
                dense_scale: self.dense_scale,
            },
            FusionStrategy::E4 => FeatureRef {
                sparse: Some(sparse),
                dense,
                dense_offset: 0,
                dense_scale: self.dense_scale,
            },
        }
    }
}

/// Combines a sparse vector with an optional dense vector per `layout`.
///
/// Under E1 the dense input is ignored; E2–E4 fail with the document id when
/// it is missing. Blocks keep their own scale (no joint renormalization).
pub fn fuse(
    doc_id: &str,
    sparse: &SparseVector,
    dense: Option<&[f32]>,
    layout: &FusionLayout,
) -> Result<FeatureVector, EmbeddingError> {
    if layout.strategy.needs_dense() && dense.is_none() {
        return Err(EmbeddingError::MissingDense(doc_id.to_string()));
    }
    let view = layout.view(sparse, dense);
    Ok(FeatureVector {
        sparse: view.sparse.cloned(),
        dense: view.dense.map(|d| DenseVector(d.to_vec())),
        dense_offset: view.dense_offset,
        dense_scale: view.dense_scale,
    })
}
