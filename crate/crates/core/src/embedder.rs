//! Deterministic sequence embeddings for retrieval keys and bucketing.
//!
//! The built-in embedder is a signed feature-hashed tf-idf over unigrams and
//! bigrams. Vectors produced elsewhere (e.g. by the generator model) can be
//! loaded from an exchange file and used in its place.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_text, TokenSeq};
use crate::error::{Error, Result};
use crate::hash::{sha256_hex, Fnv1a};

pub const DEFAULT_DIMENSION: usize = 4096;

/// Salt that makes the sign hash differ from the index hash.
const SIGN_SALT: &[u8] = b"ragpipe.sign";

/// Sparse vector in a space of fixed dimension. Indices are sorted and
/// values non-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, &v)| (i as u32, v))
            .unzip();
        EmbeddingVector {
            dim: dense.len(),
            indices,
            values,
        }
    }

    /// `entries` need not be sorted; duplicate indices are summed.
    pub fn from_sparse(dim: usize, entries: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, v) in entries {
            assert!((i as usize) < dim, "index {i} out of dimension {dim}");
            *acc.entry(i).or_insert(0.0) += v;
        }
        let (indices, values) = acc.into_iter().filter(|(_, v)| *v != 0.0).unzip();
        EmbeddingVector { dim, indices, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i as usize] = v;
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scale to unit L2 norm; the zero vector stays zero.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
        }
        self
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
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

/// Cosine similarity in `[-1, 1]`; 0 if either side is the zero vector.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            actual: b.dim,
        });
    }
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((a.dot(b) / denom).clamp(-1.0, 1.0))
}

/// A unigram or bigram.
pub type NGram = Vec<u32>;

pub(crate) fn ngrams_1_2(seq: &TokenSeq) -> BTreeMap<NGram, u32> {
    let t = seq.tokens();
    let mut counts = BTreeMap::new();
    for n in 1..=2 {
        for w in t.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Hashed slot and sign of one n-gram.
pub fn feature_slot(gram: &[u32], dim: usize) -> (u32, f64) {
    let mut bytes = Vec::with_capacity(1 + 4 * gram.len());
    bytes.push(gram.len() as u8);
    for t in gram {
        bytes.extend_from_slice(&t.to_le_bytes());
    }
    let index = (Fnv1a::new().write(&bytes).finish() % dim as u64) as u32;
    let sign_hash = Fnv1a::new().write(SIGN_SALT).write(&bytes).finish();
    let sign = if sign_hash >> 63 == 0 { 1.0 } else { -1.0 };
    (index, sign)
}

/// Fitted tf-idf statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfEmbedder {
    pub dimension: usize,
    pub n_docs: usize,
    /// Document frequency per observed unigram/bigram.
    #[serde(with = "df_table")]
    pub df: BTreeMap<NGram, u32>,
}

mod df_table {
    use super::NGram;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(df: &BTreeMap<NGram, u32>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<(&NGram, &u32)> = df.iter().collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<NGram, u32>, D::Error> {
        let rows: Vec<(NGram, u32)> = Vec::deserialize(d)?;
        Ok(rows.into_iter().collect())
    }
}

impl TfIdfEmbedder {
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a TokenSeq>, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        let mut df = BTreeMap::new();
        let mut n_docs = 0;
        for doc in corpus {
            n_docs += 1;
            for gram in ngrams_1_2(doc).into_keys() {
                *df.entry(gram).or_insert(0) += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::EmptyInput("cannot fit an embedder on an empty corpus"));
        }
        Ok(TfIdfEmbedder {
            dimension,
            n_docs,
            df,
        })
    }

    /// `ln(N / df)`, or `ln(N + 1)` for n-grams never seen while fitting.
    pub fn idf(&self, gram: &[u32]) -> f64 {
        let n = self.n_docs as f64;
        match self.df.get(gram) {
            Some(&df) => (n / f64::from(df)).ln(),
            None => (n + 1.0).ln(),
        }
    }

    pub fn embed(&self, seq: &TokenSeq) -> EmbeddingVector {
        let entries = ngrams_1_2(seq).into_iter().map(|(gram, tf)| {
            let (index, sign) = feature_slot(&gram, self.dimension);
            (index, sign * f64::from(tf) * self.idf(&gram))
        });
        EmbeddingVector::from_sparse(self.dimension, entries).normalized()
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("embedder serializes");
        sha256_hex(&json)[..16].to_string()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &(serde_json::to_string(self)? + "\n"))
    }
}

/// Line record of an embedding exchange file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

/// Embeddings keyed by sample id, as read from an exchange file. Vectors
/// are L2-normalized on load.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    by_id: HashMap<String, EmbeddingVector>,
    fingerprint: String,
}

impl EmbeddingTable {
    pub fn from_records(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let dim = records.first().map(|r| r.vector.len()).unwrap_or(0);
        let mut by_id = HashMap::with_capacity(records.len());
        for r in records {
            if r.vector.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.vector.len(),
                });
            }
            if r.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!("non-finite embedding for `{}`", r.id)));
            }
            by_id.insert(r.id, EmbeddingVector::from_dense(&r.vector).normalized());
        }
        let mut ids: Vec<&String> = by_id.keys().collect();
        ids.sort();
        let mut h = Fnv1a::new();
        for id in ids {
            h.write(id.as_bytes()).write(&[0]);
            for (i, v) in by_id[id].iter() {
                h.write(&i.to_le_bytes()).write(&v.to_bits().to_le_bytes());
            }
        }
        Ok(EmbeddingTable {
            dim,
            by_id,
            fingerprint: format!("{:016x}", h.finish()),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| Error::Malformed {
                line: idx + 1,
                msg: e.to_string(),
            })?);
        }
        Self::from_records(records)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.by_id.get(id)
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Fails with every id in `ids` that has no vector.
    pub fn check_covers<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let missing: Vec<String> = ids
            .into_iter()
            .filter(|id| !self.by_id.contains_key(*id))
            .map(str::to_string)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingEmbeddings(missing))
        }
    }
}

pub fn write_embeddings(path: impl AsRef<Path>, rows: &[(String, EmbeddingVector)]) -> Result<()> {
    let mut out = String::new();
    for (id, v) in rows {
        let rec = EmbeddingRecord {
            id: id.clone(),
            vector: v.to_dense(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    write_text(path, &out)
}
