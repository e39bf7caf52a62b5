//! Key-value knowledge base over training samples, thresholded top-1
//! retrieval, and iterative retrieval augmentation.
//!
//! Keys are description embeddings; values are gold diagnoses. A query's
//! best match is an *effective retrieval* when its cosine similarity meets
//! the threshold, in which case the value is appended to the sample's
//! `retrieved` list.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_text, Sample, TokenSeq};
use crate::embedder::{EmbeddingTable, EmbeddingVector, TfIdfEmbedder, DEFAULT_DIMENSION};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_INPUT_LEN: usize = 512;

/// Where description embeddings come from.
#[derive(Debug, Clone, Copy)]
pub enum KeySource<'a> {
    Builtin(&'a TfIdfEmbedder),
    Table(&'a EmbeddingTable),
}

impl KeySource<'_> {
    pub fn key(&self, s: &Sample) -> Result<EmbeddingVector> {
        match self {
            KeySource::Builtin(e) => Ok(e.embed(&s.description)),
            KeySource::Table(t) => t
                .get(&s.id)
                .cloned()
                .ok_or_else(|| Error::MissingEmbeddings(vec![s.id.clone()])),
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            KeySource::Builtin(e) => e.dimension,
            KeySource::Table(t) => t.dim(),
        }
    }

    pub fn fingerprint(&self) -> String {
        match self {
            KeySource::Builtin(e) => e.fingerprint(),
            KeySource::Table(t) => t.fingerprint().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KvPair {
    pub source_id: String,
    pub key: EmbeddingVector,
    pub value: TokenSeq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub dimension: usize,
    pub iteration: u32,
    pub embedder_fingerprint: String,
    pub pairs: Vec<KvPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub source_id: String,
    pub similarity: f64,
    pub value: TokenSeq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub matched: Option<Match>,
    pub threshold: f64,
}

pub fn build_kb(train: &[Sample], keys: KeySource<'_>, iteration: u32) -> Result<KnowledgeBase> {
    if train.is_empty() {
        return Err(Error::EmptyInput("knowledge base needs at least one training sample"));
    }
    let mut seen = HashSet::new();
    for s in train {
        if !s.has_diagnosis() {
            return Err(Error::MissingDiagnosis(s.id.clone()));
        }
        if !seen.insert(s.id.as_str()) {
            return Err(Error::DuplicateId {
                line: 0,
                id: s.id.clone(),
            });
        }
    }
    let pairs = train
        .par_iter()
        .map(|s| {
            Ok(KvPair {
                source_id: s.id.clone(),
                key: keys.key(s)?,
                value: s.diagnosis.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KnowledgeBase {
        dimension: keys.dimension(),
        iteration,
        embedder_fingerprint: keys.fingerprint(),
        pairs,
    })
}

fn check_threshold(threshold: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("threshold {threshold} outside [-1, 1]")))
    }
}

impl KnowledgeBase {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Exact scan for the most similar key, skipping `exclude_id`. Ties go to
    /// the lexicographically smallest source id.
    pub fn retrieve(&self, query: &EmbeddingVector, threshold: f64, exclude_id: Option<&str>) -> Result<RetrievalResult> {
        check_threshold(threshold)?;
        if query.dim() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: query.dim(),
            });
        }
        let query_norm = query.norm();
        let mut best: Option<(&KvPair, f64)> = None;
        for pair in &self.pairs {
            if exclude_id == Some(pair.source_id.as_str()) {
                continue;
            }
            let denom = query_norm * pair.key.norm();
            let sim = if denom == 0.0 {
                0.0
            } else {
                (query.dot(&pair.key) / denom).clamp(-1.0, 1.0)
            };
            let better = match best {
                None => true,
                Some((b, bs)) => sim > bs || (sim == bs && pair.source_id < b.source_id),
            };
            if better {
                best = Some((pair, sim));
            }
        }
        let matched = best.filter(|(_, sim)| *sim >= threshold).map(|(p, sim)| Match {
            source_id: p.source_id.clone(),
            similarity: sim,
            value: p.value.clone(),
        });
        Ok(RetrievalResult { matched, threshold })
    }

    pub fn to_text(&self) -> String {
        let header = KbHeader {
            dimension: self.dimension,
            iteration: self.iteration,
            embedder_fingerprint: self.embedder_fingerprint.clone(),
            count: self.pairs.len(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for p in &self.pairs {
            let line = KbLine {
                source_id: p.source_id.clone(),
                key: p.key.to_dense(),
                value: p.value.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("pair serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &self.to_text())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let malformed = |line: usize, msg: String| Error::Malformed { line, msg };
        let (_, first) = lines.next().ok_or_else(|| malformed(1, "missing header".into()))?;
        let header: KbHeader = serde_json::from_str(first).map_err(|e| malformed(1, e.to_string()))?;
        let mut pairs = Vec::with_capacity(header.count);
        let mut seen = HashSet::new();
        for (idx, line) in lines {
            let rec: KbLine = serde_json::from_str(line).map_err(|e| malformed(idx + 1, e.to_string()))?;
            if rec.key.len() != header.dimension {
                return Err(Error::DimensionMismatch {
                    expected: header.dimension,
                    actual: rec.key.len(),
                });
            }
            if !seen.insert(rec.source_id.clone()) {
                return Err(Error::DuplicateId {
                    line: idx + 1,
                    id: rec.source_id,
                });
            }
            pairs.push(KvPair {
                source_id: rec.source_id,
                key: EmbeddingVector::from_dense(&rec.key),
                value: rec.value,
            });
        }
        if pairs.len() != header.count {
            return Err(malformed(
                0,
                format!("header declares {} pairs, found {}", header.count, pairs.len()),
            ));
        }
        Ok(KnowledgeBase {
            dimension: header.dimension,
            iteration: header.iteration,
            embedder_fingerprint: header.embedder_fingerprint,
            pairs,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct KbHeader {
    dimension: usize,
    iteration: u32,
    embedder_fingerprint: String,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct KbLine {
    source_id: String,
    key: Vec<f64>,
    value: TokenSeq,
}

/// Append each sample's effective retrieval to `retrieved`. With
/// `exclude_self` (training splits) a sample never retrieves its own pair.
pub fn augment(
    samples: &[Sample],
    kb: &KnowledgeBase,
    keys: KeySource<'_>,
    threshold: f64,
    exclude_self: bool,
) -> Result<Vec<Sample>> {
    if kb.is_empty() {
        return Err(Error::EmptyInput("cannot augment from an empty knowledge base"));
    }
    check_threshold(threshold)?;
    samples
        .par_iter()
        .map(|s| {
            let query = keys.key(s)?;
            let exclude = exclude_self.then_some(s.id.as_str());
            let result = kb.retrieve(&query, threshold, exclude)?;
            let mut out = s.clone();
            if let Some(m) = result.matched {
                out.retrieved.push(m.value);
            }
            Ok(out)
        })
        .collect()
}

/// Model input in vocabulary index space: `C [SEP] D [SEP] r1 [SEP] r2 ...`.
///
/// While longer than `max_len`, the oldest retrieved value is dropped; if
/// clinical + description alone exceed it, the tail is cut.
pub fn render_input(s: &Sample, vocab: &Vocabulary, max_len: usize) -> Result<TokenSeq> {
    let sep = vocab.specials().sep;
    let mut segments = vec![vocab.encode_raw(&s.clinical)?, vocab.encode_raw(&s.description)?];
    let mut retrieved = s
        .retrieved
        .iter()
        .map(|r| vocab.encode_raw(r))
        .collect::<Result<Vec<_>>>()?;
    let total = |segs: &[TokenSeq], ret: &[TokenSeq]| {
        let n_segs = segs.len() + ret.len();
        segs.iter().chain(ret).map(TokenSeq::len).sum::<usize>() + n_segs - 1
    };
    while !retrieved.is_empty() && total(&segments, &retrieved) > max_len {
        retrieved.remove(0);
    }
    segments.extend(retrieved);
    let mut out = Vec::new();
    for (i, seg) in segments.iter().enumerate() {
        if i > 0 {
            out.push(sep);
        }
        out.extend_from_slice(seg.tokens());
    }
    out.truncate(max_len);
    Ok(TokenSeq(out))
}

/// Source of description embeddings for each retrieval iteration.
#[derive(Debug, Clone)]
pub enum EmbedSource {
    /// Fit the built-in tf-idf embedder on training descriptions.
    Builtin { dimension: usize },
    /// One table per iteration, e.g. from successively retrained models. If
    /// there are fewer tables than iterations the last one is reused.
    External(Vec<EmbeddingTable>),
}

impl Default for EmbedSource {
    fn default() -> Self {
        EmbedSource::Builtin {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Splits {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .map(|s| s.id.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct IterationOutput {
    pub kb: KnowledgeBase,
    pub splits: Splits,
}

/// One retrieval pass: build the KB from `splits.train` and augment every
/// split. Training queries exclude themselves; val/test exclude nothing.
pub fn augment_splits(splits: &Splits, keys: KeySource<'_>, threshold: f64, iteration: u32) -> Result<IterationOutput> {
    let kb = build_kb(&splits.train, keys, iteration)?;
    let out = Splits {
        train: augment(&splits.train, &kb, keys, threshold, true)?,
        val: augment(&splits.val, &kb, keys, threshold, false)?,
        test: augment(&splits.test, &kb, keys, threshold, false)?,
    };
    Ok(IterationOutput { kb, splits: out })
}

/// Run `n_iters` retrieval passes, each on the previous pass's output.
/// Returns one output per iteration, numbered from 1.
pub fn iterate(splits: &Splits, threshold: f64, n_iters: u32, source: &EmbedSource) -> Result<Vec<IterationOutput>> {
    if n_iters == 0 {
        return Err(Error::InvalidConfig("at least one retrieval iteration is required".into()));
    }
    let mut outputs: Vec<IterationOutput> = Vec::with_capacity(n_iters as usize);
    for iteration in 1..=n_iters {
        let current = outputs.last().map(|o| &o.splits).unwrap_or(splits);
        let out = match source {
            EmbedSource::Builtin { dimension } => {
                let embedder = TfIdfEmbedder::fit(current.train.iter().map(|s| &s.description), *dimension)?;
                augment_splits(current, KeySource::Builtin(&embedder), threshold, iteration)?
            }
            EmbedSource::External(tables) => {
                let table = tables
                    .get(iteration as usize - 1)
                    .or(tables.last())
                    .ok_or_else(|| Error::InvalidConfig("no external embedding tables given".into()))?;
                table.check_covers(current.ids())?;
                augment_splits(current, KeySource::Table(table), threshold, iteration)?
            }
        };
        outputs.push(out);
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::EmbeddingRecord;
    use crate::vocab::extend_vocab;

    fn seq(v: &[u32]) -> TokenSeq {
        TokenSeq(v.to_vec())
    }

    fn sample(id: &str, d: &[u32], o: &[u32]) -> Sample {
        Sample::new(id, seq(&[]), seq(d), seq(o))
    }

    fn table(rows: &[(&str, &[f64])]) -> EmbeddingTable {
        EmbeddingTable::from_records(
            rows.iter()
                .map(|(id, v)| EmbeddingRecord {
                    id: id.to_string(),
                    vector: v.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn two_key_kb() -> (EmbeddingTable, KnowledgeBase) {
        let t = table(&[("e1", &[1.0, 0.0]), ("e2", &[0.0, 1.0])]);
        let train = [sample("e1", &[1], &[10]), sample("e2", &[2], &[20])];
        let kb = build_kb(&train, KeySource::Table(&t), 0).unwrap();
        (t, kb)
    }

    #[test]
    fn retrieves_exact_key() {
        let (_, kb) = two_key_kb();
        let r = kb.retrieve(&EmbeddingVector::from_dense(&[1.0, 0.0]), 0.5, None).unwrap();
        let m = r.matched.unwrap();
        assert_eq!(m.source_id, "e1");
        assert_eq!(m.similarity, 1.0);
        assert_eq!(m.value, seq(&[10]));
    }

    #[test]
    fn threshold_filters_weaker_key() {
        let (_, kb) = two_key_kb();
        let r = kb.retrieve(&EmbeddingVector::from_dense(&[0.6, 0.8]), 0.7, None).unwrap();
        let m = r.matched.unwrap();
        assert_eq!(m.source_id, "e2");
        assert!((m.similarity - 0.8).abs() < 1e-15);
        let r = kb.retrieve(&EmbeddingVector::from_dense(&[0.6, 0.8]), 0.85, None).unwrap();
        assert!(r.matched.is_none());
    }

    #[test]
    fn self_exclusion() {
        let (_, kb) = two_key_kb();
        let r = kb.retrieve(&EmbeddingVector::from_dense(&[1.0, 0.0]), -1.0, Some("e1")).unwrap();
        assert_eq!(r.matched.unwrap().source_id, "e2");
    }

    #[test]
    fn ties_prefer_smallest_id() {
        let t = table(&[("b", &[1.0, 0.0]), ("a", &[1.0, 0.0]), ("c", &[1.0, 0.0])]);
        let train = [sample("b", &[1], &[1]), sample("a", &[1], &[2]), sample("c", &[1], &[3])];
        let kb = build_kb(&train, KeySource::Table(&t), 0).unwrap();
        let r = kb.retrieve(&EmbeddingVector::from_dense(&[1.0, 0.0]), 0.5, None).unwrap();
        assert_eq!(r.matched.unwrap().source_id, "a");
    }

    #[test]
    fn errors() {
        let (t, kb) = two_key_kb();
        assert!(matches!(
            kb.retrieve(&EmbeddingVector::from_dense(&[1.0, 0.0, 0.0]), 0.5, None),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(kb.retrieve(&EmbeddingVector::from_dense(&[1.0, 0.0]), 1.5, None).is_err());
        assert!(matches!(
            build_kb(&[], KeySource::Table(&t), 0),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            build_kb(&[sample("e1", &[1], &[])], KeySource::Table(&t), 0),
            Err(Error::MissingDiagnosis(_))
        ));
    }

    #[test]
    fn lone_own_pair_leaves_train_sample_unchanged() {
        let train = vec![sample("a", &[1, 2, 3], &[9])];
        let e = TfIdfEmbedder::fit(train.iter().map(|s| &s.description), 256).unwrap();
        let kb = build_kb(&train, KeySource::Builtin(&e), 1).unwrap();
        let out = augment(&train, &kb, KeySource::Builtin(&e), 0.9, true).unwrap();
        assert_eq!(out, train);
    }

    #[test]
    fn val_twin_gets_diagnosis() {
        let train = vec![sample("t1", &[1, 2, 3], &[40, 41]), sample("t2", &[5, 6], &[50])];
        let val = vec![sample("v1", &[1, 2, 3], &[40, 41])];
        let e = TfIdfEmbedder::fit(train.iter().map(|s| &s.description), 256).unwrap();
        let kb = build_kb(&train, KeySource::Builtin(&e), 1).unwrap();
        let out = augment(&val, &kb, KeySource::Builtin(&e), 0.5, false).unwrap();
        assert_eq!(out[0].retrieved, vec![seq(&[40, 41])]);
    }

    #[test]
    fn kb_text_round_trip() {
        let (_, kb) = two_key_kb();
        let back = KnowledgeBase::from_text(&kb.to_text()).unwrap();
        assert_eq!(back, kb);
    }

    #[test]
    fn kb_text_count_checked() {
        let (_, kb) = two_key_kb();
        let text = kb.to_text();
        let truncated: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(KnowledgeBase::from_text(&truncated).is_err());
    }

    #[test]
    fn render_layout_and_truncation() {
        let v = extend_vocab(&Vocabulary::synthetic_base(0), &["1", "2", "3", "4", "5", "6"], 4).unwrap();
        let sep = v.specials().sep;
        let mut s = Sample::new("x", seq(&[1]), seq(&[2, 3]), seq(&[]));
        s.retrieved = vec![seq(&[4]), seq(&[5, 6])];
        let enc = |x: u32| x - 1;
        let full = render_input(&s, &v, 512).unwrap();
        assert_eq!(
            full,
            seq(&[enc(1), sep, enc(2), enc(3), sep, enc(4), sep, enc(5), enc(6)])
        );
        // drops the oldest retrieved value first
        let cut = render_input(&s, &v, 7).unwrap();
        assert_eq!(cut, seq(&[enc(1), sep, enc(2), enc(3), sep, enc(5), enc(6)]));
        let hard = render_input(&s, &v, 2).unwrap();
        assert_eq!(hard.len(), 2);
    }

    #[test]
    fn iterate_requires_passes() {
        let splits = Splits::default();
        assert!(iterate(&splits, 0.5, 0, &EmbedSource::default()).is_err());
    }

    #[test]
    fn external_table_must_cover_all_ids() {
        let t = table(&[("a", &[1.0, 0.0])]);
        let splits = Splits {
            train: vec![sample("a", &[1], &[1]), sample("b", &[2], &[2])],
            ..Default::default()
        };
        match iterate(&splits, 0.5, 1, &EmbedSource::External(vec![t])) {
            Err(Error::MissingEmbeddings(ids)) => assert_eq!(ids, ["b"]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
