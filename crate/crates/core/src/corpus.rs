//! Desensitized sample corpora: parsing, persistence and train/val splits.
//!
//! A corpus file holds one JSON record per line:
//!
//! ```text
//! {"id":"s1","clinical":"","description":"88 29 17","diagnosis":"55 72","retrieved":[],"bucket":0}
//! ```
//!
//! Token fields are space-separated decimal ids. Blank lines and lines
//! starting with `#` are skipped, which lets generated corpora carry a
//! header comment.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::hash::{mix64, seeded_fnv1a};

/// An ordered sequence of token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSeq(pub Vec<u32>);

impl TokenSeq {
    pub fn new(tokens: Vec<u32>) -> Self {
        TokenSeq(tokens)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a TokenSeq>) -> TokenSeq {
        TokenSeq(parts.into_iter().flat_map(|p| p.0.iter().copied()).collect())
    }
}

impl From<Vec<u32>> for TokenSeq {
    fn from(v: Vec<u32>) -> Self {
        TokenSeq(v)
    }
}

/// The offending token text when parsing fails.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BadToken(pub String);

impl FromStr for TokenSeq {
    type Err = BadToken;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|_| BadToken(t.to_string())))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(TokenSeq)
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl Serialize for TokenSeq {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TokenSeq {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse()
            .map_err(|BadToken(t)| serde::de::Error::custom(format!("invalid token `{t}`")))
    }
}

/// One dataset record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub clinical: TokenSeq,
    pub description: TokenSeq,
    /// Empty for unlabeled (test) samples.
    pub diagnosis: TokenSeq,
    /// Pseudo-diagnoses appended by retrieval, oldest first.
    pub retrieved: Vec<TokenSeq>,
    pub bucket: Option<usize>,
}

impl Sample {
    pub fn new(id: impl Into<String>, clinical: TokenSeq, description: TokenSeq, diagnosis: TokenSeq) -> Self {
        Sample {
            id: id.into(),
            clinical,
            description,
            diagnosis,
            retrieved: Vec::new(),
            bucket: None,
        }
    }

    pub fn has_diagnosis(&self) -> bool {
        !self.diagnosis.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    #[serde(default)]
    clinical: String,
    description: String,
    #[serde(default)]
    diagnosis: String,
    #[serde(default)]
    retrieved: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bucket: Option<usize>,
}

fn parse_field(line: usize, field: &'static str, text: &str) -> Result<TokenSeq> {
    text.parse()
        .map_err(|BadToken(token)| Error::InvalidToken { line, field, token })
}

fn sample_from_raw(raw: RawRecord, line: usize) -> Result<Sample> {
    let description = parse_field(line, "description", &raw.description)?;
    if description.is_empty() {
        return Err(Error::EmptyDescription { line, id: raw.id });
    }
    let retrieved = raw
        .retrieved
        .iter()
        .map(|r| parse_field(line, "retrieved", r))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sample {
        clinical: parse_field(line, "clinical", &raw.clinical)?,
        diagnosis: parse_field(line, "diagnosis", &raw.diagnosis)?,
        description,
        retrieved,
        bucket: raw.bucket,
        id: raw.id,
    })
}

/// Parse corpus text. Line numbers in errors are 1-based.
pub fn parse_corpus_str(text: &str) -> Result<Vec<Sample>> {
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(trimmed).map_err(|e| Error::Malformed {
            line: lineno,
            msg: e.to_string(),
        })?;
        let sample = sample_from_raw(raw, lineno)?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::DuplicateId {
                line: lineno,
                id: sample.id,
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}

pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus_str(&text)
}

pub fn sample_to_line(s: &Sample) -> String {
    let raw = RawRecord {
        id: s.id.clone(),
        clinical: s.clinical.to_string(),
        description: s.description.to_string(),
        diagnosis: s.diagnosis.to_string(),
        retrieved: s.retrieved.iter().map(ToString::to_string).collect(),
        bucket: s.bucket,
    };
    serde_json::to_string(&raw).expect("record serialization is infallible")
}

pub fn render_corpus(samples: &[Sample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&sample_to_line(s));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    write_text(path, &render_corpus(samples))
}

pub(crate) fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// How ids are assigned to the training side of a split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Rank ids by `mix64(fnv1a(seed || id))` and take the first `round(N * ratio)`
    /// as train. Exact sizes; independent of corpus order.
    #[default]
    Ranked,
    /// Train iff `mix64(fnv1a(seed || id)) < ratio * 2^64`. Each id's side depends
    /// on nothing but the id and seed; sizes are only binomially close.
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train_ids: BTreeSet<String>,
    pub val_ids: BTreeSet<String>,
    pub seed: u64,
}

impl SplitAssignment {
    /// Partition `samples` preserving their order.
    pub fn apply(&self, samples: &[Sample]) -> (Vec<Sample>, Vec<Sample>) {
        samples
            .iter()
            .cloned()
            .partition(|s| self.train_ids.contains(&s.id))
    }
}

pub fn split_corpus(samples: &[Sample], ratio: f64, seed: u64, mode: SplitMode) -> Result<SplitAssignment> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("split_corpus needs at least one sample"));
    }
    let mut keyed: Vec<(u64, &str)> = samples
        .iter()
        .map(|s| (mix64(seeded_fnv1a(seed, &s.id)), s.id.as_str()))
        .collect();
    let mut assignment = SplitAssignment {
        train_ids: BTreeSet::new(),
        val_ids: BTreeSet::new(),
        seed,
    };
    match mode {
        SplitMode::Ranked => {
            keyed.sort_unstable();
            let n_train = (samples.len() as f64 * ratio).round() as usize;
            for (rank, (_, id)) in keyed.into_iter().enumerate() {
                let side = if rank < n_train {
                    &mut assignment.train_ids
                } else {
                    &mut assignment.val_ids
                };
                side.insert(id.to_string());
            }
        }
        SplitMode::Threshold => {
            let cut = ratio * 2f64.powi(64);
            for (h, id) in keyed {
                let side = if (h as f64) < cut {
                    &mut assignment.train_ids
                } else {
                    &mut assignment.val_ids
                };
                side.insert(id.to_string());
            }
        }
    }
    Ok(assignment)
}
