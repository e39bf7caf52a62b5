//! Extended vocabulary: base entries, appended desensitized tokens, then
//! reserved specials (`[SEP]`, `[MASK]`, `[PAD]`, bucket prompts `[B0]..`).
//!
//! File format: one entry per line, index = line number, followed by a blank
//! line and a single JSON manifest line describing the special indices.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_text, TokenSeq};
use crate::error::{Error, Result};

pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const PAD: &str = "[PAD]";

pub fn bucket_token(i: usize) -> String {
    format!("[B{i}]")
}

/// Human-facing names of the first four bucket prompts.
pub const BUCKET_LABELS: [&str; 4] = ["best match", "good match", "not good match", "noisy match"];

/// Indices of the reserved tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub sep: u32,
    pub mask: u32,
    pub pad: u32,
    /// `buckets[i]` is the prompt token for bucket `i`; bucket 0 is the best.
    pub buckets: Vec<u32>,
}

impl SpecialIds {
    pub fn is_special(&self, id: u32) -> bool {
        id == self.sep || id == self.mask || id == self.pad || self.buckets.contains(&id)
    }

    pub fn bucket(&self, i: usize) -> Result<u32> {
        self.buckets.get(i).copied().ok_or(Error::BucketOutOfRange {
            bucket: i,
            n_buckets: self.buckets.len(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    base_size: usize,
    core_size: usize,
    specials: SpecialIds,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<String>,
    index: HashMap<String, u32>,
    base_size: usize,
    core_size: usize,
    specials: Option<SpecialIds>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
            && self.base_size == other.base_size
            && self.core_size == other.core_size
            && self.specials == other.specials
    }
}

impl Vocabulary {
    /// A base vocabulary. Duplicate entries keep their first position.
    pub fn base<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocabulary {
            entries: Vec::new(),
            index: HashMap::new(),
            base_size: 0,
            core_size: 0,
            specials: None,
        };
        for e in entries {
            v.push(e.into());
        }
        v.base_size = v.entries.len();
        v.core_size = v.entries.len();
        v
    }

    /// Placeholder base of `size` entries (`<base_0>`, `<base_1>`, ...).
    pub fn synthetic_base(size: usize) -> Self {
        Self::base((0..size).map(|i| format!("<base_{i}>")))
    }

    pub fn read_base(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::base(text.lines().map(str::trim).filter(|l| !l.is_empty())))
    }

    fn push(&mut self, token: String) -> u32 {
        if let Some(&i) = self.index.get(&token) {
            return i;
        }
        let i = self.entries.len() as u32;
        self.index.insert(token.clone(), i);
        self.entries.push(token);
        i
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn base_size(&self) -> usize {
        self.base_size
    }

    /// Base plus appended data tokens, before specials.
    pub fn core_size(&self) -> usize {
        self.core_size
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    /// Panics on a base vocabulary that was never extended.
    pub fn specials(&self) -> &SpecialIds {
        self.specials
            .as_ref()
            .expect("vocabulary has no specials; build it with extend_vocab")
    }

    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn render(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<TokenSeq> {
        tokens
            .iter()
            .enumerate()
            .map(|(position, t)| {
                self.lookup(t.as_ref()).ok_or_else(|| Error::UnknownToken {
                    token: t.as_ref().to_string(),
                    position,
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(TokenSeq)
    }

    /// Map raw desensitized ids to vocabulary indices.
    pub fn encode_raw(&self, seq: &TokenSeq) -> Result<TokenSeq> {
        let strings: Vec<String> = seq.tokens().iter().map(u32::to_string).collect();
        self.encode(&strings)
    }

    pub fn decode(&self, ids: &TokenSeq) -> Result<Vec<String>> {
        ids.tokens()
            .iter()
            .enumerate()
            .map(|(position, &i)| {
                self.render(i).map(str::to_string).ok_or(Error::UnknownToken {
                    token: i.to_string(),
                    position,
                })
            })
            .collect()
    }

    /// Map indices back to raw ids, dropping specials. Fails on entries that
    /// are not decimal ids.
    pub fn decode_raw(&self, ids: &TokenSeq) -> Result<TokenSeq> {
        let specials = self.specials();
        let mut out = Vec::with_capacity(ids.len());
        for (position, &i) in ids.tokens().iter().enumerate() {
            if specials.is_special(i) {
                continue;
            }
            let text = self.render(i).ok_or(Error::UnknownToken {
                token: i.to_string(),
                position,
            })?;
            let raw = text.parse::<u32>().map_err(|_| Error::UnknownToken {
                token: text.to_string(),
                position,
            })?;
            out.push(raw);
        }
        Ok(TokenSeq(out))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(e);
            out.push('\n');
        }
        if let Some(specials) = &self.specials {
            let manifest = Manifest {
                base_size: self.base_size,
                core_size: self.core_size,
                specials: specials.clone(),
            };
            out.push('\n');
            out.push_str(&serde_json::to_string(&manifest).expect("manifest serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &self.to_text())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (body, manifest) = match text.split_once("\n\n") {
            Some((body, rest)) => (body, Some(rest.trim())),
            None => (text, None),
        };
        let mut v = Self::base(body.lines());
        if v.len() != body.lines().count() {
            return Err(Error::Malformed {
                line: 0,
                msg: "vocabulary entries are not unique".into(),
            });
        }
        if let Some(m) = manifest.filter(|m| !m.is_empty()) {
            let m: Manifest = serde_json::from_str(m).map_err(|e| Error::Malformed {
                line: v.len() + 2,
                msg: e.to_string(),
            })?;
            let n = v.len() as u32;
            let all = [m.specials.sep, m.specials.mask, m.specials.pad];
            if all.iter().chain(&m.specials.buckets).any(|&i| i >= n) || m.core_size > v.len() {
                return Err(Error::Malformed {
                    line: v.len() + 2,
                    msg: "special index outside vocabulary".into(),
                });
            }
            v.base_size = m.base_size;
            v.core_size = m.core_size;
            v.specials = Some(m.specials);
        }
        Ok(v)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Append `new_tokens` (skipping any already present) and then the special
/// tokens. Specials already present in `base` keep their base index.
pub fn extend_vocab<S: AsRef<str>>(base: &Vocabulary, new_tokens: &[S], n_buckets: usize) -> Result<Vocabulary> {
    if n_buckets < 1 {
        return Err(Error::InvalidConfig("n_buckets must be at least 1".into()));
    }
    let mut v = Vocabulary::base(base.entries.iter().cloned());
    v.base_size = base.base_size;
    let special_names: Vec<String> = [SEP, MASK, PAD]
        .iter()
        .map(|s| s.to_string())
        .chain((0..n_buckets).map(bucket_token))
        .collect();
    for t in new_tokens {
        let t = t.as_ref();
        // Special surface forms are never data tokens.
        if !special_names.iter().any(|s| s == t) {
            v.push(t.to_string());
        }
    }
    v.core_size = v.len();
    let sep = v.push(SEP.to_string());
    let mask = v.push(MASK.to_string());
    let pad = v.push(PAD.to_string());
    let buckets = (0..n_buckets).map(|i| v.push(bucket_token(i))).collect();
    v.specials = Some(SpecialIds {
        sep,
        mask,
        pad,
        buckets,
    });
    Ok(v)
}

/// Distinct raw ids in ascending numeric order, rendered as vocabulary entries.
pub fn corpus_tokens<'a>(seqs: impl IntoIterator<Item = &'a TokenSeq>) -> Vec<String> {
    let set: std::collections::BTreeSet<u32> = seqs
        .into_iter()
        .flat_map(|s| s.tokens().iter().copied())
        .collect();
    set.into_iter().map(|t| t.to_string()).collect()
}
