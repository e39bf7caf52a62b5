//! Noise-aware similarity buckets.
//!
//! Each training sample is scored by the similarity between its input side
//! (clinical, description and retrieved diagnoses) and its gold diagnosis,
//! then placed in one of `n` buckets, bucket 0 holding the most similar
//! samples. The bucket's prompt token is prepended to the model input; at
//! inference time the prompt is always bucket 0.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_text, Sample, TokenSeq};
use crate::embedder::{cosine, TfIdfEmbedder};
use crate::error::{Error, Result};
use crate::kbstore::render_input;
use crate::vocab::Vocabulary;

pub const DEFAULT_BUCKETS: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BucketMode {
    /// Quantile cut points; bucket sizes differ by at most one.
    #[default]
    EqualFrequency,
    /// Caller-supplied descending cut points.
    FixedThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketConfig {
    pub n_buckets: usize,
    pub mode: BucketMode,
    /// `n_buckets - 1` descending cut points. A similarity `s` lands in
    /// bucket `#{i : s < boundaries[i]}`. Filled in by equal-frequency
    /// assignment.
    #[serde(default)]
    pub boundaries: Vec<f64>,
}

impl Default for BucketConfig {
    fn default() -> Self {
        BucketConfig {
            n_buckets: DEFAULT_BUCKETS,
            mode: BucketMode::EqualFrequency,
            boundaries: Vec::new(),
        }
    }
}

impl BucketConfig {
    pub fn fixed(boundaries: Vec<f64>) -> Result<Self> {
        let cfg = BucketConfig {
            n_buckets: boundaries.len() + 1,
            mode: BucketMode::FixedThresholds,
            boundaries,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_buckets < 2 {
            return Err(Error::InvalidConfig("at least two buckets are required".into()));
        }
        if self.mode == BucketMode::FixedThresholds {
            if self.boundaries.len() != self.n_buckets - 1 {
                return Err(Error::InvalidConfig(format!(
                    "{} buckets need {} boundaries, got {}",
                    self.n_buckets,
                    self.n_buckets - 1,
                    self.boundaries.len()
                )));
            }
            if self.boundaries.windows(2).any(|w| w[0] <= w[1]) {
                return Err(Error::InvalidConfig("boundaries must be strictly decreasing".into()));
            }
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketAssignment {
    pub sample_id: String,
    pub similarity: f64,
    pub bucket: usize,
}

/// The input side used for bucketing: `C ++ D ++ retrieved...`, no separators.
pub fn input_side(s: &Sample) -> TokenSeq {
    TokenSeq::concat([&s.clinical, &s.description].into_iter().chain(&s.retrieved))
}

pub fn io_similarity(s: &Sample, embedder: &TfIdfEmbedder) -> Result<f64> {
    if !s.has_diagnosis() {
        return Err(Error::MissingDiagnosis(s.id.clone()));
    }
    cosine(&embedder.embed(&input_side(s)), &embedder.embed(&s.diagnosis))
}

/// Rank order: similarity descending, then id ascending. Inputs are finite,
/// and `-0.0` ties with `0.0`.
fn rank_cmp(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0))
}

/// Assign buckets. Returns assignments in input order and the config with
/// its boundaries finalized.
pub fn assign_buckets(sims: &[(String, f64)], cfg: &BucketConfig) -> Result<(Vec<BucketAssignment>, BucketConfig)> {
    cfg.validate()?;
    if let Some((id, s)) = sims.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::InvalidConfig(format!("similarity {s} for `{id}` is not finite")));
    }
    let n = cfg.n_buckets;
    match cfg.mode {
        BucketMode::FixedThresholds => {
            let out = sims
                .iter()
                .map(|(id, s)| BucketAssignment {
                    sample_id: id.clone(),
                    similarity: *s,
                    bucket: cfg.boundaries.iter().filter(|&&b| *s < b).count(),
                })
                .collect();
            Ok((out, cfg.clone()))
        }
        BucketMode::EqualFrequency => {
            let total = sims.len();
            if total < n {
                return Err(Error::TooFewSamples {
                    n_buckets: n,
                    got: total,
                });
            }
            let mut order: Vec<usize> = (0..total).collect();
            order.sort_by(|&a, &b| rank_cmp(&sims[a], &sims[b]));
            let mut bucket_of = vec![0; total];
            for (rank, &i) in order.iter().enumerate() {
                bucket_of[i] = rank * n / total;
            }
            // Cut point between bucket b-1 and b: midpoint of the lowest
            // similarity in b-1 and the highest in b.
            let boundaries = (1..n)
                .map(|b| {
                    let first_rank = (b * total).div_ceil(n);
                    let hi = sims[order[first_rank - 1]].1;
                    let lo = sims[order[first_rank]].1;
                    (hi + lo) / 2.0
                })
                .collect();
            let out = sims
                .iter()
                .zip(bucket_of)
                .map(|((id, s), bucket)| BucketAssignment {
                    sample_id: id.clone(),
                    similarity: *s,
                    bucket,
                })
                .collect();
            Ok((
                out,
                BucketConfig {
                    boundaries,
                    ..cfg.clone()
                },
            ))
        }
    }
}

/// `[B_bucket] ++ render_input(s)`.
pub fn apply_prompt(s: &Sample, bucket: usize, vocab: &Vocabulary, max_input_len: usize) -> Result<TokenSeq> {
    let prompt = vocab.specials().bucket(bucket)?;
    let mut out = vec![prompt];
    out.extend_from_slice(render_input(s, vocab, max_input_len)?.tokens());
    Ok(TokenSeq(out))
}

/// Prompt used at inference: always the best-match bucket.
pub fn inference_prompt(_cfg: &BucketConfig) -> usize {
    0
}

/// Score and bucket a training split, writing the bucket into each sample.
pub fn bucket_samples(samples: &[Sample], embedder: &TfIdfEmbedder, cfg: &BucketConfig) -> Result<(Vec<Sample>, BucketConfig)> {
    let sims = samples
        .iter()
        .map(|s| Ok((s.id.clone(), io_similarity(s, embedder)?)))
        .collect::<Result<Vec<_>>>()?;
    let (assignments, finalized) = assign_buckets(&sims, cfg)?;
    let out = samples
        .iter()
        .zip(assignments)
        .map(|(s, a)| Sample {
            bucket: Some(a.bucket),
            ..s.clone()
        })
        .collect();
    Ok((out, finalized))
}

/// Fit the bucketing embedder on both sides of every training pair.
pub fn fit_bucket_embedder(samples: &[Sample], dimension: usize) -> Result<TfIdfEmbedder> {
    let docs: Vec<TokenSeq> = samples
        .iter()
        .flat_map(|s| [input_side(s), s.diagnosis.clone()])
        .collect();
    TfIdfEmbedder::fit(&docs, dimension)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::extend_vocab;

    fn sims(values: &[f64]) -> Vec<(String, f64)> {
        values
            .iter()
            .enumerate()
            .map(|(i, &s)| (format!("s{i:02}"), s))
            .collect()
    }

    fn buckets(a: &[BucketAssignment]) -> Vec<usize> {
        a.iter().map(|x| x.bucket).collect()
    }

    #[test]
    fn one_per_bucket() {
        let (a, cfg) = assign_buckets(&sims(&[0.9, 0.7, 0.5, 0.3]), &BucketConfig::default()).unwrap();
        assert_eq!(buckets(&a), [0, 1, 2, 3]);
        assert_eq!(cfg.boundaries, [0.8, 0.6, 0.4]);
    }

    #[test]
    fn eight_into_four() {
        let (a, _) = assign_buckets(&sims(&[0.1, 0.8, 0.3, 0.6, 0.2, 0.7, 0.5, 0.4]), &BucketConfig::default()).unwrap();
        let mut sizes = [0; 4];
        for x in &a {
            sizes[x.bucket] += 1;
        }
        assert_eq!(sizes, [2, 2, 2, 2]);
        assert_eq!(buckets(&a), [3, 0, 2, 1, 3, 0, 1, 2]);
    }

    #[test]
    fn all_equal_split_by_id() {
        let (a, cfg) = assign_buckets(&sims(&[0.5; 10]), &BucketConfig::default()).unwrap();
        assert_eq!(buckets(&a), [0, 0, 0, 1, 1, 2, 2, 2, 3, 3]);
        assert!(cfg.boundaries.iter().all(|&b| b == 0.5));
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            assign_buckets(&sims(&[0.1, 0.2]), &BucketConfig::default()),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn fixed_thresholds() {
        let cfg = BucketConfig::fixed(vec![0.8, 0.5, 0.2]).unwrap();
        let (a, _) = assign_buckets(&sims(&[0.9, 0.8, 0.79, 0.5, 0.1]), &cfg).unwrap();
        assert_eq!(buckets(&a), [0, 0, 1, 1, 3]);
        assert!(BucketConfig::fixed(vec![0.2, 0.5]).is_err());
        assert!(BucketConfig::fixed(vec![]).is_err());
    }

    #[test]
    fn io_similarity_cases() {
        let seq = |v: &[u32]| TokenSeq(v.to_vec());
        let same = Sample::new("a", seq(&[]), seq(&[1, 2, 3]), seq(&[1, 2, 3]));
        let disjoint = Sample::new("b", seq(&[]), seq(&[4, 5]), seq(&[6, 7]));
        let e = fit_bucket_embedder(&[same.clone(), disjoint.clone()], 4096).unwrap();
        assert!((io_similarity(&same, &e).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(io_similarity(&disjoint, &e).unwrap(), 0.0);
        let unlabeled = Sample::new("c", seq(&[]), seq(&[1]), seq(&[]));
        assert!(matches!(io_similarity(&unlabeled, &e), Err(Error::MissingDiagnosis(_))));
    }

    #[test]
    fn prompt_prefix() {
        let seq = |v: &[u32]| TokenSeq(v.to_vec());
        let v = extend_vocab(&Vocabulary::synthetic_base(2), &["7", "8"], 4).unwrap();
        let s = Sample::new("a", seq(&[7]), seq(&[8]), seq(&[]));
        let p0 = apply_prompt(&s, 0, &v, 512).unwrap();
        let p3 = apply_prompt(&s, 3, &v, 512).unwrap();
        assert_eq!(p0.tokens()[0], v.specials().buckets[0]);
        assert_eq!(v.render(p0.tokens()[0]), Some("[B0]"));
        assert_eq!(p3.tokens()[0], v.specials().buckets[3]);
        assert_eq!(&p0.tokens()[1..], render_input(&s, &v, 512).unwrap().tokens());
        assert!(matches!(
            apply_prompt(&s, 4, &v, 512),
            Err(Error::BucketOutOfRange { .. })
        ));
    }

    #[test]
    fn inference_is_best_match() {
        assert_eq!(inference_prompt(&BucketConfig::default()), 0);
        let two = BucketConfig {
            n_buckets: 2,
            ..Default::default()
        };
        assert_eq!(inference_prompt(&two), 0);
    }
}
