//! Denoising pre-training pairs: span masking with Poisson span lengths and
//! an adaptive mask-ratio schedule.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_text, Sample, TokenSeq};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::vocab::{SpecialIds, Vocabulary};

/// Upper bound for any mask ratio.
pub const MAX_MASK_RATIO: f64 = 0.8;

/// Which positions of `[C, SEP, D, SEP, O]` may be masked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskScope {
    /// Every non-SEP token.
    #[default]
    All,
    /// Only tokens after the second SEP.
    DiagnosisOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub mask_ratio: f64,
    pub poisson_lambda: f64,
    pub max_span: usize,
    pub seed: u64,
    #[serde(default)]
    pub scope: MaskScope,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            mask_ratio: 0.3,
            poisson_lambda: 3.0,
            max_span: 10,
            seed: 7,
            scope: MaskScope::All,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_MASK_RATIO).contains(&self.mask_ratio) {
            return Err(Error::InvalidConfig(format!(
                "mask ratio {} outside [0, {MAX_MASK_RATIO}]",
                self.mask_ratio
            )));
        }
        if !(self.poisson_lambda.is_finite() && self.poisson_lambda > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "poisson lambda {} must be positive",
                self.poisson_lambda
            )));
        }
        if self.max_span == 0 {
            return Err(Error::InvalidConfig("max_span must be at least 1".into()));
        }
        Ok(())
    }
}

/// A corrupted input and the original it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptedPair {
    pub source: TokenSeq,
    pub target: TokenSeq,
    /// `(start, length)` into `target`, sorted and disjoint.
    pub spans: Vec<(usize, usize)>,
}

/// `C ++ [SEP] ++ D ++ [SEP] ++ O`.
pub fn build_pretrain_input(s: &Sample, sep: u32) -> TokenSeq {
    let mut out = Vec::with_capacity(s.clinical.len() + s.description.len() + s.diagnosis.len() + 2);
    out.extend_from_slice(s.clinical.tokens());
    out.push(sep);
    out.extend_from_slice(s.description.tokens());
    out.push(sep);
    out.extend_from_slice(s.diagnosis.tokens());
    TokenSeq(out)
}

/// One span length: Poisson(lambda) conditioned on `>= 1`, clipped to `max_span`.
///
/// Sampled by inverting the conditional CDF with a single uniform draw.
pub fn sample_span_length(rng: &mut SeededRng, lambda: f64, max_span: usize) -> usize {
    let p0 = (-lambda).exp();
    let u = p0 + rng.next_f64() * (1.0 - p0);
    let mut k = 0usize;
    let mut pk = p0;
    let mut cdf = p0;
    while u >= cdf && k < max_span {
        k += 1;
        pk *= lambda / k as f64;
        cdf += pk;
    }
    k.clamp(1, max_span)
}

/// Replace each span of `target` with a single `mask` token.
pub fn apply_spans(target: &TokenSeq, spans: &[(usize, usize)], mask: u32) -> TokenSeq {
    let t = target.tokens();
    let mut out = Vec::with_capacity(t.len());
    let mut pos = 0;
    for &(start, len) in spans {
        out.extend_from_slice(&t[pos..start]);
        out.push(mask);
        pos = start + len;
    }
    out.extend_from_slice(&t[pos..]);
    TokenSeq(out)
}

fn maskable_positions(seq: &TokenSeq, sep: u32, scope: MaskScope) -> Vec<bool> {
    let mut seps_seen = 0;
    seq.tokens()
        .iter()
        .map(|&t| {
            if t == sep {
                seps_seen += 1;
                return false;
            }
            match scope {
                MaskScope::All => true,
                MaskScope::DiagnosisOnly => seps_seen >= 2,
            }
        })
        .collect()
}

/// Count the starts where `len` consecutive free positions begin.
fn count_starts(free: &[bool], len: usize) -> usize {
    let mut total = 0;
    let mut run = 0;
    for &f in free {
        run = if f { run + 1 } else { 0 };
        if run >= len {
            total += 1;
        }
    }
    total
}

fn nth_start(free: &[bool], len: usize, n: usize) -> usize {
    let mut seen = 0;
    let mut run = 0;
    for (i, &f) in free.iter().enumerate() {
        run = if f { run + 1 } else { 0 };
        if run >= len {
            if seen == n {
                return i + 1 - len;
            }
            seen += 1;
        }
    }
    unreachable!("start index {n} out of range")
}

/// Span-mask `seq`. The number of masked tokens is `round(ratio * maskable)`.
///
/// Spans are placed one at a time: draw a length, clip it to the remaining
/// budget, then pick a start uniformly among the positions where that many
/// unmasked maskable tokens follow (shrinking the length if none exist).
pub fn corrupt(seq: &TokenSeq, spec: &CorruptionSpec, specials: &SpecialIds) -> Result<CorruptedPair> {
    spec.validate()?;
    let mut free = maskable_positions(seq, specials.sep, spec.scope);
    let maskable = free.iter().filter(|&&f| f).count();
    if maskable == 0 {
        return Err(Error::NoMaskableTokens);
    }
    let mut rng = SeededRng::new(spec.seed);
    let mut budget = (spec.mask_ratio * maskable as f64).round() as usize;
    let mut spans = Vec::new();
    while budget > 0 {
        let mut len = sample_span_length(&mut rng, spec.poisson_lambda, spec.max_span).min(budget);
        let mut n_starts = count_starts(&free, len);
        while n_starts == 0 {
            len -= 1;
            n_starts = count_starts(&free, len);
        }
        let start = nth_start(&free, len, rng.below(n_starts));
        free[start..start + len].iter_mut().for_each(|f| *f = false);
        spans.push((start, len));
        budget -= len;
    }
    spans.sort_unstable();
    Ok(CorruptedPair {
        source: apply_spans(seq, &spans, specials.mask),
        target: seq.clone(),
        spans,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DaeRecord {
    pub id: String,
    #[serde(flatten)]
    pub pair: CorruptedPair,
}

/// Corrupt every sample's `[C, D, O]` in vocabulary index space. Each sample
/// uses the seed `fnv1a(spec.seed || id)`.
pub fn corrupt_corpus(samples: &[Sample], vocab: &Vocabulary, spec: &CorruptionSpec) -> Result<Vec<DaeRecord>> {
    spec.validate()?;
    let specials = vocab.specials();
    samples
        .par_iter()
        .map(|s| {
            let mut encoded = s.clone();
            encoded.clinical = vocab.encode_raw(&s.clinical)?;
            encoded.description = vocab.encode_raw(&s.description)?;
            encoded.diagnosis = vocab.encode_raw(&s.diagnosis)?;
            let seq = build_pretrain_input(&encoded, specials.sep);
            let sample_spec = CorruptionSpec {
                seed: crate::hash::seeded_fnv1a(spec.seed, &s.id),
                ..spec.clone()
            };
            Ok(DaeRecord {
                id: s.id.clone(),
                pair: corrupt(&seq, &sample_spec, specials)?,
            })
        })
        .collect()
}

pub fn write_dae(path: impl AsRef<Path>, records: &[DaeRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    write_text(path, &out)
}

/// Mask-ratio schedule: the ratio grows by `step` each time a downstream
/// probe scores below the one before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSchedule {
    pub initial: f64,
    pub step: f64,
    pub cap: f64,
    /// Epochs between probes.
    pub probe_interval: u32,
    pub regressions: u32,
    pub current_ratio: f64,
    /// `(epoch, score)` per probe.
    pub probe_history: Vec<(u32, f64)>,
}

impl Default for MaskSchedule {
    fn default() -> Self {
        MaskSchedule::new(0.3, 0.05, MAX_MASK_RATIO, 10).expect("default schedule is valid")
    }
}

impl MaskSchedule {
    pub fn new(initial: f64, step: f64, cap: f64, probe_interval: u32) -> Result<Self> {
        if !(0.0..=cap).contains(&initial) || cap > MAX_MASK_RATIO || step < 0.0 || probe_interval == 0 {
            return Err(Error::InvalidConfig(format!(
                "bad schedule: initial {initial}, step {step}, cap {cap}, interval {probe_interval}"
            )));
        }
        Ok(MaskSchedule {
            initial,
            step,
            cap,
            probe_interval,
            regressions: 0,
            current_ratio: initial,
            probe_history: Vec::new(),
        })
    }

    fn ratio_for(&self, regressions: u32) -> f64 {
        (self.initial + self.step * f64::from(regressions)).min(self.cap)
    }

    /// Record a probe taken after the next `probe_interval` epochs.
    pub fn step(&mut self, probe_score: f64) {
        if let Some(&(_, prev)) = self.probe_history.last() {
            if probe_score < prev {
                self.regressions += 1;
                self.current_ratio = self.ratio_for(self.regressions);
            }
        }
        let epoch = (self.probe_history.len() as u32 + 1) * self.probe_interval;
        self.probe_history.push((epoch, probe_score));
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }
}

/// Functional form of [`MaskSchedule::step`].
pub fn schedule_step(sched: &MaskSchedule, probe_score: f64) -> MaskSchedule {
    let mut next = sched.clone();
    next.step(probe_score);
    next
}
