//! Synthetic corpora with a learnable description→diagnosis rule.
//!
//! Samples are drawn around a set of prototype descriptions. The diagnosis
//! is a token-level function of the sample's own description: even
//! positions are copied and odd positions go through a fixed permutation of
//! the vocabulary. Noise replaces description tokens (so near-duplicates
//! differ from their prototype) and diagnosis tokens (so the rule is not
//! exact). At `noise = 0` every prototype's members are identical and each
//! description determines its diagnosis exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{render_corpus, write_text, Sample, TokenSeq};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    /// Mean per-token replacement rate, in `[0, 0.5]`.
    pub noise: f64,
    /// Raw token ids are drawn from `1..=vocab_size`.
    pub vocab_size: u32,
}

impl SynthConfig {
    pub fn new(n: usize, seed: u64, noise: f64) -> Self {
        SynthConfig {
            n,
            seed,
            noise,
            vocab_size: 1200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub n: usize,
    pub prototypes: usize,
    pub description_len: (usize, f64, usize),
    pub diagnosis_len: (usize, f64, usize),
    pub clinical_len: (usize, f64, usize),
}

/// Odd-position token map: an affine permutation of `1..=v`.
fn odd_map(token: u32, v: u32) -> u32 {
    ((token as u64 - 1) * 7 + 13) as u32 % v + 1
}

/// The exact rule, before diagnosis noise.
pub fn diagnosis_rule(description: &TokenSeq, vocab_size: u32) -> TokenSeq {
    let d = description.tokens();
    let len = (d.len() / 2).max(4).min(d.len());
    TokenSeq(
        d[..len]
            .iter()
            .enumerate()
            .map(|(i, &t)| if i % 2 == 0 { t } else { odd_map(t, vocab_size) })
            .collect(),
    )
}

fn length_stats(lens: impl Iterator<Item = usize>) -> (usize, f64, usize) {
    let lens: Vec<usize> = lens.collect();
    let min = lens.iter().copied().min().unwrap_or(0);
    let max = lens.iter().copied().max().unwrap_or(0);
    let mean = lens.iter().sum::<usize>() as f64 / lens.len().max(1) as f64;
    (min, mean, max)
}

fn random_tokens(rng: &mut SeededRng, len: usize, v: u32) -> Vec<u32> {
    (0..len).map(|_| rng.below(v as usize) as u32 + 1).collect()
}

fn perturb(rng: &mut SeededRng, tokens: &[u32], rate: f64, v: u32) -> Vec<u32> {
    tokens
        .iter()
        .map(|&t| {
            if rng.chance(rate) {
                rng.below(v as usize) as u32 + 1
            } else {
                t
            }
        })
        .collect()
}

pub fn make_synthetic_corpus(cfg: &SynthConfig) -> Result<(Vec<Sample>, SynthStats)> {
    if cfg.n < MIN_SAMPLES {
        return Err(Error::InvalidConfig(format!(
            "synthetic corpus needs at least {MIN_SAMPLES} samples, got {}",
            cfg.n
        )));
    }
    if !(0.0..=0.5).contains(&cfg.noise) {
        return Err(Error::InvalidConfig(format!("noise {} must lie in [0, 0.5]", cfg.noise)));
    }
    if cfg.vocab_size < 100 {
        return Err(Error::InvalidConfig("synthetic vocab_size must be at least 100".into()));
    }
    let v = cfg.vocab_size;
    let mut rng = SeededRng::new(cfg.seed);
    let n_protos = (cfg.n / 10).max(4);
    let mut protos: Vec<(Vec<u32>, Vec<u32>)> = Vec::with_capacity(n_protos);
    while protos.len() < n_protos {
        let desc_len = 8 + rng.below(17);
        let desc = random_tokens(&mut rng, desc_len, v);
        if protos.iter().any(|(d, _)| *d == desc) {
            continue;
        }
        let clinical_len = rng.below(5);
        let clinical = random_tokens(&mut rng, clinical_len, v);
        protos.push((desc, clinical));
    }

    let samples: Vec<Sample> = (0..cfg.n)
        .map(|j| {
            let (desc, clinical) = &protos[j % n_protos];
            // Per-sample rate spread around the mean: triangular on [0, 2·noise].
            let rate = cfg.noise * (rng.next_f64() + rng.next_f64());
            let description = perturb(&mut rng, desc, rate, v);
            let clinical = perturb(&mut rng, clinical, rate, v);
            let exact = diagnosis_rule(&TokenSeq(description.clone()), v);
            let diagnosis = perturb(&mut rng, exact.tokens(), rate / 2.0, v);
            Sample::new(
                format!("syn{j:05}"),
                TokenSeq(clinical),
                TokenSeq(description),
                TokenSeq(diagnosis),
            )
        })
        .collect();

    let stats = SynthStats {
        n: cfg.n,
        prototypes: n_protos,
        description_len: length_stats(samples.iter().map(|s| s.description.len())),
        diagnosis_len: length_stats(samples.iter().map(|s| s.diagnosis.len())),
        clinical_len: length_stats(samples.iter().map(|s| s.clinical.len())),
    };
    Ok((samples, stats))
}

fn fmt_len((min, mean, max): (usize, f64, usize)) -> String {
    format!("{min}/{mean:.2}/{max}")
}

/// Corpus text with a `#` header carrying the generator settings and length
/// statistics (min/mean/max).
pub fn render_synthetic(cfg: &SynthConfig, samples: &[Sample], stats: &SynthStats) -> String {
    format!(
        "# synthetic n={} seed={} noise={} vocab_size={} prototypes={}\n\
         # lengths min/mean/max: description={} diagnosis={} clinical={}\n{}",
        cfg.n,
        cfg.seed,
        cfg.noise,
        cfg.vocab_size,
        stats.prototypes,
        fmt_len(stats.description_len),
        fmt_len(stats.diagnosis_len),
        fmt_len(stats.clinical_len),
        render_corpus(samples)
    )
}

pub fn write_synthetic_corpus(path: impl AsRef<Path>, cfg: &SynthConfig) -> Result<SynthStats> {
    let (samples, stats) = make_synthetic_corpus(cfg)?;
    write_text(path, &render_synthetic(cfg, &samples, &stats))?;
    Ok(stats)
}
