//! Corpus BLEU-4, CIDEr-D and the composite score.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_text, TokenSeq};
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;
/// Standard deviation of the CIDEr-D Gaussian length penalty.
pub const CIDER_SIGMA: f64 = 6.0;

type Counts = BTreeMap<Vec<u32>, u32>;

fn ngram_counts(seq: &TokenSeq, n: usize) -> Counts {
    let mut c = BTreeMap::new();
    for w in seq.tokens().windows(n) {
        *c.entry(w.to_vec()).or_insert(0) += 1;
    }
    c
}

fn check_lengths(candidates: &[TokenSeq], references: &[TokenSeq]) -> Result<()> {
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(Error::EmptyInput("metric over an empty corpus"));
    }
    Ok(())
}

/// Clipped n-gram statistics of one candidate against one reference.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NGramStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub candidate_len: u64,
    pub reference_len: u64,
}

impl NGramStats {
    pub fn compute(candidate: &TokenSeq, reference: &TokenSeq) -> Self {
        let mut s = NGramStats {
            candidate_len: candidate.len() as u64,
            reference_len: reference.len() as u64,
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let cand = ngram_counts(candidate, n);
            let refc = ngram_counts(reference, n);
            s.totals[n - 1] = candidate.len().saturating_sub(n - 1) as u64;
            s.matches[n - 1] = cand
                .iter()
                .map(|(g, &c)| u64::from(c.min(refc.get(g).copied().unwrap_or(0))))
                .sum();
        }
        s
    }

    fn add(&mut self, o: &NGramStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.candidate_len += o.candidate_len;
        self.reference_len += o.reference_len;
    }

    /// BLEU from accumulated statistics: uniform-weight geometric mean of the
    /// four precisions times `exp(min(0, 1 - r/c))`. Zero if any precision is.
    pub fn bleu(&self) -> f64 {
        if self.matches.contains(&0) {
            return 0.0;
        }
        let log_p: f64 = (0..MAX_ORDER)
            .map(|n| (self.matches[n] as f64 / self.totals[n] as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        let bp = (1.0 - r / c).min(0.0).exp();
        bp * log_p.exp()
    }
}

pub fn corpus_stats(candidates: &[TokenSeq], references: &[TokenSeq]) -> Result<(NGramStats, Vec<NGramStats>)> {
    check_lengths(candidates, references)?;
    let per: Vec<NGramStats> = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| NGramStats::compute(c, r))
        .collect();
    let mut total = NGramStats::default();
    per.iter().for_each(|s| total.add(s));
    Ok((total, per))
}

/// Corpus-level BLEU-4, one reference per candidate, no smoothing.
pub fn bleu(candidates: &[TokenSeq], references: &[TokenSeq]) -> Result<f64> {
    Ok(corpus_stats(candidates, references)?.0.bleu())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiderVariant {
    /// Clipped candidate counts and Gaussian length penalty.
    #[default]
    CiderD,
    /// Plain tf-idf cosine per order, no clipping or penalty.
    Plain,
}

/// Tf-idf n-gram vectors of one document, per order.
#[derive(Debug, Clone)]
struct DocVec {
    weights: [BTreeMap<Vec<u32>, f64>; MAX_ORDER],
    norms: [f64; MAX_ORDER],
    len: usize,
}

/// CIDEr scorer with document frequencies fitted on a reference corpus.
#[derive(Debug, Clone)]
pub struct CiderScorer {
    df: BTreeMap<Vec<u32>, u32>,
    log_n: f64,
    variant: CiderVariant,
}

impl CiderScorer {
    /// Each document counts once per n-gram it contains.
    pub fn fit<'a>(documents: impl IntoIterator<Item = &'a TokenSeq>, variant: CiderVariant) -> Self {
        let mut df = BTreeMap::new();
        let mut n_docs = 0usize;
        for doc in documents {
            n_docs += 1;
            for n in 1..=MAX_ORDER {
                for g in ngram_counts(doc, n).into_keys() {
                    *df.entry(g).or_insert(0) += 1;
                }
            }
        }
        CiderScorer {
            df,
            log_n: (n_docs.max(1) as f64).ln(),
            variant,
        }
    }

    fn vectorize(&self, seq: &TokenSeq) -> DocVec {
        let mut weights: [BTreeMap<Vec<u32>, f64>; MAX_ORDER] = Default::default();
        let mut norms = [0.0; MAX_ORDER];
        for n in 1..=MAX_ORDER {
            let w = &mut weights[n - 1];
            for (g, tf) in ngram_counts(seq, n) {
                let df = self.df.get(&g).copied().unwrap_or(0).max(1);
                let idf = self.log_n - f64::from(df).ln();
                w.insert(g, f64::from(tf) * idf);
            }
            norms[n - 1] = w.values().map(|x| x * x).sum::<f64>().sqrt();
        }
        DocVec {
            weights,
            norms,
            len: seq.len(),
        }
    }

    fn similarity(&self, cand: &DocVec, refv: &DocVec) -> f64 {
        let delta = cand.len as f64 - refv.len as f64;
        let penalty = match self.variant {
            CiderVariant::CiderD => (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp(),
            CiderVariant::Plain => 1.0,
        };
        let mut total = 0.0;
        for n in 0..MAX_ORDER {
            let mut val = 0.0;
            for (g, &wc) in &cand.weights[n] {
                if let Some(&wr) = refv.weights[n].get(g) {
                    let wc = match self.variant {
                        CiderVariant::CiderD => wc.min(wr),
                        CiderVariant::Plain => wc,
                    };
                    val += wc * wr;
                }
            }
            let denom = cand.norms[n] * refv.norms[n];
            if denom != 0.0 {
                val /= denom;
            } else {
                val = 0.0;
            }
            total += val * penalty;
        }
        total / MAX_ORDER as f64 * 10.0
    }

    /// Score of `candidate` against a single reference, in `[0, 10]`.
    pub fn pair(&self, candidate: &TokenSeq, reference: &TokenSeq) -> f64 {
        self.similarity(&self.vectorize(candidate), &self.vectorize(reference))
    }

    /// Per-pair scores for aligned candidates and references.
    pub fn score_all(&self, candidates: &[TokenSeq], references: &[TokenSeq]) -> Vec<f64> {
        candidates
            .iter()
            .zip(references)
            .map(|(c, r)| self.pair(c, r))
            .collect()
    }
}

/// Corpus CIDEr-D: document frequencies over the references, mean of the
/// per-pair scores.
pub fn cider(candidates: &[TokenSeq], references: &[TokenSeq]) -> Result<f64> {
    Ok(cider_per_sample(candidates, references, CiderVariant::CiderD)?
        .iter()
        .sum::<f64>()
        / candidates.len() as f64)
}

pub fn cider_per_sample(candidates: &[TokenSeq], references: &[TokenSeq], variant: CiderVariant) -> Result<Vec<f64>> {
    check_lengths(candidates, references)?;
    let scorer = CiderScorer::fit(references, variant);
    Ok(scorer.score_all(candidates, references))
}

/// Composite score: `(2 * cider + bleu) / 3`.
pub fn composite(cider: f64, bleu: f64) -> f64 {
    (2.0 * cider + bleu) / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub id: String,
    pub cider: f64,
    pub bleu: NGramStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cider: f64,
    pub bleu: f64,
    pub composite: f64,
    pub per_sample: Vec<SampleEval>,
}

impl EvalReport {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }
}

/// Evaluate `(id, candidate, reference)` triples.
pub fn evaluate(rows: &[(String, TokenSeq, TokenSeq)], variant: CiderVariant) -> Result<EvalReport> {
    let (cands, refs): (Vec<TokenSeq>, Vec<TokenSeq>) = rows.iter().map(|(_, c, r)| (c.clone(), r.clone())).unzip();
    let (total, per_stats) = corpus_stats(&cands, &refs)?;
    let per_cider = cider_per_sample(&cands, &refs, variant)?;
    let cider = per_cider.iter().sum::<f64>() / rows.len() as f64;
    let bleu = total.bleu();
    let per_sample = rows
        .iter()
        .zip(per_cider)
        .zip(per_stats)
        .map(|(((id, _, _), cider), bleu)| SampleEval {
            id: id.clone(),
            cider,
            bleu,
        })
        .collect();
    Ok(EvalReport {
        cider,
        bleu,
        composite: composite(cider, bleu),
        per_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[u32]) -> TokenSeq {
        TokenSeq(v.to_vec())
    }

    #[test]
    fn bleu_perfect() {
        let c = [seq(&[1, 2, 3, 4, 5]), seq(&[6, 7, 8, 9])];
        assert_eq!(bleu(&c, &c).unwrap(), 1.0);
    }

    #[test]
    fn bleu_hand_case() {
        let b = bleu(&[seq(&[1, 2, 3, 4, 5])], &[seq(&[1, 2, 3, 4, 6])]).unwrap();
        let expected = (4.0f64 / 5.0 * 3.0 / 4.0 * 2.0 / 3.0 * 1.0 / 2.0).powf(0.25);
        assert!((b - expected).abs() < 1e-12);
        assert!((b - 0.6687).abs() < 1e-4);
    }

    #[test]
    fn bleu_short_candidate_is_zero() {
        assert_eq!(bleu(&[seq(&[1, 2, 3])], &[seq(&[1, 2, 3])]).unwrap(), 0.0);
    }

    #[test]
    fn bleu_brevity_penalty() {
        let c = seq(&[1, 2, 3, 4]);
        let r = seq(&[1, 2, 3, 4, 5, 6, 7, 8]);
        let b = bleu(&[c], &[r]).unwrap();
        assert!((b - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn metric_input_errors() {
        assert!(matches!(
            bleu(&[seq(&[1])], &[]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(bleu(&[], &[]), Err(Error::EmptyInput(_))));
        assert!(matches!(cider(&[], &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn cider_two_disjoint_pairs() {
        let r1 = seq(&[1, 2, 3, 4, 5]);
        let r2 = seq(&[6, 7, 8, 9, 10]);
        let cands = [r1.clone(), seq(&[11, 12])];
        let per = cider_per_sample(&cands, &[r1, r2], CiderVariant::CiderD).unwrap();
        assert!((per[0] - 10.0).abs() < 1e-12);
        assert_eq!(per[1], 0.0);
    }

    #[test]
    fn cider_single_pair_degenerates() {
        let r = seq(&[1, 2, 3, 4]);
        let one = std::slice::from_ref(&r);
        assert_eq!(cider(one, one).unwrap(), 0.0);
    }

    #[test]
    fn cider_length_penalty() {
        // same n-grams on one side, candidate 6 tokens longer
        let refs = [seq(&[1, 2, 3, 4]), seq(&[9, 9, 9, 9])];
        let cand = seq(&[1, 2, 3, 4, 20, 21, 22, 23, 24, 25]);
        let scorer = CiderScorer::fit(&refs, CiderVariant::CiderD);
        let plain = CiderScorer::fit(&refs, CiderVariant::Plain);
        let s = scorer.pair(&cand, &refs[0]);
        let p = plain.pair(&cand, &refs[0]);
        assert!(s > 0.0 && p > s);
        assert!((s / p - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn composite_values() {
        assert!((composite(3.0793, 0.4043) - 2.1876).abs() < 5e-5);
        assert!((composite(3.3242, 0.4384) - 2.3623).abs() < 5e-5);
        assert_eq!(composite(0.0, 0.0), 0.0);
    }

    #[test]
    fn report_fields_consistent() {
        let rows = vec![
            ("a".to_string(), seq(&[1, 2, 3, 4]), seq(&[1, 2, 3, 4])),
            ("b".to_string(), seq(&[5, 6, 7, 8]), seq(&[5, 6, 7, 9])),
        ];
        let r = evaluate(&rows, CiderVariant::CiderD).unwrap();
        assert!((r.composite - (2.0 * r.cider + r.bleu) / 3.0).abs() < 1e-12);
        assert_eq!(r.per_sample.len(), 2);
        assert!(r.per_sample.iter().all(|s| s.bleu.matches.iter().zip(&s.bleu.totals).all(|(m, t)| m <= t)));
    }
}
