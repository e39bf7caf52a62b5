//! Independent reference implementations used as test oracles. They share
//! no code with the library beyond the plain data types.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use ragpipe_core::{Sample, TokenSeq};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn seq(v: &[u32]) -> TokenSeq {
    TokenSeq(v.to_vec())
}

pub fn random_seq(r: &mut StdRng, min_len: usize, max_len: usize, alphabet: u32) -> TokenSeq {
    let len = r.gen_range(min_len..=max_len);
    TokenSeq((0..len).map(|_| r.gen_range(1..=alphabet)).collect())
}

pub fn sample(id: &str, clinical: &[u32], description: &[u32], diagnosis: &[u32]) -> Sample {
    Sample::new(id, seq(clinical), seq(description), seq(diagnosis))
}

fn gram_key(g: &[u32]) -> String {
    g.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

fn grams(s: &TokenSeq, n: usize) -> HashMap<String, f64> {
    let mut m = HashMap::new();
    let t = s.tokens();
    if t.len() >= n {
        for i in 0..=t.len() - n {
            *m.entry(gram_key(&t[i..i + n])).or_insert(0.0) += 1.0;
        }
    }
    m
}

/// Corpus BLEU-4, uniform weights, no smoothing.
pub fn naive_bleu(cands: &[TokenSeq], refs: &[TokenSeq]) -> f64 {
    let mut log_p = 0.0;
    for n in 1..=4 {
        let (mut hit, mut tot) = (0.0, 0.0);
        for (c, r) in cands.iter().zip(refs) {
            let cg = grams(c, n);
            let rg = grams(r, n);
            for (g, cnt) in &cg {
                hit += cnt.min(*rg.get(g).unwrap_or(&0.0));
                tot += cnt;
            }
        }
        if hit == 0.0 {
            return 0.0;
        }
        log_p += (hit / tot).ln() / 4.0;
    }
    let c: f64 = cands.iter().map(|s| s.len() as f64).sum();
    let r: f64 = refs.iter().map(|s| s.len() as f64).sum();
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_p.exp()
}

/// Sparse tf-idf vectors per order, df counted once per document.
pub struct NaiveCider {
    df: HashMap<String, f64>,
    n_docs: f64,
    clip: bool,
    length_penalty: bool,
}

impl NaiveCider {
    pub fn new(docs: &[TokenSeq], cider_d: bool) -> Self {
        let mut df = HashMap::new();
        for d in docs {
            for n in 1..=4 {
                for g in grams(d, n).keys() {
                    *df.entry(g.clone()).or_insert(0.0) += 1.0;
                }
            }
        }
        NaiveCider {
            df,
            n_docs: docs.len() as f64,
            clip: cider_d,
            length_penalty: cider_d,
        }
    }

    fn vec(&self, s: &TokenSeq, n: usize) -> HashMap<String, f64> {
        grams(s, n)
            .into_iter()
            .map(|(g, tf)| {
                let df = self.df.get(&g).copied().unwrap_or(0.0).max(1.0);
                let w = tf * (self.n_docs.ln() - df.ln());
                (g, w)
            })
            .collect()
    }

    pub fn pair(&self, c: &TokenSeq, r: &TokenSeq) -> f64 {
        let mut total = 0.0;
        for n in 1..=4 {
            let vc = self.vec(c, n);
            let vr = self.vec(r, n);
            let norm = |v: &HashMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
            let (nc, nr) = (norm(&vc), norm(&vr));
            let mut dot = 0.0;
            for (g, wc) in &vc {
                if let Some(wr) = vr.get(g) {
                    dot += if self.clip { wc.min(*wr) } else { *wc } * wr;
                }
            }
            let sim = if nc * nr != 0.0 { dot / (nc * nr) } else { 0.0 };
            let pen = if self.length_penalty {
                let d = c.len() as f64 - r.len() as f64;
                (-d * d / 72.0).exp()
            } else {
                1.0
            };
            total += sim * pen;
        }
        total / 4.0 * 10.0
    }
}

/// Corpus CIDEr-D with df over the references.
pub fn naive_cider(cands: &[TokenSeq], refs: &[TokenSeq]) -> f64 {
    let scorer = NaiveCider::new(refs, true);
    cands.iter().zip(refs).map(|(c, r)| scorer.pair(c, r)).sum::<f64>() / cands.len() as f64
}

pub fn dense_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Full scan: `(id, similarity)` of the best key (ties to the smallest id),
/// kept only if `similarity >= threshold`.
pub fn brute_retrieve(
    keys: &[(String, Vec<f64>)],
    query: &[f64],
    threshold: f64,
    exclude: Option<&str>,
) -> Option<(String, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for (id, k) in keys {
        if Some(id.as_str()) == exclude {
            continue;
        }
        let s = dense_cosine(query, k);
        best = match best {
            Some((bid, bs)) if bs > s || (bs == s && bid < id.as_str()) => Some((bid, bs)),
            _ => Some((id.as_str(), s)),
        };
    }
    best.filter(|(_, s)| *s >= threshold).map(|(id, s)| (id.to_string(), s))
}

/// Bucket by O(N²) rank: rank = #samples strictly ahead in
/// (similarity desc, id asc) order; bucket = floor(rank · n / N).
pub fn quantile_oracle(sims: &[(String, f64)], n: usize) -> Vec<usize> {
    let total = sims.len();
    sims.iter()
        .map(|(id, s)| {
            let rank = sims
                .iter()
                .filter(|(jd, t)| t > s || (t == s && jd < id))
                .count();
            rank * n / total
        })
        .collect()
}

/// Exact tf-idf over unigrams + bigrams without hashing; idf = ln(N/df).
pub fn unhashed_tfidf_cosine(docs: &[TokenSeq], a: &TokenSeq, b: &TokenSeq) -> f64 {
    let feats = |s: &TokenSeq| {
        let mut m = grams(s, 1);
        for (g, c) in grams(s, 2) {
            *m.entry(format!("bi:{g}")).or_insert(0.0) += c;
        }
        m
    };
    let mut df: HashMap<String, f64> = HashMap::new();
    for d in docs {
        for g in feats(d).into_keys() {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let n = docs.len() as f64;
    let weigh = |s: &TokenSeq| -> HashMap<String, f64> {
        feats(s)
            .into_iter()
            .map(|(g, tf)| {
                let idf = match df.get(&g) {
                    Some(d) => (n / d).ln(),
                    None => (n + 1.0).ln(),
                };
                (g, tf * idf)
            })
            .collect()
    };
    let (va, vb) = (weigh(a), weigh(b));
    let dot: f64 = va.iter().filter_map(|(g, x)| vb.get(g).map(|y| x * y)).sum();
    let na = va.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = vb.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean of `min(X, max_span)` for X ~ Poisson(lambda) conditioned on X ≥ 1.
pub fn truncated_poisson_mean(lambda: f64, max_span: usize) -> f64 {
    let p0 = (-lambda).exp();
    let mut pk = p0;
    let mut mean = 0.0;
    let mut mass = 0.0;
    for k in 1..200 {
        pk *= lambda / k as f64;
        mean += k.min(max_span) as f64 * pk;
        mass += pk;
    }
    mean / mass
}
