use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use ragpipe_core::corruptor::corrupt;
use ragpipe_core::ensemble::{fit_candidate_df, fuse};
use ragpipe_core::kbstore::build_kb;
use ragpipe_core::metrics::{bleu, cider};
use ragpipe_core::{
    CandidateSet, CorruptionSpec, KeySource, Sample, SpecialIds, TfIdfEmbedder, TokenSeq,
};

fn random_seq(r: &mut StdRng, min: usize, max: usize, alphabet: u32) -> TokenSeq {
    let len = r.gen_range(min..=max);
    TokenSeq((0..len).map(|_| r.gen_range(10..alphabet + 10)).collect())
}

fn corpus(n: usize, seed: u64) -> Vec<Sample> {
    let mut r = StdRng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            Sample::new(
                format!("s{i:06}"),
                random_seq(&mut r, 0, 4, 2000),
                random_seq(&mut r, 8, 40, 2000),
                random_seq(&mut r, 4, 20, 2000),
            )
        })
        .collect()
}

fn metrics(c: &mut Criterion) {
    let samples = corpus(1000, 1);
    let refs: Vec<TokenSeq> = samples.iter().map(|s| s.diagnosis.clone()).collect();
    let cands: Vec<TokenSeq> = samples.iter().map(|s| s.description.clone()).collect();
    c.bench_function("cider_d_1000", |b| b.iter(|| cider(black_box(&cands), black_box(&refs)).unwrap()));
    c.bench_function("bleu_1000", |b| b.iter(|| bleu(black_box(&cands), black_box(&refs)).unwrap()));
}

fn embedding(c: &mut Criterion) {
    let samples = corpus(2000, 2);
    let docs: Vec<TokenSeq> = samples.iter().map(|s| s.description.clone()).collect();
    c.bench_function("tfidf_fit_2000", |b| b.iter(|| TfIdfEmbedder::fit(black_box(&docs), 4096).unwrap()));
    let e = TfIdfEmbedder::fit(&docs, 4096).unwrap();
    c.bench_function("tfidf_embed", |b| b.iter(|| e.embed(black_box(&docs[7]))));
}

fn retrieval(c: &mut Criterion) {
    let train = corpus(5000, 3);
    let docs: Vec<TokenSeq> = train.iter().map(|s| s.description.clone()).collect();
    let e = TfIdfEmbedder::fit(&docs, 4096).unwrap();
    let kb = build_kb(&train, KeySource::Builtin(&e), 1).unwrap();
    let query = e.embed(&corpus(1, 4)[0].description);
    c.bench_function("retrieve_top1_5000", |b| {
        b.iter(|| kb.retrieve(black_box(&query), 0.5, None).unwrap())
    });
}

fn corruption(c: &mut Criterion) {
    let specials = SpecialIds {
        sep: 0,
        mask: 1,
        pad: 2,
        buckets: vec![3, 4, 5, 6],
    };
    let s = &corpus(1, 5)[0];
    let mut tokens = s.clinical.0.clone();
    tokens.push(0);
    tokens.extend(s.description.tokens());
    tokens.push(0);
    tokens.extend(s.diagnosis.tokens());
    let seq = TokenSeq(tokens);
    let mut seed = 0u64;
    c.bench_function("span_mask", |b| {
        b.iter_batched(
            || {
                seed += 1;
                CorruptionSpec {
                    seed,
                    ..CorruptionSpec::default()
                }
            },
            |spec| corrupt(black_box(&seq), &spec, &specials).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn ensemble(c: &mut Criterion) {
    let mut r = StdRng::seed_from_u64(6);
    let sets: Vec<CandidateSet> = (0..200)
        .map(|k| CandidateSet {
            sample_id: format!("s{k}"),
            candidates: (0..10).map(|_| random_seq(&mut r, 4, 20, 50)).collect(),
            model_names: (0..10).map(|i| format!("m{i}")).collect(),
        })
        .collect();
    let scorer = fit_candidate_df(&sets);
    c.bench_function("fuse_10_models", |b| b.iter(|| fuse(black_box(&sets[0]), &scorer).unwrap()));
}

criterion_group!(benches, metrics, embedding, retrieval, corruption, ensemble);
criterion_main!(benches);
