mod common;

use proptest::prelude::*;

use common::{random_seq, rng, truncated_poisson_mean};
use ragpipe_core::corruptor::{apply_spans, corrupt, corrupt_corpus, sample_span_length, MAX_MASK_RATIO};
use ragpipe_core::vocab::{corpus_tokens, extend_vocab, Vocabulary};
use ragpipe_core::{CorruptionSpec, MaskSchedule, MaskScope, Sample, SeededRng, SpecialIds, TokenSeq};

const SEP: u32 = 0;
const MASK: u32 = 1;

fn specials() -> SpecialIds {
    SpecialIds {
        sep: SEP,
        mask: MASK,
        pad: 2,
        buckets: vec![3, 4, 5, 6],
    }
}

/// `C SEP D SEP O` with ordinary tokens drawn from 10.. .
fn arb_input() -> impl Strategy<Value = TokenSeq> {
    (
        prop::collection::vec(10u32..60, 0..6),
        prop::collection::vec(10u32..60, 1..30),
        prop::collection::vec(10u32..60, 0..20),
    )
        .prop_map(|(c, d, o)| {
            let mut t = c;
            t.push(SEP);
            t.extend(d);
            t.push(SEP);
            t.extend(o);
            TokenSeq(t)
        })
}

proptest! {
    #[test]
    fn corruption_invariants(
        seq in arb_input(),
        ratio in 0.0f64..=MAX_MASK_RATIO,
        lambda in 0.5f64..6.0,
        max_span in 1usize..12,
        seed in any::<u64>(),
        diagnosis_only in any::<bool>(),
    ) {
        let scope = if diagnosis_only { MaskScope::DiagnosisOnly } else { MaskScope::All };
        let spec = CorruptionSpec { mask_ratio: ratio, poisson_lambda: lambda, max_span, seed, scope };
        let t = seq.tokens();
        let second_sep = t.iter().rposition(|&x| x == SEP).unwrap();
        let maskable = t.iter().enumerate()
            .filter(|&(i, &x)| x != SEP && (!diagnosis_only || i > second_sep))
            .count();
        let result = corrupt(&seq, &spec, &specials());
        if maskable == 0 {
            prop_assert!(result.is_err());
            return Ok(());
        }
        let pair = result.unwrap();
        prop_assert_eq!(&pair.target, &seq);
        prop_assert_eq!(&apply_spans(&pair.target, &pair.spans, MASK), &pair.source);

        let masked: usize = pair.spans.iter().map(|s| s.1).sum();
        prop_assert_eq!(masked, (ratio * maskable as f64).round() as usize);
        prop_assert!(pair.spans.windows(2).all(|w| w[0].0 + w[0].1 <= w[1].0));
        for &(start, len) in &pair.spans {
            prop_assert!(len >= 1 && len <= max_span);
            for (i, &tok) in t.iter().enumerate().skip(start).take(len) {
                prop_assert!(tok != SEP);
                prop_assert!(!diagnosis_only || i > second_sep);
            }
        }
        prop_assert_eq!(pair.source.len(), t.len() - masked + pair.spans.len());
        prop_assert_eq!(corrupt(&seq, &spec, &specials()).unwrap(), pair);
    }

    #[test]
    fn schedule_ratio_is_monotone_and_capped(scores in prop::collection::vec(0.0f64..3.0, 0..40)) {
        let mut s = MaskSchedule::default();
        let mut prev = s.current_ratio;
        for score in scores {
            s.step(score);
            prop_assert!(s.current_ratio >= prev);
            prop_assert!(s.current_ratio <= s.cap + 1e-12);
            prev = s.current_ratio;
        }
    }
}

#[test]
fn span_lengths_follow_truncated_poisson() {
    for (lambda, max_span) in [(3.0, 10), (1.0, 4), (6.0, 8)] {
        let mut r = SeededRng::new(99);
        let n = 20_000;
        let mean = (0..n).map(|_| sample_span_length(&mut r, lambda, max_span) as f64).sum::<f64>() / n as f64;
        let expected = truncated_poisson_mean(lambda, max_span);
        assert!((mean - expected).abs() < 0.05, "λ={lambda}: {mean} vs {expected}");
    }
}

#[test]
fn parallel_corpus_matches_per_sample_calls() {
    let mut r = rng(4);
    let samples: Vec<Sample> = (0..300)
        .map(|i| {
            Sample::new(
                format!("s{i}"),
                random_seq(&mut r, 0, 4, 400),
                random_seq(&mut r, 1, 30, 400),
                random_seq(&mut r, 1, 15, 400),
            )
        })
        .collect();
    let seqs: Vec<TokenSeq> = samples
        .iter()
        .flat_map(|s| [s.clinical.clone(), s.description.clone(), s.diagnosis.clone()])
        .collect();
    let vocab = extend_vocab(&Vocabulary::synthetic_base(10), &corpus_tokens(&seqs), 4).unwrap();
    let spec = CorruptionSpec::default();
    let records = corrupt_corpus(&samples, &vocab, &spec).unwrap();
    assert_eq!(records, corrupt_corpus(&samples, &vocab, &spec).unwrap());
    for (s, rec) in samples.iter().zip(&records) {
        assert_eq!(rec.id, s.id);
        let decoded = vocab.decode_raw(&rec.pair.target).unwrap();
        let expected = TokenSeq::concat([&s.clinical, &s.description, &s.diagnosis]);
        assert_eq!(decoded, expected);
    }
    let distinct_span_sets: std::collections::HashSet<_> = records.iter().map(|r| r.pair.spans.clone()).collect();
    assert!(distinct_span_sets.len() > 100, "per-sample seeds should differ");
}
