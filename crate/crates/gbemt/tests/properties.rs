//! Property tests over the library's cross-cutting invariants.

use std::collections::BTreeSet;

use proptest::collection::vec;
use proptest::prelude::*;

use gbemt::bpe::{BpeModel, BOS_ID, EOS_ID, PAD_ID};
use gbemt::corpus::{filter_corpus, normalize_for_comparison, subsample, tag_and_merge, LanguageTag, ParallelCorpus, SentencePair};
use gbemt::metrics;
use gbemt::tensor::Tensor;

fn corpus_from(pairs: Vec<(String, String)>) -> ParallelCorpus {
    let mut corpus = ParallelCorpus::new("en", "xx");
    for (i, (source, target)) in pairs.into_iter().enumerate() {
        corpus.pairs.push(SentencePair {
            source,
            target,
            origin_line: i + 1,
        });
    }
    corpus
}

fn sentence() -> impl Strategy<Value = String> {
    vec("[a-f]{1,4}", 1..5).prop_map(|words| words.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_is_idempotent_and_conserves_counts(
        pairs in vec((sentence(), sentence()), 0..40),
        test_pairs in vec((sentence(), sentence()), 0..10),
    ) {
        let corpus = corpus_from(pairs);
        let test = corpus_from(test_pairs);
        let (once, report) = filter_corpus(&corpus, &test);
        prop_assert_eq!(
            report.input_count,
            report.output_count + report.dropped_duplicates + report.dropped_empty + report.dropped_leaked
        );
        let (twice, second) = filter_corpus(&once, &test);
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(second.dropped_duplicates, 0);
        prop_assert_eq!(second.dropped_empty, 0);
        prop_assert_eq!(second.dropped_leaked, 0);

        // Exhaustive intersection with the test set is empty.
        let keys: BTreeSet<(String, String)> = test
            .pairs
            .iter()
            .map(|p| (normalize_for_comparison(&p.source), normalize_for_comparison(&p.target)))
            .collect();
        for pair in &once.pairs {
            let key = (normalize_for_comparison(&pair.source), normalize_for_comparison(&pair.target));
            prop_assert!(!keys.contains(&key));
        }
    }

    #[test]
    fn subsample_is_deterministic_and_sized(
        pairs in vec((sentence(), sentence()), 0..60),
        n in 0usize..70,
        seed in any::<u64>(),
    ) {
        let corpus = corpus_from(pairs);
        let a = subsample(&corpus, n, seed);
        let b = subsample(&corpus, n, seed);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), n.min(corpus.len()));
    }

    #[test]
    fn tag_and_merge_preserves_counts(
        a in vec((sentence(), sentence()), 0..20),
        b in vec((sentence(), sentence()), 0..20),
    ) {
        let ca = corpus_from(a);
        let cb = corpus_from(b);
        let expected = ca.len() + cb.len();
        let merged = tag_and_merge(&[
            (ca, LanguageTag::for_lang("aa").unwrap()),
            (cb, LanguageTag::for_lang("bb").unwrap()),
        ])
        .unwrap();
        prop_assert_eq!(merged.len(), expected);
        for pair in &merged.pairs {
            prop_assert!(pair.source.starts_with("<2aa> ") || pair.source.starts_with("<2bb> "));
        }
    }

    #[test]
    fn bpe_round_trip_on_training_lines(lines in vec(sentence(), 1..20), budget in 0usize..40) {
        let model = BpeModel::train(lines.iter(), 30 + budget, &BTreeSet::new()).unwrap();
        for line in &lines {
            let ids = model.encode(line);
            for &id in &ids {
                prop_assert!(id != PAD_ID && id != BOS_ID && id != EOS_ID);
            }
            prop_assert_eq!(model.decode(&ids).unwrap(), normalize_for_comparison(line));
        }
    }

    #[test]
    fn softmax_slices_sum_to_one_and_shift_invariance(
        data in vec(-30.0f64..30.0, 12),
        shift in -100.0f64..100.0,
    ) {
        let x = Tensor::new(vec![3, 4], data.clone()).unwrap();
        let y = x.softmax(1).unwrap();
        for r in 0..3 {
            let sum: f64 = y.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
        let shifted = Tensor::new(vec![3, 4], data.iter().map(|v| v + shift).collect()).unwrap();
        let ys = shifted.softmax(1).unwrap();
        prop_assert!(y.max_abs_diff(&ys) < 1e-12);
    }

    #[test]
    fn metric_permutation_equivariance(
        pairs in vec((sentence(), sentence()), 2..8),
        swap in (0usize..8, 0usize..8),
    ) {
        let (hyps, refs): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
        let (i, j) = (swap.0 % hyps.len(), swap.1 % hyps.len());
        let mut ph = hyps.clone();
        let mut pr = refs.clone();
        ph.swap(i, j);
        pr.swap(i, j);
        prop_assert_eq!(metrics::bleu(&hyps, &refs).unwrap(), metrics::bleu(&ph, &pr).unwrap());
        prop_assert_eq!(metrics::chrf(&hyps, &refs).unwrap(), metrics::chrf(&ph, &pr).unwrap());
        prop_assert_eq!(metrics::ter(&hyps, &refs).unwrap(), metrics::ter(&ph, &pr).unwrap());
    }

    #[test]
    fn metric_ranges_and_identity(pairs in vec((sentence(), sentence()), 1..8)) {
        let (hyps, refs): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
        let bleu = metrics::bleu(&hyps, &refs).unwrap();
        let chrf = metrics::chrf(&hyps, &refs).unwrap();
        let ter = metrics::ter(&hyps, &refs).unwrap();
        prop_assert!((0.0..=100.0).contains(&bleu));
        prop_assert!((0.0..=100.0).contains(&chrf));
        prop_assert!(ter >= 0.0);

        let (b, c, t) = metrics::score_lines(&refs, &refs).unwrap();
        prop_assert!((b - 100.0).abs() < 1e-9);
        prop_assert!((c - 100.0).abs() < 1e-9);
        prop_assert_eq!(t, 0.0);
    }
}
