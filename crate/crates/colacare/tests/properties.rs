//! Property tests for module invariants.

use std::collections::BTreeMap;

use proptest::prelude::*;

use colacare::data::{impute, FeatureKind, FeatureSpec, PatientRecord};
use colacare::metrics::{auprc, auroc, min_p_se};
use colacare::retrieval::{build_index, retrieve, CorpusDoc, HashEmbedder, TextEmbedder};

fn fitted_specs(f: usize) -> Vec<FeatureSpec> {
    (0..f)
        .map(|i| {
            let mut s = FeatureSpec::new(&format!("f{i}"), FeatureKind::Dynamic, "");
            s.population_mean = Some(0.25 * i as f64);
            s.population_std = Some(1.0);
            s
        })
        .collect()
}

prop_compose! {
    fn record_strategy()(t in 1usize..6, f in 1usize..5)(
        values in proptest::collection::vec(-50.0f64..50.0, t * f),
        observed in proptest::collection::vec(any::<bool>(), t * f),
        t in Just(t),
        f in Just(f),
    ) -> PatientRecord {
        let mut series = Vec::new();
        let mut mask = Vec::new();
        for row in 0..t {
            let mut vrow = Vec::new();
            let mut mrow = Vec::new();
            for col in 0..f {
                let idx = row * f + col;
                if observed[idx] {
                    vrow.push(values[idx]);
                    mrow.push(true);
                } else {
                    vrow.push(f64::NAN);
                    mrow.push(false);
                }
            }
            series.push(vrow);
            mask.push(mrow);
        }
        PatientRecord {
            patient_id: "prop".to_string(),
            static_info: BTreeMap::new(),
            series,
            mask,
            label: 0,
        }
    }
}

proptest! {
    #[test]
    fn impute_is_idempotent_and_total(record in record_strategy()) {
        let specs = fitted_specs(record.n_features());
        let once = impute(&record, &specs).unwrap();
        prop_assert!(once.series.iter().flatten().all(|v| v.is_finite()));
        prop_assert_eq!(&once.mask, &record.mask);
        let twice = impute(&once, &specs).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn metrics_are_permutation_invariant(
        labels in proptest::collection::vec(0u8..2, 4..40),
        seed in any::<u64>(),
    ) {
        let mut labels = labels;
        labels[0] = 1;
        labels[1] = 0;
        let n = labels.len();
        let scores: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.73 + 0.1).sin()).collect();

        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let pl: Vec<u8> = order.iter().map(|&i| labels[i]).collect();
        let ps: Vec<f64> = order.iter().map(|&i| scores[i]).collect();

        prop_assert!((auroc(&labels, &scores).unwrap() - auroc(&pl, &ps).unwrap()).abs() < 1e-12);
        prop_assert!((auprc(&labels, &scores).unwrap() - auprc(&pl, &ps).unwrap()).abs() < 1e-12);
        prop_assert!((min_p_se(&labels, &scores).unwrap() - min_p_se(&pl, &ps).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn retrieval_scores_are_sorted_bounded_and_pure(
        words in proptest::collection::vec("[a-z]{2,8}", 3..20),
        k in 1usize..20,
    ) {
        let embedder = HashEmbedder::new(32).unwrap();
        let docs: Vec<CorpusDoc> = words
            .chunks(3)
            .enumerate()
            .map(|(i, chunk)| CorpusDoc {
                id: format!("d{i}"),
                title: String::new(),
                text: chunk.join(" "),
            })
            .collect();
        let index = build_index(&docs, 200, 50, &embedder).unwrap();
        let query = words.join(" ");
        let a = retrieve(&index, &query, k, &embedder).unwrap();
        let b = retrieve(&index, &query, k, &embedder).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.hits.len() <= k);
        prop_assert!(a.hits.windows(2).all(|w| w[0].1 >= w[1].1));
        prop_assert!(a.hits.iter().all(|(_, s)| (-1.0 - 1e-9..=1.0 + 1e-9).contains(s)));
    }

    #[test]
    fn hash_embeddings_are_unit_norm(text in ".{0,200}") {
        let embedder = HashEmbedder::new(64).unwrap();
        let v = embedder.embed(&text);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-9);
    }
}
