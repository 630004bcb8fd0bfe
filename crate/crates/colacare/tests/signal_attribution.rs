//! Cross-module check: on the synthetic cohort, the designated signal
//! features must dominate the Shapley importances of every trained expert
//! architecture.

use std::collections::HashMap;

use colacare::consult::{attribute_expert, AttributionConfig};
use colacare::data::synth::{generate_synthetic, SIGNAL_FEATURES, TREND_FEATURE};
use colacare::data::{fit_specs, preprocess_all, split, PatientRecord};
use colacare::expert::{train_expert, Architecture, ExpertConfig};

#[test]
fn signal_features_dominate_mean_importance_for_every_architecture() {
    let (mut specs, records) = generate_synthetic(800, 8, 6, 7).unwrap();
    let s = split(&records, (0.75, 0.15, 0.10), 7).unwrap();
    fit_specs(&mut specs, &records, &s.train).unwrap();
    let prepped = preprocess_all(&records, &specs).unwrap();
    let by_id: HashMap<&str, &PatientRecord> =
        prepped.iter().map(|r| (r.patient_id.as_str(), r)).collect();
    let test_records: Vec<&PatientRecord> =
        s.test.iter().map(|id| by_id[id.as_str()]).collect();

    for arch in [Architecture::GruLast, Architecture::AttnPool, Architecture::RecalibGate] {
        let config = ExpertConfig {
            architecture: arch,
            hidden_dim: 64,
            lr: 1e-2,
            seed: 7,
            ..Default::default()
        };
        let expert = train_expert(arch.as_str(), &config, &specs, &prepped, &s).unwrap();

        let attr_config = AttributionConfig::default();
        let f = specs.len();
        let mut mean_abs = vec![0.0f64; f];
        for (i, record) in test_records.iter().enumerate() {
            let result = attribute_expert(&attr_config, 7, record, &expert, i).unwrap();
            for (acc, phi) in mean_abs.iter_mut().zip(&result.phi) {
                *acc += phi.abs();
            }
        }
        for acc in &mut mean_abs {
            *acc /= test_records.len() as f64;
        }

        let mut order: Vec<usize> = (0..f).collect();
        order.sort_by(|&a, &b| mean_abs[b].partial_cmp(&mean_abs[a]).unwrap());
        let top4 = &order[..4];
        for signal in SIGNAL_FEATURES {
            assert!(
                top4.contains(&signal),
                "{arch:?}: signal feature {signal} not in top-4 {top4:?} (mean |phi| = {mean_abs:?})"
            );
        }
        // The trend feature should rank well too, though the spec only pins
        // the three signal features.
        let trend_rank = order.iter().position(|&j| j == TREND_FEATURE).unwrap();
        assert!(trend_rank < f, "trend feature vanished from ranking");
    }
}
