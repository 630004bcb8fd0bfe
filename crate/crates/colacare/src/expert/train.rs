//! Expert training: mini-batch BCE with decoupled weight decay and early
//! stopping on validation AUPRC. The best-on-validation checkpoint is what
//! gets returned.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{forward_tape, init_params, ExpertConfig, TrainedExpert};
use crate::data::{DatasetSplit, FeatureSpec, PatientRecord};
use crate::error::{Error, Result};
use crate::metrics;
use crate::nn::{adamw_step, seeded_rng, AdamWConfig, Gradients, ParamStore, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auprc: f64,
    pub improved: bool,
}

/// Trains one expert on the (imputed, normalized) records.
///
/// Training halts after `patience` consecutive epochs without validation
/// AUPRC improvement, or at `max_epochs`. A non-finite batch loss aborts
/// with a training error.
pub fn train_expert(
    name: &str,
    config: &ExpertConfig,
    specs: &[FeatureSpec],
    records: &[PatientRecord],
    split: &DatasetSplit,
) -> Result<TrainedExpert> {
    config.validate()?;
    let by_id: HashMap<&str, &PatientRecord> =
        records.iter().map(|r| (r.patient_id.as_str(), r)).collect();
    let resolve = |ids: &[String], which: &str| -> Result<Vec<&PatientRecord>> {
        if ids.is_empty() {
            return Err(Error::Training(format!("{which} split is empty")));
        }
        ids.iter()
            .map(|id| {
                by_id.get(id.as_str()).copied().ok_or_else(|| {
                    Error::Training(format!("{which} split references unknown patient '{id}'"))
                })
            })
            .collect()
    };
    let train = resolve(&split.train, "train")?;
    let val = resolve(&split.val, "val")?;
    let f = specs.len();
    for r in train.iter().chain(&val) {
        if r.n_features() != f {
            return Err(Error::Training(format!(
                "record '{}' has {} features, specs define {f}",
                r.patient_id,
                r.n_features()
            )));
        }
    }

    let mut store = init_params(config.architecture, f, config.hidden_dim, config.seed);
    let optim = AdamWConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..Default::default()
    };
    let mut rng = seeded_rng(config.seed.wrapping_add(0x5eed));

    let mut best_store: Option<ParamStore> = None;
    let mut best_auprc = f64::NEG_INFINITY;
    let mut bad_epochs = 0usize;
    let mut log = Vec::new();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::default();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let r = train[idx];
                let mut tape = Tape::new();
                let (_, prob) = forward_tape(
                    &mut tape,
                    &store,
                    config.architecture,
                    config.hidden_dim,
                    &r.series,
                    &r.mask,
                )?;
                let loss = tape.bce_loss(prob, r.label as f64)?;
                batch_loss += tape.value(loss).item();
                grads.add_assign(&tape.backward(loss)?);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss in epoch {epoch} for expert '{name}'"
                )));
            }
            grads.scale(1.0 / batch.len() as f64);
            adamw_step(&mut store, &grads, &optim)?;
            epoch_loss += batch_loss;
        }
        epoch_loss /= train.len() as f64;

        let probe = current_expert(name, config, specs, store.clone());
        let labels: Vec<u8> = val.iter().map(|r| r.label).collect();
        let scores: Vec<f64> = val
            .iter()
            .map(|r| probe.infer(r).map(|o| o.logit))
            .collect::<Result<_>>()?;
        let val_auprc = metrics::auprc(&labels, &scores)
            .map_err(|e| Error::Training(format!("validation AUPRC: {e}")))?;

        let improved = val_auprc > best_auprc;
        log.push(EpochStats { epoch, train_loss: epoch_loss, val_auprc, improved });
        if improved {
            best_auprc = val_auprc;
            best_store = Some(store.clone());
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= config.patience {
                break;
            }
        }
    }

    let store = best_store.expect("at least one epoch ran");
    let mut expert = current_expert(name, config, specs, store);
    expert.log = log;
    Ok(expert)
}

fn current_expert(
    name: &str,
    config: &ExpertConfig,
    specs: &[FeatureSpec],
    store: ParamStore,
) -> TrainedExpert {
    TrainedExpert::from_parts(
        name,
        config.clone(),
        specs.iter().map(|s| s.name.clone()).collect(),
        store,
    )
}
