//! Multimodal fusion: expert hidden states concatenated with the report
//! embedding, fed through a one-hidden-layer MLP with a sigmoid head,
//! trained with BCE and early stopping on validation AUPRC. Expert encoders
//! are frozen; only the MLP trains.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expert::EpochStats;
use crate::metrics;
use crate::nn::{
    adamw_step, linear, seeded_rng, sigmoid, AdamWConfig, Gradients, ParamStore, Tape, Tensor2,
};
use crate::retrieval::TextEmbedder;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionConfig {
    pub hidden_dim: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            hidden_dim: 128,
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 128,
            max_epochs: 50,
            patience: 10,
            seed: 0,
        }
    }
}

/// One training/inference sample: ordered expert hidden states plus the
/// report embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSample {
    pub expert_hiddens: Vec<Vec<f64>>,
    pub report_embedding: Vec<f64>,
    pub label: u8,
}

impl FusionSample {
    fn concat(&self) -> Vec<f64> {
        let mut x =
            Vec::with_capacity(self.expert_hiddens.iter().map(Vec::len).sum::<usize>()
                + self.report_embedding.len());
        for h in &self.expert_hiddens {
            x.extend_from_slice(h);
        }
        x.extend_from_slice(&self.report_embedding);
        x
    }
}

/// Input layout contract: expert order and per-block dimensions are part of
/// the schema, so inputs in a different order are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSchema {
    pub expert_names: Vec<String>,
    pub expert_dims: Vec<usize>,
    pub report_dim: usize,
}

impl FusionSchema {
    pub fn input_dim(&self) -> usize {
        self.expert_dims.iter().sum::<usize>() + self.report_dim
    }

    fn check_sample(&self, sample: &FusionSample) -> Result<()> {
        if sample.expert_hiddens.len() != self.expert_dims.len() {
            return Err(Error::Dimension(format!(
                "sample has {} expert blocks, schema defines {}",
                sample.expert_hiddens.len(),
                self.expert_dims.len()
            )));
        }
        for (i, (h, &d)) in sample.expert_hiddens.iter().zip(&self.expert_dims).enumerate() {
            if h.len() != d {
                return Err(Error::Dimension(format!(
                    "expert block {i} has {} entries, schema expects {d}",
                    h.len()
                )));
            }
        }
        if sample.report_embedding.len() != self.report_dim {
            return Err(Error::Dimension(format!(
                "report embedding has {} entries, schema expects {}",
                sample.report_embedding.len(),
                self.report_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FusionModel {
    pub schema: FusionSchema,
    pub config: FusionConfig,
    store: ParamStore,
    pub log: Vec<EpochStats>,
}

/// Embeds the final report text; empty text is an error.
pub fn embed_report(report_text: &str, embedder: &dyn TextEmbedder) -> Result<Vec<f64>> {
    if report_text.trim().is_empty() {
        return Err(Error::Embedding("report text is empty".to_string()));
    }
    Ok(embedder.embed(report_text))
}

fn init_fusion_params(input_dim: usize, hidden_dim: usize, seed: u64) -> ParamStore {
    let mut rng = seeded_rng(seed);
    let mut store = ParamStore::new();
    store.init_uniform("fc1.weight", input_dim, hidden_dim, input_dim, &mut rng);
    store.init_uniform("fc1.bias", 1, hidden_dim, input_dim, &mut rng);
    store.init_uniform("fc2.weight", hidden_dim, 1, hidden_dim, &mut rng);
    store.init_uniform("fc2.bias", 1, 1, hidden_dim, &mut rng);
    store
}

fn forward_tape(
    tape: &mut Tape,
    store: &ParamStore,
    x: Vec<f64>,
) -> Result<crate::nn::VarId> {
    let input = tape.constant(Tensor2::row_vector(x));
    let w1 = tape.param("fc1.weight", store)?;
    let b1 = tape.param("fc1.bias", store)?;
    let w2 = tape.param("fc2.weight", store)?;
    let b2 = tape.param("fc2.bias", store)?;
    let pre = linear(tape, input, w1, b1)?;
    let act = tape.tanh(pre);
    let logit = linear(tape, act, w2, b2)?;
    Ok(tape.sigmoid(logit))
}

/// Trains the fusion MLP on pre-extracted samples; `train_idx`/`val_idx`
/// index into `samples`.
pub fn train_fusion(
    config: &FusionConfig,
    schema: &FusionSchema,
    samples: &[FusionSample],
    train_idx: &[usize],
    val_idx: &[usize],
) -> Result<FusionModel> {
    if config.patience >= config.max_epochs {
        return Err(Error::parameter("patience", "must be smaller than max_epochs"));
    }
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Training("train and val index sets must be nonempty".to_string()));
    }
    for (i, s) in samples.iter().enumerate() {
        schema
            .check_sample(s)
            .map_err(|e| Error::Training(format!("sample index {i}: {e}")))?;
    }
    let classes: std::collections::HashSet<u8> =
        train_idx.iter().map(|&i| samples[i].label).collect();
    if classes.len() < 2 {
        return Err(Error::Training("train split must contain both classes".to_string()));
    }

    let mut store = init_fusion_params(schema.input_dim(), config.hidden_dim, config.seed);
    let optim = AdamWConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..Default::default()
    };
    let mut rng = seeded_rng(config.seed.wrapping_add(0xf00d));

    let mut best: Option<(f64, ParamStore)> = None;
    let mut bad_epochs = 0usize;
    let mut log = Vec::new();
    let mut order: Vec<usize> = train_idx.to_vec();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::default();
            let mut batch_loss = 0.0;
            for &idx in batch {
                let s = &samples[idx];
                let mut tape = Tape::new();
                let prob = forward_tape(&mut tape, &store, s.concat())?;
                let loss = tape.bce_loss(prob, s.label as f64)?;
                batch_loss += tape.value(loss).item();
                grads.add_assign(&tape.backward(loss)?);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training(format!("non-finite fusion loss in epoch {epoch}")));
            }
            grads.scale(1.0 / batch.len() as f64);
            adamw_step(&mut store, &grads, &optim)?;
            epoch_loss += batch_loss;
        }
        epoch_loss /= train_idx.len() as f64;

        let probe = FusionModel {
            schema: schema.clone(),
            config: config.clone(),
            store: store.clone(),
            log: Vec::new(),
        };
        let labels: Vec<u8> = val_idx.iter().map(|&i| samples[i].label).collect();
        let scores: Vec<f64> = val_idx
            .iter()
            .map(|&i| probe.predict(&samples[i]))
            .collect::<Result<_>>()?;
        let val_auprc = metrics::auprc(&labels, &scores)
            .map_err(|e| Error::Training(format!("validation AUPRC: {e}")))?;

        let improved = best.as_ref().map_or(true, |(b, _)| val_auprc > *b);
        log.push(EpochStats { epoch, train_loss: epoch_loss, val_auprc, improved });
        if improved {
            best = Some((val_auprc, store.clone()));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= config.patience {
                break;
            }
        }
    }

    let (_, store) = best.expect("at least one epoch ran");
    Ok(FusionModel { schema: schema.clone(), config: config.clone(), store, log })
}

impl FusionModel {
    /// Deterministic fused probability in (0,1).
    pub fn predict(&self, sample: &FusionSample) -> Result<f64> {
        self.schema.check_sample(sample)?;
        let x = sample.concat();
        let w1 = self.store.get("fc1.weight")?;
        let b1 = self.store.get("fc1.bias")?;
        let w2 = self.store.get("fc2.weight")?;
        let b2 = self.store.get("fc2.bias")?;
        let h = self.config.hidden_dim;
        let mut act = b1.data().to_vec();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &w1.data()[i * h..(i + 1) * h];
            for (a, &w) in act.iter_mut().zip(row) {
                *a += xi * w;
            }
        }
        for a in &mut act {
            *a = a.tanh();
        }
        let logit: f64 =
            act.iter().zip(w2.data()).map(|(a, b)| a * b).sum::<f64>() + b2.item();
        Ok(sigmoid(logit))
    }

    /// Prediction with the expert order checked by name against the schema.
    pub fn predict_named(
        &self,
        named_hiddens: &[(String, Vec<f64>)],
        report_embedding: Vec<f64>,
        label: u8,
    ) -> Result<f64> {
        let names: Vec<&str> = named_hiddens.iter().map(|(n, _)| n.as_str()).collect();
        let expected: Vec<&str> = self.schema.expert_names.iter().map(String::as_str).collect();
        if names != expected {
            return Err(Error::Inference(format!(
                "expert order {names:?} does not match the training schema {expected:?}"
            )));
        }
        self.predict(&FusionSample {
            expert_hiddens: named_hiddens.iter().map(|(_, h)| h.clone()).collect(),
            report_embedding,
            label,
        })
    }

    /// Writes `fusion.params.json` and `fusion.schema.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.store.save(&dir.join("fusion.params.json"))?;
        let sidecar = FusionSidecar { schema: self.schema.clone(), config: self.config.clone() };
        std::fs::write(
            dir.join("fusion.schema.json"),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let sidecar: FusionSidecar = serde_json::from_str(&std::fs::read_to_string(
            dir.join("fusion.schema.json"),
        )?)?;
        let store = ParamStore::load(&dir.join("fusion.params.json"))?;
        Ok(FusionModel {
            schema: sidecar.schema,
            config: sidecar.config,
            store,
            log: Vec::new(),
        })
    }

    /// Test/bench hook: a model with deterministic initial (untrained) params.
    pub fn untrained(schema: FusionSchema, config: FusionConfig) -> Self {
        let store = init_fusion_params(schema.input_dim(), config.hidden_dim, config.seed);
        FusionModel { schema, config, store, log: Vec::new() }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Training-route BCE loss and parameter gradients for one sample.
    pub fn loss_and_gradients(&self, sample: &FusionSample) -> Result<(f64, Gradients)> {
        self.schema.check_sample(sample)?;
        let mut tape = Tape::new();
        let prob = forward_tape(&mut tape, &self.store, sample.concat())?;
        let loss = tape.bce_loss(prob, sample.label as f64)?;
        Ok((tape.value(loss).item(), tape.backward(loss)?))
    }

    /// The same loss on an alternative parameter store (finite differences).
    pub fn loss_with_params(&self, store: &ParamStore, sample: &FusionSample) -> Result<f64> {
        let mut tape = Tape::new();
        let prob = forward_tape(&mut tape, store, sample.concat())?;
        let loss = tape.bce_loss(prob, sample.label as f64)?;
        Ok(tape.value(loss).item())
    }
}

#[derive(Serialize, Deserialize)]
struct FusionSidecar {
    schema: FusionSchema,
    config: FusionConfig,
}
