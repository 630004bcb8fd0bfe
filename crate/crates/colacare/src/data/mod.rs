//! Structured EHR datasets: schema types, imputation, normalization, and
//! stratified splitting.
//!
//! A dataset is a feature list plus patient records. Each record holds a
//! T×F matrix of visit values with an observation mask (true = observed);
//! missing cells are NaN in memory and `null` on disk. Static features
//! (sex, age) are broadcast to every visit row so the models see a single
//! T×F interface; the prompt-facing free text lives in `static_info`.
//!
//! The preparation pipeline is: fit feature statistics on the train split,
//! forward-fill along time, fill remaining gaps with the train population
//! mean, then z-normalize with the train mean/std. The mask is never
//! modified, so downstream consumers can still tell imputed cells apart.

pub mod io;
pub mod synth;

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to per-feature standard deviations during normalization.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Static,
    Dynamic,
}

/// One column of the T×F matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub unit: String,
    /// Mean of observed train-split values; filled by [`fit_specs`].
    #[serde(default)]
    pub population_mean: Option<f64>,
    /// Std of observed train-split values (floored); filled by [`fit_specs`].
    #[serde(default)]
    pub population_std: Option<f64>,
}

impl FeatureSpec {
    pub fn new(name: &str, kind: FeatureKind, unit: &str) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind,
            unit: unit.to_string(),
            population_mean: None,
            population_std: None,
        }
    }

    pub fn is_fitted(&self) -> bool {
        matches!(self.population_mean, Some(m) if m.is_finite())
            && matches!(self.population_std, Some(s) if s.is_finite())
    }

    /// Maps a normalized value back to raw units for display.
    pub fn denormalize(&self, v: f64) -> f64 {
        match (self.population_mean, self.population_std) {
            (Some(m), Some(s)) => v * s + m,
            _ => v,
        }
    }
}

/// One patient: static info for prompts, the visit matrix, and the outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    /// Prompt-facing static fields (sex, age, free-text condition summary).
    pub static_info: BTreeMap<String, serde_json::Value>,
    /// T visits × F features; NaN where unobserved (before imputation).
    pub series: Vec<Vec<f64>>,
    /// Same shape as `series`; true = observed.
    pub mask: Vec<Vec<bool>>,
    /// Binary outcome (1 = deceased).
    pub label: u8,
}

impl PatientRecord {
    pub fn n_visits(&self) -> usize {
        self.series.len()
    }

    pub fn n_features(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    /// Last observed raw-unit value of a feature; falls back to the last
    /// (imputed) cell when the feature was never observed.
    pub fn last_observed(&self, feature: usize) -> f64 {
        for t in (0..self.n_visits()).rev() {
            if self.mask[t][feature] {
                return self.series[t][feature];
            }
        }
        self.series[self.n_visits() - 1][feature]
    }

    /// Static field rendered as plain text.
    pub fn static_text(&self, key: &str) -> String {
        match self.static_info.get(key) {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
            None => String::new(),
        }
    }
}

/// Disjoint patient-id lists covering the whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn contains_all(&self, ids: &[String]) -> bool {
        let mut seen: HashSet<&str> = HashSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            seen.insert(id);
        }
        ids.iter().all(|id| seen.contains(id.as_str()))
    }
}

/// Fills `population_mean`/`population_std` from observed cells of the
/// train-split records (all visits pooled). Features never observed in the
/// train split get mean 0 and std 1 so normalization is a no-op for them.
pub fn fit_specs(
    specs: &mut [FeatureSpec],
    records: &[PatientRecord],
    train_ids: &[String],
) -> Result<()> {
    let train: HashSet<&str> = train_ids.iter().map(String::as_str).collect();
    let f = specs.len();
    let mut sums = vec![0.0f64; f];
    let mut sq_sums = vec![0.0f64; f];
    let mut counts = vec![0u64; f];
    for r in records.iter().filter(|r| train.contains(r.patient_id.as_str())) {
        if r.n_features() != f {
            return Err(Error::validation(
                &r.patient_id,
                format!("record has {} features, specs define {}", r.n_features(), f),
            ));
        }
        for (row, mrow) in r.series.iter().zip(&r.mask) {
            for j in 0..f {
                if mrow[j] && row[j].is_finite() {
                    sums[j] += row[j];
                    sq_sums[j] += row[j] * row[j];
                    counts[j] += 1;
                }
            }
        }
    }
    for (j, spec) in specs.iter_mut().enumerate() {
        if counts[j] == 0 {
            spec.population_mean = Some(0.0);
            spec.population_std = Some(1.0);
            continue;
        }
        let n = counts[j] as f64;
        let mean = sums[j] / n;
        let var = (sq_sums[j] / n - mean * mean).max(0.0);
        spec.population_mean = Some(mean);
        spec.population_std = Some(var.sqrt().max(STD_FLOOR));
    }
    Ok(())
}

/// Forward-fills each feature along time from its last observed value, then
/// fills leading gaps with the train population mean. The mask is unchanged,
/// so imputation is idempotent.
pub fn impute(record: &PatientRecord, specs: &[FeatureSpec]) -> Result<PatientRecord> {
    let f = record.n_features();
    if f != specs.len() {
        return Err(Error::validation(
            &record.patient_id,
            format!("record has {f} features, specs define {}", specs.len()),
        ));
    }
    let mut out = record.clone();
    for j in 0..f {
        let fallback = specs[j].population_mean.ok_or_else(|| {
            Error::parameter("specs", format!("feature '{}' not fitted", specs[j].name))
        })?;
        let mut last: Option<f64> = None;
        for t in 0..out.n_visits() {
            if out.mask[t][j] {
                last = Some(out.series[t][j]);
            } else {
                out.series[t][j] = last.unwrap_or(fallback);
            }
        }
    }
    Ok(out)
}

/// Z-normalizes every cell with the fitted train mean/std.
pub fn normalize(record: &PatientRecord, specs: &[FeatureSpec]) -> Result<PatientRecord> {
    let mut out = record.clone();
    for j in 0..specs.len() {
        let (mean, std) = match (specs[j].population_mean, specs[j].population_std) {
            (Some(m), Some(s)) => (m, s),
            _ => {
                return Err(Error::parameter(
                    "specs",
                    format!("feature '{}' not fitted", specs[j].name),
                ))
            }
        };
        for row in &mut out.series {
            row[j] = (row[j] - mean) / std;
        }
    }
    Ok(out)
}

/// Imputes then normalizes every record (the model-facing preparation).
pub fn preprocess_all(records: &[PatientRecord], specs: &[FeatureSpec]) -> Result<Vec<PatientRecord>> {
    records
        .iter()
        .map(|r| normalize(&impute(r, specs)?, specs))
        .collect()
}

/// Stratified split: each class is shuffled with the seeded generator and
/// allocated to train/val/test by largest remainder (floors first; leftover
/// units go to the splits with the largest fractional remainders, ties
/// favoring the later split).
pub fn split(
    records: &[PatientRecord],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit> {
    let (tr, va, te) = ratios;
    if tr <= 0.0 || va <= 0.0 || te <= 0.0 {
        return Err(Error::parameter("ratios", "all ratios must be positive"));
    }
    if (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::parameter("ratios", "ratios must sum to 1"));
    }
    if records.len() < 10 {
        return Err(Error::Split(format!(
            "need at least 10 patients, got {}",
            records.len()
        )));
    }
    let mut positives: Vec<&str> = Vec::new();
    let mut negatives: Vec<&str> = Vec::new();
    for r in records {
        if r.label == 1 {
            positives.push(&r.patient_id);
        } else {
            negatives.push(&r.patient_id);
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Split("both outcome classes must be present".to_string()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DatasetSplit { train: vec![], val: vec![], test: vec![], seed };
    for class in [&mut positives, &mut negatives] {
        class.shuffle(&mut rng);
        let counts = largest_remainder(class.len(), &[tr, va, te]);
        let (a, b) = (counts[0], counts[0] + counts[1]);
        out.train.extend(class[..a].iter().map(|s| s.to_string()));
        out.val.extend(class[a..b].iter().map(|s| s.to_string()));
        out.test.extend(class[b..].iter().map(|s| s.to_string()));
    }
    Ok(out)
}

/// Allocates `n` units across ratios: floors, then leftovers to the largest
/// fractional remainders, ties broken toward the later bucket. Remainders
/// are quantized to 1e-9 so float noise cannot mask a tie.
fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let quantized = |i: usize| ((exact[i] - exact[i].floor()) * 1e9).round() as i64;
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| quantized(b).cmp(&quantized(a)).then(b.cmp(&a)));
    for k in 0..(n - assigned) {
        counts[order[k % order.len()]] += 1;
    }
    counts
}
