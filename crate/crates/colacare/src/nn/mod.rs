//! Minimal differentiable building blocks for the small networks used here:
//! dense matmul/elementwise primitives on a reverse-mode tape, layer helpers
//! (linear, GRU cell, attention pooling, feature gate), seeded parameter
//! initialization, and a decoupled-weight-decay optimizer.
//!
//! Everything is 64-bit. Forward passes are pure functions of (inputs,
//! params); [`ParamStore`] mutation happens only through
//! [`optim::adamw_step`] during training.

mod optim;
mod tape;

pub use optim::{adamw_step, AdamWConfig};
pub use tape::{
    attention_pool, feature_gate, gru_cell, linear, Gradients, GruCellVars, Tape, VarId,
};

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Tensor2 { rows, cols, data })
    }

    /// 1×n row vector.
    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor2 { rows: 1, cols: data.len(), data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor2 { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Scalar value of a 1×1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn matmul(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor2::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Sigmoid with inputs clamped at ±30 before exponentiation.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-30.0, 30.0);
    1.0 / (1.0 + (-x).exp())
}

/// Named parameters plus optimizer state (first/second moments, step count).
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor2>,
    moment1: BTreeMap<String, Tensor2>,
    moment2: BTreeMap<String, Tensor2>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a parameter initialized uniformly in ±1/√fan_in.
    pub fn init_uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.params.insert(name.to_string(), Tensor2 { rows, cols, data });
    }

    pub fn insert(&mut self, name: &str, t: Tensor2) {
        self.params.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor2> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Dimension(format!("unknown parameter '{name}'")))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn n_scalars(&self) -> usize {
        self.params.values().map(Tensor2::len).sum()
    }

    pub(crate) fn params(&self) -> &BTreeMap<String, Tensor2> {
        &self.params
    }

    pub(crate) fn state_mut(
        &mut self,
    ) -> (
        &mut BTreeMap<String, Tensor2>,
        &mut BTreeMap<String, Tensor2>,
        &mut BTreeMap<String, Tensor2>,
        &mut u64,
    ) {
        (&mut self.params, &mut self.moment1, &mut self.moment2, &mut self.step)
    }

    /// Nudges one scalar coordinate; used by finite-difference checks.
    pub fn perturb(&mut self, name: &str, index: usize, delta: f64) {
        let t = self.params.get_mut(name).expect("parameter exists");
        t.data[index] += delta;
    }

    /// Serializes parameters (not optimizer state) as a JSON map
    /// name → {shape, data}.
    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: BTreeMap<&String, CheckpointEntry> = self
            .params
            .iter()
            .map(|(k, v)| {
                (k, CheckpointEntry { shape: [v.rows, v.cols], data: v.data.clone() })
            })
            .collect();
        let text = serde_json::to_string_pretty(&entries)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let entries: BTreeMap<String, CheckpointEntry> = serde_json::from_str(&text)?;
        let mut store = ParamStore::new();
        for (name, e) in entries {
            let t = Tensor2::from_vec(e.shape[0], e.shape[1], e.data)
                .map_err(|_| Error::schema(&format!("checkpoint {}", path.display()),
                    format!("parameter '{name}' data does not match its shape")))?;
            store.params.insert(name, t);
        }
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    shape: [usize; 2],
    data: Vec<f64>,
}

/// Deterministic generator for parameter initialization.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-sample binary cross-entropy with the probability clamped to
/// [1e-7, 1-1e-7].
pub fn bce(prob: f64, label: f64) -> f64 {
    let p = prob.clamp(tape::BCE_CLAMP, 1.0 - tape::BCE_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite-difference gradient checking, shared by module tests.

    use super::*;

    /// Compares analytic gradients against central differences (h = 1e-4) on
    /// up to `n_coords` seeded random coordinates, skipping coordinates where
    /// |analytic| < 1e-8. Relative error must stay below 1e-4.
    pub fn check<F>(store: &ParamStore, grads: &Gradients, loss_fn: F, n_coords: usize, seed: u64)
    where
        F: Fn(&ParamStore) -> f64,
    {
        let h = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords: Vec<(String, usize)> = {
            let mut all = Vec::new();
            for (name, t) in store.params() {
                for i in 0..t.len() {
                    all.push((name.clone(), i));
                }
            }
            // Sample without replacement.
            let mut picked = Vec::new();
            let mut pool = all;
            while picked.len() < n_coords && !pool.is_empty() {
                let i = rng.gen_range(0..pool.len());
                picked.push(pool.swap_remove(i));
            }
            picked
        };
        let mut checked = 0;
        for (name, idx) in coords {
            let analytic = grads.get(&name).map(|g| g.data()[idx]).unwrap_or(0.0);
            if analytic.abs() < 1e-8 {
                continue;
            }
            let mut plus = store.clone();
            plus.perturb(&name, idx, h);
            let mut minus = store.clone();
            minus.perturb(&name, idx, -h);
            let numeric = (loss_fn(&plus) - loss_fn(&minus)) / (2.0 * h);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            assert!(
                rel < 1e-4,
                "gradient mismatch at {name}[{idx}]: analytic={analytic} numeric={numeric} rel={rel}"
            );
            checked += 1;
        }
        assert!(checked > 0, "no coordinates with non-negligible gradient were checked");
    }
}
