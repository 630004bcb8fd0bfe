//! Reverse-mode autodiff over an explicit tape of tensor operations.
//!
//! Values are recorded as they are computed; [`Tape::backward`] walks the
//! node list in reverse, accumulating gradients for every parameter leaf.
//! The op set is exactly what the expert architectures and the fusion MLP
//! need — no broadcasting rules beyond same-shape elementwise ops.

use std::collections::BTreeMap;

use super::{sigmoid, ParamStore, Tensor2};
use crate::error::{Error, Result};

/// Probability clamp used inside the BCE node.
pub(crate) const BCE_CLAMP: f64 = 1e-7;

/// Handle to a value recorded on a [`Tape`].
pub type VarId = usize;

enum Node {
    Leaf,
    MatMul(VarId, VarId),
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    Sigmoid(VarId),
    Tanh(VarId),
    /// Softmax over all entries of the tensor, treated as one distribution.
    Softmax(VarId),
    Transpose(VarId),
    /// Stacks k row vectors (1×c) into a k×c matrix.
    StackRows(Vec<VarId>),
    Sum(VarId),
    Mean(VarId),
    /// Binary cross-entropy of a 1×1 probability against a fixed label.
    BceLoss(VarId, f64),
}

/// Wengert list: values plus the ops that produced them.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<Tensor2>,
    param_names: Vec<Option<String>>,
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_param: BTreeMap<String, Tensor2>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.by_param.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor2)> {
        self.by_param.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }

    /// Accumulates `other` into `self` (used for batch averaging).
    pub fn add_assign(&mut self, other: &Gradients) {
        for (name, g) in &other.by_param {
            match self.by_param.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.by_param.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.by_param.values_mut() {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }

    pub(crate) fn insert(&mut self, name: String, g: Tensor2) {
        self.by_param.insert(name, g);
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, node: Node, value: Tensor2) -> VarId {
        self.nodes.push(node);
        self.values.push(value);
        self.param_names.push(None);
        self.values.len() - 1
    }

    /// Records a constant input; no gradient is tracked for it.
    pub fn constant(&mut self, t: Tensor2) -> VarId {
        self.push(Node::Leaf, t)
    }

    /// Records a parameter leaf by name; [`Tape::backward`] reports its gradient.
    pub fn param(&mut self, name: &str, store: &ParamStore) -> Result<VarId> {
        let value = store.get(name)?.clone();
        let id = self.push(Node::Leaf, value);
        self.param_names[id] = Some(name.to_string());
        Ok(id)
    }

    pub fn value(&self, id: VarId) -> &Tensor2 {
        &self.values[id]
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let v = self.values[a].matmul(&self.values[b])?;
        Ok(self.push(Node::MatMul(a, b), v))
    }

    fn elementwise(&mut self, a: VarId, b: VarId, op: &str) -> Result<(Tensor2, Tensor2)> {
        if self.values[a].shape() != self.values[b].shape() {
            return Err(Error::Dimension(format!(
                "{op} on {:?} vs {:?}",
                self.values[a].shape(),
                self.values[b].shape()
            )));
        }
        Ok((self.values[a].clone(), self.values[b].clone()))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (va, vb) = self.elementwise(a, b, "add")?;
        let mut out = va;
        for (x, y) in out.data_mut().iter_mut().zip(vb.data()) {
            *x += y;
        }
        Ok(self.push(Node::Add(a, b), out))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (va, vb) = self.elementwise(a, b, "sub")?;
        let mut out = va;
        for (x, y) in out.data_mut().iter_mut().zip(vb.data()) {
            *x -= y;
        }
        Ok(self.push(Node::Sub(a, b), out))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (va, vb) = self.elementwise(a, b, "mul")?;
        let mut out = va;
        for (x, y) in out.data_mut().iter_mut().zip(vb.data()) {
            *x *= y;
        }
        Ok(self.push(Node::Mul(a, b), out))
    }

    pub fn scale(&mut self, a: VarId, factor: f64) -> VarId {
        let out = self.values[a].map(|x| x * factor);
        self.push(Node::Scale(a, factor), out)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let out = self.values[a].map(sigmoid);
        self.push(Node::Sigmoid(a), out)
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let out = self.values[a].map(f64::tanh);
        self.push(Node::Tanh(a), out)
    }

    /// Numerically stable softmax over every entry of the tensor.
    pub fn softmax(&mut self, a: VarId) -> VarId {
        let v = &self.values[a];
        let max = v.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v.data().iter().map(|&x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let out = Tensor2::from_vec(v.rows(), v.cols(), exps.iter().map(|e| e / total).collect())
            .expect("same shape");
        self.push(Node::Softmax(a), out)
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let out = self.values[a].transpose();
        self.push(Node::Transpose(a), out)
    }

    /// Stacks 1×c row vectors into a k×c matrix.
    pub fn stack_rows(&mut self, rows: &[VarId]) -> Result<VarId> {
        if rows.is_empty() {
            return Err(Error::Dimension("stack_rows of zero rows".to_string()));
        }
        let cols = self.values[rows[0]].cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let v = &self.values[r];
            if v.rows() != 1 || v.cols() != cols {
                return Err(Error::Dimension(format!(
                    "stack_rows expects 1x{} rows, got {:?}",
                    cols,
                    v.shape()
                )));
            }
            data.extend_from_slice(v.data());
        }
        let out = Tensor2::from_vec(rows.len(), cols, data)?;
        Ok(self.push(Node::StackRows(rows.to_vec()), out))
    }

    pub fn sum(&mut self, a: VarId) -> VarId {
        let s: f64 = self.values[a].data().iter().sum();
        self.push(Node::Sum(a), Tensor2::scalar(s))
    }

    pub fn mean(&mut self, a: VarId) -> VarId {
        let v = &self.values[a];
        let s: f64 = v.data().iter().sum();
        let m = s / v.len() as f64;
        self.push(Node::Mean(a), Tensor2::scalar(m))
    }

    /// BCE of a 1×1 probability against a fixed 0/1 label, with the
    /// probability clamped to [1e-7, 1-1e-7].
    pub fn bce_loss(&mut self, prob: VarId, label: f64) -> Result<VarId> {
        let v = &self.values[prob];
        if v.shape() != (1, 1) {
            return Err(Error::Dimension("bce_loss expects a 1x1 probability".to_string()));
        }
        let loss = super::bce(v.item(), label);
        Ok(self.push(Node::BceLoss(prob, label), Tensor2::scalar(loss)))
    }

    /// Accumulates dOutput/dParam for every parameter leaf reachable from
    /// `output`, which must be 1×1.
    pub fn backward(&self, output: VarId) -> Result<Gradients> {
        if self.values[output].shape() != (1, 1) {
            return Err(Error::Dimension(
                "backward requires a scalar (1x1) output".to_string(),
            ));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.values.len()];
        grads[output] = Some(Tensor2::scalar(1.0));

        for id in (0..=output).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id] {
                Node::Leaf => {
                    grads[id] = Some(g); // keep for parameter collection
                    continue;
                }
                Node::MatMul(a, b) => {
                    let da = g.matmul(&self.values[*b].transpose())?;
                    let db = self.values[*a].transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Node::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Node::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.map(|x| -x));
                }
                Node::Mul(a, b) => {
                    let da = hadamard(&g, &self.values[*b]);
                    let db = hadamard(&g, &self.values[*a]);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Node::Scale(a, c) => accumulate(&mut grads, *a, g.map(|x| x * c)),
                Node::Sigmoid(a) => {
                    let s = &self.values[id];
                    let mut da = g;
                    for (x, &sv) in da.data_mut().iter_mut().zip(s.data()) {
                        *x *= sv * (1.0 - sv);
                    }
                    accumulate(&mut grads, *a, da);
                }
                Node::Tanh(a) => {
                    let t = &self.values[id];
                    let mut da = g;
                    for (x, &tv) in da.data_mut().iter_mut().zip(t.data()) {
                        *x *= 1.0 - tv * tv;
                    }
                    accumulate(&mut grads, *a, da);
                }
                Node::Softmax(a) => {
                    let y = &self.values[id];
                    let dot: f64 = g.data().iter().zip(y.data()).map(|(gi, yi)| gi * yi).sum();
                    let mut da = g;
                    for (x, &yi) in da.data_mut().iter_mut().zip(y.data()) {
                        *x = yi * (*x - dot);
                    }
                    accumulate(&mut grads, *a, da);
                }
                Node::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Node::StackRows(rows) => {
                    for (r, &src) in rows.iter().enumerate() {
                        let slice = g.row(r).to_vec();
                        accumulate(&mut grads, src, Tensor2::row_vector(slice));
                    }
                }
                Node::Sum(a) => {
                    let v = &self.values[*a];
                    let da = Tensor2::from_vec(
                        v.rows(),
                        v.cols(),
                        vec![g.item(); v.len()],
                    )?;
                    accumulate(&mut grads, *a, da);
                }
                Node::Mean(a) => {
                    let v = &self.values[*a];
                    let da = Tensor2::from_vec(
                        v.rows(),
                        v.cols(),
                        vec![g.item() / v.len() as f64; v.len()],
                    )?;
                    accumulate(&mut grads, *a, da);
                }
                Node::BceLoss(p, label) => {
                    let raw = self.values[*p].item();
                    // Zero slope outside the clamp window.
                    let dp = if raw > BCE_CLAMP && raw < 1.0 - BCE_CLAMP {
                        (raw - label) / (raw * (1.0 - raw))
                    } else {
                        0.0
                    };
                    accumulate(&mut grads, *p, Tensor2::scalar(g.item() * dp));
                }
            }
        }

        let mut out = Gradients::default();
        for (id, name) in self.param_names.iter().enumerate() {
            if let (Some(name), Some(g)) = (name, grads[id].take()) {
                out.insert(name.clone(), g);
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], id: VarId, g: Tensor2) {
    match &mut grads[id] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot => *slot = Some(g),
    }
}

fn hadamard(a: &Tensor2, b: &Tensor2) -> Tensor2 {
    let mut out = a.clone();
    for (x, y) in out.data_mut().iter_mut().zip(b.data()) {
        *x *= y;
    }
    out
}

// ---------------------------------------------------------------------------
// Layer helpers
// ---------------------------------------------------------------------------

/// Parameter ids for one GRU cell on a tape.
pub struct GruCellVars {
    pub w_update: VarId,
    pub u_update: VarId,
    pub b_update: VarId,
    pub w_reset: VarId,
    pub u_reset: VarId,
    pub b_reset: VarId,
    pub w_cand: VarId,
    pub u_cand: VarId,
    pub b_cand: VarId,
}

impl GruCellVars {
    /// Binds the nine GRU parameters under `prefix` (e.g. "gru").
    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let p = |suffix: &str, tape: &mut Tape| tape.param(&format!("{prefix}.{suffix}"), store);
        Ok(GruCellVars {
            w_update: p("w_update", tape)?,
            u_update: p("u_update", tape)?,
            b_update: p("b_update", tape)?,
            w_reset: p("w_reset", tape)?,
            u_reset: p("u_reset", tape)?,
            b_reset: p("b_reset", tape)?,
            w_cand: p("w_cand", tape)?,
            u_cand: p("u_cand", tape)?,
            b_cand: p("b_cand", tape)?,
        })
    }
}

/// x·W + b for a 1×in input.
pub fn linear(tape: &mut Tape, x: VarId, w: VarId, b: VarId) -> Result<VarId> {
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}

/// One GRU step: returns the next hidden state (1×H).
///
/// update z = σ(xW_z + hU_z + b_z); reset r = σ(xW_r + hU_r + b_r);
/// candidate c = tanh(xW_c + (r⊙h)U_c + b_c); h' = h + z⊙(c − h).
pub fn gru_cell(tape: &mut Tape, x: VarId, h: VarId, vars: &GruCellVars) -> Result<VarId> {
    let zx = tape.matmul(x, vars.w_update)?;
    let zh = tape.matmul(h, vars.u_update)?;
    let z1 = tape.add(zx, zh)?;
    let z2 = tape.add(z1, vars.b_update)?;
    let z = tape.sigmoid(z2);

    let rx = tape.matmul(x, vars.w_reset)?;
    let rh = tape.matmul(h, vars.u_reset)?;
    let r1 = tape.add(rx, rh)?;
    let r2 = tape.add(r1, vars.b_reset)?;
    let r = tape.sigmoid(r2);

    let rh_gated = tape.mul(r, h)?;
    let cx = tape.matmul(x, vars.w_cand)?;
    let ch = tape.matmul(rh_gated, vars.u_cand)?;
    let c1 = tape.add(cx, ch)?;
    let c2 = tape.add(c1, vars.b_cand)?;
    let cand = tape.tanh(c2);

    // h' = h + z ⊙ (cand − h) ≡ (1−z)⊙h + z⊙cand
    let delta = tape.sub(cand, h)?;
    let gated = tape.mul(z, delta)?;
    tape.add(h, gated)
}

/// Softmax attention over time: states are T row vectors (1×H); scores come
/// from `score_w` (H×1) with an optional additive bias (e.g. −1e9 on masked
/// steps). Returns the pooled 1×H state.
pub fn attention_pool(
    tape: &mut Tape,
    states: &[VarId],
    score_w: VarId,
    score_bias: Option<VarId>,
) -> Result<VarId> {
    let stacked = tape.stack_rows(states)?; // T×H
    let scores = tape.matmul(stacked, score_w)?; // T×1
    let scores = match score_bias {
        Some(b) => tape.add(scores, b)?,
        None => scores,
    };
    let weights = tape.softmax(scores); // T×1
    let weights_t = tape.transpose(weights); // 1×T
    tape.matmul(weights_t, stacked) // 1×H
}

/// Per-feature sigmoid gate from a 1×F summary vector: σ(s·W + b).
pub fn feature_gate(tape: &mut Tape, summary: VarId, w: VarId, b: VarId) -> Result<VarId> {
    let sw = tape.matmul(summary, w)?;
    let pre = tape.add(sw, b)?;
    Ok(tape.sigmoid(pre))
}
