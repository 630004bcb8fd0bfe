//! Adam with decoupled weight decay.

use super::{Gradients, ParamStore, Tensor2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, weight_decay: 0.0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One optimizer step over every parameter present in `grads`.
///
/// Weight decay is decoupled: applied directly to the parameter
/// (`p -= lr·wd·p`), not folded into the gradient. Moments are
/// bias-corrected. Parameters without a gradient entry are untouched.
pub fn adamw_step(store: &mut ParamStore, grads: &Gradients, cfg: &AdamWConfig) -> Result<()> {
    for (name, g) in grads.iter() {
        if !g.all_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter '{name}'"
            )));
        }
    }
    let (params, m1, m2, step) = store.state_mut();
    *step += 1;
    let t = *step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);

    for (name, g) in grads.iter() {
        let p = params
            .get_mut(name)
            .ok_or_else(|| Error::Training(format!("gradient for unknown parameter '{name}'")))?;
        if p.shape() != g.shape() {
            return Err(Error::Training(format!(
                "gradient shape {:?} does not match parameter '{name}' {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let m = m1
            .entry(name.clone())
            .or_insert_with(|| Tensor2::zeros(p.rows(), p.cols()));
        let v = m2
            .entry(name.clone())
            .or_insert_with(|| Tensor2::zeros(p.rows(), p.cols()));

        let pd = p.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = md[i] / bias1;
            let v_hat = vd[i] / bias2;
            pd[i] -= cfg.lr * cfg.weight_decay * pd[i];
            pd[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Tape, Tensor2};

    fn zero_grads_for(store: &ParamStore) -> Gradients {
        let mut g = Gradients::default();
        for name in store.names() {
            let t = store.get(name).unwrap();
            g.insert(name.clone(), Tensor2::zeros(t.rows(), t.cols()));
        }
        g
    }

    #[test]
    fn zero_grad_no_decay_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor2::row_vector(vec![1.0, -2.0, 0.5]));
        let grads = zero_grads_for(&store);
        adamw_step(&mut store, &grads, &AdamWConfig::default()).unwrap();
        assert_eq!(store.get("w").unwrap().data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_grad_with_decay_scales_params() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor2::row_vector(vec![1.0, -2.0]));
        let grads = zero_grads_for(&store);
        let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.01, ..Default::default() };
        adamw_step(&mut store, &grads, &cfg).unwrap();
        let expected = 1.0 - 0.001;
        assert!((store.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
        assert!((store.get("w").unwrap().data()[1] + 2.0 * expected).abs() < 1e-15);
    }

    #[test]
    fn step_on_square_decreases_param() {
        // f(w) = w², analytic gradient positive at w = 1.
        let mut store = ParamStore::new();
        store.insert("w", Tensor2::scalar(1.0));
        let mut tape = Tape::new();
        let w = tape.param("w", &store).unwrap();
        let f = tape.mul(w, w).unwrap();
        let grads = tape.backward(f).unwrap();
        assert!(grads.get("w").unwrap().item() > 0.0);
        let cfg = AdamWConfig { lr: 0.001, ..Default::default() };
        adamw_step(&mut store, &grads, &cfg).unwrap();
        assert!(store.get("w").unwrap().item() < 1.0);
        assert_eq!(store.step(), 1);
    }

    #[test]
    fn non_finite_gradient_is_a_training_error() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor2::scalar(1.0));
        let mut grads = Gradients::default();
        grads.insert("w".to_string(), Tensor2::scalar(f64::NAN));
        let err = adamw_step(&mut store, &grads, &AdamWConfig::default()).unwrap_err();
        assert!(err.to_string().contains("'w'"));
    }
}
