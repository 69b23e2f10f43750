//! Adam with linear warmup, cosine decay and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of the run spent warming up.
    pub warmup: f64,
    /// Global gradient norm bound; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup: 0.05,
            clip_norm: 1.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && (0.0..=1.0).contains(&self.warmup)
            && self.clip_norm >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Learning rate for 0-based `step` of a `total`-step run.
pub fn learning_rate(cfg: &AdamConfig, step: usize, total: usize) -> f64 {
    let warm = (cfg.warmup * total as f64).ceil() as usize;
    if step < warm {
        return cfg.lr * (step + 1) as f64 / warm as f64;
    }
    let span = total.saturating_sub(warm).max(1);
    let progress = ((step - warm) as f64 / span as f64).min(1.0);
    cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First and second moment estimates plus the number of updates applied.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub t: usize,
}

impl<F: Float> AdamState<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let zeros = Gradients::zeros_like(store).grads;
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// Clips `grads` in place to the configured global norm, then applies one
/// bias-corrected Adam update at learning rate `lr`. Returns the norm
/// measured before clipping.
pub fn optimizer_step<F: Float>(
    store: &mut ParamStore<F>,
    grads: &mut Gradients<F>,
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<f64> {
    for id in store.ids() {
        if grads.get(id).iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGrad {
                step: state.t,
                param: store.name(id).to_owned(),
            });
        }
    }
    let norm = grads.global_norm();
    if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
        grads.scale(F::cast(cfg.clip_norm / norm));
    }
    state.t += 1;
    let (b1, b2) = (F::cast(cfg.beta1), F::cast(cfg.beta2));
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let step = F::cast(lr / c1);
    let c2 = F::cast(c2);
    let eps = F::cast(cfg.eps);
    let one = F::one();
    for id in store.ids().collect::<Vec<_>>() {
        let g = grads.get(id);
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        let p = store.get_mut(id).data_mut();
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            p[i] = p[i] - step * m[i] / ((v[i] / c2).sqrt() + eps);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(v: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::from_f64(&[v.len()], v).unwrap());
        s
    }

    #[test]
    fn schedule_shape() {
        let c = AdamConfig::default();
        assert!(learning_rate(&c, 0, 100) < learning_rate(&c, 4, 100));
        assert!((learning_rate(&c, 4, 100) - c.lr).abs() < 1e-12);
        assert!(learning_rate(&c, 99, 100) < 1e-6);
        for s in 5..99 {
            assert!(learning_rate(&c, s + 1, 100) <= learning_rate(&c, s, 100));
        }
    }

    #[test]
    fn zero_grads_leave_params() {
        let mut store = one_param(&[1.0, -2.0]);
        let mut grads = Gradients::zeros_like(&store);
        let mut st = AdamState::new(&store);
        optimizer_step(&mut store, &mut grads, &mut st, &AdamConfig::default(), 0.1).unwrap();
        assert_eq!(store.get(crate::tensor::ParamId(0)).data(), &[1.0, -2.0]);
    }

    #[test]
    fn quadratic_descends() {
        let mut store = one_param(&[1.0]);
        let mut st = AdamState::new(&store);
        let cfg = AdamConfig::default();
        let mut grads = Gradients::zeros_like(&store);
        grads.grads[0][0] = 2.0;
        optimizer_step(&mut store, &mut grads, &mut st, &cfg, 0.1).unwrap();
        let w = store.get(crate::tensor::ParamId(0)).data()[0];
        assert!(w * w < 1.0);
    }

    #[test]
    fn non_finite_grad_is_named() {
        let mut store = one_param(&[1.0]);
        let mut grads = Gradients::zeros_like(&store);
        grads.grads[0][0] = f64::NAN;
        let mut st = AdamState::new(&store);
        let err = optimizer_step(&mut store, &mut grads, &mut st, &AdamConfig::default(), 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGrad { ref param, .. } if param == "w"));
    }
}
