//! Joint training of the full model.

mod config;
mod fit;
mod optim;

pub use config::TrainConfig;
pub use fit::{
    augment_scale, decode_all, evaluate_model, fit, load_checkpoint, training_checkpoint, FitOptions, FitOutcome,
    LoadedModel, StepRecord, BEST_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE,
};
pub use optim::{learning_rate, optimizer_step, AdamConfig, AdamState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SampleLosses, TaskFlags};
use crate::tensor::{Float, Var};

/// Coefficients of the recognition, position and counting losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 0.5,
            lambda3: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{k} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// The weights actually applied: counting carries no weight while the
    /// counting task is off.
    pub fn effective(&self, tasks: TaskFlags) -> LossWeights {
        LossWeights {
            lambda3: if tasks.task1 { self.lambda3 } else { 0.0 },
            ..*self
        }
    }
}

/// `λ1·l_rec + λ2·l_pos + λ3·l_counting`.
///
/// Any non-finite component is rejected with [`Error::NonFiniteLoss`]
/// (reported at step 0; [`fit`] substitutes the real step).
pub fn total_loss(l_rec: f64, l_pos: f64, l_counting: f64, w: &LossWeights) -> Result<f64> {
    for (name, v) in [("l_rec", l_rec), ("l_pos", l_pos), ("l_counting", l_counting)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: 0,
                detail: format!("{name} = {v}"),
            });
        }
    }
    Ok(w.lambda1 * l_rec + w.lambda2 * l_pos + w.lambda3 * l_counting)
}

/// The differentiable total of one sample's components. The CNN viewer's
/// recognition loss, when present, is added to `l_rec` under `λ1`.
pub fn weighted_total<'g, F: Float>(losses: &SampleLosses<'g, F>, w: &LossWeights) -> Result<Var<'g, F>> {
    let mut rec = losses.rec;
    if let Some(r2) = losses.rec2 {
        rec = rec.add(r2)?;
    }
    let mut total = rec.mul_scalar(w.lambda1).add(losses.pos.mul_scalar(w.lambda2))?;
    if let Some(c) = losses.count {
        total = total.add(c.mul_scalar(w.lambda3))?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_sum() {
        let w = LossWeights::default();
        assert!((total_loss(1.0, 2.0, 3.0, &w).unwrap() - 2.3).abs() < 1e-12);
        let base = w.effective(TaskFlags::BASELINE);
        assert_eq!(total_loss(1.0, 2.0, 3.0, &base).unwrap(), 1.0 + 0.5 * 2.0);
        assert!(matches!(total_loss(f64::NAN, 0.0, 0.0, &w), Err(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights { lambda2: -1.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { lambda3: f64::INFINITY, ..Default::default() }.validate().is_err());
    }
}
