use serde::{Deserialize, Serialize};

use super::SolverError;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            beta1: T::lit(0.95),
            beta2: T::lit(0.99),
            eps: T::lit(1e-8),
        }
    }
}

/// First/second moment buffers and the step counter for one parameter block.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// a gradient entry was not finite; nothing changed
    Skipped,
}

/// One bias-corrected Adam update in place.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    moments: &mut AdamMoments<T>,
    lr: T,
    cfg: &AdamConfig<T>,
) -> Result<StepOutcome, SolverError> {
    if params.len() != grads.len() {
        return Err(SolverError::ShapeMismatch {
            params: params.len(),
            grads: grads.len(),
        });
    }
    if !(lr > T::zero()) {
        return Err(SolverError::LearningRate(lr.to_f64_lossy()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Ok(StepOutcome::Skipped);
    }
    if moments.m.len() != params.len() {
        moments.m = vec![T::zero(); params.len()];
        moments.v = vec![T::zero(); params.len()];
        moments.t = 0;
    }
    moments.t += 1;
    let t = moments.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        moments.m[i] = b1 * moments.m[i] + (T::one() - b1) * g;
        moments.v[i] = b2 * moments.v[i] + (T::one() - b2) * g * g;
        let m_hat = moments.m[i] / c1;
        let v_hat = moments.v[i] / c2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(StepOutcome::Applied)
}
