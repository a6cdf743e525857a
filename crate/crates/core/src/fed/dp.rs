//! DP-SGD on the trainable gradients: per-example clipping, one Gaussian
//! draw on the clipped sum, then division by the batch size.

use crate::error::{Error, Result};
use crate::nn::{GradSet, Scalar};
use crate::rng::{standard_normal, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    pub enabled: bool,
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub delta: f64,
    pub target_epsilon: Option<f64>,
    /// Number of noisy steps the budget is spread over.
    pub accounting_steps: u64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            clip_norm: 1.0,
            noise_multiplier: 0.0,
            delta: 1e-5,
            target_epsilon: None,
            accounting_steps: 1,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("dp.clip_norm must be > 0"));
        }
        if !(self.noise_multiplier >= 0.0) {
            return Err(Error::config("dp.sigma must be >= 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("dp.delta must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Clips each example's flattened gradient to `clip_norm`, sums, adds
/// `N(0, (sigma * clip_norm)^2)` per coordinate, and divides by the batch
/// size.
pub fn dp_privatize<T: Scalar>(
    per_example: &[GradSet<T>],
    clip_norm: f64,
    sigma: f64,
    rng: &mut Rng,
) -> Result<GradSet<T>> {
    if !(clip_norm > 0.0) {
        return Err(Error::config("clip norm must be > 0"));
    }
    let first = per_example.first().ok_or_else(|| Error::input("no per-example gradients"))?;
    let mut sum = first.zeros_like();
    for g in per_example {
        if !g.same_layout(first) {
            return Err(Error::input("per-example gradients disagree on layout"));
        }
        let norm = g.l2_norm();
        let factor = (clip_norm / norm).min(1.0);
        if factor < 1.0 {
            let mut clipped = g.clone();
            clipped.scale(T::from_f64(factor));
            sum.add_assign(&clipped);
        } else {
            sum.add_assign(g);
        }
    }
    if sigma > 0.0 {
        let std = sigma * clip_norm;
        for (_, _, t) in sum.iter_mut() {
            for v in t.data_mut() {
                *v += T::from_f64(std * standard_normal(rng));
            }
        }
    }
    let b = T::from_f64(per_example.len() as f64);
    for (_, _, t) in sum.iter_mut() {
        for v in t.data_mut() {
            *v = *v / b;
        }
    }
    Ok(sum)
}

/// Noise multiplier for an `(epsilon, delta)` budget over `steps` noisy
/// steps.
///
/// Conservative: basic composition splits the budget evenly
/// (`epsilon / steps`, `delta / steps`) and each step uses the classical
/// Gaussian-mechanism bound `sqrt(2 ln(1.25 / delta)) / epsilon`. This is
/// loose (and formally valid only for per-step epsilon below 1), but closed
/// form.
pub fn calibrate_sigma(epsilon: f64, delta: f64, steps: u64) -> Result<f64> {
    if !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) || steps == 0 {
        return Err(Error::config(format!(
            "calibrate_sigma needs epsilon > 0, 0 < delta < 1, steps >= 1 (got {epsilon}, {delta}, {steps})"
        )));
    }
    let eps1 = epsilon / steps as f64;
    let delta1 = delta / steps as f64;
    Ok((2.0 * (1.25 / delta1).ln()).sqrt() / eps1)
}
