//! Analytic vs central finite-difference gradient comparison.

use std::collections::BTreeSet;

use crate::error::Result;
use crate::nn::config::ModelConfig;
use crate::nn::model::{batch_loss, loss_and_grads, Grads, Sample};
use crate::nn::params::ParamSet;
use crate::rng::{index, rng_from_seed};

pub const FD_STEP: f64 = 1e-6;
/// Coordinates checked per tensor (all of them for smaller tensors).
pub const COORDS_PER_TENSOR: usize = 24;
/// Denominator floor for the relative error, so that gradients that are
/// zero up to rounding do not blow the ratio up.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(layer, name)` of the tensor holding the worst coordinate.
    pub worst_tensor: Option<(usize, String)>,
    pub checked: usize,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of `trainable` against central differences
/// on a seeded subsample of coordinates.
pub fn grad_check(
    cfg: &ModelConfig,
    params: &ParamSet<f64>,
    trainable: &BTreeSet<usize>,
    batch: &[Sample],
    tol: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let Grads::Batch(analytic) = loss_and_grads(cfg, params, trainable, batch, false)?.grads else {
        unreachable!("batch mode")
    };
    let mut rng = rng_from_seed(seed);
    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_tensor: None, checked: 0, passed: true };
    for (layer, name, g) in analytic.iter() {
        let n = g.numel();
        let coords: Vec<usize> = if n <= COORDS_PER_TENSOR {
            (0..n).collect()
        } else {
            (0..COORDS_PER_TENSOR).map(|_| index(&mut rng, n)).collect()
        };
        for i in coords {
            let orig = params.get(layer, name).data()[i];
            probe.get_mut(layer, name).data_mut()[i] = orig + FD_STEP;
            let up = batch_loss(cfg, &probe, batch)?;
            probe.get_mut(layer, name).data_mut()[i] = orig - FD_STEP;
            let down = batch_loss(cfg, &probe, batch)?;
            probe.get_mut(layer, name).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(g.data()[i], numeric);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_tensor = Some((layer, name.to_string()));
            }
        }
    }
    report.passed = report.max_rel_err < tol;
    Ok(report)
}
