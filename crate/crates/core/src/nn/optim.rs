//! AdamW with bias correction and decoupled weight decay.

use crate::error::{Error, Result};
use crate::nn::params::{is_decayed, GradSet, ParamSet};
use crate::nn::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moments for every tensor that has been stepped, plus
/// the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: GradSet<T>,
    pub v: GradSet<T>,
    pub t: u64,
}

impl<T: Scalar> Default for OptimizerState<T> {
    fn default() -> Self {
        Self { m: GradSet::new(), v: GradSet::new(), t: 0 }
    }
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One AdamW step on the tensors of `params` named in `grads`.
///
/// Moments are created lazily on first use. Weight decay only touches the
/// linear weight matrices.
pub fn adamw_step<T: Scalar>(
    state: &mut OptimizerState<T>,
    params: &mut ParamSet<T>,
    grads: &GradSet<T>,
    hyper: &AdamWConfig,
) -> Result<()> {
    if !(hyper.lr >= 0.0) {
        return Err(Error::config("learning rate must be non-negative"));
    }
    for (layer, name, g) in grads.iter() {
        let shape_ok = params.try_get(layer, name).map(|p| p.shape() == g.shape());
        if shape_ok != Some(true) {
            return Err(Error::internal(format!("gradient {name} of layer {layer} does not match params")));
        }
        for moments in [&mut state.m, &mut state.v] {
            match moments.try_get(layer, name) {
                Some(t) if t.shape() == g.shape() => {}
                Some(_) => return Err(Error::internal(format!("moment shape mismatch for {name}"))),
                None => moments.insert(layer, name, Tensor::zeros_like(g)),
            }
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let c = |x: f64| T::from_f64(x);
    let (lr, b1, b2, eps, wd) =
        (c(hyper.lr), c(hyper.beta1), c(hyper.beta2), c(hyper.eps), c(hyper.weight_decay));
    let bc1 = c(1.0 - hyper.beta1.powi(t));
    let bc2 = c(1.0 - hyper.beta2.powi(t));
    let one = T::one();

    for (layer, name, g) in grads.iter() {
        let decay = is_decayed(name);
        let m = state.m.get_mut(layer, name).data_mut();
        let v = state.v.get_mut(layer, name).data_mut();
        let w = params.get_mut(layer, name).data_mut();
        for (((wi, mi), vi), &gi) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            let mut upd = mhat / (vhat.sqrt() + eps);
            if decay {
                upd += wd * *wi;
            }
            *wi -= lr * upd;
        }
    }
    Ok(())
}
