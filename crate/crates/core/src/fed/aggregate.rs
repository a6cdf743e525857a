use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::fed::update::ClientUpdate;
use crate::nn::{GradSet, ParamSet, Scalar, Tensor};

/// Weighted mean of the uploaded tensors with weights `|D_i| / Σ|D_j|`.
///
/// Accumulation happens in f64 regardless of the training dtype.
pub fn aggregate<T: Scalar>(updates: &[ClientUpdate<T>]) -> Result<GradSet<T>> {
    let first = updates.first().ok_or_else(|| Error::protocol("no updates to aggregate"))?;
    let mut ids = BTreeSet::new();
    for u in updates {
        if u.round != first.round {
            return Err(Error::protocol(format!(
                "client {} sent round {} during round {}",
                u.client_id, u.round, first.round
            )));
        }
        if !u.params.same_layout(&first.params) {
            return Err(Error::protocol(format!(
                "client {} update layout {:?} differs from client {} ({:?})",
                u.client_id,
                u.params.layer_ids(),
                first.client_id,
                first.params.layer_ids()
            )));
        }
        if u.weight == 0 {
            return Err(Error::protocol(format!("client {} has zero weight", u.client_id)));
        }
        if !ids.insert(u.client_id) {
            return Err(Error::protocol(format!("duplicate update from client {}", u.client_id)));
        }
    }
    let total: u64 = updates.iter().map(|u| u.weight).sum();
    let coeffs: Vec<f64> = updates.iter().map(|u| u.weight as f64 / total as f64).collect();

    let mut out = GradSet::new();
    for (layer, name, t) in first.params.iter() {
        let mut acc = vec![0.0f64; t.numel()];
        for (u, &c) in updates.iter().zip(&coeffs) {
            for (a, &v) in acc.iter_mut().zip(u.params.get(layer, name).data()) {
                *a += c * v.to_f64();
            }
        }
        let data = acc.into_iter().map(T::from_f64).collect();
        out.insert(layer, name, Tensor::from_vec(t.shape().to_vec(), data)?);
    }
    Ok(out)
}

/// Replaces the aggregated tensors of `global`; every other tensor is
/// carried over untouched.
#[must_use = "the merged model is returned, not written in place"]
pub fn apply_update<T: Scalar>(
    global: &ParamSet<T>,
    agg: &GradSet<T>,
    expected: &BTreeSet<usize>,
) -> Result<ParamSet<T>> {
    if &agg.layer_ids() != expected {
        return Err(Error::protocol(format!(
            "aggregate covers layers {:?}, expected {:?}",
            agg.layer_ids(),
            expected
        )));
    }
    if !agg.same_layout(&global.restrict(expected)) {
        return Err(Error::protocol("aggregate tensors do not match the model layout"));
    }
    let mut out = global.clone();
    for (layer, name, t) in agg.iter() {
        *out.get_mut(layer, name) = t.clone();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upd(client: u32, weight: u64, v: f64) -> ClientUpdate<f64> {
        let mut p = GradSet::new();
        p.insert(3, "w_out", Tensor::from_vec(vec![1], vec![v]).unwrap());
        ClientUpdate { round: 1, client_id: client, weight, params: p }
    }

    #[test]
    fn weighted_mean_arithmetic() {
        let a = aggregate(&[upd(0, 1, 2.0), upd(1, 3, 6.0)]).unwrap();
        assert_eq!(a.get(3, "w_out").data(), &[5.0]);
    }

    #[test]
    fn single_client_identity() {
        let u = upd(0, 17, 0.123_456_789_012_345_6);
        assert_eq!(aggregate(&[u.clone()]).unwrap(), u.params);
    }

    #[test]
    fn protocol_errors() {
        assert!(matches!(aggregate::<f64>(&[]), Err(Error::Protocol(_))));
        let mut b = upd(1, 1, 1.0);
        b.params.insert(2, "wq", Tensor::from_vec(vec![1], vec![0.0]).unwrap());
        assert!(matches!(aggregate(&[upd(0, 1, 1.0), b]), Err(Error::Protocol(_))));
        let mut c = upd(1, 1, 1.0);
        c.round = 2;
        assert!(matches!(aggregate(&[upd(0, 1, 1.0), c]), Err(Error::Protocol(_))));
    }

    #[test]
    fn apply_checks_keyset() {
        let mut g = ParamSet::new();
        g.insert(0, "tok_emb", Tensor::from_vec(vec![1], vec![9.0]).unwrap());
        g.insert(3, "w_out", Tensor::from_vec(vec![1], vec![1.0]).unwrap());
        let agg = upd(0, 1, 4.0).params;
        let out = apply_update(&g, &agg, &BTreeSet::from([3])).unwrap();
        assert_eq!(out.get(3, "w_out").data(), &[4.0]);
        assert_eq!(out.get(0, "tok_emb"), g.get(0, "tok_emb"));
        assert!(matches!(apply_update(&g, &agg, &BTreeSet::from([0, 3])), Err(Error::Protocol(_))));
    }
}
