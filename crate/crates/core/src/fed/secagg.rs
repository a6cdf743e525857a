//! Simulated secure aggregation with pairwise additive masks.
//!
//! Each pair of cohort members `(i, j)`, `i < j`, shares a seed. Both expand
//! it into the same pseudorandom stream; `i` adds it and `j` subtracts it,
//! modulo 2^64, so the masks cancel only in the sum over the full cohort.
//! Seeds stand in for a key agreement, and dropouts are not handled.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::fed::update::{ClientUpdate, MaskedUpdate};
use crate::nn::{GradSet, LayerTensors, Scalar, Tensor};
use crate::rng::{derive_seed, next_u64, rng_from_seed, round_index, Role};

/// Default fixed-point scale, 2^20.
pub const DEFAULT_SCALE: f64 = 1_048_576.0;

/// Shared seeds of every unordered pair in a cohort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSeeds {
    cohort: BTreeSet<u32>,
    seeds: BTreeMap<(u32, u32), u64>,
}

impl PairSeeds {
    pub fn new(cohort: BTreeSet<u32>, seeds: BTreeMap<(u32, u32), u64>) -> Self {
        Self { cohort, seeds }
    }

    /// Seeds for `cohort` in `round`, derived from the master seed.
    pub fn derive(master: u64, round: u32, cohort: &BTreeSet<u32>) -> Self {
        let mut seeds = BTreeMap::new();
        for &i in cohort {
            for &j in cohort.range(i + 1..) {
                // Mix the pair into one index; round in the top bits.
                let idx = round_index(round, 0) ^ (u64::from(i) << 16) ^ u64::from(j);
                seeds.insert((i, j), derive_seed(master, Role::Mask, idx));
            }
        }
        Self { cohort: cohort.clone(), seeds }
    }

    pub fn cohort(&self) -> &BTreeSet<u32> {
        &self.cohort
    }

    pub fn get(&self, a: u32, b: u32) -> Option<u64> {
        self.seeds.get(&(a.min(b), a.max(b))).copied()
    }
}

fn quantize(v: f64, weight: u64, scale: f64) -> Result<u64> {
    let q = (v * weight as f64 * scale).round();
    // 2^63 bounds the signed range of the ring embedding.
    if !q.is_finite() || q.abs() >= 9.223_372_036_854_775e18 {
        return Err(Error::protocol(format!("value {v} does not fit the fixed-point range")));
    }
    Ok(q as i64 as u64)
}

/// Pseudorandom mask stream for one pair, laid over `like` in canonical
/// (layer, name, element) order.
pub fn pair_mask<E: Copy>(seed: u64, like: &LayerTensors<E>) -> LayerTensors<u64> {
    let mut rng = rng_from_seed(seed);
    like.map(|t| {
        let data = (0..t.numel()).map(|_| next_u64(&mut rng)).collect();
        Tensor::from_vec(t.shape().to_vec(), data).expect("same shape")
    })
}

/// Quantizes `round(value * weight * scale)` and applies the masks shared
/// with every other cohort member.
pub fn mask_update<T: Scalar>(u: &ClientUpdate<T>, seeds: &PairSeeds, scale: f64) -> Result<MaskedUpdate> {
    if !(scale > 0.0) {
        return Err(Error::config("secure aggregation scale must be > 0"));
    }
    let me = u.client_id;
    if !seeds.cohort.is_empty() && !seeds.cohort.contains(&me) {
        return Err(Error::protocol(format!("client {me} is not in the secure-aggregation cohort")));
    }
    let mut q = GradSet::new();
    for (layer, name, t) in u.params.iter() {
        let data = t
            .data()
            .iter()
            .map(|&v| quantize(v.to_f64(), u.weight, scale))
            .collect::<Result<Vec<_>>>()?;
        q.insert(layer, name, Tensor::from_vec(t.shape().to_vec(), data)?);
    }
    for &peer in seeds.cohort.iter().filter(|&&p| p != me) {
        let seed = seeds
            .get(me, peer)
            .ok_or_else(|| Error::protocol(format!("missing pair seed for clients {me} and {peer}")))?;
        let mask = pair_mask(seed, &u.params);
        for ((_, _, dst), (_, _, m)) in q.iter_mut().zip(mask.iter()) {
            for (d, &mv) in dst.data_mut().iter_mut().zip(m.data()) {
                *d = if me < peer { d.wrapping_add(mv) } else { d.wrapping_sub(mv) };
            }
        }
    }
    Ok(MaskedUpdate { round: u.round, client_id: u.client_id, weight: u.weight, params: q })
}

/// Sums the masked updates of the full cohort modulo 2^64 and dequantizes
/// by `scale * total_weight`.
///
/// The result matches the plain weighted mean up to
/// `cohort_size / (2 * scale * total_weight)` per element.
pub fn secure_aggregate<T: Scalar>(
    masked: &[MaskedUpdate],
    cohort: &BTreeSet<u32>,
    total_weight: u64,
    scale: f64,
) -> Result<GradSet<T>> {
    let first = masked.first().ok_or_else(|| Error::protocol("no masked updates"))?;
    let present: BTreeSet<u32> = masked.iter().map(|m| m.client_id).collect();
    if present.len() != masked.len() {
        return Err(Error::protocol("duplicate masked update"));
    }
    if &present != cohort {
        let missing: Vec<_> = cohort.difference(&present).collect();
        return Err(Error::protocol(format!(
            "secure aggregation needs the full cohort; missing {missing:?}, unexpected {:?}",
            present.difference(cohort).collect::<Vec<_>>()
        )));
    }
    for m in masked {
        if m.round != first.round || !m.params.same_layout(&first.params) {
            return Err(Error::protocol(format!("masked update of client {} does not match the cohort", m.client_id)));
        }
    }
    let weight_sum: u64 = masked.iter().map(|m| m.weight).sum();
    if weight_sum != total_weight || total_weight == 0 {
        return Err(Error::protocol(format!(
            "total weight {total_weight} does not match the cohort's {weight_sum}"
        )));
    }
    let denom = scale * total_weight as f64;
    let mut out = GradSet::new();
    for (layer, name, t) in first.params.iter() {
        let mut acc = vec![0u64; t.numel()];
        for m in masked {
            for (a, &v) in acc.iter_mut().zip(m.params.get(layer, name).data()) {
                *a = a.wrapping_add(v);
            }
        }
        let data = acc.into_iter().map(|a| T::from_f64(a as i64 as f64 / denom)).collect();
        out.insert(layer, name, Tensor::from_vec(t.shape().to_vec(), data)?);
    }
    Ok(out)
}
