//! Non-IID client partitioning with a Dirichlet prior over example types.

use rand_distr::{Distribution, Gamma};

use crate::data::grammar::{tag_type, MultilabelExample, TaggingExample};
use crate::error::{Error, Result};
use crate::rng::{index, rng_from_seed, uniform, Rng};

/// An example with a dominant type, used to skew client distributions.
pub trait Typed {
    /// Type with the most mentions (lowest id on ties), `None` without any.
    fn dominant_type(&self) -> Option<usize>;
}

fn argmax_count(counts: &[u32]) -> Option<usize> {
    let mut best: Option<(usize, u32)> = None;
    for (k, &c) in counts.iter().enumerate() {
        if c > 0 && best.is_none_or(|(_, b)| c > b) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k)
}

impl Typed for TaggingExample {
    fn dominant_type(&self) -> Option<usize> {
        let n = self.tags.iter().filter_map(|&t| tag_type(t)).max().map_or(0, |k| k + 1);
        let mut counts = vec![0u32; n];
        for k in self.tags.iter().filter_map(|&t| tag_type(t)) {
            counts[k] += 1;
        }
        argmax_count(&counts)
    }
}

impl Typed for MultilabelExample {
    fn dominant_type(&self) -> Option<usize> {
        argmax_count(&self.mentions)
    }
}

/// One client's share of the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset<X> {
    pub client_id: u32,
    pub examples: Vec<X>,
    /// Examples per dominant type; the last bin counts examples without one.
    pub histogram: Vec<usize>,
}

/// Histogram over dominant types with `n_types + 1` bins.
pub fn type_histogram<X: Typed>(data: &[X], n_types: usize) -> Vec<usize> {
    let mut h = vec![0; n_types + 1];
    for x in data {
        h[x.dominant_type().unwrap_or(n_types).min(n_types)] += 1;
    }
    h
}

fn sample_dirichlet(rng: &mut Rng, conc: &[f64]) -> Vec<f64> {
    let mut q: Vec<f64> = conc
        .iter()
        .map(|&a| if a > 0.0 { Gamma::new(a, 1.0).expect("positive shape").sample(rng) } else { 0.0 })
        .collect();
    let s: f64 = q.iter().sum();
    if s > 0.0 {
        q.iter_mut().for_each(|v| *v /= s);
    }
    q
}

fn pick(rng: &mut Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let u = uniform(rng) * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).expect("some positive weight")
}

/// Splits `data` into `n_clients` disjoint datasets of near-equal size.
///
/// Client `i` draws type proportions `q_i ~ Dirichlet(alpha * B * p)`,
/// where `p` is the global dominant-type distribution over its `B`
/// nonempty bins, so `q_i` has mean `p` and approaches it as `alpha`
/// grows. Slots are then filled round-robin: each slot picks a type with
/// probability proportional to `q_i` among types with examples left, and
/// takes a uniformly random remaining example of that type.
pub fn partition_clients<X: Typed + Clone>(
    data: &[X],
    n_types: usize,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<ClientDataset<X>>> {
    if n_clients == 0 {
        return Err(Error::config("need at least one client"));
    }
    if n_clients > data.len() {
        return Err(Error::config(format!("{n_clients} clients but only {} examples", data.len())));
    }
    if !(alpha > 0.0) {
        return Err(Error::config("dirichlet alpha must be > 0"));
    }
    let bins = n_types + 1;
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for (i, x) in data.iter().enumerate() {
        pools[x.dominant_type().unwrap_or(n_types).min(n_types)].push(i);
    }
    let nonempty = pools.iter().filter(|p| !p.is_empty()).count() as f64;
    let conc: Vec<f64> = pools.iter().map(|p| alpha * nonempty * p.len() as f64 / data.len() as f64).collect();
    let mut rng = rng_from_seed(seed);
    let q: Vec<Vec<f64>> = (0..n_clients).map(|_| sample_dirichlet(&mut rng, &conc)).collect();

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for slot in 0..data.len() {
        let c = slot % n_clients;
        let mut w: Vec<f64> = (0..bins).map(|b| if pools[b].is_empty() { 0.0 } else { q[c][b] }).collect();
        if w.iter().sum::<f64>() <= 0.0 {
            w = pools.iter().map(|p| p.len() as f64).collect();
        }
        let b = pick(&mut rng, &w);
        let j = index(&mut rng, pools[b].len());
        assigned[c].push(pools[b].swap_remove(j));
    }
    Ok(assigned
        .into_iter()
        .enumerate()
        .map(|(c, idx)| {
            let examples: Vec<X> = idx.into_iter().map(|i| data[i].clone()).collect();
            let histogram = type_histogram(&examples, n_types);
            ClientDataset { client_id: c as u32, examples, histogram }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::grammar::{gen_tagging, GrammarConfig};

    fn grammar() -> GrammarConfig {
        GrammarConfig { type_weights: vec![3.0, 2.0, 1.0], ..Default::default() }
    }

    #[test]
    fn conserves_the_multiset() {
        let data = gen_tagging(1, 503, &grammar()).unwrap();
        let parts = partition_clients(&data, 3, 7, 0.5, 2).unwrap();
        let sizes: Vec<usize> = parts.iter().map(|p| p.examples.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 503);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut before = data.clone();
        let mut after: Vec<_> = parts.iter().flat_map(|p| p.examples.clone()).collect();
        before.sort_by(|a, b| a.tokens.cmp(&b.tokens).then(a.tags.cmp(&b.tags)));
        after.sort_by(|a, b| a.tokens.cmp(&b.tokens).then(a.tags.cmp(&b.tags)));
        assert_eq!(before, after);
        for p in &parts {
            assert_eq!(p.histogram, type_histogram(&p.examples, 3));
        }
    }

    #[test]
    fn iid_limit_tracks_global_histogram() {
        let data = gen_tagging(3, 100_000, &grammar()).unwrap();
        let global = type_histogram(&data, 3);
        let n = data.len() as f64;
        for p in partition_clients(&data, 3, 5, 1e6, 4).unwrap() {
            let m = p.examples.len() as f64;
            for (g, c) in global.iter().zip(&p.histogram) {
                let (gf, cf) = (*g as f64 / n, *c as f64 / m);
                let tol = if gf >= 0.05 { 0.05 * gf } else { 0.0025 };
                assert!((gf - cf).abs() < tol, "{gf} vs {cf}");
            }
        }
    }

    #[test]
    fn strong_skew_concentrates_some_client() {
        let data = gen_tagging(5, 2000, &grammar()).unwrap();
        for seed in 0..3 {
            let parts = partition_clients(&data, 3, 10, 0.1, seed).unwrap();
            let top = parts
                .iter()
                .map(|p| *p.histogram.iter().max().unwrap() as f64 / p.examples.len() as f64)
                .fold(0.0, f64::max);
            assert!(top > 0.6, "seed {seed}: {top}");
        }
    }

    #[test]
    fn too_many_clients_is_config_error() {
        let data = gen_tagging(1, 3, &grammar()).unwrap();
        assert!(matches!(partition_clients(&data, 3, 4, 1.0, 0), Err(Error::Config(_))));
        assert!(partition_clients(&data, 3, 3, 1.0, 0).is_ok());
    }
}
