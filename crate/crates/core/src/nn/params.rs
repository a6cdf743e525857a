//! Parameter layout.
//!
//! Layer ids: `0` holds the token and positional embeddings, `1..=L` the
//! transformer blocks, and `L + 1` the task head (final norm + output
//! projection). Gradients, optimizer moments, and client updates all reuse
//! the same keyed container restricted to a subset of ids.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::nn::config::ModelConfig;
use crate::nn::tensor::{Element, Scalar, Tensor};
use crate::rng::{rng_from_seed, standard_normal};

pub const TOK_EMB: &str = "tok_emb";
pub const POS_EMB: &str = "pos_emb";
pub const ATTN_NORM: &str = "attn_norm";
pub const WQ: &str = "wq";
pub const WK: &str = "wk";
pub const WV: &str = "wv";
pub const WO: &str = "wo";
pub const FFN_NORM: &str = "ffn_norm";
pub const W_GATE: &str = "w_gate";
pub const W_UP: &str = "w_up";
pub const W_DOWN: &str = "w_down";
pub const FINAL_NORM: &str = "final_norm";
pub const W_OUT: &str = "w_out";

/// Every tensor name the model can produce.
pub const ALL_NAMES: [&str; 13] = [
    TOK_EMB, POS_EMB, ATTN_NORM, WQ, WK, WV, WO, FFN_NORM, W_GATE, W_UP, W_DOWN, FINAL_NORM, W_OUT,
];

/// Linear weight matrices get decoupled weight decay; norm gains and
/// embeddings do not.
pub fn is_decayed(name: &str) -> bool {
    matches!(name, WQ | WK | WV | WO | W_GATE | W_UP | W_DOWN | W_OUT)
}

pub type Group<E> = BTreeMap<String, Tensor<E>>;

/// Tensors keyed by layer id, then by name.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensors<E> {
    groups: BTreeMap<usize, Group<E>>,
}

/// Full model parameters.
pub type ParamSet<T> = LayerTensors<T>;
/// Gradients (or trainable parameters) for a subset of layer ids.
pub type GradSet<T> = LayerTensors<T>;

impl<E> Default for LayerTensors<E> {
    fn default() -> Self {
        Self { groups: BTreeMap::new() }
    }
}

impl<E: Copy> LayerTensors<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, layer: usize, name: &str, t: Tensor<E>) {
        self.groups.entry(layer).or_default().insert(name.to_string(), t);
    }

    pub fn insert_group(&mut self, layer: usize, group: Group<E>) {
        self.groups.insert(layer, group);
    }

    pub fn remove_group(&mut self, layer: usize) -> Option<Group<E>> {
        self.groups.remove(&layer)
    }

    pub fn group(&self, layer: usize) -> Option<&Group<E>> {
        self.groups.get(&layer)
    }

    pub fn group_mut(&mut self, layer: usize) -> Option<&mut Group<E>> {
        self.groups.get_mut(&layer)
    }

    pub fn groups(&self) -> &BTreeMap<usize, Group<E>> {
        &self.groups
    }

    pub fn contains(&self, layer: usize) -> bool {
        self.groups.contains_key(&layer)
    }

    /// Panics if the tensor is missing; layouts are fixed by the config, so
    /// a miss is a programming error.
    pub fn get(&self, layer: usize, name: &str) -> &Tensor<E> {
        self.try_get(layer, name)
            .unwrap_or_else(|| panic!("missing tensor {name} in layer {layer}"))
    }

    pub fn try_get(&self, layer: usize, name: &str) -> Option<&Tensor<E>> {
        self.groups.get(&layer).and_then(|g| g.get(name))
    }

    pub fn get_mut(&mut self, layer: usize, name: &str) -> &mut Tensor<E> {
        self.groups
            .get_mut(&layer)
            .and_then(|g| g.get_mut(name))
            .unwrap_or_else(|| panic!("missing tensor {name} in layer {layer}"))
    }

    pub fn layer_ids(&self) -> BTreeSet<usize> {
        self.groups.keys().copied().collect()
    }

    /// Iterates `(layer, name, tensor)` in canonical (layer, name) order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &str, &Tensor<E>)> {
        self.groups
            .iter()
            .flat_map(|(&l, g)| g.iter().map(move |(n, t)| (l, n.as_str(), t)))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (usize, &str, &mut Tensor<E>)> {
        self.groups
            .iter_mut()
            .flat_map(|(&l, g)| g.iter_mut().map(move |(n, t)| (l, n.as_str(), t)))
    }

    /// Clone of the groups whose ids are in `ids`.
    pub fn restrict(&self, ids: &BTreeSet<usize>) -> Self {
        Self {
            groups: self
                .groups
                .iter()
                .filter(|(l, _)| ids.contains(l))
                .map(|(&l, g)| (l, g.clone()))
                .collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.iter().map(|(_, _, t)| t.numel()).sum()
    }

    /// True when both sides have the same ids, names, and shapes.
    pub fn same_layout<F: Copy>(&self, other: &LayerTensors<F>) -> bool {
        self.groups.len() == other.groups.len()
            && self.groups.iter().zip(other.groups.iter()).all(|((la, ga), (lb, gb))| {
                la == lb
                    && ga.len() == gb.len()
                    && ga
                        .iter()
                        .zip(gb.iter())
                        .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
            })
    }

    pub fn map<F: Copy>(&self, mut f: impl FnMut(&Tensor<E>) -> Tensor<F>) -> LayerTensors<F> {
        let mut groups = BTreeMap::new();
        for (&l, g) in &self.groups {
            groups.insert(l, g.iter().map(|(n, t)| (n.clone(), f(t))).collect());
        }
        LayerTensors { groups }
    }
}

impl<E: Element> LayerTensors<E> {
    pub fn group_checksum(&self, layer: usize) -> Option<u64> {
        self.groups.get(&layer).map(|g| {
            g.values().fold(0u64, |acc, t| acc.rotate_left(7) ^ t.checksum())
        })
    }
}

impl<T: Scalar> LayerTensors<T> {
    pub fn zeros_like(&self) -> Self {
        self.map(Tensor::zeros_like)
    }

    pub fn add_assign(&mut self, other: &Self) {
        for ((_, _, a), (_, _, b)) in self.iter_mut().zip(other.iter()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for (_, _, t) in self.iter_mut() {
            t.scale(s);
        }
    }

    /// Global L2 norm over all tensors, accumulated in f64.
    pub fn l2_norm(&self) -> f64 {
        self.iter().map(|(_, _, t)| t.sum_sq()).sum::<f64>().sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> LayerTensors<U> {
        self.map(Tensor::cast)
    }
}

/// Shape of every tensor, per layer id, in canonical order.
pub fn shape_table(cfg: &ModelConfig) -> Vec<(usize, &'static str, Vec<usize>)> {
    let (v, d, f, s) = (cfg.vocab_size, cfg.d_model, cfg.d_ff, cfg.max_seq_len);
    let mut out = vec![(0, TOK_EMB, vec![v, d]), (0, POS_EMB, vec![s, d])];
    for b in 1..=cfg.n_blocks {
        out.extend([
            (b, ATTN_NORM, vec![d]),
            (b, WQ, vec![d, d]),
            (b, WK, vec![d, d]),
            (b, WV, vec![d, d]),
            (b, WO, vec![d, d]),
            (b, FFN_NORM, vec![d]),
            (b, W_GATE, vec![d, f]),
            (b, W_UP, vec![d, f]),
            (b, W_DOWN, vec![f, d]),
        ]);
    }
    let h = cfg.head_id();
    out.push((h, FINAL_NORM, vec![d]));
    out.push((h, W_OUT, vec![d, cfg.n_outputs()]));
    out
}

pub fn param_count(cfg: &ModelConfig) -> usize {
    shape_table(cfg).iter().map(|(_, _, s)| s.iter().product::<usize>()).sum()
}

const EMBED_STD: f64 = 0.3;

fn init_tensor<T: Scalar>(
    name: &str,
    shape: Vec<usize>,
    cfg: &ModelConfig,
    rng: &mut crate::rng::Rng,
) -> Tensor<T> {
    match name {
        ATTN_NORM | FFN_NORM | FINAL_NORM => Tensor::filled(shape, T::one()),
        _ => {
            let fan_in = (cfg.d_model as f64).powf(-0.5);
            let std = match name {
                TOK_EMB | POS_EMB => EMBED_STD,
                // Output projections shrink with depth so the embeddings stay
                // visible in the residual stream.
                WO | W_DOWN => fan_in / ((2 * cfg.n_blocks) as f64).sqrt(),
                _ => fan_in,
            };
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| T::from_f64(std * standard_normal(rng))).collect();
            Tensor::from_vec(shape, data).expect("shape matches")
        }
    }
}

/// Deterministic parameter initialization.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamSet<T>> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut p = ParamSet::new();
    for (layer, name, shape) in shape_table(cfg) {
        let t = init_tensor(name, shape, cfg, &mut rng);
        p.insert(layer, name, t);
    }
    Ok(p)
}

/// Fresh head group for `cfg`, independent of the backbone's init stream.
pub fn init_head<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Group<T>> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let h = cfg.head_id();
    let mut g = Group::new();
    for (layer, name, shape) in shape_table(cfg) {
        if layer == h {
            g.insert(name.to_string(), init_tensor(name, shape, cfg, &mut rng));
        }
    }
    Ok(g)
}

/// Replaces the head of `backbone` (for instance an MLM head) with a fresh
/// head for the task in `cfg`.
pub fn attach_head<T: Scalar>(
    backbone: &ParamSet<T>,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<ParamSet<T>> {
    let h = cfg.head_id();
    let mut p = backbone.clone();
    p.remove_group(h);
    p.insert_group(h, init_head(cfg, seed)?);
    check_layout(cfg, &p)?;
    Ok(p)
}

/// Verifies that `p` has exactly the ids, names, and shapes `cfg` implies.
pub fn check_layout<E: Copy>(cfg: &ModelConfig, p: &LayerTensors<E>) -> Result<()> {
    let table = shape_table(cfg);
    let expected: usize = table.len();
    let found = p.iter().count();
    if found != expected {
        return Err(Error::config(format!("expected {expected} tensors, found {found}")));
    }
    for (layer, name, shape) in table {
        match p.try_get(layer, name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => {
                return Err(Error::config(format!(
                    "tensor {name} of layer {layer} has shape {:?}, expected {shape:?}",
                    t.shape()
                )))
            }
            None => return Err(Error::config(format!("missing tensor {name} of layer {layer}"))),
        }
    }
    Ok(())
}
