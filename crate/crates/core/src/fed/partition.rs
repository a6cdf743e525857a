use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::nn::ModelConfig;

/// How layers are split into frozen and trainable sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Train the top `k` blocks and the head; embeddings and the remaining
    /// blocks stay frozen.
    TopK(usize),
    /// Everything trainable (full-model FedAvg).
    All,
}

/// Frozen/trainable split of the layer ids `0..=L+1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPartition {
    trainable: BTreeSet<usize>,
    frozen: BTreeSet<usize>,
}

impl LayerPartition {
    /// Builds a partition from an explicit trainable set, checking that the
    /// head is included and every id exists.
    pub fn from_trainable(cfg: &ModelConfig, trainable: BTreeSet<usize>) -> Result<Self> {
        let head = cfg.head_id();
        if !trainable.contains(&head) {
            return Err(Error::config("the task head must be trainable"));
        }
        if let Some(&bad) = trainable.iter().find(|&&l| l > head) {
            return Err(Error::config(format!("layer id {bad} does not exist")));
        }
        let frozen = cfg.layer_ids().filter(|l| !trainable.contains(l)).collect();
        Ok(Self { trainable, frozen })
    }

    pub fn trainable(&self) -> &BTreeSet<usize> {
        &self.trainable
    }

    pub fn frozen(&self) -> &BTreeSet<usize> {
        &self.frozen
    }

    pub fn is_trainable(&self, layer: usize) -> bool {
        self.trainable.contains(&layer)
    }

    /// The ids clients upload and the server averages. With head
    /// aggregation off the head stays on the client.
    pub fn aggregated(&self, head_id: usize, head_aggregation: bool) -> BTreeSet<usize> {
        self.trainable.iter().copied().filter(|&l| head_aggregation || l != head_id).collect()
    }
}

pub fn make_partition(cfg: &ModelConfig, strategy: Strategy) -> Result<LayerPartition> {
    cfg.validate()?;
    let l = cfg.n_blocks;
    let trainable = match strategy {
        Strategy::TopK(k) if k > l => {
            return Err(Error::config(format!("top_k({k}) exceeds the {l} available blocks")))
        }
        Strategy::TopK(k) => (l - k + 1..=l + 1).collect(),
        Strategy::All => cfg.layer_ids().collect(),
    };
    LayerPartition::from_trainable(cfg, trainable)
}
