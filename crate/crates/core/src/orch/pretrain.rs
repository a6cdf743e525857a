use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::nn::{adamw_step, batch_loss, init_params, loss_and_grads, AdamWConfig, Grads, ModelConfig, OptimizerState, ParamSet, Sample, Target, Task};
use crate::rng::{derive_seed, index, rng_from_seed, shuffle, uniform, Rng, Role};

/// Share of positions selected as prediction targets.
pub const MASK_RATE: f64 = 0.15;

/// Settings of the masked-token pretraining stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adamw: AdamWConfig,
    pub mask_id: u32,
}

/// Selects about 15% of positions (at least one) as targets. A selected
/// input becomes the mask token with probability 0.8, a random token with
/// probability 0.1, and stays as is otherwise.
pub fn mask_sequence(tokens: &[u32], mask_id: u32, rng: &mut Rng) -> Sample {
    let mut input = tokens.to_vec();
    let mut target = vec![None; tokens.len()];
    for i in 0..tokens.len() {
        if uniform(rng) < MASK_RATE {
            let u = uniform(rng);
            if u < 0.8 {
                input[i] = mask_id;
            } else if u < 0.9 {
                input[i] = index(rng, mask_id as usize) as u32;
            }
            target[i] = Some(tokens[i]);
        }
    }
    if target.iter().all(Option::is_none) {
        let i = index(rng, tokens.len());
        input[i] = mask_id;
        target[i] = Some(tokens[i]);
    }
    Sample { tokens: input, target: Target::PerToken(target) }
}

/// Mean MLM loss on `corpus` under masks fixed by `seed`.
pub fn mlm_eval_loss(cfg: &ModelConfig, params: &ParamSet<f32>, corpus: &[Vec<u32>], mask_id: u32, seed: u64) -> Result<f64> {
    let mut rng = rng_from_seed(seed);
    let batch: Vec<Sample> = corpus.iter().map(|s| mask_sequence(s, mask_id, &mut rng)).collect();
    batch_loss(cfg, params, &batch)
}

/// Masked-token training of every layer, head included.
pub fn run_pretraining_full(cfg: &ModelConfig, corpus: &[Vec<u32>], pc: &PretrainConfig, seed: u64) -> Result<ParamSet<f32>> {
    if cfg.task != Task::Mlm {
        return Err(Error::config("pretraining needs model.task = mlm"));
    }
    if corpus.is_empty() {
        return Err(Error::input("empty pretraining corpus"));
    }
    if pc.batch_size == 0 {
        return Err(Error::config("pretrain.batch_size must be >= 1"));
    }
    if (pc.mask_id as usize) >= cfg.vocab_size {
        return Err(Error::config("mask id must be inside the model vocabulary"));
    }
    let mut params = init_params::<f32>(cfg, seed)?;
    let all: BTreeSet<usize> = cfg.layer_ids().collect();
    let mut opt = OptimizerState::default();
    let mut rng = rng_from_seed(derive_seed(seed, Role::Data, u64::from_le_bytes(*b"pretrain")));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut cursor = order.len();
    for _ in 0..pc.steps {
        let mut batch = Vec::with_capacity(pc.batch_size);
        while batch.len() < pc.batch_size {
            if cursor == order.len() {
                shuffle(&mut rng, &mut order);
                cursor = 0;
            }
            batch.push(mask_sequence(&corpus[order[cursor]], pc.mask_id, &mut rng));
            cursor += 1;
        }
        let Grads::Batch(g) = loss_and_grads(cfg, &params, &all, &batch, false)?.grads else {
            return Err(Error::internal("expected batch gradients"));
        };
        adamw_step(&mut opt, &mut params, &g, &pc.adamw)?;
    }
    Ok(params)
}

/// Pretrained backbone (embeddings and blocks) with the MLM head removed.
pub fn run_pretraining(cfg: &ModelConfig, corpus: &[Vec<u32>], pc: &PretrainConfig, seed: u64) -> Result<ParamSet<f32>> {
    let mut p = run_pretraining_full(cfg, corpus, pc, seed)?;
    p.remove_group(cfg.head_id());
    Ok(p)
}
