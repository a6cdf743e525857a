use crate::error::{Error, Result};
use crate::fed::dp::{dp_privatize, DpConfig};
use crate::fed::partition::LayerPartition;
use crate::fed::update::ClientUpdate;
use crate::nn::{adamw_step, loss_and_grads, AdamWConfig, Grads, ModelConfig, OptimizerState, ParamSet, Sample, Scalar};
use crate::rng::{rng_from_seed, shuffle};

/// Client-side training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub adamw: AdamWConfig,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Average the task head across clients (on) or keep it per client.
    pub head_aggregation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { adamw: AdamWConfig::default(), local_epochs: 3, batch_size: 8, head_aggregation: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::config("train.local_epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be >= 1"));
        }
        if !(self.adamw.lr >= 0.0) {
            return Err(Error::config("train.lr must be >= 0"));
        }
        Ok(())
    }
}

/// Everything a local update needs besides the client's own state.
#[derive(Debug, Clone, Copy)]
pub struct LocalContext<'a> {
    pub cfg: &'a ModelConfig,
    pub partition: &'a LayerPartition,
    pub train: &'a TrainConfig,
    pub dp: &'a DpConfig,
}

/// Independent seeds for batch shuffling and DP noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalSeeds {
    pub shuffle: u64,
    pub noise: u64,
}

#[derive(Debug, Clone)]
pub struct LocalResult<T> {
    /// Trained tensors of every trainable layer.
    pub update: ClientUpdate<T>,
    /// Mean minibatch loss over the local run.
    pub mean_loss: f64,
    pub steps: usize,
}

/// Runs `local_epochs` of minibatch AdamW over `data`, touching only the
/// trainable tensors.
///
/// With DP enabled every step privatizes per-example gradients before the
/// optimizer sees them. `opt` carries the client's optimizer moments across
/// calls.
#[allow(clippy::too_many_arguments)]
pub fn local_update<T: Scalar>(
    ctx: &LocalContext<'_>,
    global: &ParamSet<T>,
    data: &[Sample],
    opt: &mut OptimizerState<T>,
    round: u32,
    client_id: u32,
    seeds: LocalSeeds,
) -> Result<LocalResult<T>> {
    if data.is_empty() {
        return Err(Error::input(format!("client {client_id} has no training data")));
    }
    ctx.train.validate()?;
    if ctx.dp.enabled {
        ctx.dp.validate()?;
    }
    let trainable = ctx.partition.trainable();
    let mut params = global.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = rng_from_seed(seeds.shuffle);
    let mut noise_rng = rng_from_seed(seeds.noise);
    let mut loss_sum = 0.0;
    let mut steps = 0;
    let mut batch = Vec::with_capacity(ctx.train.batch_size);
    for _ in 0..ctx.train.local_epochs {
        shuffle(&mut shuffle_rng, &mut order);
        for chunk in order.chunks(ctx.train.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let out = loss_and_grads(ctx.cfg, &params, trainable, &batch, ctx.dp.enabled)?;
            let grads = match out.grads {
                Grads::Batch(g) => g,
                Grads::PerExample(each) => {
                    dp_privatize(&each, ctx.dp.clip_norm, ctx.dp.noise_multiplier, &mut noise_rng)?
                }
            };
            adamw_step(opt, &mut params, &grads, &ctx.train.adamw)?;
            loss_sum += out.loss;
            steps += 1;
        }
    }
    let update = ClientUpdate {
        round,
        client_id,
        weight: data.len() as u64,
        params: params.restrict(trainable),
    };
    Ok(LocalResult { update, mean_loss: loss_sum / steps as f64, steps })
}
