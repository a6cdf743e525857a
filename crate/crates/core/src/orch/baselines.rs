use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fed::{dp_privatize, make_partition};
use crate::nn::{adamw_step, attach_head, loss_and_grads, Grads, OptimizerState, ParamSet, Sample};
use crate::orch::config::FederationConfig;
use crate::orch::eval::{evaluate_params, mean_metrics};
use crate::orch::federation::{frozen_checksums, head_seed, local_seeds};
use crate::orch::history::{History, RoundMetrics};
use crate::rng::{rng_from_seed, shuffle};

/// Trains one model on `data` for `fc.rounds` blocks of
/// `fc.train.local_epochs` epochs, drawing the streams of `stream_id`.
fn train_alone(
    fc: &FederationConfig,
    backbone: &ParamSet<f32>,
    data: &[Sample],
    test: &[Sample],
    stream_id: u32,
    comm_fraction: f64,
) -> Result<History> {
    if data.is_empty() {
        return Err(Error::input("no training data"));
    }
    let cfg = &fc.model;
    let dp = fc.resolved_dp()?;
    let partition = make_partition(cfg, fc.strategy)?;
    let trainable = partition.trainable();
    let mut params = attach_head(backbone, cfg, head_seed(fc.master_seed))?;
    let mut history = History { initial_frozen: frozen_checksums(&params, &partition), ..Default::default() };
    let mut opt = OptimizerState::default();
    for r in 1..=fc.rounds {
        let seeds = local_seeds(fc.master_seed, r, stream_id);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut shuffle_rng = rng_from_seed(seeds.shuffle);
        let mut noise_rng = rng_from_seed(seeds.noise);
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for _ in 0..fc.train.local_epochs {
            shuffle(&mut shuffle_rng, &mut order);
            for chunk in order.chunks(fc.train.batch_size) {
                let batch: Vec<Sample> = chunk.iter().map(|&i| data[i].clone()).collect();
                let out = loss_and_grads(cfg, &params, trainable, &batch, dp.enabled)?;
                let g = match out.grads {
                    Grads::Batch(g) => g,
                    Grads::PerExample(each) => dp_privatize(&each, dp.clip_norm, dp.noise_multiplier, &mut noise_rng)?,
                };
                adamw_step(&mut opt, &mut params, &g, &fc.train.adamw)?;
                loss_sum += out.loss;
                steps += 1;
            }
        }
        if fc.is_evaluated(r) {
            history.rounds.push(RoundMetrics {
                round: r,
                metrics: evaluate_params(cfg, &params, test)?,
                uplink_bytes: 0,
                downlink_bytes: 0,
                comm_fraction,
                loss: loss_sum / steps as f64,
            });
            history.frozen_checksums.push(frozen_checksums(&params, &partition));
        }
    }
    history.final_params = Some(params);
    Ok(history)
}

/// Mini-batch training on pooled data, step for step what a one-client
/// federation does. Communication is reported as a full-model fraction.
pub fn run_centralized(fc: &FederationConfig, backbone: &ParamSet<f32>, pooled: &[Sample], test: &[Sample]) -> Result<History> {
    fc.validate()?;
    train_alone(fc, backbone, pooled, test, 0, 1.0)
}

/// Per-client histories of independent training, and their per-round mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOnly {
    pub per_client: Vec<History>,
    pub mean: History,
}

/// Every client trains alone with its own streams; nothing is communicated.
pub fn run_local_only(fc: &FederationConfig, backbone: &ParamSet<f32>, clients: &[Vec<Sample>], test: &[Sample]) -> Result<LocalOnly> {
    fc.validate()?;
    if clients.is_empty() {
        return Err(Error::input("no clients"));
    }
    let one = |(i, d): (usize, &Vec<Sample>)| train_alone(fc, backbone, d, test, i as u32, 0.0).map_err(|e| e.context(format!("client {i}")));
    let per_client: Vec<History> = if fc.parallel {
        clients.par_iter().enumerate().map(one).collect::<Result<_>>()?
    } else {
        clients.iter().enumerate().map(one).collect::<Result<_>>()?
    };
    let rounds = per_client[0]
        .rounds
        .iter()
        .enumerate()
        .map(|(j, r0)| {
            let ms: Vec<_> = per_client.iter().map(|h| h.rounds[j].metrics.clone()).collect();
            let loss = per_client.iter().map(|h| h.rounds[j].loss).sum::<f64>() / per_client.len() as f64;
            RoundMetrics { round: r0.round, metrics: mean_metrics(&ms), uplink_bytes: 0, downlink_bytes: 0, comm_fraction: 0.0, loss }
        })
        .collect();
    Ok(LocalOnly { mean: History { rounds, ..Default::default() }, per_client })
}
