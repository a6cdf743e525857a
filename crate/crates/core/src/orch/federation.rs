use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fed::{
    aggregate, apply_update, local_update, make_partition, mask_update, secure_aggregate, LayerPartition, LocalContext,
    LocalResult, LocalSeeds, PairSeeds,
};
use crate::nn::params::Group;
use crate::nn::{attach_head, OptimizerState, ParamSet, Sample};
use crate::orch::config::FederationConfig;
use crate::orch::eval::{evaluate_params, mean_metrics};
use crate::orch::history::{History, RoundMetrics};
use crate::rng::{derive_seed, rng_from_seed, round_index, shuffle, Role};
use crate::wire::{decode_update, encode_update, model_frame_len};

/// Seed of the fresh task head attached to a backbone.
pub fn head_seed(master: u64) -> u64 {
    derive_seed(master, Role::Init, 1)
}

/// Shuffle and noise streams of client `i` in round `r`.
pub fn local_seeds(master: u64, round: u32, client: u32) -> LocalSeeds {
    LocalSeeds {
        shuffle: derive_seed(master, Role::Client, round_index(round, client)),
        noise: derive_seed(master, Role::Dp, round_index(round, client)),
    }
}

/// Sorted ids of the clients taking part in `round`.
pub fn sample_cohort(fc: &FederationConfig, round: u32) -> Vec<usize> {
    let m = fc.cohort_size();
    let mut ids: Vec<usize> = (0..fc.n_clients).collect();
    if m < fc.n_clients {
        let mut rng = rng_from_seed(derive_seed(fc.master_seed, Role::Client, round_index(round, u32::MAX)));
        shuffle(&mut rng, &mut ids);
        ids.truncate(m);
        ids.sort_unstable();
    }
    ids
}

pub(crate) fn frozen_checksums(p: &ParamSet<f32>, part: &LayerPartition) -> BTreeMap<usize, u64> {
    part.frozen().iter().map(|&l| (l, p.group_checksum(l).expect("frozen group present"))).collect()
}

#[derive(Debug, Default)]
struct ClientState {
    opt: OptimizerState<f32>,
    /// Private head when heads are not aggregated.
    head: Option<Group<f32>>,
    contacted: bool,
}

/// The federated round loop.
///
/// Each round samples a cohort, runs local updates (optionally in
/// parallel), encodes every upload to bytes and decodes it again, averages
/// the aggregated layers, plainly or under pairwise masks, and merges them
/// into the global model. Clients keep their optimizer moments between
/// rounds.
pub fn run_federation(
    fc: &FederationConfig,
    backbone: &ParamSet<f32>,
    clients: &[Vec<Sample>],
    test: &[Sample],
) -> Result<History> {
    fc.validate()?;
    if clients.len() != fc.n_clients {
        return Err(Error::config(format!("fed.clients is {} but {} client datasets were given", fc.n_clients, clients.len())));
    }
    if let Some(i) = clients.iter().position(Vec::is_empty) {
        return Err(Error::input(format!("client {i} has no data")));
    }
    let cfg = &fc.model;
    let dp = fc.resolved_dp()?;
    let partition = make_partition(cfg, fc.strategy)?;
    let head_id = cfg.head_id();
    let agg_ids = partition.aggregated(head_id, fc.train.head_aggregation);
    if agg_ids.is_empty() {
        return Err(Error::config("nothing to aggregate: no trainable layer is shared"));
    }
    let all_ids: BTreeSet<usize> = cfg.layer_ids().collect();
    let mut global = attach_head(backbone, cfg, head_seed(fc.master_seed))?;
    let ctx = LocalContext { cfg, partition: &partition, train: &fc.train, dp: &dp };
    let width = if fc.secure_agg { 8 } else { 4 };
    let full_upload = model_frame_len(cfg, &all_ids, width) as u64;
    let full_download = model_frame_len(cfg, &all_ids, 4) as u64;
    let delta_download = model_frame_len(cfg, &agg_ids, 4) as u64;

    let mut states: Vec<ClientState> = (0..fc.n_clients).map(|_| ClientState::default()).collect();
    let mut history = History { initial_frozen: frozen_checksums(&global, &partition), ..Default::default() };
    let (mut uplink, mut downlink) = (0u64, 0u64);

    for r in 1..=fc.rounds {
        let cohort = sample_cohort(fc, r);
        let in_cohort: BTreeSet<usize> = cohort.iter().copied().collect();
        for &i in &cohort {
            let st = &mut states[i];
            downlink += if st.contacted { delta_download } else { full_download };
            st.contacted = true;
        }

        let jobs: Vec<(usize, &mut ClientState)> =
            states.iter_mut().enumerate().filter(|(i, _)| in_cohort.contains(i)).collect();
        let global_ref = &global;
        let train_one = |(i, st): (usize, &mut ClientState)| -> Result<(usize, LocalResult<f32>)> {
            let seeds = local_seeds(fc.master_seed, r, i as u32);
            let res = match &st.head {
                Some(h) => {
                    let mut model = global_ref.clone();
                    model.insert_group(head_id, h.clone());
                    local_update(&ctx, &model, &clients[i], &mut st.opt, r, i as u32, seeds)
                }
                None => local_update(&ctx, global_ref, &clients[i], &mut st.opt, r, i as u32, seeds),
            };
            res.map(|x| (i, x)).map_err(|e| e.context(format!("round {r}, client {i}")))
        };
        let results: Vec<Result<(usize, LocalResult<f32>)>> =
            if fc.parallel { jobs.into_par_iter().map(train_one).collect() } else { jobs.into_iter().map(train_one).collect() };

        let mut updates = Vec::with_capacity(cohort.len());
        let mut loss_sum = 0.0;
        for res in results {
            let (i, out) = res?;
            loss_sum += out.mean_loss;
            let mut u = out.update;
            if !fc.train.head_aggregation {
                states[i].head = u.params.group(head_id).cloned();
            }
            u.params = u.params.restrict(&agg_ids);
            updates.push(u);
        }

        let round_err = |e: Error| e.context(format!("round {r}"));
        let mut round_up = 0u64;
        let agg = if fc.secure_agg {
            let ids: BTreeSet<u32> = cohort.iter().map(|&i| i as u32).collect();
            let seeds = PairSeeds::derive(fc.master_seed, r, &ids);
            let total: u64 = updates.iter().map(|u| u.weight).sum();
            let mut received = Vec::with_capacity(updates.len());
            for u in &updates {
                let bytes = encode_update(&mask_update(u, &seeds, fc.secagg_scale).map_err(round_err)?);
                round_up += bytes.len() as u64;
                received.push(decode_update::<u64>(&bytes).map_err(round_err)?);
            }
            secure_aggregate::<f32>(&received, &ids, total, fc.secagg_scale).map_err(round_err)?
        } else {
            let mut received = Vec::with_capacity(updates.len());
            for u in &updates {
                let bytes = encode_update(u);
                round_up += bytes.len() as u64;
                received.push(decode_update::<f32>(&bytes).map_err(round_err)?);
            }
            aggregate(&received).map_err(round_err)?
        };
        uplink += round_up;
        global = apply_update(&global, &agg, &agg_ids).map_err(round_err)?;

        if fc.is_evaluated(r) {
            let metrics = if fc.train.head_aggregation {
                evaluate_params(cfg, &global, test)?
            } else {
                let mut each = Vec::with_capacity(fc.n_clients);
                for st in &states {
                    let mut model = global.clone();
                    if let Some(h) = &st.head {
                        model.insert_group(head_id, h.clone());
                    }
                    each.push(evaluate_params(cfg, &model, test)?);
                }
                mean_metrics(&each)
            };
            history.rounds.push(RoundMetrics {
                round: r,
                metrics,
                uplink_bytes: uplink,
                downlink_bytes: downlink,
                comm_fraction: round_up as f64 / (full_upload * cohort.len() as u64) as f64,
                loss: loss_sum / cohort.len() as f64,
            });
            history.frozen_checksums.push(frozen_checksums(&global, &partition));
        }
    }
    history.final_params = Some(global);
    Ok(history)
}
