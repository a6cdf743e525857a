//! Round-loop contracts: determinism, schedule independence, byte
//! accounting, freeze invariance, and baseline equivalences.

use std::collections::BTreeSet;

use fedskip::data::{evaluate_tagging, gen_corpus};
use fedskip::fed::Strategy;
use fedskip::nn::{init_params, Target};
use fedskip::orch::*;
use fedskip::wire::model_frame_len;

fn small(seed: u64) -> ExperimentConfig {
    let mut ec = desk_config(seed);
    ec.grammar.seq_len = 10;
    ec.fed.model.d_model = 16;
    ec.fed.model.n_heads = 2;
    ec.fed.model.d_ff = 32;
    ec.fed.n_clients = 4;
    ec.fed.rounds = 4;
    ec.fed.eval_every = 2;
    ec.n_pretrain = 100;
    ec.n_train = 80;
    ec.n_test = 40;
    ec.pretrain.steps = 20;
    ec
}

fn setup(ec: &ExperimentConfig) -> (Datasets, fedskip::nn::ParamSet<f32>) {
    let data = generate_datasets(ec).unwrap();
    let bb = pretrain_backbone(ec, &data.corpus).unwrap();
    (data, bb)
}

#[test]
fn identical_runs_and_schedules() {
    let mut ec = small(3);
    ec.fed.client_fraction = 0.5;
    let (data, bb) = setup(&ec);
    let a = run_mode(&ec, Mode::LayerSkip, &bb, &data).unwrap().history;
    let b = run_mode(&ec, Mode::LayerSkip, &bb, &data).unwrap().history;
    assert_eq!(a.to_csv(), b.to_csv());
    ec.fed.parallel = true;
    let c = run_mode(&ec, Mode::LayerSkip, &bb, &data).unwrap().history;
    assert_eq!(a, c);
    ec.fed.secure_agg = true;
    let s1 = run_mode(&ec, Mode::FedavgFull, &bb, &data).unwrap().history;
    ec.fed.parallel = false;
    let s2 = run_mode(&ec, Mode::FedavgFull, &bb, &data).unwrap().history;
    assert_eq!(s1, s2);
}

#[test]
fn csv_rows_match_evaluated_rounds() {
    let mut ec = small(1);
    ec.fed.rounds = 5;
    let (data, bb) = setup(&ec);
    let h = run_mode(&ec, Mode::FedavgFull, &bb, &data).unwrap().history;
    let rounds: Vec<u32> = h.rounds.iter().map(|r| r.round).collect();
    assert_eq!(rounds, vec![2, 4, 5]);
    assert_eq!(h.to_csv().lines().count(), 4);
    assert!(h.rounds.iter().all(|r| r.comm_fraction == 1.0));
}

#[test]
fn uplink_bytes_are_encoded_lengths() {
    let mut ec = small(2);
    ec.fed.eval_every = 1;
    ec.fed.client_fraction = 0.75;
    let (data, bb) = setup(&ec);
    let fc = ec.fed_for(Mode::LayerSkip);
    let h = run_mode(&ec, Mode::LayerSkip, &bb, &data).unwrap().history;
    let part = fedskip::fed::make_partition(&fc.model, fc.strategy).unwrap();
    let per_client = model_frame_len(&fc.model, part.trainable(), 4) as u64;
    let full = model_frame_len(&fc.model, &fc.model.layer_ids().collect(), 4) as u64;
    let m = fc.cohort_size() as u64;
    assert_eq!(m, 3);
    for r in &h.rounds {
        assert_eq!(r.uplink_bytes, r.round as u64 * m * per_client);
        // First contact downloads everything, later rounds the shared layers.
        let contacted: BTreeSet<usize> = (1..=r.round).flat_map(|q| sample_cohort(&fc, q)).collect();
        let visits: u64 = (1..=r.round).map(|q| sample_cohort(&fc, q).len() as u64).sum();
        let firsts = contacted.len() as u64;
        assert_eq!(r.downlink_bytes, firsts * full + (visits - firsts) * per_client);
    }
}

#[test]
fn frozen_groups_never_change() {
    let ec = small(4);
    let (data, bb) = setup(&ec);
    let h = run_mode(&ec, Mode::LayerSkip, &bb, &data).unwrap().history;
    // Top one of four blocks trains: embeddings and blocks 1-3 are frozen.
    assert_eq!(h.initial_frozen.keys().copied().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    for c in &h.frozen_checksums {
        assert_eq!(c, &h.initial_frozen);
    }
    let p = h.final_params.unwrap();
    for l in 0..4 {
        assert_eq!(p.group(l), bb.group(l));
    }
}

#[test]
fn one_client_federation_is_centralized_training() {
    let mut ec = small(5);
    ec.fed.n_clients = 1;
    ec.fed.train.local_epochs = 2;
    let (data, bb) = setup(&ec);
    for strategy in [Strategy::TopK(1), Strategy::All] {
        ec.baseline_strategy = strategy;
        ec.top_k = 1;
        let mode = if strategy == Strategy::All { Mode::FedavgFull } else { Mode::LayerSkip };
        let fed = run_mode(&ec, mode, &bb, &data).unwrap().history;
        let cen = run_mode(&ec, Mode::Centralized, &bb, &data).unwrap().history;
        assert_eq!(fed.rounds.len(), cen.rounds.len());
        for (a, b) in fed.rounds.iter().zip(&cen.rounds) {
            assert!((a.loss - b.loss).abs() < 1e-6, "{strategy:?} round {}: {} vs {}", a.round, a.loss, b.loss);
            assert!((a.metrics.micro_f1.unwrap() - b.metrics.micro_f1.unwrap()).abs() < 1e-6);
            assert!((a.metrics.macro_f1.unwrap() - b.metrics.macro_f1.unwrap()).abs() < 1e-6);
        }
        let (pa, pb) = (fed.final_params.unwrap(), cen.final_params.unwrap());
        for ((_, _, x), (_, _, y)) in pa.iter().zip(pb.iter()) {
            for (u, v) in x.data().iter().zip(y.data()) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn local_only_with_one_client_is_centralized() {
    let mut ec = small(6);
    ec.fed.n_clients = 1;
    let (data, bb) = setup(&ec);
    let a = run_mode(&ec, Mode::LocalOnly, &bb, &data).unwrap().history;
    let b = run_mode(&ec, Mode::Centralized, &bb, &data).unwrap().history;
    for (x, y) in a.rounds.iter().zip(&b.rounds) {
        assert_eq!(x.metrics.micro_f1, y.metrics.micro_f1);
        assert_eq!(x.loss, y.loss);
    }
}

#[test]
fn secure_aggregation_only_quantizes() {
    let mut ec = small(7);
    let (data, bb) = setup(&ec);
    let plain = run_mode(&ec, Mode::LayerSkip, &bb, &data).unwrap().history;
    ec.fed.secure_agg = true;
    let sec = run_mode(&ec, Mode::LayerSkip, &bb, &data).unwrap().history;
    for (a, b) in plain.rounds.iter().zip(&sec.rounds) {
        assert!((a.metrics.micro_f1.unwrap() - b.metrics.micro_f1.unwrap()).abs() < 1e-3);
        assert!(b.uplink_bytes > a.uplink_bytes);
    }
}

#[test]
fn head_local_mode_runs_and_keeps_heads_private() {
    let mut ec = small(8);
    ec.fed.train.head_aggregation = false;
    let (data, bb) = setup(&ec);
    let out = run_mode(&ec, Mode::LayerSkip, &bb, &data).unwrap();
    let fc = ec.fed_for(Mode::LayerSkip);
    let shared = model_frame_len(&fc.model, &BTreeSet::from([fc.model.n_blocks]), 4) as u64;
    let last = out.history.last().unwrap();
    assert_eq!(last.uplink_bytes, last.round as u64 * fc.n_clients as u64 * shared);
    assert!(last.metrics.micro_f1.is_some());
}

#[test]
fn centralized_beats_majority_tag() {
    let mut ec = small(9);
    ec.fed.rounds = 6;
    ec.pretrain.steps = 0;
    let (data, bb) = setup(&ec);
    let h = run_mode(&ec, Mode::Centralized, &bb, &data).unwrap().history;
    let test = data.test.to_samples();
    let gold: Vec<Vec<u32>> = test
        .iter()
        .map(|s| match &s.target {
            Target::PerToken(t) => t.iter().map(|v| v.unwrap()).collect(),
            _ => unreachable!(),
        })
        .collect();
    let n_tags = ec.grammar.n_tags();
    let mut counts = vec![0usize; n_tags];
    gold.iter().flatten().for_each(|&t| counts[t as usize] += 1);
    let major = (0..n_tags).max_by_key(|&t| counts[t]).unwrap() as u32;
    let pred: Vec<Vec<u32>> = gold.iter().map(|g| vec![major; g.len()]).collect();
    let base = evaluate_tagging(&pred, &gold, n_tags).unwrap().micro_f1.unwrap_or(0.0);
    assert!(h.final_micro_f1().unwrap() > base, "{:?} vs {base}", h.final_micro_f1());
}

#[test]
fn pretraining_contracts() {
    let ec = small(10);
    let cfg = ec.mlm_model();
    let corpus = gen_corpus(1, 200, &ec.grammar).unwrap();
    let mut pc = ec.pretrain;
    pc.steps = 0;
    let mut init = init_params::<f32>(&cfg, 77).unwrap();
    init.remove_group(cfg.head_id());
    assert_eq!(run_pretraining(&cfg, &corpus, &pc, 77).unwrap(), init);
    assert!(run_pretraining(&cfg, &[], &pc, 77).is_err());

    pc.steps = 500;
    let held = gen_corpus(2, 100, &ec.grammar).unwrap();
    let before = mlm_eval_loss(&cfg, &init_params(&cfg, 77).unwrap(), &held, pc.mask_id, 5).unwrap();
    let trained = run_pretraining_full(&cfg, &corpus, &pc, 77).unwrap();
    let after = mlm_eval_loss(&cfg, &trained, &held, pc.mask_id, 5).unwrap();
    assert!(after < before, "{after} !< {before}");
    assert_eq!(run_pretraining_full(&cfg, &corpus, &pc, 77).unwrap(), trained);
}

#[test]
fn errors_carry_context() {
    let ec = small(11);
    let (data, bb) = setup(&ec);
    let mut clients = data.client_samples();
    clients[2].clear();
    let fc = ec.fed_for(Mode::LayerSkip);
    let err = run_federation(&fc, &bb, &clients, &data.test.to_samples()).unwrap_err();
    assert!(err.to_string().contains("client 2"), "{err}");
}
