//! Protocol-level properties of local training, DP-SGD and masked aggregation.

use std::collections::BTreeSet;

use fedskip::fed::{
    aggregate, apply_update, dp_privatize, local_update, make_partition, mask_update, secure_aggregate, DpConfig,
    LocalContext, LocalSeeds, PairSeeds, Strategy, TrainConfig, DEFAULT_SCALE,
};
use fedskip::nn::{init_params, AdamWConfig, GradSet, ModelConfig, OptimizerState, Sample, Target, Task, Tensor};
use fedskip::rng::{index, rng_from_seed};

fn cfg() -> ModelConfig {
    ModelConfig { vocab_size: 17, d_model: 8, n_heads: 2, n_blocks: 4, d_ff: 16, max_seq_len: 8, task: Task::Tagging { types: 2 } }
}

fn data(seed: u64, n: usize) -> Vec<Sample> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let len = 3 + index(&mut rng, 5);
            Sample {
                tokens: (0..len).map(|_| index(&mut rng, 17) as u32).collect(),
                target: Target::PerToken((0..len).map(|_| Some(index(&mut rng, 5) as u32)).collect()),
            }
        })
        .collect()
}

fn train() -> TrainConfig {
    TrainConfig { adamw: AdamWConfig { lr: 1e-2, ..Default::default() }, local_epochs: 2, batch_size: 4, head_aggregation: true }
}

#[test]
fn frozen_groups_survive_rounds_bit_for_bit() {
    let c = cfg();
    let part = make_partition(&c, Strategy::TopK(1)).unwrap();
    let mut global = init_params::<f32>(&c, 3).unwrap();
    let before: Vec<u64> = part.frozen().iter().map(|&l| global.group_checksum(l).unwrap()).collect();
    let head_before = global.group_checksum(c.head_id()).unwrap();
    let tc = train();
    let dp = DpConfig::default();
    let ctx = LocalContext { cfg: &c, partition: &part, train: &tc, dp: &dp };
    let mut opts: Vec<OptimizerState<f32>> = (0..3).map(|_| OptimizerState::default()).collect();
    for round in 1..=3u32 {
        let mut ups = Vec::new();
        for (i, opt) in opts.iter_mut().enumerate() {
            let seeds = LocalSeeds { shuffle: round as u64 * 10 + i as u64, noise: 0 };
            let r = local_update(&ctx, &global, &data(i as u64, 9 + i), opt, round, i as u32, seeds).unwrap();
            assert_eq!(r.update.params.layer_ids(), *part.trainable());
            ups.push(r.update);
        }
        let agg = aggregate(&ups).unwrap();
        global = apply_update(&global, &agg, part.trainable()).unwrap();
    }
    let after: Vec<u64> = part.frozen().iter().map(|&l| global.group_checksum(l).unwrap()).collect();
    assert_eq!(before, after);
    assert_ne!(head_before, global.group_checksum(c.head_id()).unwrap());
}

#[test]
fn dp_with_zero_noise_and_no_clipping_is_plain_training() {
    let c = cfg();
    let part = make_partition(&c, Strategy::TopK(2)).unwrap();
    let global = init_params::<f32>(&c, 5).unwrap();
    let tc = train();
    let d = data(8, 11);
    let seeds = LocalSeeds { shuffle: 1, noise: 2 };
    let plain = DpConfig::default();
    let degenerate = DpConfig { enabled: true, clip_norm: f64::INFINITY, noise_multiplier: 0.0, ..Default::default() };
    let run = |dp: &DpConfig| {
        let ctx = LocalContext { cfg: &c, partition: &part, train: &tc, dp };
        let mut opt = OptimizerState::default();
        local_update(&ctx, &global, &d, &mut opt, 1, 0, seeds).unwrap()
    };
    let (a, b) = (run(&plain), run(&degenerate));
    for ((_, _, x), (_, _, y)) in a.update.params.iter().zip(b.update.params.iter()) {
        let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(xb, yb);
    }
    assert_eq!(a.mean_loss.to_bits(), b.mean_loss.to_bits());
}

#[test]
fn noise_std_matches_sigma_clip_over_batch() {
    let (sigma, clip, batch) = (2.0, 1.0, 4usize);
    let zero = || {
        let mut g = GradSet::<f64>::new();
        g.insert(1, "wq", Tensor::from_vec(vec![1000], vec![0.0; 1000]).unwrap());
        g
    };
    let per: Vec<GradSet<f64>> = (0..batch).map(|_| zero()).collect();
    let mut rng = rng_from_seed(77);
    let (mut n, mut s1, mut s2) = (0usize, 0.0, 0.0);
    for _ in 0..100 {
        let g = dp_privatize(&per, clip, sigma, &mut rng).unwrap();
        for &v in g.get(1, "wq").data() {
            n += 1;
            s1 += v;
            s2 += v * v;
        }
    }
    assert_eq!(n, 100_000);
    let mean = s1 / n as f64;
    let std = (s2 / n as f64 - mean * mean).sqrt();
    let want = sigma * clip / batch as f64;
    assert!((std / want - 1.0).abs() < 0.03, "std {std} vs {want}");
}

#[test]
fn masked_words_look_uniform() {
    let c = cfg();
    let params = init_params::<f64>(&c, 1).unwrap().restrict(&BTreeSet::from([2, 3]));
    let cohort: BTreeSet<u32> = (0..4).collect();
    let seeds = PairSeeds::derive(9, 1, &cohort);
    let u = fedskip::fed::ClientUpdate { round: 1, client_id: 0, weight: 3, params };
    let m = mask_update(&u, &seeds, DEFAULT_SCALE).unwrap();
    let words: Vec<u64> = m.params.iter().flat_map(|(_, _, t)| t.data().to_vec()).collect();
    // Bit balance per position; a plain fixed-point encoding leaves high bits constant.
    for bit in 0..64 {
        let ones = words.iter().filter(|w| (*w >> bit) & 1 == 1).count() as f64;
        let frac = ones / words.len() as f64;
        assert!((frac - 0.5).abs() < 0.06, "bit {bit}: {frac} over {}", words.len());
    }
}

#[test]
fn secure_matches_plain_within_quantization_bound() {
    let c = cfg();
    let ids = BTreeSet::from([3, 4, 5]);
    let cohort: BTreeSet<u32> = (0..5).collect();
    let ups: Vec<_> = cohort
        .iter()
        .map(|&i| fedskip::fed::ClientUpdate {
            round: 2,
            client_id: i,
            weight: 1 + i as u64 * 7,
            params: init_params::<f64>(&c, 40 + i as u64).unwrap().restrict(&ids),
        })
        .collect();
    let seeds = PairSeeds::derive(1, 2, &cohort);
    let masked: Vec<_> = ups.iter().map(|u| mask_update(u, &seeds, DEFAULT_SCALE).unwrap()).collect();
    let total: u64 = ups.iter().map(|u| u.weight).sum();
    let sec = secure_aggregate::<f64>(&masked, &cohort, total, DEFAULT_SCALE).unwrap();
    let plain = aggregate(&ups).unwrap();
    let bound = cohort.len() as f64 / (2.0 * DEFAULT_SCALE * total as f64);
    for ((_, _, a), (_, _, b)) in sec.iter().zip(plain.iter()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= bound + 1e-15, "{x} {y}");
        }
    }
}
