//! Forward pass, losses, and exact manual backpropagation.
//!
//! Sequences are processed one at a time; a batch loss is the mean of the
//! per-example losses, so the batch gradient is exactly the mean of the
//! per-example gradients. Backpropagation stops at the lowest trainable
//! layer: frozen blocks underneath it only run forward.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::nn::config::{ModelConfig, Task};
use crate::nn::kernels::*;
use crate::nn::params::*;
use crate::nn::tensor::{Scalar, Tensor};

/// Supervision attached to one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    /// One optional class id per position (tagging, MLM). Positions with
    /// `None` do not contribute to the loss.
    PerToken(Vec<Option<u32>>),
    /// Multi-hot labels for the whole sequence.
    Labels(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub tokens: Vec<u32>,
    pub target: Target,
}

/// Gradient output of [`loss_and_grads`].
#[derive(Debug, Clone)]
pub enum Grads<T> {
    Batch(GradSet<T>),
    PerExample(Vec<GradSet<T>>),
}

#[derive(Debug, Clone)]
pub struct LossAndGrads<T> {
    /// Mean loss over the batch.
    pub loss: f64,
    pub grads: Grads<T>,
}

fn check_tokens(cfg: &ModelConfig, tokens: &[u32]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::input("empty sequence"));
    }
    if tokens.len() > cfg.max_seq_len {
        return Err(Error::input(format!(
            "sequence length {} exceeds max_seq_len {}",
            tokens.len(),
            cfg.max_seq_len
        )));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::input(format!(
            "token id {t} out of range for vocab {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

fn check_target(cfg: &ModelConfig, s: &Sample) -> Result<()> {
    let c = cfg.n_outputs();
    match (&s.target, cfg.task) {
        (Target::PerToken(t), Task::Tagging { .. } | Task::Mlm) => {
            if t.len() != s.tokens.len() {
                return Err(Error::input("per-token target length differs from sequence"));
            }
            if t.iter().flatten().any(|&y| y as usize >= c) {
                return Err(Error::input("target class out of range"));
            }
            Ok(())
        }
        (Target::Labels(l), Task::Multilabel { .. }) if l.len() == c => Ok(()),
        _ => Err(Error::input("target kind does not match the model task")),
    }
}

/// Cached activations of one block.
struct BlockCache<T> {
    x: Vec<T>,
    r1: Vec<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Attention probabilities `[head, i, j]`.
    p: Vec<T>,
    o: Vec<T>,
    x2: Vec<T>,
    r2: Vec<T>,
    b: Vec<T>,
    g: Vec<T>,
    u: Vec<T>,
    s: Vec<T>,
    hdn: Vec<T>,
}

struct Dims {
    n: usize,
    d: usize,
    h: usize,
    hd: usize,
    f: usize,
}

fn embed<T: Scalar>(cfg: &ModelConfig, params: &ParamSet<T>, tokens: &[u32]) -> Vec<T> {
    let d = cfg.d_model;
    let tok = params.get(0, TOK_EMB).data();
    let pos = params.get(0, POS_EMB).data();
    let mut x = vec![T::zero(); tokens.len() * d];
    for (i, (&t, xr)) in tokens.iter().zip(x.chunks_exact_mut(d)).enumerate() {
        let t = t as usize;
        for ((o, &a), &b) in xr.iter_mut().zip(&tok[t * d..(t + 1) * d]).zip(&pos[i * d..(i + 1) * d]) {
            *o = a + b;
        }
    }
    x
}

fn block_forward<T: Scalar>(
    group: &Group<T>,
    dims: &Dims,
    x: Vec<T>,
    keep: bool,
) -> (Vec<T>, Option<BlockCache<T>>) {
    let Dims { n, d, h, hd, f } = *dims;
    let w = |name: &str| group[name].data();

    let mut a = vec![T::zero(); n * d];
    let r1 = rmsnorm(&x, d, w(ATTN_NORM), &mut a);
    let mut q = vec![T::zero(); n * d];
    let mut k = vec![T::zero(); n * d];
    let mut v = vec![T::zero(); n * d];
    matmul(&a, n, d, w(WQ), d, &mut q);
    matmul(&a, n, d, w(WK), d, &mut k);
    matmul(&a, n, d, w(WV), d, &mut v);

    let scale = T::one() / T::from_f64(hd as f64).sqrt();
    let mut p = vec![T::zero(); h * n * n];
    let mut o = vec![T::zero(); n * d];
    for head in 0..h {
        let cols = head * hd..(head + 1) * hd;
        for i in 0..n {
            let qi = &q[i * d..][cols.clone()];
            let row = &mut p[(head * n + i) * n..(head * n + i + 1) * n];
            for (j, pj) in row.iter_mut().enumerate() {
                *pj = dot(qi, &k[j * d..][cols.clone()]) * scale;
            }
            softmax_row(row);
            let oi = &mut o[i * d..][cols.clone()];
            for (j, &pj) in row.iter().enumerate() {
                axpy(pj, &v[j * d..][cols.clone()], oi);
            }
        }
    }
    let mut x2 = vec![T::zero(); n * d];
    matmul(&o, n, d, w(WO), d, &mut x2);
    for (y, &xi) in x2.iter_mut().zip(&x) {
        *y += xi;
    }

    let mut b = vec![T::zero(); n * d];
    let r2 = rmsnorm(&x2, d, w(FFN_NORM), &mut b);
    let mut g = vec![T::zero(); n * f];
    let mut u = vec![T::zero(); n * f];
    matmul(&b, n, d, w(W_GATE), f, &mut g);
    matmul(&b, n, d, w(W_UP), f, &mut u);
    let s: Vec<T> = g.iter().map(|&gi| gi * sigmoid(gi)).collect();
    let hdn: Vec<T> = s.iter().zip(&u).map(|(&si, &ui)| si * ui).collect();
    let mut x3 = vec![T::zero(); n * d];
    matmul(&hdn, n, f, w(W_DOWN), d, &mut x3);
    for (y, &xi) in x3.iter_mut().zip(&x2) {
        *y += xi;
    }

    let cache = keep.then(|| BlockCache { x, r1, a, q, k, v, p, o, x2, r2, b, g, u, s, hdn });
    (x3, cache)
}

/// Backward through one block. `grads` receives parameter gradients when the
/// block is trainable; the input gradient is returned when `need_dx`.
fn block_backward<T: Scalar>(
    group: &Group<T>,
    dims: &Dims,
    c: &BlockCache<T>,
    dx3: &[T],
    mut grads: Option<&mut Group<T>>,
    need_dx: bool,
) -> Option<Vec<T>> {
    let Dims { n, d, h, hd, f } = *dims;
    let w = |name: &str| group[name].data();
    macro_rules! gw {
        ($name:expr) => {
            grads.as_deref_mut().map(|g| g.get_mut($name).expect("grad tensor").data_mut())
        };
    }

    // Feed-forward branch.
    let mut dhdn = vec![T::zero(); n * f];
    matmul_bt_acc(dx3, d, w(W_DOWN), f, &mut dhdn);
    if let Some(dw) = gw!(W_DOWN) {
        matmul_at_acc(&c.hdn, f, dx3, d, dw);
    }
    let mut dg = vec![T::zero(); n * f];
    let mut du = vec![T::zero(); n * f];
    for i in 0..n * f {
        let gi = c.g[i];
        let sig = sigmoid(gi);
        let dsilu = sig * (T::one() + gi * (T::one() - sig));
        dg[i] = dhdn[i] * c.u[i] * dsilu;
        du[i] = dhdn[i] * c.s[i];
    }
    if let Some(dw) = gw!(W_GATE) {
        matmul_at_acc(&c.b, d, &dg, f, dw);
    }
    if let Some(dw) = gw!(W_UP) {
        matmul_at_acc(&c.b, d, &du, f, dw);
    }
    let mut db = vec![T::zero(); n * d];
    matmul_bt_acc(&dg, f, w(W_GATE), d, &mut db);
    matmul_bt_acc(&du, f, w(W_UP), d, &mut db);
    let mut dx2 = dx3.to_vec();
    rmsnorm_backward(&c.x2, d, w(FFN_NORM), &c.r2, &db, Some(&mut dx2), gw!(FFN_NORM));

    // Attention branch.
    let mut dout = vec![T::zero(); n * d];
    matmul_bt_acc(&dx2, d, w(WO), d, &mut dout);
    if let Some(dw) = gw!(WO) {
        matmul_at_acc(&c.o, d, &dx2, d, dw);
    }
    let scale = T::one() / T::from_f64(hd as f64).sqrt();
    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let mut dp = vec![T::zero(); n];
    for head in 0..h {
        let cols = head * hd..(head + 1) * hd;
        for i in 0..n {
            let prow = &c.p[(head * n + i) * n..(head * n + i + 1) * n];
            let doi = &dout[i * d..][cols.clone()];
            for j in 0..n {
                dp[j] = dot(doi, &c.v[j * d..][cols.clone()]);
                axpy(prow[j], doi, &mut dv[j * d..][cols.clone()]);
            }
            let inner = dot(prow, &dp);
            let qi = &c.q[i * d..][cols.clone()];
            for j in 0..n {
                let ds = prow[j] * (dp[j] - inner) * scale;
                axpy(ds, &c.k[j * d..][cols.clone()], &mut dq[i * d..][cols.clone()]);
                axpy(ds, qi, &mut dk[j * d..][cols.clone()]);
            }
        }
    }
    if let Some(dw) = gw!(WQ) {
        matmul_at_acc(&c.a, d, &dq, d, dw);
    }
    if let Some(dw) = gw!(WK) {
        matmul_at_acc(&c.a, d, &dk, d, dw);
    }
    if let Some(dw) = gw!(WV) {
        matmul_at_acc(&c.a, d, &dv, d, dw);
    }
    let need_norm_grad = grads.is_some();
    if !need_dx && !need_norm_grad {
        return None;
    }
    let mut da = vec![T::zero(); n * d];
    matmul_bt_acc(&dq, d, w(WQ), d, &mut da);
    matmul_bt_acc(&dk, d, w(WK), d, &mut da);
    matmul_bt_acc(&dv, d, w(WV), d, &mut da);
    let dx = need_dx.then_some(dx2);
    let mut dx = dx;
    rmsnorm_backward(&c.x, d, w(ATTN_NORM), &c.r1, &da, dx.as_deref_mut(), gw!(ATTN_NORM));
    dx
}

/// Head output for one sequence plus what backward needs.
struct HeadCache<T> {
    xl: Vec<T>,
    rf: Vec<T>,
    z: Vec<T>,
    /// Mean-pooled `z` (multilabel only).
    zbar: Vec<T>,
}

fn head_forward<T: Scalar>(
    cfg: &ModelConfig,
    params: &ParamSet<T>,
    xl: Vec<T>,
    n: usize,
) -> (Vec<T>, HeadCache<T>) {
    let d = cfg.d_model;
    let c = cfg.n_outputs();
    let hid = cfg.head_id();
    let mut z = vec![T::zero(); n * d];
    let rf = rmsnorm(&xl, d, params.get(hid, FINAL_NORM).data(), &mut z);
    let wout = params.get(hid, W_OUT).data();
    match cfg.task {
        Task::Multilabel { .. } => {
            let mut zbar = vec![T::zero(); d];
            let inv = T::one() / T::from_f64(n as f64);
            for zr in z.chunks_exact(d) {
                axpy(inv, zr, &mut zbar);
            }
            let mut logits = vec![T::zero(); c];
            matmul(&zbar, 1, d, wout, c, &mut logits);
            (logits, HeadCache { xl, rf, z, zbar })
        }
        _ => {
            let mut logits = vec![T::zero(); n * c];
            matmul(&z, n, d, wout, c, &mut logits);
            (logits, HeadCache { xl, rf, z, zbar: Vec::new() })
        }
    }
}

/// Loss of one example and the gradient with respect to its logits.
fn loss_and_dlogits<T: Scalar>(cfg: &ModelConfig, logits: &[T], target: &Target) -> (T, Vec<T>) {
    let c = cfg.n_outputs();
    let mut dl = vec![T::zero(); logits.len()];
    match target {
        Target::PerToken(ys) => {
            let count = ys.iter().flatten().count();
            if count == 0 {
                return (T::zero(), dl);
            }
            let inv = T::one() / T::from_f64(count as f64);
            let mut loss = T::zero();
            for ((row, drow), y) in logits.chunks_exact(c).zip(dl.chunks_exact_mut(c)).zip(ys) {
                let Some(y) = *y else { continue };
                let lse = log_sum_exp(row);
                loss += lse - row[y as usize];
                for (o, &l) in drow.iter_mut().zip(row) {
                    *o = (l - lse).exp() * inv;
                }
                drow[y as usize] -= inv;
            }
            (loss * inv, dl)
        }
        Target::Labels(ys) => {
            let inv = T::one() / T::from_f64(c as f64);
            let mut loss = T::zero();
            for ((o, &l), &y) in dl.iter_mut().zip(logits).zip(ys) {
                let yv = if y { T::one() } else { T::zero() };
                // max(l, 0) - l*y + ln(1 + e^{-|l|})
                loss += l.max(T::zero()) - l * yv + (T::one() + (-l.abs()).exp()).ln();
                *o = (sigmoid(l) - yv) * inv;
            }
            (loss * inv, dl)
        }
    }
}

fn dims(cfg: &ModelConfig, n: usize) -> Dims {
    Dims { n, d: cfg.d_model, h: cfg.n_heads, hd: cfg.head_dim(), f: cfg.d_ff }
}

/// Logits of one sequence: `[n, C]` for per-token tasks, `[C]` for multilabel.
pub fn forward_seq<T: Scalar>(cfg: &ModelConfig, params: &ParamSet<T>, tokens: &[u32]) -> Result<Vec<T>> {
    check_tokens(cfg, tokens)?;
    let dm = dims(cfg, tokens.len());
    let mut x = embed(cfg, params, tokens);
    for b in 1..=cfg.n_blocks {
        x = block_forward(params.group(b).expect("block group"), &dm, x, false).0;
    }
    Ok(head_forward(cfg, params, x, tokens.len()).0)
}

/// Batched forward over equal-length sequences.
///
/// Returns `[batch, seq, 2K+1]` for tagging, `[batch, seq, V]` for MLM and
/// `[batch, K]` for multilabel.
pub fn forward<T: Scalar>(cfg: &ModelConfig, params: &ParamSet<T>, batch: &[Vec<u32>]) -> Result<Tensor<T>> {
    let first = batch.first().ok_or_else(|| Error::input("empty batch"))?;
    let n = first.len();
    if batch.iter().any(|s| s.len() != n) {
        return Err(Error::input("batched forward needs equal sequence lengths"));
    }
    let mut data = Vec::new();
    for s in batch {
        data.extend(forward_seq(cfg, params, s)?);
    }
    let shape = match cfg.task {
        Task::Multilabel { .. } => vec![batch.len(), cfg.n_outputs()],
        _ => vec![batch.len(), n, cfg.n_outputs()],
    };
    Tensor::from_vec(shape, data)
}

/// Zero gradient buffers for the trainable ids.
fn zero_grads<T: Scalar>(params: &ParamSet<T>, trainable: &BTreeSet<usize>) -> GradSet<T> {
    params.restrict(trainable).zeros_like()
}

/// Loss and gradient of a single example with respect to `trainable`.
pub fn example_grads<T: Scalar>(
    cfg: &ModelConfig,
    params: &ParamSet<T>,
    trainable: &BTreeSet<usize>,
    sample: &Sample,
) -> Result<(T, GradSet<T>)> {
    check_tokens(cfg, &sample.tokens)?;
    check_target(cfg, sample)?;
    let n = sample.tokens.len();
    let d = cfg.d_model;
    let dm = dims(cfg, n);
    let hid = cfg.head_id();
    let lowest = trainable.iter().next().copied().unwrap_or(usize::MAX);

    let mut x = embed(cfg, params, &sample.tokens);
    let mut caches: Vec<Option<BlockCache<T>>> = Vec::with_capacity(cfg.n_blocks);
    for b in 1..=cfg.n_blocks {
        // Blocks below the lowest trainable layer never see a gradient.
        let keep = b >= lowest;
        let (y, cache) = block_forward(params.group(b).expect("block group"), &dm, x, keep);
        x = y;
        caches.push(cache);
    }
    let (logits, hc) = head_forward(cfg, params, x, n);
    let (loss, dlogits) = loss_and_dlogits(cfg, &logits, &sample.target);

    let mut grads = zero_grads(params, trainable);
    if lowest > hid {
        return Ok((loss, grads));
    }

    // Head.
    let c = cfg.n_outputs();
    let wout = params.get(hid, W_OUT).data();
    let head_trainable = trainable.contains(&hid);
    let mut dz = vec![T::zero(); n * d];
    match cfg.task {
        Task::Multilabel { .. } => {
            if head_trainable {
                matmul_at_acc(&hc.zbar, d, &dlogits, c, grads.get_mut(hid, W_OUT).data_mut());
            }
            let mut dzbar = vec![T::zero(); d];
            matmul_bt_acc(&dlogits, c, wout, d, &mut dzbar);
            let inv = T::one() / T::from_f64(n as f64);
            for dzr in dz.chunks_exact_mut(d) {
                axpy(inv, &dzbar, dzr);
            }
        }
        _ => {
            if head_trainable {
                matmul_at_acc(&hc.z, d, &dlogits, c, grads.get_mut(hid, W_OUT).data_mut());
            }
            matmul_bt_acc(&dlogits, c, wout, d, &mut dz);
        }
    }
    let need_dx = lowest < hid;
    let mut dx = need_dx.then(|| vec![T::zero(); n * d]);
    let dg_final = if head_trainable {
        Some(grads.get_mut(hid, FINAL_NORM).data_mut())
    } else {
        None
    };
    rmsnorm_backward(&hc.xl, d, params.get(hid, FINAL_NORM).data(), &hc.rf, &dz, dx.as_deref_mut(), dg_final);

    // Blocks, top down to the lowest trainable one.
    for b in (lowest.max(1)..=cfg.n_blocks).rev() {
        let Some(dxb) = dx.take() else { break };
        let cache = caches[b - 1].as_ref().expect("cached block");
        let need = b > lowest || lowest == 0;
        let gg = if trainable.contains(&b) { grads.group_mut(b) } else { None };
        dx = block_backward(params.group(b).expect("block group"), &dm, cache, &dxb, gg, need);
    }

    if lowest == 0 {
        if let Some(dx) = dx {
            let g0 = grads.group_mut(0).expect("embedding grads");
            let dtok = g0.get_mut(TOK_EMB).expect("tok").data_mut();
            for (&t, dr) in sample.tokens.iter().zip(dx.chunks_exact(d)) {
                let t = t as usize;
                for (o, &v) in dtok[t * d..(t + 1) * d].iter_mut().zip(dr) {
                    *o += v;
                }
            }
            let dpos = g0.get_mut(POS_EMB).expect("pos").data_mut();
            for (o, &v) in dpos.iter_mut().zip(&dx) {
                *o += v;
            }
        }
    }
    Ok((loss, grads))
}

/// Mean loss over `batch` and gradients for the `trainable` layer ids.
///
/// With `per_example` the gradients of each example are returned
/// separately; otherwise their mean (summed in batch order, then divided by
/// the batch size).
pub fn loss_and_grads<T: Scalar>(
    cfg: &ModelConfig,
    params: &ParamSet<T>,
    trainable: &BTreeSet<usize>,
    batch: &[Sample],
    per_example: bool,
) -> Result<LossAndGrads<T>> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    if let Some(&bad) = trainable.iter().find(|&&l| l > cfg.head_id()) {
        return Err(Error::config(format!("layer id {bad} does not exist")));
    }
    let mut loss = 0.0;
    if per_example {
        let mut all = Vec::with_capacity(batch.len());
        for s in batch {
            let (l, g) = example_grads(cfg, params, trainable, s)?;
            loss += l.to_f64();
            all.push(g);
        }
        Ok(LossAndGrads { loss: loss / batch.len() as f64, grads: Grads::PerExample(all) })
    } else {
        let mut sum = zero_grads(params, trainable);
        for s in batch {
            let (l, g) = example_grads(cfg, params, trainable, s)?;
            loss += l.to_f64();
            sum.add_assign(&g);
        }
        let b = T::from_f64(batch.len() as f64);
        for (_, _, t) in sum.iter_mut() {
            for v in t.data_mut() {
                *v = *v / b;
            }
        }
        Ok(LossAndGrads { loss: loss / batch.len() as f64, grads: Grads::Batch(sum) })
    }
}

/// Mean loss over `batch` without gradients.
pub fn batch_loss<T: Scalar>(cfg: &ModelConfig, params: &ParamSet<T>, batch: &[Sample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    let mut total = 0.0;
    for s in batch {
        check_target(cfg, s)?;
        let logits = forward_seq(cfg, params, &s.tokens)?;
        total += loss_and_dlogits(cfg, &logits, &s.target).0.to_f64();
    }
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::init_params;

    fn cfg(task: Task) -> ModelConfig {
        ModelConfig { vocab_size: 11, d_model: 8, n_heads: 2, n_blocks: 2, d_ff: 16, max_seq_len: 6, task }
    }

    fn tag_sample(tokens: Vec<u32>) -> Sample {
        let target = Target::PerToken(tokens.iter().map(|&t| Some(t % 5)).collect());
        Sample { tokens, target }
    }

    #[test]
    fn tagging_logit_shape() {
        let c = cfg(Task::Tagging { types: 2 });
        let p = init_params::<f32>(&c, 7).unwrap();
        let batch = vec![vec![1, 2, 3, 4, 5], vec![0, 0, 1, 1, 2], vec![10, 9, 8, 7, 6]];
        let out = forward(&c, &p, &batch).unwrap();
        assert_eq!(out.shape(), &[3, 5, 5]);
        let again = forward(&c, &p, &batch).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn multilabel_identical_rows() {
        let c = cfg(Task::Multilabel { labels: 3 });
        let p = init_params::<f64>(&c, 7).unwrap();
        let out = forward(&c, &p, &[vec![4; 5], vec![4; 5]]).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert_eq!(out.data()[..3], out.data()[3..]);
    }

    #[test]
    fn token_out_of_range_is_input_error() {
        let c = cfg(Task::Tagging { types: 2 });
        let p = init_params::<f32>(&c, 7).unwrap();
        assert!(matches!(forward(&c, &p, &[vec![11]]), Err(Error::Input(_))));
        assert!(matches!(forward(&c, &p, &[vec![1; 7]]), Err(Error::Input(_))));
    }

    #[test]
    fn head_only_keyset() {
        let c = cfg(Task::Tagging { types: 2 });
        let p = init_params::<f64>(&c, 7).unwrap();
        let tr = BTreeSet::from([3]);
        let out = loss_and_grads(&c, &p, &tr, &[tag_sample(vec![1, 2, 3])], false).unwrap();
        let Grads::Batch(g) = out.grads else { panic!() };
        assert_eq!(g.layer_ids(), tr);
    }

    #[test]
    fn empty_batch_is_input_error() {
        let c = cfg(Task::Tagging { types: 2 });
        let p = init_params::<f64>(&c, 7).unwrap();
        let tr = BTreeSet::from([3]);
        assert!(matches!(loss_and_grads(&c, &p, &tr, &[], false), Err(Error::Input(_))));
    }

    #[test]
    fn mean_of_per_example_equals_batch() {
        let c = cfg(Task::Tagging { types: 2 });
        let p = init_params::<f64>(&c, 3).unwrap();
        let tr: BTreeSet<usize> = (0..=3).collect();
        let batch: Vec<Sample> =
            vec![tag_sample(vec![1, 2, 3, 4]), tag_sample(vec![5, 6]), tag_sample(vec![7, 8, 9, 10, 0, 1])];
        let Grads::Batch(full) = loss_and_grads(&c, &p, &tr, &batch, false).unwrap().grads else {
            panic!()
        };
        let Grads::PerExample(each) = loss_and_grads(&c, &p, &tr, &batch, true).unwrap().grads else {
            panic!()
        };
        let mut mean = each[0].zeros_like();
        for g in &each {
            mean.add_assign(g);
        }
        mean.scale(1.0 / 3.0);
        for ((_, _, a), (_, _, b)) in mean.iter().zip(full.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn mlm_positions_without_target_are_ignored() {
        let c = cfg(Task::Mlm);
        let p = init_params::<f64>(&c, 3).unwrap();
        let s = Sample { tokens: vec![1, 2, 3], target: Target::PerToken(vec![None, None, None]) };
        let out = loss_and_grads(&c, &p, &BTreeSet::from([3]), &[s], false).unwrap();
        assert_eq!(out.loss, 0.0);
    }
}
