//! Dense kernels on row-major slices. Weights are stored `[in, out]`.

use crate::nn::tensor::Scalar;

pub const RMS_EPS: f64 = 1e-5;

/// `out[n, m] = x[n, k] · w[k, m]`.
pub fn matmul<T: Scalar>(x: &[T], n: usize, k: usize, w: &[T], m: usize, out: &mut [T]) {
    debug_assert_eq!(x.len(), n * k);
    debug_assert_eq!(w.len(), k * m);
    debug_assert_eq!(out.len(), n * m);
    for (xr, or) in x.chunks_exact(k).zip(out.chunks_exact_mut(m)) {
        or.fill(T::zero());
        for (&a, wr) in xr.iter().zip(w.chunks_exact(m)) {
            axpy(a, wr, or);
        }
    }
}

/// `dw[k, m] += x[n, k]ᵀ · dy[n, m]`.
pub fn matmul_at_acc<T: Scalar>(x: &[T], k: usize, dy: &[T], m: usize, dw: &mut [T]) {
    debug_assert_eq!(dw.len(), k * m);
    for (xr, dyr) in x.chunks_exact(k).zip(dy.chunks_exact(m)) {
        for (&a, dwr) in xr.iter().zip(dw.chunks_exact_mut(m)) {
            axpy(a, dyr, dwr);
        }
    }
}

/// `dx[n, k] += dy[n, m] · w[k, m]ᵀ`.
pub fn matmul_bt_acc<T: Scalar>(dy: &[T], m: usize, w: &[T], k: usize, dx: &mut [T]) {
    debug_assert_eq!(w.len(), k * m);
    for (dyr, dxr) in dy.chunks_exact(m).zip(dx.chunks_exact_mut(k)) {
        for (o, wr) in dxr.iter_mut().zip(w.chunks_exact(m)) {
            *o += dot(dyr, wr);
        }
    }
}

#[inline]
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // Four partial sums let the compiler keep several lanes busy.
    let mut acc = [T::zero(); 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Row-wise RMSNorm: `y = x / rms(x) * g`. Returns the per-row inverse RMS.
pub fn rmsnorm<T: Scalar>(x: &[T], d: usize, g: &[T], y: &mut [T]) -> Vec<T> {
    let eps = T::from_f64(RMS_EPS);
    let inv_d = T::one() / T::from_f64(d as f64);
    let mut rinv = Vec::with_capacity(x.len() / d);
    for (xr, yr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
        let r = T::one() / (dot(xr, xr) * inv_d + eps).sqrt();
        for ((yi, &xi), &gi) in yr.iter_mut().zip(xr).zip(g) {
            *yi = xi * r * gi;
        }
        rinv.push(r);
    }
    rinv
}

/// Backward of [`rmsnorm`]. Accumulates into `dx` and, when given, `dg`.
pub fn rmsnorm_backward<T: Scalar>(
    x: &[T],
    d: usize,
    g: &[T],
    rinv: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dg: Option<&mut [T]>,
) {
    if let Some(dg) = dg {
        for ((xr, dyr), &r) in x.chunks_exact(d).zip(dy.chunks_exact(d)).zip(rinv) {
            for ((o, &xi), &dyi) in dg.iter_mut().zip(xr).zip(dyr) {
                *o += dyi * xi * r;
            }
        }
    }
    if let Some(dx) = dx {
        let inv_d = T::one() / T::from_f64(d as f64);
        for (((xr, dyr), &r), dxr) in
            x.chunks_exact(d).zip(dy.chunks_exact(d)).zip(rinv).zip(dx.chunks_exact_mut(d))
        {
            // sum_j dy_j g_j x_j
            let mut s = T::zero();
            for ((&dyi, &gi), &xi) in dyr.iter().zip(g).zip(xr) {
                s += dyi * gi * xi;
            }
            let c = r * r * r * inv_d * s;
            for (((o, &dyi), &gi), &xi) in dxr.iter_mut().zip(dyr).zip(g).zip(xr) {
                *o += r * dyi * gi - c * xi;
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// In-place softmax of one row.
pub fn softmax_row<T: Scalar>(row: &mut [T]) {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    let inv = T::one() / s;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// `ln Σ exp(row)`.
pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s = row.iter().fold(T::zero(), |acc, &v| acc + (v - mx).exp());
    mx + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[f64], n: usize, k: usize, w: &[f64], m: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                for p in 0..k {
                    out[i * m + j] += x[i * k + p] * w[p * m + j];
                }
            }
        }
        out
    }

    #[test]
    fn matmul_family_agrees_with_naive() {
        let (n, k, m) = (3, 5, 7);
        let x: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..k * m).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut out = vec![0.0; n * m];
        matmul(&x, n, k, &w, m, &mut out);
        let want = naive(&x, n, k, &w, m);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        // x^T out vs naive transpose
        let mut dw = vec![0.0; k * m];
        matmul_at_acc(&x, k, &out, m, &mut dw);
        let xt: Vec<f64> = (0..k * n).map(|i| x[(i % n) * k + i / n]).collect();
        let want = naive(&xt, k, n, &out, m);
        for (a, b) in dw.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut dx = vec![0.0; n * k];
        matmul_bt_acc(&out, m, &w, k, &mut dx);
        let wt: Vec<f64> = (0..m * k).map(|i| w[(i % k) * m + i / k]).collect();
        let want = naive(&out, n, m, &wt, k);
        for (a, b) in dx.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut r = vec![1.0f64, 2.0, 3.0, 1000.0];
        softmax_row(&mut r);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.iter().all(|v| v.is_finite()));
    }
}
