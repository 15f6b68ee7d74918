//! Forward and backward kernels on raw row-major slices.
//!
//! The graph in [`super::graph`] and the pure functions in [`super::ops`]
//! both call into these, so a forward evaluation is the same arithmetic
//! whether or not gradients are being recorded.

use crate::scalar::Scalar;

/// Divisor floor inside the RMS normalizer.
pub const RMS_EPS: f64 = 1e-6;

/// `sqrt(2/pi)` for the tanh-form GELU.
const GELU_C: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the tanh-form GELU.
const GELU_A: f64 = 0.044_715;

/// `y[n,out] = x[n,in]·w[in,out] (+ b)`.
pub fn linear_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
    n: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<T> {
    let mut y = vec![T::zero(); n * d_out];
    if let Some(b) = b {
        for row in y.chunks_exact_mut(d_out) {
            row.copy_from_slice(b);
        }
    }
    let beta = if b.is_some() { T::one() } else { T::zero() };
    T::gemm(
        n,
        d_in,
        d_out,
        T::one(),
        x,
        (d_in as isize, 1),
        w,
        (d_out as isize, 1),
        beta,
        &mut y,
        (d_out as isize, 1),
    );
    y
}

/// Accumulates `dx += dy·wᵀ`.
pub fn linear_backward_input<T: Scalar>(
    dy: &[T],
    w: &[T],
    dx: &mut [T],
    n: usize,
    d_in: usize,
    d_out: usize,
) {
    T::gemm(
        n,
        d_out,
        d_in,
        T::one(),
        dy,
        (d_out as isize, 1),
        w,
        (1, d_out as isize),
        T::one(),
        dx,
        (d_in as isize, 1),
    );
}

/// Accumulates `dw += xᵀ·dy`.
pub fn linear_backward_weight<T: Scalar>(
    x: &[T],
    dy: &[T],
    dw: &mut [T],
    n: usize,
    d_in: usize,
    d_out: usize,
) {
    T::gemm(
        d_in,
        n,
        d_out,
        T::one(),
        x,
        (1, d_in as isize),
        dy,
        (d_out as isize, 1),
        T::one(),
        dw,
        (d_out as isize, 1),
    );
}

/// Accumulates column sums of `dy` into `db`.
pub fn colsum_into<T: Scalar>(dy: &[T], db: &mut [T]) {
    let d = db.len();
    for row in dy.chunks_exact(d) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
}

/// Normalizes each row of width `d` by `1/sqrt(mean(x²) + eps)`, then scales by `gain`.
///
/// Returns the output and the per-row inverse RMS.
pub fn rms_norm_forward<T: Scalar>(x: &[T], d: usize, gain: Option<&[T]>) -> (Vec<T>, Vec<T>) {
    let eps = T::of(RMS_EPS);
    let inv_d = T::one() / T::of(d as f64);
    let mut out = Vec::with_capacity(x.len());
    let mut inv = Vec::with_capacity(x.len() / d);
    for row in x.chunks_exact(d) {
        let ms = row.iter().map(|&v| v * v).sum::<T>() * inv_d;
        let r = T::one() / (ms + eps).sqrt();
        inv.push(r);
        match gain {
            Some(g) => out.extend(row.iter().zip(g).map(|(&v, &gi)| v * r * gi)),
            None => out.extend(row.iter().map(|&v| v * r)),
        }
    }
    (out, inv)
}

/// Gradient of [`rms_norm_forward`]; accumulates into `dx` and optionally `dgain`.
pub fn rms_norm_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    inv_rms: &[T],
    d: usize,
    gain: Option<&[T]>,
    dx: Option<&mut [T]>,
    dgain: Option<&mut [T]>,
) {
    let inv_d = T::one() / T::of(d as f64);
    if let Some(dg) = dgain {
        for ((row, dyr), &r) in x.chunks_exact(d).zip(dy.chunks_exact(d)).zip(inv_rms) {
            for ((acc, &v), &g) in dg.iter_mut().zip(row).zip(dyr) {
                *acc = *acc + g * v * r;
            }
        }
    }
    if let Some(dx) = dx {
        let mut u = vec![T::zero(); d];
        for (((row, dyr), &r), dxr) in x
            .chunks_exact(d)
            .zip(dy.chunks_exact(d))
            .zip(inv_rms)
            .zip(dx.chunks_exact_mut(d))
        {
            match gain {
                Some(g) => u.iter_mut().zip(dyr).zip(g).for_each(|((ui, &dv), &gi)| *ui = dv * gi),
                None => u.copy_from_slice(dyr),
            }
            let proj = u.iter().zip(row).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
            let r3 = r * r * r;
            for ((acc, &ui), &xi) in dxr.iter_mut().zip(&u).zip(row) {
                *acc = *acc + r * ui - r3 * xi * proj;
            }
        }
    }
}

pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let th = (c * (x + a * x * x * x)).tanh();
    let sech2 = T::one() - th * th;
    half * (T::one() + th) + half * x * sech2 * c * (T::one() + T::of(3.0) * a * x * x)
}

pub fn silu<T: Scalar>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

pub fn silu_grad<T: Scalar>(x: T) -> T {
    let s = T::one() / (T::one() + (-x).exp());
    s * (T::one() + x * (T::one() - s))
}

/// In-place numerically stable softmax of one row.
pub fn softmax_row<T: Scalar>(row: &mut [T]) {
    let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z = z + *v;
    }
    for v in row.iter_mut() {
        *v = *v / z;
    }
}

/// Multi-head scaled dot-product attention without masking.
///
/// `q`, `k`, `v` are `[n, d]` with heads laid out as contiguous column
/// blocks of width `d / heads`. Returns the output `[n, d]` and the
/// attention probabilities `[heads, n, n]`.
pub fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    n: usize,
    d: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>) {
    let hd = d / heads;
    let scale = T::one() / T::of(hd as f64).sqrt();
    let mut out = vec![T::zero(); n * d];
    let mut probs = vec![T::zero(); heads * n * n];
    let ld = d as isize;
    for h in 0..heads {
        let off = h * hd;
        let p = &mut probs[h * n * n..(h + 1) * n * n];
        // scores = q_h · k_hᵀ * scale
        T::gemm(n, hd, n, scale, &q[off..], (ld, 1), &k[off..], (1, ld), T::zero(), p, (n as isize, 1));
        for row in p.chunks_exact_mut(n) {
            softmax_row(row);
        }
        T::gemm(n, n, hd, T::one(), p, (n as isize, 1), &v[off..], (ld, 1), T::zero(), &mut out[off..], (ld, 1));
    }
    (out, probs)
}

/// Gradient of [`attention_forward`]. Accumulates into whichever of `dq`, `dk`, `dv` are given.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    n: usize,
    d: usize,
    heads: usize,
    mut dq: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
    mut dv: Option<&mut [T]>,
) {
    let hd = d / heads;
    let scale = T::one() / T::of(hd as f64).sqrt();
    let ld = d as isize;
    let nn = n as isize;
    let mut dp = vec![T::zero(); n * n];
    for h in 0..heads {
        let off = h * hd;
        let p = &probs[h * n * n..(h + 1) * n * n];
        if let Some(dv) = dv.as_deref_mut() {
            // dv_h += pᵀ · dout_h
            T::gemm(n, n, hd, T::one(), p, (1, nn), &dout[off..], (ld, 1), T::one(), &mut dv[off..], (ld, 1));
        }
        if dq.is_none() && dk.is_none() {
            continue;
        }
        // dp = dout_h · v_hᵀ
        T::gemm(n, hd, n, T::one(), &dout[off..], (ld, 1), &v[off..], (1, ld), T::zero(), &mut dp, (nn, 1));
        // ds = p ⊙ (dp - rowsum(dp ⊙ p)), folded with the score scale
        for (dpr, pr) in dp.chunks_exact_mut(n).zip(p.chunks_exact(n)) {
            let s: T = dpr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
            for (x, &pv) in dpr.iter_mut().zip(pr) {
                *x = pv * (*x - s) * scale;
            }
        }
        if let Some(dq) = dq.as_deref_mut() {
            T::gemm(n, n, hd, T::one(), &dp, (nn, 1), &k[off..], (ld, 1), T::one(), &mut dq[off..], (ld, 1));
        }
        if let Some(dk) = dk.as_deref_mut() {
            T::gemm(n, n, hd, T::one(), &dp, (1, nn), &q[off..], (ld, 1), T::one(), &mut dk[off..], (ld, 1));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0f64), 0.0);
        // tanh-form GELU(1) = 0.5 * (1 + tanh(0.79788456 * 1.044715))
        let expected = 0.5 * (1.0 + (0.797_884_560_802_865_4f64 * 1.044_715).tanh());
        assert!((gelu(1.0f64) - expected).abs() < 1e-15);
        assert!((gelu(1.0f64) - 0.841_191_990).abs() < 1e-8);
    }

    #[test]
    fn gelu_and_silu_derivatives_match_finite_differences() {
        let h = 1e-6;
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "gelu at {x}");
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8, "silu at {x}");
        }
    }

    #[test]
    fn softmax_is_shift_invariant_and_stable() {
        let mut a = vec![1000.0f64, 1001.0, 1002.0];
        let mut b = vec![0.0f64, 1.0, 2.0];
        softmax_row(&mut a);
        softmax_row(&mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
