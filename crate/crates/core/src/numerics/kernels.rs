//! Row-level f32 loops shared by the gradient tape and the incremental
//! decoder. Both paths call exactly these functions in the same order, so a
//! cached decode reproduces the full forward pass bit for bit.

use libm::{expf, sqrtf, tanhf};

pub(crate) const LN_EPS: f32 = 1e-5;

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `out += alpha * x`
#[inline]
pub(crate) fn axpy(out: &mut [f32], alpha: f32, x: &[f32]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// `out = bias + x · w` with `w` stored row-major as `[x.len(), out.len()]`.
#[inline]
pub(crate) fn vecmat(x: &[f32], w: &[f32], bias: Option<&[f32]>, out: &mut [f32]) {
    let m = out.len();
    debug_assert_eq!(w.len(), x.len() * m);
    match bias {
        Some(b) => out.copy_from_slice(b),
        None => out.fill(0.0),
    }
    for (i, &xi) in x.iter().enumerate() {
        if xi != 0.0 {
            axpy(out, xi, &w[i * m..(i + 1) * m]);
        }
    }
}

/// Row-wise `x · w + b` for a `[rows, k]` input.
pub(crate) fn matmul_rows(x: &[f32], k: usize, w: &[f32], bias: Option<&[f32]>, m: usize) -> alloc::vec::Vec<f32> {
    let rows = x.len() / k;
    let mut out = alloc::vec![0.0f32; rows * m];
    for r in 0..rows {
        vecmat(&x[r * k..(r + 1) * k], w, bias, &mut out[r * m..(r + 1) * m]);
    }
    out
}

/// Layer norm of one row. Returns `(mean, rstd)` for the backward pass.
pub(crate) fn layer_norm_row(x: &[f32], g: &[f32], b: &[f32], out: &mut [f32]) -> (f32, f32) {
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let rstd = 1.0 / sqrtf(var + LN_EPS);
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * g[i] + b[i];
    }
    (mean, rstd)
}

const GELU_C: f32 = 0.797_884_56; // sqrt(2/pi)

#[inline]
pub(crate) fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + tanhf(GELU_C * (x + 0.044715 * x * x * x)))
}

#[inline]
pub(crate) fn gelu_grad(x: f32) -> f32 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = tanhf(inner);
    let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// In-place softmax of `v / t`.
pub(crate) fn softmax_in_place(v: &mut [f32], t: f32) {
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let inv_t = 1.0 / t;
    let mut sum = 0.0f32;
    for x in v.iter_mut() {
        *x = expf((*x - max) * inv_t);
        sum += *x;
    }
    let inv = 1.0 / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
}

/// `log softmax(v / t)` evaluated in f64, floored at `ln(floor)`.
pub(crate) fn log_softmax_wide(v: &[f32], t: f32, floor: f32) -> alloc::vec::Vec<f64> {
    let t = t as f64;
    let max = v.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let lse = libm::log(v.iter().map(|&x| libm::exp((x as f64 - max) / t)).sum::<f64>());
    let lo = libm::log(floor as f64);
    v.iter().map(|&x| ((x as f64 - max) / t - lse).max(lo)).collect()
}

/// Causal attention output for query row `i` given cached keys/values of rows `0..=i`.
/// `qkv_row` layout is `[q | k | v]`; `keys` and `values` are `[rows, d]`.
/// Writes softmax weights for each head into `probs[h * (i+1) ..]`.
pub(crate) fn attend_row(
    q: &[f32],
    keys: &[f32],
    values: &[f32],
    i: usize,
    d: usize,
    n_heads: usize,
    probs: &mut [f32],
    out: &mut [f32],
) {
    let dh = d / n_heads;
    let scale = 1.0 / sqrtf(dh as f32);
    out.fill(0.0);
    for h in 0..n_heads {
        let qh = &q[h * dh..(h + 1) * dh];
        let p = &mut probs[h * (i + 1)..(h + 1) * (i + 1)];
        for j in 0..=i {
            p[j] = dot(qh, &keys[j * d + h * dh..j * d + (h + 1) * dh]) * scale;
        }
        softmax_in_place(p, 1.0);
        let oh = &mut out[h * dh..(h + 1) * dh];
        for j in 0..=i {
            axpy(oh, p[j], &values[j * d + h * dh..j * d + (h + 1) * dh]);
        }
    }
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
