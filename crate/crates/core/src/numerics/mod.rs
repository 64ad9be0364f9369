//! Dense f32 tensors, the handful of probability primitives the losses need,
//! a reverse-mode [`GradTape`] for the transformer graph, and a central
//! finite-difference gradient checker.

mod gradcheck;
pub(crate) mod kernels;
mod tape;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

pub use gradcheck::finite_diff_check;
pub use tape::{EmbedSource, GradTape, Grads, Var};

/// Floor applied to the student probability inside `ln` so KL never sees `ln 0`.
pub const PROB_FLOOR: f32 = 1e-9;

/// Row-major dense tensor of 32-bit floats with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n], grad: None }
    }

    /// A 1-D tensor.
    pub fn vector(data: Vec<f32>) -> Self {
        Tensor { shape: vec![data.len()], data, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Replaces the gradient buffer; it must match the data length.
    pub fn set_grad(&mut self, grad: Vec<f32>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::invalid("gradient length does not match tensor"));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Size of the last axis (the "row" width). Scalars count as one row of one.
    pub fn row_len(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> core::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.row_len().max(1))
    }

    pub fn row(&self, r: usize) -> &[f32] {
        let w = self.row_len();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Row-wise `softmax(logits / t)` over the last axis.
pub fn softmax_temperature(logits: &Tensor, t: f32) -> Result<Tensor> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {t}")));
    }
    if logits.data.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in logits".into()));
    }
    let mut out = logits.clone();
    out.grad = None;
    let w = out.row_len().max(1);
    for row in out.data.chunks_exact_mut(w) {
        kernels::softmax_in_place(row, t);
    }
    Ok(out)
}

/// Row-wise `log(softmax(logits / t))`.
pub fn log_softmax_temperature(logits: &Tensor, t: f32) -> Result<Tensor> {
    let mut p = softmax_temperature(logits, t)?;
    let w = p.row_len().max(1);
    for (row, lrow) in p.data.chunks_exact_mut(w).zip(logits.data.chunks_exact(w)) {
        let max = lrow.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse = libm::logf(lrow.iter().map(|z| libm::expf((z - max) / t)).sum::<f32>());
        for (o, z) in row.iter_mut().zip(lrow) {
            *o = (z - max) / t - lse;
        }
    }
    Ok(p)
}

/// `KL(p ‖ q)` for one row, with `q` floored at [`PROB_FLOOR`].
pub(crate) fn kl_row(p: &[f32], q: &[f32]) -> f32 {
    let mut acc = 0.0f64;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            let lp = libm::logf(pi.max(PROB_FLOOR)) as f64;
            let lq = libm::logf(qi.max(PROB_FLOOR)) as f64;
            acc += pi as f64 * (lp - lq);
        }
    }
    acc.max(0.0) as f32
}

/// Forward KL divergence `KL(p ‖ q)` averaged over rows.
pub fn kl_divergence(p: &Tensor, q: &Tensor) -> Result<f32> {
    if p.shape != q.shape {
        return Err(Error::invalid(format!(
            "KL shape mismatch: {:?} vs {:?}",
            p.shape, q.shape
        )));
    }
    if p.is_empty() {
        return Err(Error::invalid("KL of empty distributions"));
    }
    let w = p.row_len();
    let rows = p.len() / w;
    let total: f64 = p
        .data
        .chunks_exact(w)
        .zip(q.data.chunks_exact(w))
        .map(|(pr, qr)| kl_row(pr, qr) as f64)
        .sum();
    Ok((total / rows as f64) as f32)
}

fn norm_sq(v: &[f32]) -> f32 {
    kernels::dot(v, v)
}

/// Squared cosine similarity `(u·v / (|u||v|))²`.
pub fn cosine_sq(u: &[f32], v: &[f32]) -> Result<f32> {
    if u.len() != v.len() {
        return Err(Error::invalid("cosine of vectors with different lengths"));
    }
    let (nu, nv) = (norm_sq(u), norm_sq(v));
    if !(nu > 0.0) || !(nv > 0.0) {
        return Err(Error::DegenerateVector);
    }
    let d = kernels::dot(u, v);
    Ok(((d * d) / (nu * nv)).min(1.0))
}

/// `cosine_sq(u, v)` and its gradient with respect to `u`.
pub fn cosine_sq_grad(u: &[f32], v: &[f32]) -> Result<(f32, Vec<f32>)> {
    let value = cosine_sq(u, v)?;
    let (nu, nv) = (norm_sq(u), norm_sq(v));
    let d = kernels::dot(u, v);
    let inv = 1.0 / libm::sqrtf(nu * nv);
    let c = d * inv;
    // d(c^2)/du = 2c * (v / (|u||v|) - c * u / |u|^2)
    let grad = u
        .iter()
        .zip(v)
        .map(|(&ui, &vi)| 2.0 * c * (vi * inv - c * ui / nu))
        .collect();
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(rows: usize, data: &[f32]) -> Tensor {
        Tensor::new(vec![rows, data.len() / rows], data.to_vec()).unwrap()
    }

    #[test]
    fn tensor_rejects_bad_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let mut x = Tensor::zeros(vec![2, 2]);
        assert!(x.set_grad(vec![0.0; 3]).is_err());
        x.set_grad(vec![1.0; 4]).unwrap();
        assert_eq!(x.grad(), Some(&[1.0f32; 4][..]));
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax_temperature(&t(1, &[0.0; 4]), 1.0).unwrap();
        for v in p.data() {
            assert!((v - 0.25).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_high_temperature_flattens() {
        // sigmoid(0.1) = 0.52497918747894
        let p = softmax_temperature(&t(1, &[1.0, 0.0]), 10.0).unwrap();
        assert!((p.data()[0] - 0.524_979_2).abs() < 1e-6);
        assert!((p.data()[0] - 0.5).abs() < 0.025 && (p.data()[1] - 0.5).abs() < 0.025);
    }

    #[test]
    fn softmax_closed_form_two_classes() {
        let e2 = libm::exp(2.0);
        let p = softmax_temperature(&t(1, &[3.0, 1.0]), 1.0).unwrap();
        assert!((p.data()[0] as f64 - e2 / (e2 + 1.0)).abs() < 1e-6);
        assert!((p.data()[1] as f64 - 1.0 / (e2 + 1.0)).abs() < 1e-6);
    }

    #[test]
    fn softmax_errors() {
        assert!(matches!(
            softmax_temperature(&t(1, &[0.0, 1.0]), 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            softmax_temperature(&t(1, &[0.0, 1.0]), -2.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            softmax_temperature(&t(1, &[f32::NAN, 1.0]), 1.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn log_softmax_exponentiates_to_softmax() {
        let z = t(2, &[0.3, -1.0, 2.0, 5.0, 5.0, -4.0]);
        let p = softmax_temperature(&z, 3.0).unwrap();
        let lp = log_softmax_temperature(&z, 3.0).unwrap();
        for (a, b) in p.data().iter().zip(lp.data()) {
            assert!((a - libm::expf(*b)).abs() < 1e-6);
        }
    }

    #[test]
    fn kl_hand_values() {
        let half = t(1, &[0.5, 0.5]);
        assert_eq!(kl_divergence(&half, &half).unwrap(), 0.0);
        let onehot = t(1, &[1.0, 0.0]);
        assert!((kl_divergence(&onehot, &half).unwrap() - core::f32::consts::LN_2).abs() < 1e-6);
        let p = t(1, &[0.9, 0.1]);
        let q = t(1, &[0.1, 0.9]);
        let expected = 0.9 * libm::log(9.0) + 0.1 * libm::log(1.0 / 9.0);
        assert!((kl_divergence(&p, &q).unwrap() as f64 - expected).abs() < 1e-5);
    }

    #[test]
    fn kl_floor_handles_zero_student_mass() {
        let p = t(1, &[0.5, 0.5]);
        let q = t(1, &[1.0, 0.0]);
        let v = kl_divergence(&p, &q).unwrap();
        assert!(v.is_finite() && v > 5.0);
    }

    #[test]
    fn kl_batches_by_mean_and_checks_shape() {
        let p = t(2, &[1.0, 0.0, 0.5, 0.5]);
        let q = t(2, &[0.5, 0.5, 0.5, 0.5]);
        assert!((kl_divergence(&p, &q).unwrap() - core::f32::consts::LN_2 / 2.0).abs() < 1e-6);
        assert!(kl_divergence(&p, &t(1, &[0.5, 0.5])).is_err());
    }

    #[test]
    fn cosine_sq_cases() {
        assert_eq!(cosine_sq(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_sq(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-7);
        assert!((cosine_sq(&[1.0, 1.0], &[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-7);
        assert_eq!(cosine_sq(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateVector));
    }

    #[test]
    fn cosine_sq_grad_matches_difference_quotient() {
        let u = [0.3f32, -1.2, 0.8, 2.0];
        let v = [1.0f32, 0.5, -0.25, 0.7];
        let (_, g) = cosine_sq_grad(&u, &v).unwrap();
        for i in 0..4 {
            let h = 1e-3;
            let mut up = u;
            up[i] += h;
            let mut um = u;
            um[i] -= h;
            let num = (cosine_sq(&up, &v).unwrap() - cosine_sq(&um, &v).unwrap()) / (2.0 * h);
            assert!((num - g[i]).abs() < 1e-3, "coord {i}: {num} vs {}", g[i]);
        }
    }

    fn distribution(raw: &[f32]) -> Vec<f32> {
        let s: f32 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(logits in prop::collection::vec(-20.0f32..20.0, 1..64), t in 0.05f32..50.0) {
            let n = logits.len();
            let p = softmax_temperature(&Tensor::new(vec![1, n], logits).unwrap(), t).unwrap();
            let s: f64 = p.data().iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }

        #[test]
        fn softmax_is_monotone(logits in prop::collection::vec(-20.0f32..20.0, 2..16)) {
            let n = logits.len();
            let p = softmax_temperature(&Tensor::new(vec![1, n], logits.clone()).unwrap(), 1.0).unwrap();
            for i in 0..n {
                for j in 0..n {
                    if logits[i] > logits[j] {
                        prop_assert!(p.data()[i] >= p.data()[j]);
                    }
                }
            }
        }

        #[test]
        fn kl_self_is_zero(raw in prop::collection::vec(0.001f32..1.0, 2..32)) {
            let p = Tensor::new(vec![1, raw.len()], distribution(&raw)).unwrap();
            prop_assert!(kl_divergence(&p, &p).unwrap() < 1e-9);
        }

        #[test]
        fn kl_is_nonnegative(a in prop::collection::vec(0.001f32..1.0, 8), b in prop::collection::vec(0.001f32..1.0, 8)) {
            let p = Tensor::new(vec![1, 8], distribution(&a)).unwrap();
            let q = Tensor::new(vec![1, 8], distribution(&b)).unwrap();
            prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        }

        #[test]
        fn cosine_sq_scale_invariant(
            u in prop::collection::vec(-5.0f32..5.0, 8),
            v in prop::collection::vec(-5.0f32..5.0, 8),
            a in 0.01f32..100.0,
            b in 0.01f32..100.0,
        ) {
            prop_assume!(norm_sq(&u) > 1e-3 && norm_sq(&v) > 1e-3);
            let base = cosine_sq(&u, &v).unwrap();
            let us: Vec<f32> = u.iter().map(|x| x * a).collect();
            let vs: Vec<f32> = v.iter().map(|x| x * b).collect();
            prop_assert!((cosine_sq(&us, &vs).unwrap() - base).abs() <= 1e-6);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }
}
