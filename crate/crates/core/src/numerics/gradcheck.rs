use alloc::format;

use super::Tensor;
use crate::{Error, Result};

/// Compares the analytic gradient of `loss_fn` at `leaf` with central
/// differences (five-point stencil), one coordinate at a time, and returns the worst relative
/// error `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// `loss_fn` evaluates the loss at the current contents of `leaf` and must
/// store the analytic gradient with [`Tensor::set_grad`]. It is called twice
/// at the unperturbed point; any difference in value or gradient is reported
/// as [`Error::Determinism`]. `leaf` is restored before returning.
///
/// The loss may be returned as `f32` or `f64`; returning the unrounded
/// accumulator keeps the final rounding out of the difference quotient.
pub fn finite_diff_check<F, L>(mut loss_fn: F, leaf: &mut Tensor, eps: f32) -> Result<f32>
where
    F: FnMut(&mut Tensor) -> Result<L>,
    L: Into<f64>,
{
    if !(1e-4..=1e-2).contains(&eps) {
        return Err(Error::invalid(format!("eps {eps} outside [1e-4, 1e-2]")));
    }
    leaf.clear_grad();
    let base: f64 = loss_fn(leaf)?.into();
    let analytic = leaf
        .grad()
        .ok_or_else(|| Error::invalid("loss function did not set a gradient"))?
        .to_vec();
    leaf.clear_grad();
    let again: f64 = loss_fn(leaf)?.into();
    if base.to_bits() != again.to_bits() || leaf.grad() != Some(&analytic[..]) {
        return Err(Error::Determinism(format!("repeated evaluation gave {base} then {again}")));
    }
    if !base.is_finite() {
        return Err(Error::Numeric("non-finite loss at the check point".into()));
    }

    let mut worst = 0.0f64;
    for i in 0..leaf.len() {
        let x = leaf.data()[i];
        let mut at = |k: f32, leaf: &mut Tensor| -> Result<f64> {
            leaf.data_mut()[i] = x + k * eps;
            Ok(loss_fn(leaf)?.into())
        };
        let (p1, m1) = (at(1.0, leaf)?, at(-1.0, leaf)?);
        let (p2, m2) = (at(2.0, leaf)?, at(-2.0, leaf)?);
        leaf.data_mut()[i] = x;
        // Fourth-order central stencil: truncation error O(eps^4), so eps can
        // stay large enough to swamp f32 rounding in the loss.
        let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps as f64);
        let a = analytic[i] as f64;
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let rel = (a - numeric).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    leaf.set_grad(analytic)?;
    Ok(worst as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cosine_sq_grad, GradTape};
    use alloc::vec;

    #[test]
    fn sum_has_unit_gradient() {
        let mut leaf = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, -0.25]).unwrap();
        let err = finite_diff_check(
            |x| {
                let mut tape = GradTape::new();
                let v = tape.leaf(x.data(), 2, 3, true);
                let s = tape.sum(v);
                let g = tape.backward(s)?;
                let loss = tape.value(s)[0];
                let grad = g.get(v).unwrap().to_vec();
                assert!(grad.iter().all(|&d| d == 1.0));
                x.set_grad(grad)?;
                Ok(loss)
            },
            &mut leaf,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn cosine_sq_self_test() {
        let fixed = [0.4f32, -1.0, 0.3, 0.9, -0.2, 0.5, 1.1, -0.7];
        let mut leaf = Tensor::vector(vec![1.0, 0.2, -0.5, 0.3, 0.8, -1.2, 0.1, 0.6]);
        let err = finite_diff_check(
            |x| {
                let (v, g) = cosine_sq_grad(x.data(), &fixed)?;
                x.set_grad(g)?;
                Ok(v)
            },
            &mut leaf,
            1e-2,
        )
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn rejects_eps_outside_range() {
        let mut leaf = Tensor::vector(vec![1.0]);
        let r = finite_diff_check(|_| Ok(0.0), &mut leaf, 0.5);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn detects_nondeterministic_loss() {
        let mut leaf = Tensor::vector(vec![1.0, 2.0]);
        let mut calls = 0u32;
        let r = finite_diff_check(
            |x| {
                calls += 1;
                x.set_grad(vec![0.0, 0.0])?;
                Ok(calls as f32)
            },
            &mut leaf,
            1e-3,
        );
        assert!(matches!(r, Err(Error::Determinism(_))));
    }

    #[test]
    fn restores_leaf_after_check() {
        let mut leaf = Tensor::vector(vec![0.3, -0.7]);
        let before = leaf.data().to_vec();
        finite_diff_check(
            |x| {
                let v: f32 = x.data().iter().map(|a| a * a).sum();
                let g = x.data().iter().map(|a| 2.0 * a).collect();
                x.set_grad(g)?;
                Ok(v)
            },
            &mut leaf,
            1e-3,
        )
        .unwrap();
        assert_eq!(leaf.data(), &before[..]);
    }
}
