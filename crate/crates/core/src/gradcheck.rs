//! Central finite differences, used as an oracle against reverse-mode
//! gradients in unit and acceptance tests.
//!
//! This module never touches the tape; it only evaluates closures, so a
//! comparison against [`crate::ad::Tape::backward`] is a genuinely
//! independent check.

/// Per-coordinate step: `h = scale·(1 + |x|)`.
fn step(x: f64, scale: f64) -> f64 {
    scale * (1.0 + x.abs())
}

/// Central-difference gradient of a scalar function, with step
/// `h_i = 1e-5·(1 + |x_i|)` in each coordinate.
pub fn central_diff_grad<F>(mut f: F, x: &[f64]) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    central_diff_grad_scaled(&mut f, x, 1e-5)
}

/// As [`central_diff_grad`] with an explicit step scale.
pub fn central_diff_grad_scaled<F>(f: &mut F, x: &[f64], scale: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = step(x[i], scale);
        probe[i] = x[i] + h;
        let fp = f(&probe);
        probe[i] = x[i] - h;
        let fm = f(&probe);
        probe[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Relative error with an absolute floor, `|a-b| / max(1, |a|, |b|)` style:
/// suitable for comparing gradients whose entries may be near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Largest [`rel_err`] over two equally long gradient vectors.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

/// Assert that an analytic gradient matches central differences of `f` at `x`
/// within `rtol`.
pub fn assert_grad_matches<F>(f: F, x: &[f64], analytic: &[f64], rtol: f64, what: &str)
where
    F: FnMut(&[f64]) -> f64,
{
    let fd = central_diff_grad(f, x);
    let err = max_rel_err(analytic, &fd);
    assert!(
        err <= rtol,
        "{what}: gradient mismatch, max rel err {err:.3e} > {rtol:.1e}\n analytic: {analytic:?}\n fd:       {fd:?}"
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let g = central_diff_grad(f, &[1.0, -2.0, 0.5]);
        let expected = [2.0, -4.0, 1.0];
        assert!(max_rel_err(&g, &expected) < 1e-8);
    }

    #[test]
    fn rel_err_has_absolute_floor() {
        assert!(rel_err(1e-9, 0.0) < 1e-8);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-12);
    }
}
