//! Finite-difference gradient verification.
//!
//! The checker only evaluates forward passes, so it stays independent of
//! the backward rules it is used to verify.

/// Central finite differences of a scalar function at `point`.
pub fn finite_diff_grad<F>(mut f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut perturbed = point.to_vec();
    let mut grads = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        perturbed[i] = point[i] + step;
        let plus = f(&perturbed);
        perturbed[i] = point[i] - step;
        let minus = f(&perturbed);
        perturbed[i] = point[i];
        grads.push((plus - minus) / (2.0 * step));
    }
    grads
}

/// Relative error between an analytic and a numeric derivative. Values
/// whose absolute difference is below `abs_floor` count as exact, which
/// keeps finite-difference noise on near-zero gradients from dominating.
pub fn relative_error(analytic: f64, numeric: f64, abs_floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= abs_floor {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Worst relative error over two gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n, abs_floor))
        .fold(0.0, f64::max)
}

/// Default comparison settings used throughout the test suite.
pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_FLOOR: f64 = 1e-8;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |v: &[f64]| v[0] * v[0] + 2.0 * v[0] * v[1];
        let g = finite_diff_grad(f, &[1.0, 2.0], 1e-6);
        assert!((g[0] - 6.0).abs() < 1e-6);
        assert!((g[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn relative_error_floors_tiny_differences() {
        assert_eq!(relative_error(1e-12, 0.0, 1e-8), 0.0);
        assert!(relative_error(1.0, 1.1, 1e-8) > 0.09);
    }
}
