//! Central finite differences, used as the independent oracle for every
//! analytic gradient in the crate.

/// Step used by the gradient suites.
pub const STEP: f64 = 1e-5;

/// Relative-error threshold the suites hold analytic gradients to.
pub const TOLERANCE: f64 = 1e-4;

/// Denominator floor. Central differences of an O(1) loss at the standard step
/// carry about 1e-11 of round-off, so entries below this magnitude are compared
/// on an absolute scale instead of producing 0/0 or pure-noise ratios.
pub const FLOOR: f64 = 1e-6;

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn numerical_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Largest elementwise relative error between two gradients.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_has_known_derivative() {
        let g = numerical_gradient(&[2.0, -1.0], STEP, |x| x[0].powi(3) + 3.0 * x[1]);
        assert!(relative_error(12.0, g[0]) < 1e-8);
        assert!(relative_error(3.0, g[1]) < 1e-8);
    }

    #[test]
    fn zero_gradients_compare_absolutely() {
        assert!(relative_error(0.0, 1e-13) < 1e-4);
        assert!(relative_error(0.0, 1e-11) < 1e-4);
        assert!(relative_error(0.0, 1e-9) > 1e-4);
        assert!(relative_error(1.0, 1.0 + 2e-4) > 1e-4);
    }
}
