//! Finite-difference helpers for validating analytic gradients.

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_gradient<F>(f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = f(&probe);
        probe[i] = orig - step;
        let minus = f(&probe);
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

/// Central-difference derivative of `f` along `dir` at `x`.
pub fn directional_derivative<F>(f: F, x: &[f64], dir: &[f64], step: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(x.len(), dir.len(), "direction length mismatch");
    let shift = |s: f64| -> Vec<f64> {
        x.iter().zip(dir).map(|(xi, di)| xi + s * di).collect()
    };
    (f(&shift(step)) - f(&shift(-step))) / (2.0 * step)
}

/// Worst relative disagreement between two gradients, with the denominator
/// floored at 1 so near-zero entries compare absolutely.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let x = [1.0, -2.0, 0.5, 0.0];
        let num = central_gradient(f, &x, 1e-6);
        let exact: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!(max_relative_error(&exact, &num) < 1e-9);
    }

    #[test]
    fn trig_gradient() {
        let f = |x: &[f64]| x[0].sin() * x[1].cos();
        let x = [0.3, 1.1];
        let num = central_gradient(f, &x, 1e-6);
        let exact = [x[0].cos() * x[1].cos(), -x[0].sin() * x[1].sin()];
        assert!(max_relative_error(&exact, &num) < 1e-9);
    }

    #[test]
    fn directional_matches_full_gradient() {
        let f = |x: &[f64]| x.iter().map(|v| v * v * v).sum::<f64>();
        let x = [0.4, -0.7, 1.2];
        let dir = [1.0, 2.0, -0.5];
        let d = directional_derivative(f, &x, &dir, 1e-6);
        let exact: f64 = x.iter().zip(&dir).map(|(xi, di)| 3.0 * xi * xi * di).sum();
        assert!((d - exact).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floors_denominator() {
        assert!(max_relative_error(&[0.0], &[1e-12]) < 1e-11);
        assert!((max_relative_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-12);
    }
}
