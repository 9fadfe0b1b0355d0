//! Central finite differences, used to check analytic gradients.

use super::Real;

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn central_difference<F>(x: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
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

/// Largest relative error between two gradients, with absolute slack `floor`
/// in the denominator so entries near zero do not dominate.
pub fn max_relative_error<T: Real>(analytic: &[T], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let a = a.to_f64().unwrap_or(f64::NAN);
            (a - n).abs() / (a.abs().max(n.abs()).max(floor))
        })
        .fold(0.0, f64::max)
}
