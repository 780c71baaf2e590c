//! Weight initializers.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::RngStream;

/// Glorot/Xavier uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut RngStream) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
}

/// Independent `N(0, std²)` entries, drawn row-major.
pub fn normal(rows: usize, cols: usize, std: f64, rng: &mut RngStream) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = rng.sample(StandardNormal);
        std * z
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::stream;

    #[test]
    fn xavier_bounds() {
        let w = xavier_uniform(30, 10, &mut stream(1));
        let a = (6.0f64 / 40.0).sqrt();
        assert!(w.iter().all(|v| v.abs() < a));
        assert_eq!(w, xavier_uniform(30, 10, &mut stream(1)));
    }
}
