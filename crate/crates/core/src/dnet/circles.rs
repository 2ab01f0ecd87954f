//! Two concentric noisy circles.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{invalid, Result};
use crate::rng::seeded;

/// `n` points, half on the unit circle (label 0) and half on the circle of
/// radius `factor` (label 1), with isotropic Gaussian noise of std `noise`.
pub fn make_circles(n: usize, factor: f64, noise: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&factor) || factor == 0.0 {
        return invalid("factor must lie in (0, 1)");
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return invalid("noise must be non-negative");
    }
    let mut rng = seeded(seed);
    let jitter = Normal::new(0.0, noise).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;
    let mut pixels = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let radius = if label == 0 { 1.0 } else { factor };
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        pixels.push((radius * angle.cos() + jitter.sample(&mut rng)) as f32);
        pixels.push((radius * angle.sin() + jitter.sample(&mut rng)) as f32);
        labels.push(label);
    }
    Ok(Dataset { features: 2, pixels, labels })
}
