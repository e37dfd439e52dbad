use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::rng;
use crate::tensor::Tensor;

/// Gaussian blobs centred on a circle of radius `spread` in the first two features.
pub fn blobs(n_samples: usize, n_classes: usize, n_features: usize, spread: f64, noise: f64, seed: u64) -> Result<Dataset> {
    if n_samples == 0 || n_classes < 2 || n_features < 2 {
        return Err(Error::input("blobs need samples, >= 2 classes and >= 2 features"));
    }
    let mut r = rng::stream(seed, 0);
    let mut x = Vec::with_capacity(n_samples * n_features);
    let mut y = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let c = i % n_classes;
        let angle = 2.0 * PI * c as f64 / n_classes as f64;
        for f in 0..n_features {
            let centre = match f {
                0 => spread * angle.cos(),
                1 => spread * angle.sin(),
                _ => 0.0,
            };
            let z: f64 = r.sample(StandardNormal);
            x.push(centre + noise * z);
        }
        y.push(c);
    }
    Dataset::new(Tensor::new(vec![n_samples, n_features], x)?, y, n_classes)
}

/// Two interleaved spirals, 1.5 turns each, with Gaussian jitter.
pub fn two_spirals(n_samples: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n_samples < 2 {
        return Err(Error::input("two_spirals needs at least two samples"));
    }
    let mut r = rng::stream(seed, 0);
    let turns = 3.0 * PI;
    let mut x = Vec::with_capacity(n_samples * 2);
    let mut y = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let c = i % 2;
        let u: f64 = r.random();
        let theta = 0.25 * PI + u.sqrt() * turns;
        let radius = theta / (0.25 * PI + turns);
        let phase = theta + c as f64 * PI;
        let (nx, ny): (f64, f64) = (r.sample(StandardNormal), r.sample(StandardNormal));
        x.push(radius * phase.cos() + noise * nx);
        x.push(radius * phase.sin() + noise * ny);
        y.push(c);
    }
    Dataset::new(Tensor::new(vec![n_samples, 2], x)?, y, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_balanced_and_separated() {
        let d = blobs(200, 2, 2, 4.0, 0.5, 3).unwrap();
        assert_eq!(d.labels.iter().filter(|&&l| l == 0).count(), 100);
        for (i, &l) in d.labels.iter().enumerate() {
            let x0 = d.inputs.row(i)[0];
            assert_eq!(x0 > 0.0, l == 0);
        }
    }

    #[test]
    fn spirals_are_deterministic() {
        let a = two_spirals(100, 0.05, 9).unwrap();
        let b = two_spirals(100, 0.05, 9).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.n_classes, 2);
        assert!(a.inputs.data().iter().all(|v| v.abs() < 1.5));
    }
}
