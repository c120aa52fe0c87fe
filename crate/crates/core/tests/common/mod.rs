#![allow(dead_code)]

use ircal_core::imaging::ImageTensor;
use ndarray::{Array3, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(seed: u64, c: usize, h: usize, w: usize) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::new(Array3::from_shape_fn((c, h, w), |_| rng.random_range(0.0..1.0))).unwrap()
}

pub fn uniform(seed: u64, shape: &[usize], lo: f64, hi: f64) -> ArrayD<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.random_range(lo..hi))
}

/// Per-window SSIM evaluated directly from weighted sums of deviations.
pub fn ssim_oracle(x: &Array3<f64>, y: &Array3<f64>, k: usize, sigma: f64, c1: f64, c2: f64) -> f64 {
    let half = (k / 2) as f64;
    let g1: Vec<f64> = (0..k)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = g1.iter().sum();
    let wts: Vec<Vec<f64>> = (0..k)
        .map(|a| (0..k).map(|b| g1[a] * g1[b] / (total * total)).collect())
        .collect();
    let (c, h, w) = x.dim();
    let mut acc = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for i in 0..=h - k {
            for j in 0..=w - k {
                let (mut mx, mut my) = (0.0, 0.0);
                for a in 0..k {
                    for b in 0..k {
                        mx += wts[a][b] * x[[ch, i + a, j + b]];
                        my += wts[a][b] * y[[ch, i + a, j + b]];
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for a in 0..k {
                    for b in 0..k {
                        let dx = x[[ch, i + a, j + b]] - mx;
                        let dy = y[[ch, i + a, j + b]] - my;
                        vx += wts[a][b] * dx * dx;
                        vy += wts[a][b] * dy * dy;
                        cxy += wts[a][b] * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    acc / count as f64
}

/// Batched (N, C, H, W) version of [`ssim_oracle`]: mean over samples.
pub fn ssim_oracle_batch(x: &ArrayD<f64>, y: &ArrayD<f64>, k: usize, c1: f64, c2: f64) -> f64 {
    let n = x.shape()[0];
    (0..n)
        .map(|i| {
            let xi = x.index_axis(ndarray::Axis(0), i).to_owned().into_dimensionality().unwrap();
            let yi = y.index_axis(ndarray::Axis(0), i).to_owned().into_dimensionality().unwrap();
            ssim_oracle(&xi, &yi, k, 1.5, c1, c2)
        })
        .sum::<f64>()
        / n as f64
}
