#![allow(dead_code)]

use lagkit::gmm::{accumulate_stats, map_adapt};
use lagkit::{AdaptationConfig, DiagonalGmm, PatchSet};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the tests independent of the library's sampler
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn random_gmm(rng: &mut ChaCha8Rng, k: usize, d: usize) -> DiagonalGmm {
    let raw: Vec<f64> = (0..k).map(|_| 0.1 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let weights = Array1::from_iter(raw.iter().map(|w| w / total));
    let means = Array2::from_shape_fn((k, d), |_| 2.0 * gaussian(rng));
    let stds = Array2::from_shape_fn((k, d), |_| (rng.random::<f64>() * 2.0 - 1.0).exp());
    DiagonalGmm::new(weights, means, stds).unwrap()
}

/// Draws `t` patches from `model`.
pub fn sample(model: &DiagonalGmm, t: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut out = Array2::zeros((t, model.dim()));
    for r in 0..t {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = model.components() - 1;
        for (c, w) in model.weights().iter().enumerate() {
            acc += w;
            if u < acc {
                k = c;
                break;
            }
        }
        for j in 0..model.dim() {
            out[[r, j]] = model.means()[[k, j]] + model.stds()[[k, j]] * gaussian(rng);
        }
    }
    out
}

pub fn random_patch_set(model: &DiagonalGmm, t: usize, rng: &mut ChaCha8Rng) -> PatchSet {
    let features = sample(model, t, rng);
    let coords = Array2::from_shape_fn((t, 2), |_| rng.random::<f64>());
    PatchSet::new(features, coords).unwrap()
}

/// Adapts `ubm` to `t` patches drawn from a shifted copy of itself.
pub fn adapted(ubm: &DiagonalGmm, t: usize, rng: &mut ChaCha8Rng) -> DiagonalGmm {
    let shifted = DiagonalGmm::new(
        ubm.weights().to_owned(),
        ubm.means().mapv(|m| m + 0.5),
        ubm.stds().mapv(|s| s * 1.3),
    )
    .unwrap();
    let data = sample(&shifted, t, rng);
    let stats = accumulate_stats(ubm, data.view()).unwrap();
    map_adapt(ubm, &stats, &AdaptationConfig::default()).unwrap().0
}
