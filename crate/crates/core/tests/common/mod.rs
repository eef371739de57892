#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tta_core::linalg::SquareMatrix;
use tta_core::{AdaptConfig, MixtureState};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn to_dense(m: &SquareMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.dim(), m.dim(), m.as_slice())
}

pub fn from_dense(m: &DMatrix<f64>) -> SquareMatrix {
    SquareMatrix::from_row_major(m.nrows(), m.transpose().iter().copied().collect()).unwrap()
}

/// `A Aᵀ + shift · I` with Gaussian `A`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, shift: f64) -> SquareMatrix {
    let a = DMatrix::from_vec(d, d, gaussian(rng, d * d));
    from_dense(&(&a * a.transpose() + DMatrix::identity(d, d) * shift))
}

pub fn raw_config() -> AdaptConfig {
    AdaptConfig {
        normalize_features: false,
        ..AdaptConfig::default()
    }
}

/// Random means, soft counts and SPD covariance.
pub fn random_state(rng: &mut ChaCha8Rng, k: usize, d: usize) -> MixtureState {
    let means = (0..k).map(|_| gaussian(rng, d)).collect();
    let counts = (0..k).map(|_| rng.random_range(0.1..3.0)).collect();
    let cov = random_spd(rng, d, 0.2);
    MixtureState::from_parameters(means, counts, cov, 5.0, &raw_config()).unwrap()
}

/// A feature near one of the state's means.
pub fn nearby_feature(rng: &mut ChaCha8Rng, state: &MixtureState) -> Vec<f64> {
    let y = rng.random_range(0..state.num_classes());
    state.means()[y]
        .iter()
        .zip(gaussian(rng, state.dim()))
        .map(|(m, g)| m + g)
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
