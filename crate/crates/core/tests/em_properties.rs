mod common;

use std::f64::consts::PI;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::*;
use tta_core::em::{entropy_weight, log_scores};
use tta_core::linalg::SquareMatrix;
use tta_core::stream_io::{generate_synthetic, SyntheticSpec};
use tta_core::{
    adapt_step, e_step, weighted_m_step, AdaptConfig, EmbeddingRecord, MixtureState, Posterior,
};

fn one_hot(k: usize, y: usize) -> Vec<f64> {
    (0..k).map(|i| if i == y { 1.0 } else { 0.0 }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_is_a_distribution(seed: u64, k in 2usize..7, d in 1usize..9, scale in 0.01f64..100.0) {
        let mut r = rng(seed);
        let state = random_state(&mut r, k, d);
        let x: Vec<f64> = gaussian(&mut r, d).into_iter().map(|v| v * scale).collect();
        let gamma = e_step(&state, &x).unwrap().gamma;
        prop_assert!((gamma.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(gamma.iter().all(|g| (0.0..=1.0).contains(g)));
    }

    #[test]
    fn weight_decreases_with_entropy(h1 in 0.0f64..5.0, gap in 1e-6f64..5.0, beta in 0.01f64..10.0) {
        let (w1, w2) = (entropy_weight(h1, beta), entropy_weight(h1 + gap, beta));
        prop_assert!(w1 > w2);
        prop_assert!(w1 <= 1.0 && w2 > 0.0);
    }

    #[test]
    fn tiny_weight_is_nearly_identity(seed: u64, k in 2usize..6, d in 1usize..8) {
        let mut r = rng(seed);
        let mut state = random_state(&mut r, k, d);
        let before = state.clone();
        let x = nearby_feature(&mut r, &state);
        let gamma = e_step(&state, &x).unwrap();
        weighted_m_step(&mut state, &x, &gamma, 1e-12).unwrap();
        for (a, b) in state.means().iter().zip(before.means()) {
            prop_assert!(max_abs_diff(a, b) <= 1e-9);
        }
        prop_assert!(max_abs_diff(state.soft_counts(), before.soft_counts()) <= 1e-9);
        prop_assert!(max_abs_diff(state.covariance().as_slice(), before.covariance().as_slice()) <= 1e-9);
    }

    #[test]
    fn beta_zero_is_the_unweighted_update(seed: u64, k in 2usize..6, d in 1usize..8) {
        let mut r = rng(seed);
        let start = random_state(&mut r, k, d);
        let x = nearby_feature(&mut r, &start);
        let mut probs: Vec<f64> = (0..k).map(|_| r.random_range(0.01..1.0)).collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);

        let config = AdaptConfig { beta: 0.0, ..raw_config() };
        let mut adapted = start.clone();
        let (_, trace) = adapt_step(&mut adapted, &x, &probs, &config).unwrap();
        prop_assert_eq!(trace.sample_weight, 1.0);

        let mut direct = start.clone();
        let gamma = e_step(&direct, &x).unwrap();
        weighted_m_step(&mut direct, &x, &gamma, 1.0).unwrap();
        prop_assert_eq!(adapted, direct);
    }

    #[test]
    fn means_stay_in_the_convex_hull(seed: u64, k in 2usize..5, d in 1usize..6, n in 1usize..60) {
        let mut r = rng(seed);
        let mut state = random_state(&mut r, k, d);
        let mut lo: Vec<Vec<f64>> = state.means().to_vec();
        let mut hi = lo.clone();
        let config = raw_config();
        for _ in 0..n {
            let x: Vec<f64> = gaussian(&mut r, d).into_iter().map(|v| 3.0 * v).collect();
            for y in 0..k {
                for j in 0..d {
                    lo[y][j] = lo[y][j].min(x[j]);
                    hi[y][j] = hi[y][j].max(x[j]);
                }
            }
            let probs = one_hot(k, r.random_range(0..k));
            adapt_step(&mut state, &x, &probs, &config).unwrap();
        }
        for (y, mean) in state.means().iter().enumerate() {
            for (j, m) in mean.iter().enumerate() {
                prop_assert!(*m >= lo[y][j] - 1e-12 && *m <= hi[y][j] + 1e-12);
            }
        }
    }

    #[test]
    fn covariance_stays_symmetric_and_counts_grow(seed: u64, k in 2usize..5, d in 1usize..8, n in 1usize..100) {
        let mut r = rng(seed);
        let mut state = random_state(&mut r, k, d);
        let config = raw_config();
        for _ in 0..n {
            let counts = state.soft_counts().to_vec();
            let x = nearby_feature(&mut r, &state);
            let mut probs: Vec<f64> = (0..k).map(|_| r.random_range(0.0..1.0)).collect();
            let total: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= total);
            adapt_step(&mut state, &x, &probs, &config).unwrap();
            prop_assert!(state.soft_counts().iter().zip(&counts).all(|(a, b)| a >= b));
            let cov = state.covariance();
            prop_assert!(cov.max_asymmetry() <= 1e-12 * cov.max_abs());
            prop_assert!((state.priors().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_space_matches_direct_density(seed: u64, k in 2usize..6, d in 1usize..9) {
        let mut r = rng(seed);
        let state = random_state(&mut r, k, d);
        let x = nearby_feature(&mut r, &state);
        let gamma = e_step(&state, &x).unwrap().gamma;

        let sigma = to_dense(&state.regularized_covariance());
        let det = sigma.clone().determinant();
        let inv = sigma.try_inverse().unwrap();
        let xv = DVector::from_column_slice(&x);
        let density: Vec<f64> = state
            .means()
            .iter()
            .zip(state.priors())
            .map(|(m, p)| {
                let diff = &xv - DVector::from_column_slice(m);
                let q = (diff.transpose() * &inv * &diff)[(0, 0)];
                p * (-0.5 * q).exp() / ((2.0 * PI).powi(d as i32) * det).sqrt()
            })
            .collect();
        let total: f64 = density.iter().sum();
        for (g, p) in gamma.iter().zip(&density) {
            let expected = p / total;
            prop_assert!((g - expected).abs() <= 1e-8 * expected.max(f64::MIN_POSITIVE), "{} vs {}", g, expected);
        }
    }

    #[test]
    fn e_step_ignores_a_common_prior_factor(seed: u64, k in 2usize..6, d in 1usize..6, c in 0.01f64..100.0) {
        let mut r = rng(seed);
        let state = random_state(&mut r, k, d);
        let scaled = MixtureState::from_parameters(
            state.means().to_vec(),
            state.soft_counts().iter().map(|n| n * c).collect(),
            state.covariance().clone(),
            state.weighted_total(),
            &raw_config(),
        )
        .unwrap();
        let x = nearby_feature(&mut r, &state);
        let a = e_step(&state, &x).unwrap().gamma;
        let b = e_step(&scaled, &x).unwrap().gamma;
        prop_assert!(max_abs_diff(&a, &b) <= 1e-12);
    }
}

#[test]
fn unrenormalized_priors_give_the_same_posterior() {
    // Priors (N_y + w γ_y) / (n + w) differ from N_y' / Σ N' by one shared
    // factor, which cancels in the softmax.
    let mut r = rng(17);
    let state = random_state(&mut r, 4, 3);
    let x = nearby_feature(&mut r, &state);
    let shift = 0.37f64.ln();
    let scores: Vec<f64> = log_scores(&state, &x)
        .unwrap()
        .into_iter()
        .map(|s| s + shift)
        .collect();
    let shifted = tta_core::linalg::softmax(&scores);
    let gamma = e_step(&state, &x).unwrap().gamma;
    assert!(max_abs_diff(&shifted, &gamma) <= 1e-14);
}

#[test]
fn invalid_posterior_is_rejected() {
    let mut r = rng(3);
    let mut state = random_state(&mut r, 3, 2);
    let bad = Posterior {
        gamma: vec![0.5, 0.6, 0.0],
    };
    assert!(weighted_m_step(&mut state, &[0.0, 0.0], &bad, 1.0).is_err());
}

/// Final means after streaming `records` (β = 0) in the given order.
fn final_means(records: &[EmbeddingRecord], text: &tta_core::ClassTextEmbeddings) -> Vec<Vec<f64>> {
    let config = AdaptConfig {
        beta: 0.0,
        ..raw_config()
    };
    let mut state = MixtureState::init(text, &config).unwrap();
    for r in records {
        let probs =
            tta_core::zero_shot_probs(&r.feature, text, config.zero_shot_temperature).unwrap();
        adapt_step(&mut state, &r.feature, &probs, &config).unwrap();
    }
    state.means().to_vec()
}

#[test]
fn reordering_a_stream_moves_means_within_sampling_error() {
    // Both orders estimate the same class means. Each estimate has standard
    // error about sqrt(tr Σ / n_y), so their gap stays within 3 · sqrt(2) of
    // that, a bound that shrinks like 1/sqrt(n).
    let cov = SquareMatrix::from_rows(&[vec![0.4, 0.05], vec![0.05, 0.3]]).unwrap();
    let mut previous_bound = f64::INFINITY;
    for n in [500usize, 4000] {
        let spec = SyntheticSpec {
            class_means: vec![vec![2.0, 0.0], vec![-2.0, 0.5]],
            shared_covariance: cov.clone(),
            class_proportions: vec![0.5, 0.5],
            text_embedding_noise: 0.2,
            samples: n,
            seed: 41,
        };
        let data = generate_synthetic(&spec).unwrap();
        let mut shuffled = data.records.clone();
        shuffled.shuffle(&mut rng(99));
        let a = final_means(&data.records, &data.text);
        let b = final_means(&shuffled, &data.text);
        let bound = 3.0 * (2.0 * cov.trace() / (n as f64 / 2.0)).sqrt();
        for (ma, mb) in a.iter().zip(&b) {
            let gap = ma
                .iter()
                .zip(mb)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(gap <= bound, "n={n}: gap {gap} above {bound}");
        }
        assert!(bound < previous_bound);
        previous_bound = bound;
    }
}
