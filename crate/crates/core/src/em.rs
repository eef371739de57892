//! One-sample-at-a-time EM over a [`MixtureState`]: posterior responsibilities
//! and the confidence-weighted parameter update.

use crate::error::{Error, Result};
use crate::linalg::{self, softmax};
use crate::predictor::self_entropy;
use crate::state::{AdaptConfig, MixtureState};

/// Posterior class responsibilities for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub gamma: Vec<f64>,
}

impl Posterior {
    pub fn argmax(&self) -> usize {
        linalg::argmax(&self.gamma)
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.gamma.len() != k {
            return Err(Error::invalid(format!(
                "posterior has {} entries, state has {k} classes",
                self.gamma.len()
            )));
        }
        if !self.gamma.iter().all(|g| (0.0..=1.0).contains(g)) {
            return Err(Error::invalid("posterior entries must lie in [0, 1]"));
        }
        let total: f64 = self.gamma.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "posterior sums to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// What a single M-step did.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateTrace {
    pub sample_weight: f64,
    pub gamma: Posterior,
    pub pre_total: f64,
    pub post_total: f64,
}

/// Which parameter groups an M-step touches. `means` covers the per-class
/// statistics: means, soft counts and priors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateScope {
    pub means: bool,
    pub covariance: bool,
}

impl UpdateScope {
    pub const FULL: UpdateScope = UpdateScope {
        means: true,
        covariance: true,
    };

    pub fn from_config(config: &AdaptConfig) -> Self {
        UpdateScope {
            means: config.update_means,
            covariance: config.update_covariance,
        }
    }
}

/// Class log-scores `ln π_y − ½ (x − μ_y)ᵀ Σ_reg⁻¹ (x − μ_y)`. The Gaussian
/// normalizer is common to all classes and dropped.
pub fn log_scores(state: &MixtureState, feature: &[f64]) -> Result<Vec<f64>> {
    state.check_feature(feature)?;
    let mut diff = vec![0.0; feature.len()];
    let scores: Vec<f64> = state
        .means
        .iter()
        .zip(&state.priors)
        .map(|(mean, &prior)| {
            for ((d, x), m) in diff.iter_mut().zip(feature).zip(mean) {
                *d = x - m;
            }
            prior.ln() - 0.5 * state.factor.inverse_quadratic_form(&diff)
        })
        .collect();
    if scores.iter().all(|s| s.is_finite()) {
        Ok(scores)
    } else {
        Err(Error::NumericalBreakdown(
            "non-finite Mahalanobis distance".into(),
        ))
    }
}

/// E-step: `γ_y ∝ π_y · N(x | μ_y, Σ_reg)`, evaluated in log space.
pub fn e_step(state: &MixtureState, feature: &[f64]) -> Result<Posterior> {
    Ok(Posterior {
        gamma: softmax(&log_scores(state, feature)?),
    })
}

/// M-step with sample weight `w ∈ (0, 1]`, updating every parameter group.
pub fn weighted_m_step(
    state: &mut MixtureState,
    feature: &[f64],
    gamma: &Posterior,
    sample_weight: f64,
) -> Result<UpdateTrace> {
    weighted_m_step_scoped(state, feature, gamma, sample_weight, UpdateScope::FULL)
}

/// M-step restricted to `scope`.
///
/// For every class, with `a_y = w · γ_y`:
///
/// ```text
/// N_y' = N_y + a_y
/// μ_y' = (N_y μ_y + a_y x) / N_y'
/// Σ'   = (max(n−1, 1) Σ + Σ_y a_y (x − μ_y')(x − μ_y')ᵀ) / max(n+w−1, 1)
/// n'   = n + w
/// π_y' = N_y' / Σ_j N_j'
/// ```
///
/// The covariance factor follows the same recursion: it is scaled by the
/// contraction `max(n−1,1)/max(n+w−1,1)` and receives one rank-1 update per
/// class. It is not refactorized here; see [`adapt_step`].
pub fn weighted_m_step_scoped(
    state: &mut MixtureState,
    feature: &[f64],
    gamma: &Posterior,
    sample_weight: f64,
    scope: UpdateScope,
) -> Result<UpdateTrace> {
    if !(sample_weight > 0.0 && sample_weight <= 1.0) {
        return Err(Error::invalid(format!(
            "sample weight {sample_weight} outside (0, 1]"
        )));
    }
    state.check_feature(feature)?;
    gamma.validate(state.num_classes())?;

    let pre_total = state.weighted_total;
    let masses: Vec<f64> = gamma.gamma.iter().map(|g| sample_weight * g).collect();

    if scope.means {
        for ((mean, count), &mass) in state
            .means
            .iter_mut()
            .zip(&mut state.soft_counts)
            .zip(&masses)
        {
            let new_count = *count + mass;
            if mass > 0.0 {
                let step = mass / new_count;
                for (m, x) in mean.iter_mut().zip(feature) {
                    *m += step * (x - *m);
                }
            }
            *count = new_count;
        }
        let total_mass: f64 = state.soft_counts.iter().sum();
        for (p, n) in state.priors.iter_mut().zip(&state.soft_counts) {
            *p = n / total_mass;
        }
    }

    if scope.covariance {
        let before = (pre_total - 1.0).max(1.0);
        let after = (pre_total + sample_weight - 1.0).max(1.0);
        let contraction = before / after;
        if contraction != 1.0 {
            state.covariance.scale(contraction);
            state.factor.scale(contraction);
            state.ridge *= contraction;
        }
        let mut residual = vec![0.0; feature.len()];
        for (mean, &mass) in state.means.iter().zip(&masses) {
            if mass == 0.0 {
                continue;
            }
            let coeff = mass / after;
            for ((r, x), m) in residual.iter_mut().zip(feature).zip(mean) {
                *r = x - m;
            }
            state.covariance.add_outer(coeff, &residual);
            let root = coeff.sqrt();
            residual.iter_mut().for_each(|r| *r *= root);
            state.factor.rank_one_update(&mut residual);
        }
    }

    state.weighted_total = pre_total + sample_weight;
    state.updates_since_refactor += 1;

    Ok(UpdateTrace {
        sample_weight,
        gamma: gamma.clone(),
        pre_total,
        post_total: state.weighted_total,
    })
}

/// `w(h) = exp(−β h)`.
pub fn entropy_weight(entropy: f64, beta: f64) -> f64 {
    (-beta * entropy).exp()
}

pub(crate) fn validate_distribution(probs: &[f64], k: usize) -> Result<()> {
    if probs.len() != k {
        return Err(Error::invalid(format!(
            "expected {k} probabilities, got {}",
            probs.len()
        )));
    }
    if !probs.iter().all(|p| p.is_finite() && *p >= 0.0) {
        return Err(Error::invalid(
            "probabilities must be finite and non-negative",
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Full adaptation step for one sample: entropy weight from the zero-shot
/// distribution, E-step, then the weighted M-step. Refactorizes once
/// `refactor_interval` updates have accumulated.
///
/// With adaptation disabled the state is left untouched and the trace
/// records a zero-weight update.
pub fn adapt_step(
    state: &mut MixtureState,
    feature: &[f64],
    zero_shot_probs: &[f64],
    config: &AdaptConfig,
) -> Result<(Posterior, UpdateTrace)> {
    let posterior = e_step(state, feature)?;
    adapt_with_posterior(state, feature, posterior, zero_shot_probs, config)
}

/// [`adapt_step`] with the E-step already evaluated on the current state.
pub(crate) fn adapt_with_posterior(
    state: &mut MixtureState,
    feature: &[f64],
    posterior: Posterior,
    zero_shot_probs: &[f64],
    config: &AdaptConfig,
) -> Result<(Posterior, UpdateTrace)> {
    validate_distribution(zero_shot_probs, state.num_classes())?;
    let weight = entropy_weight(self_entropy(zero_shot_probs), config.beta);

    if !config.adaptation_enabled || weight <= 0.0 {
        let total = state.weighted_total;
        let trace = UpdateTrace {
            sample_weight: 0.0,
            gamma: posterior.clone(),
            pre_total: total,
            post_total: total,
        };
        return Ok((posterior, trace));
    }

    let trace = weighted_m_step_scoped(
        state,
        feature,
        &posterior,
        weight.min(1.0),
        UpdateScope::from_config(config),
    )?;
    if state.updates_since_refactor >= config.refactor_interval {
        state.refactor()?;
    }
    Ok((posterior, trace))
}
