//! Zero-shot scoring, the generative linear discriminant, and their fusion.

use crate::em::{self, Posterior};
use crate::error::{Error, Result};
use crate::linalg::{argmax, dot, softmax};
use crate::state::{AdaptConfig, ClassTextEmbeddings, MixtureState};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutcome {
    /// Unscaled similarities `F · T_y`.
    pub similarities: Vec<f64>,
    pub zero_shot_probs: Vec<f64>,
    pub self_entropy: f64,
    pub posterior: Posterior,
    pub fused_logits: Vec<f64>,
    pub predicted_class: usize,
    /// Entropy weight this sample would carry in an update.
    pub sample_weight: f64,
}

impl PredictionOutcome {
    /// Zero-shot decision: argmax of the similarities.
    pub fn zero_shot_class(&self) -> usize {
        argmax(&self.similarities)
    }
}

fn check_text(feature: &[f64], text: &ClassTextEmbeddings) -> Result<()> {
    if feature.len() != text.dim() {
        return Err(Error::invalid(format!(
            "feature has dimension {}, text embeddings have {}",
            feature.len(),
            text.dim()
        )));
    }
    if !feature.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("feature has non-finite entries"));
    }
    Ok(())
}

/// Raw similarities `F · T_y`. These are cosines when both sides are
/// unit-normalized.
pub fn zero_shot_logits(feature: &[f64], text: &ClassTextEmbeddings) -> Result<Vec<f64>> {
    check_text(feature, text)?;
    Ok(text.rows().iter().map(|t| dot(feature, t)).collect())
}

/// `softmax(temperature · F · T_y)`.
pub fn zero_shot_probs(
    feature: &[f64],
    text: &ClassTextEmbeddings,
    temperature: f64,
) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid("temperature must be finite and > 0"));
    }
    let scaled: Vec<f64> = zero_shot_logits(feature, text)?
        .into_iter()
        .map(|l| l * temperature)
        .collect();
    Ok(softmax(&scaled))
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn self_entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// `w_yᵀ F + b_y` with `w_y = Σ_reg⁻¹ μ_y` and
/// `b_y = ln π_y − ½ μ_yᵀ Σ_reg⁻¹ μ_y`.
///
/// With `Σ_reg = Uᵀ U` both terms come from `U⁻ᵀ μ_y` and `U⁻ᵀ F`.
pub fn generative_logits(state: &MixtureState, feature: &[f64]) -> Result<Vec<f64>> {
    state.check_feature(feature)?;
    let factor = state.factor();
    let mut whitened_feature = feature.to_vec();
    factor.solve_lower_in_place(&mut whitened_feature);
    let mut whitened_mean = vec![0.0; feature.len()];
    let logits: Vec<f64> = state
        .means()
        .iter()
        .zip(state.priors())
        .map(|(mean, &prior)| {
            whitened_mean.copy_from_slice(mean);
            factor.solve_lower_in_place(&mut whitened_mean);
            dot(&whitened_mean, &whitened_feature) + prior.ln()
                - 0.5 * dot(&whitened_mean, &whitened_mean)
        })
        .collect();
    if logits.iter().all(|l| l.is_finite()) {
        Ok(logits)
    } else {
        Err(Error::NumericalBreakdown(
            "non-finite generative logit".into(),
        ))
    }
}

/// `logits_y = F · T_y + α (w_yᵀ F + b_y)`.
///
/// The fused term uses the unscaled similarity; the temperature only enters
/// the zero-shot distribution that drives the entropy weight. `text` is used
/// as given, so callers normalize it together with the features.
pub fn fused_predict(
    state: &MixtureState,
    feature: &[f64],
    text: &ClassTextEmbeddings,
    config: &AdaptConfig,
) -> Result<PredictionOutcome> {
    if text.num_classes() != state.num_classes() {
        return Err(Error::invalid(
            "text embeddings and state disagree on class count",
        ));
    }
    let similarities = zero_shot_logits(feature, text)?;
    let scaled: Vec<f64> = similarities
        .iter()
        .map(|s| s * config.zero_shot_temperature)
        .collect();
    let zero_shot_probs = softmax(&scaled);
    let entropy = self_entropy(&zero_shot_probs);
    let generative = generative_logits(state, feature)?;
    let fused_logits: Vec<f64> = similarities
        .iter()
        .zip(&generative)
        .map(|(s, g)| s + config.alpha * g)
        .collect();
    let posterior = em::e_step(state, feature)?;
    Ok(PredictionOutcome {
        predicted_class: argmax(&fused_logits),
        sample_weight: em::entropy_weight(entropy, config.beta),
        zero_shot_probs,
        self_entropy: entropy,
        posterior,
        fused_logits,
        similarities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axes() -> ClassTextEmbeddings {
        ClassTextEmbeddings::unnamed(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn softmax_of_unit_similarity() {
        let p = zero_shot_probs(&[1.0, 0.0], &axes(), 1.0).unwrap();
        assert!((p[0] - 0.7311).abs() < 1e-4);
        assert!((p[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn orthogonal_feature_is_uniform() {
        let text = ClassTextEmbeddings::unnamed(vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![-1.0, 0.0, 0.0],
        ])
        .unwrap();
        let p = zero_shot_probs(&[0.0, 0.0, 1.0], &text, 100.0).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(self_entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((self_entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        // -(0.5 ln 0.5 + 2 * 0.25 ln 0.25) = 1.5 ln 2
        assert!((self_entropy(&[0.5, 0.25, 0.25]) - 1.0397).abs() < 1e-4);
    }

    #[test]
    fn identity_state_logits_reduce_to_nearest_mean() {
        let state = MixtureState::init(&axes(), &AdaptConfig::default()).unwrap();
        let g = generative_logits(&state, &[1.0, 0.0]).unwrap();
        let scale = 1.0 / (1.0 + state.ridge());
        assert!((g[0] - g[1] - scale).abs() < 1e-12);
        assert!((g[0] - g[1] - 1.0).abs() < 2e-4);
        assert_eq!(argmax(&g), 0);
    }

    #[test]
    fn alpha_zero_is_zero_shot() {
        let state = MixtureState::init(&axes(), &AdaptConfig::default()).unwrap();
        let cfg = AdaptConfig {
            alpha: 0.0,
            ..AdaptConfig::default()
        };
        for x in [[0.6, 0.8], [0.8, 0.6], [-0.6, 0.8]] {
            let out = fused_predict(&state, &x, &axes(), &cfg).unwrap();
            assert_eq!(out.predicted_class, out.zero_shot_class());
        }
    }

    #[test]
    fn ties_go_to_lower_index() {
        let state = MixtureState::init(&axes(), &AdaptConfig::default()).unwrap();
        let x = [std::f64::consts::FRAC_1_SQRT_2; 2];
        let out = fused_predict(&state, &x, &axes(), &AdaptConfig::default()).unwrap();
        assert_eq!(out.fused_logits[0], out.fused_logits[1]);
        assert_eq!(out.predicted_class, 0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(zero_shot_logits(&[1.0, 0.0, 0.0], &axes()).is_err());
    }
}
