//! Gaussian discriminant state: class means, soft counts, priors and the
//! shared covariance together with the Cholesky factor of its regularized
//! form.

use crate::error::{Error, Result};
use crate::linalg::{self, CholeskyFactor, SquareMatrix};

/// One streamed feature vector. The label is ground truth for scoring only.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub feature: Vec<f64>,
    pub label: Option<usize>,
}

impl EmbeddingRecord {
    pub fn new(feature: Vec<f64>, label: Option<usize>) -> Self {
        EmbeddingRecord { feature, label }
    }

    pub fn is_finite(&self) -> bool {
        self.feature.iter().all(|v| v.is_finite())
    }
}

/// Per-class text embeddings, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTextEmbeddings {
    rows: Vec<Vec<f64>>,
    class_names: Vec<String>,
}

impl ClassTextEmbeddings {
    pub fn new(rows: Vec<Vec<f64>>, class_names: Vec<String>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 classes, got {}",
                rows.len()
            )));
        }
        if class_names.len() != rows.len() {
            return Err(Error::invalid(
                "one class name per embedding row is required",
            ));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be at least 1"));
        }
        for (y, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::invalid(format!(
                    "class {y} has dimension {}, expected {dim}",
                    row.len()
                )));
            }
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!(
                    "class {y} embedding has non-finite entries"
                )));
            }
        }
        Ok(ClassTextEmbeddings { rows, class_names })
    }

    /// Same as [`ClassTextEmbeddings::new`] with names `class_0`, `class_1`, ...
    pub fn unnamed(rows: Vec<Vec<f64>>) -> Result<Self> {
        let names = (0..rows.len()).map(|y| format!("class_{y}")).collect();
        Self::new(rows, names)
    }

    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.rows[y]
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Unit-normalizes every row. Zero rows are rejected.
    pub fn normalized(&self) -> Result<Self> {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(y, r)| {
                linalg::normalized(r)
                    .ok_or_else(|| Error::invalid(format!("class {y} embedding has zero norm")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassTextEmbeddings {
            rows,
            class_names: self.class_names.clone(),
        })
    }
}

/// Hyperparameters of the adaptation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    /// Weight of the generative logits in the fused prediction.
    pub alpha: f64,
    /// Sharpness of the entropy weighting `w = exp(-beta * H)`.
    pub beta: f64,
    /// Multiplier on the zero-shot similarities before the softmax used for
    /// entropy weighting.
    pub zero_shot_temperature: f64,
    /// Ridge coefficient relative to the mean covariance diagonal.
    pub regularization_epsilon: f64,
    /// Samples between full refactorizations of the regularized covariance.
    pub refactor_interval: u64,
    pub normalize_features: bool,
    pub adaptation_enabled: bool,
    /// Ablation switch: when false the class means, soft counts and priors
    /// stay at their initial values.
    pub update_means: bool,
    /// Ablation switch: when false the covariance stays at its initial value.
    pub update_covariance: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            alpha: 0.2,
            beta: 4.5,
            zero_shot_temperature: 100.0,
            regularization_epsilon: 1e-4,
            refactor_interval: 64,
            normalize_features: true,
            adaptation_enabled: true,
            update_means: true,
            update_covariance: true,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::invalid(msg)) };
        check(
            self.alpha >= 0.0 && self.alpha.is_finite(),
            "alpha must be finite and >= 0",
        )?;
        check(
            self.beta >= 0.0 && self.beta.is_finite(),
            "beta must be finite and >= 0",
        )?;
        check(
            self.zero_shot_temperature > 0.0 && self.zero_shot_temperature.is_finite(),
            "zero-shot temperature must be finite and > 0",
        )?;
        check(
            self.regularization_epsilon > 0.0 && self.regularization_epsilon.is_finite(),
            "regularization epsilon must be finite and > 0",
        )?;
        check(
            self.refactor_interval >= 1,
            "refactor interval must be >= 1",
        )
    }
}

/// Online Gaussian mixture with one covariance shared by all classes.
///
/// `factor` always holds the Cholesky factor of `covariance + ridge · I`.
/// Between full refactorizations it is carried along by exact scalings and
/// rank-1 updates, and the ridge contracts with the same factor as the
/// covariance; [`MixtureState::refactor`] re-anchors the ridge at
/// `epsilon · |trace(Σ)| / d` and rebuilds the factor from scratch.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    pub(crate) means: Vec<Vec<f64>>,
    pub(crate) soft_counts: Vec<f64>,
    pub(crate) priors: Vec<f64>,
    pub(crate) covariance: SquareMatrix,
    pub(crate) factor: CholeskyFactor,
    pub(crate) ridge: f64,
    pub(crate) ridge_epsilon: f64,
    pub(crate) weighted_total: f64,
    pub(crate) updates_since_refactor: u64,
}

pub const INITIAL_WEIGHTED_TOTAL: f64 = 1.0;

impl MixtureState {
    /// Means start at the text embeddings, the covariance at the identity and
    /// every class holds `1/K` of soft mass.
    pub fn init(text: &ClassTextEmbeddings, config: &AdaptConfig) -> Result<Self> {
        config.validate()?;
        let text = if config.normalize_features {
            text.normalized()?
        } else {
            text.clone()
        };
        let k = text.num_classes();
        let d = text.dim();
        let mut state = MixtureState {
            means: text.rows,
            soft_counts: vec![1.0 / k as f64; k],
            priors: vec![1.0 / k as f64; k],
            covariance: SquareMatrix::identity(d),
            factor: CholeskyFactor::identity(d),
            ridge: 0.0,
            ridge_epsilon: config.regularization_epsilon,
            weighted_total: INITIAL_WEIGHTED_TOTAL,
            updates_since_refactor: 0,
        };
        state.refactor()?;
        Ok(state)
    }

    /// Builds a state from explicit parameters. Priors are the normalized
    /// soft counts; the factor is computed from scratch.
    pub fn from_parameters(
        means: Vec<Vec<f64>>,
        soft_counts: Vec<f64>,
        covariance: SquareMatrix,
        weighted_total: f64,
        config: &AdaptConfig,
    ) -> Result<Self> {
        config.validate()?;
        let k = means.len();
        let d = covariance.dim();
        if k < 2 || d == 0 {
            return Err(Error::invalid("need at least 2 classes and dimension >= 1"));
        }
        if means
            .iter()
            .any(|m| m.len() != d || !m.iter().all(|v| v.is_finite()))
        {
            return Err(Error::invalid(
                "means must be finite with the covariance dimension",
            ));
        }
        if soft_counts.len() != k || soft_counts.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::invalid(
                "soft counts must be K finite positive values",
            ));
        }
        if !(weighted_total.is_finite() && weighted_total > 0.0) {
            return Err(Error::invalid("weighted total must be finite and > 0"));
        }
        let total: f64 = soft_counts.iter().sum();
        let mut state = MixtureState {
            priors: soft_counts.iter().map(|c| c / total).collect(),
            means,
            soft_counts,
            covariance,
            factor: CholeskyFactor::identity(d),
            ridge: 0.0,
            ridge_epsilon: config.regularization_epsilon,
            weighted_total,
            updates_since_refactor: 0,
        };
        state.refactor()?;
        Ok(state)
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn soft_counts(&self) -> &[f64] {
        &self.soft_counts
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn covariance(&self) -> &SquareMatrix {
        &self.covariance
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// Ridge currently added to the covariance diagonal.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn ridge_epsilon(&self) -> f64 {
        self.ridge_epsilon
    }

    pub fn weighted_total(&self) -> f64 {
        self.weighted_total
    }

    pub fn updates_since_refactor(&self) -> u64 {
        self.updates_since_refactor
    }

    /// `covariance + ridge · I` as a dense matrix.
    pub fn regularized_covariance(&self) -> SquareMatrix {
        let mut m = self.covariance.clone();
        m.add_diagonal(self.ridge);
        m
    }

    pub(crate) fn check_feature(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.dim() {
            return Err(Error::invalid(format!(
                "feature has dimension {}, state expects {}",
                feature.len(),
                self.dim()
            )));
        }
        if !feature.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("feature has non-finite entries"));
        }
        Ok(())
    }

    /// Returns `u` solving `(Σ + ridge · I) u = v`.
    pub fn regularized_inverse_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::invalid(format!(
                "vector has dimension {}, state expects {}",
                v.len(),
                self.dim()
            )));
        }
        let u = self.factor.solve(v);
        if u.iter().all(|x| x.is_finite()) {
            Ok(u)
        } else {
            Err(Error::NumericalBreakdown(
                "regularized solve produced non-finite values".into(),
            ))
        }
    }

    /// Symmetrizes the covariance, re-anchors the ridge and factorizes from
    /// scratch.
    pub fn refactor(&mut self) -> Result<()> {
        if !self.covariance.is_finite() {
            return Err(Error::NumericalBreakdown(
                "covariance has non-finite entries".into(),
            ));
        }
        self.covariance.symmetrize();
        let d = self.dim() as f64;
        let ridge = self.ridge_epsilon * self.covariance.trace().abs() / d;
        let mut regularized = self.covariance.clone();
        regularized.add_diagonal(ridge);
        self.factor = CholeskyFactor::factorize(&regularized)?;
        self.ridge = ridge;
        self.updates_since_refactor = 0;
        Ok(())
    }

    /// Overwrites the covariance and refactorizes. Used for ablations and
    /// diagnostics.
    pub fn set_covariance(&mut self, covariance: SquareMatrix) -> Result<()> {
        if covariance.dim() != self.dim() {
            return Err(Error::invalid("covariance dimension does not match state"));
        }
        self.covariance = covariance;
        self.refactor()
    }
}
