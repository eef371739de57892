//! Deterministic shifted Gaussian-mixture streams.
//!
//! Generator, in draw order, from `ChaCha8Rng::seed_from_u64(seed)`:
//!
//! 1. For each class `y`, for each coordinate: `g ~ N(0, 1)`; the text
//!    embedding is `normalize(μ_y + noise · g)`.
//! 2. For each sample: `u ~ U[0, 1)` picks the first class whose cumulative
//!    proportion exceeds `u`; then `z ~ N(0, I_d)` and the feature is
//!    `μ_y + Uᵀ z` where `Σ = Uᵀ U` is the Cholesky factorization.
//!
//! Standard normals come from `rand_distr::StandardNormal`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, CholeskyFactor, SquareMatrix};
use crate::state::{ClassTextEmbeddings, EmbeddingRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub class_means: Vec<Vec<f64>>,
    pub shared_covariance: SquareMatrix,
    pub class_proportions: Vec<f64>,
    /// Per-coordinate standard deviation of the perturbation that turns the
    /// true means into text embeddings.
    pub text_embedding_noise: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub text: ClassTextEmbeddings,
    pub records: Vec<EmbeddingRecord>,
}

impl SyntheticSpec {
    /// Mixture with uniform proportions, isotropic covariance `variance · I`
    /// and means from [`random_class_means`].
    pub fn isotropic(
        num_classes: usize,
        dim: usize,
        separation: f64,
        variance: f64,
        text_embedding_noise: f64,
        samples: usize,
        seed: u64,
    ) -> Self {
        let mut cov = SquareMatrix::identity(dim);
        cov.scale(variance);
        SyntheticSpec {
            class_means: random_class_means(num_classes, dim, separation, seed),
            shared_covariance: cov,
            class_proportions: vec![1.0 / num_classes as f64; num_classes],
            text_embedding_noise,
            samples,
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn dim(&self) -> usize {
        self.shared_covariance.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        let d = self.dim();
        if k < 2 {
            return Err(Error::invalid("at least 2 classes are required"));
        }
        if d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if self
            .class_means
            .iter()
            .any(|m| m.len() != d || !m.iter().all(|v| v.is_finite()))
        {
            return Err(Error::invalid(
                "class means must be finite with dimension d",
            ));
        }
        if self.class_proportions.len() != k
            || self
                .class_proportions
                .iter()
                .any(|p| !(p.is_finite() && *p >= 0.0))
            || (self.class_proportions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(
                "class proportions must be a distribution over K classes",
            ));
        }
        if !(self.text_embedding_noise >= 0.0 && self.text_embedding_noise.is_finite()) {
            return Err(Error::invalid(
                "text embedding noise must be finite and >= 0",
            ));
        }
        if self.shared_covariance.max_asymmetry() > 1e-12 * self.shared_covariance.max_abs() {
            return Err(Error::invalid("shared covariance is not symmetric"));
        }
        Ok(())
    }
}

/// `separation · normalize(g)` per class, `g ~ N(0, I_d)`, drawn from stream 1
/// of `ChaCha8Rng::seed_from_u64(seed)` so it never overlaps the sample draws.
pub fn random_class_means(
    num_classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..num_classes)
        .map(|_| loop {
            let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            if let Some(unit) = linalg::normalized(&g) {
                break unit.into_iter().map(|v| v * separation).collect();
            }
        })
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let d = spec.dim();
    let factor = CholeskyFactor::factorize(&spec.shared_covariance)
        .map_err(|_| Error::invalid("shared covariance is not positive definite"))?;
    let upper = factor.upper();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut rows = Vec::with_capacity(spec.num_classes());
    for (y, mean) in spec.class_means.iter().enumerate() {
        let perturbed: Vec<f64> = mean
            .iter()
            .map(|m| {
                let g: f64 = rng.sample(StandardNormal);
                m + spec.text_embedding_noise * g
            })
            .collect();
        rows.push(
            linalg::normalized(&perturbed)
                .ok_or_else(|| Error::invalid(format!("text embedding for class {y} is zero")))?,
        );
    }
    let text = ClassTextEmbeddings::unnamed(rows)?;

    let cumulative: Vec<f64> = spec
        .class_proportions
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let mut records = Vec::with_capacity(spec.samples);
    let mut z = vec![0.0; d];
    for _ in 0..spec.samples {
        let u: f64 = rng.random();
        let class = cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(spec.num_classes() - 1);
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let mut feature = spec.class_means[class].clone();
        // feature += Uᵀ z
        for (k, &zk) in z.iter().enumerate() {
            for (f, &ukj) in feature[k..].iter_mut().zip(&upper.row(k)[k..]) {
                *f += ukj * zk;
            }
        }
        records.push(EmbeddingRecord::new(feature, Some(class)));
    }
    Ok(SyntheticData { text, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_output() {
        let spec = SyntheticSpec::isotropic(3, 5, 2.0, 0.5, 0.3, 50, 9);
        assert_eq!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&spec).unwrap()
        );
        let other = SyntheticSpec {
            seed: 10,
            ..spec.clone()
        };
        assert_ne!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn non_spd_covariance_rejected() {
        let mut spec = SyntheticSpec::isotropic(2, 2, 1.0, 1.0, 0.0, 10, 1);
        spec.shared_covariance = SquareMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(
            generate_synthetic(&spec),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn bad_proportions_rejected() {
        let mut spec = SyntheticSpec::isotropic(2, 2, 1.0, 1.0, 0.0, 10, 1);
        spec.class_proportions = vec![0.7, 0.7];
        assert!(matches!(
            generate_synthetic(&spec),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn text_embeddings_are_unit_norm() {
        let data =
            generate_synthetic(&SyntheticSpec::isotropic(4, 6, 3.0, 0.1, 0.5, 0, 2)).unwrap();
        for row in data.text.rows() {
            assert!((linalg::norm(row) - 1.0).abs() < 1e-12);
        }
    }
}
