//! Sequential evaluation loop, ablations and the batch-EM comparison.
//!
//! The loop is strictly batch size 1: each sample is predicted with the
//! state built from the samples before it, and only then used to adapt.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::batch::{batch_em, BatchEmOptions, BatchEmResult};
use crate::em::adapt_with_posterior;
use crate::error::{Error, Result};
use crate::linalg::{self, SquareMatrix};
use crate::predictor::fused_predict;
use crate::state::{AdaptConfig, ClassTextEmbeddings, EmbeddingRecord, MixtureState};

/// One line of the per-sample log.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLog {
    pub index: u64,
    pub label: Option<usize>,
    pub zero_shot: usize,
    pub predicted: usize,
    pub entropy: f64,
    pub weight: f64,
}

impl SampleLog {
    pub const CSV_HEADER: &'static str = "index,label,zero_shot,predicted,entropy,weight";

    pub fn csv_line(&self) -> String {
        let label = self.label.map(|l| l.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{:e},{:e}",
            self.index, label, self.zero_shot, self.predicted, self.entropy, self.weight
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Records consumed, including skipped ones.
    pub total: u64,
    pub labeled: u64,
    pub correct_fused: u64,
    pub correct_zero_shot: u64,
    pub skipped: u64,
    pub top1_fused: f64,
    pub top1_zero_shot: f64,
    pub mean_sample_weight: f64,
    pub wall_time: Duration,
    pub config_echo: AdaptConfig,
}

impl RunReport {
    /// Key-value rendering. Wall time is left out so reports stay
    /// byte-identical across runs.
    pub fn render(&self) -> String {
        let c = &self.config_echo;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k}: {v}").unwrap();
        kv("total", self.total.to_string());
        kv("labeled", self.labeled.to_string());
        kv("skipped", self.skipped.to_string());
        kv("correct_fused", self.correct_fused.to_string());
        kv("correct_zero_shot", self.correct_zero_shot.to_string());
        kv("top1_fused", format!("{:.6}", self.top1_fused));
        kv("top1_zero_shot", format!("{:.6}", self.top1_zero_shot));
        kv(
            "mean_sample_weight",
            format!("{:.6}", self.mean_sample_weight),
        );
        kv("alpha", c.alpha.to_string());
        kv("beta", c.beta.to_string());
        kv("zero_shot_temperature", c.zero_shot_temperature.to_string());
        kv(
            "regularization_epsilon",
            c.regularization_epsilon.to_string(),
        );
        kv("refactor_interval", c.refactor_interval.to_string());
        kv("normalize_features", c.normalize_features.to_string());
        kv("adaptation_enabled", c.adaptation_enabled.to_string());
        kv("update_means", c.update_means.to_string());
        kv("update_covariance", c.update_covariance.to_string());
        out
    }
}

/// Text embeddings as the engine sees them under `config`.
pub fn prepare_text(
    text: &ClassTextEmbeddings,
    config: &AdaptConfig,
) -> Result<ClassTextEmbeddings> {
    if config.normalize_features {
        text.normalized()
    } else {
        Ok(text.clone())
    }
}

/// Feature as the engine sees it; `None` if it has to be skipped.
pub fn prepare_feature(feature: &[f64], config: &AdaptConfig) -> Option<Vec<f64>> {
    if !feature.iter().all(|v| v.is_finite()) {
        return None;
    }
    if config.normalize_features {
        linalg::normalized(feature)
    } else {
        Some(feature.to_vec())
    }
}

fn at_record(index: u64, err: Error) -> Error {
    match err {
        Error::InvalidInput(msg) => Error::InvalidInput(format!("record {index}: {msg}")),
        Error::NumericalBreakdown(msg) => {
            Error::NumericalBreakdown(format!("record {index}: {msg}"))
        }
        other => other,
    }
}

/// Streams `records` through predict-then-adapt. `on_sample` sees every
/// non-skipped sample in order. Returns the report and the final state.
pub fn run_stream<I, F>(
    text: &ClassTextEmbeddings,
    records: I,
    config: &AdaptConfig,
    mut on_sample: F,
) -> Result<(RunReport, MixtureState)>
where
    I: IntoIterator<Item = Result<EmbeddingRecord>>,
    F: FnMut(&SampleLog) -> Result<()>,
{
    let started = Instant::now();
    config.validate()?;
    let text = prepare_text(text, config)?;
    let mut state = MixtureState::init(&text, config)?;
    let k = text.num_classes();

    let mut total = 0u64;
    let mut labeled = 0u64;
    let mut skipped = 0u64;
    let mut correct_fused = 0u64;
    let mut correct_zero_shot = 0u64;
    let mut weight_sum = 0.0;

    for record in records {
        let record = record?;
        let index = total;
        total += 1;
        if record.feature.len() != text.dim() {
            return Err(Error::invalid(format!(
                "record {index}: dimension {} does not match {}",
                record.feature.len(),
                text.dim()
            )));
        }
        if record.label.is_some_and(|y| y >= k) {
            return Err(Error::invalid(format!(
                "record {index}: label out of range"
            )));
        }
        let Some(feature) = prepare_feature(&record.feature, config) else {
            skipped += 1;
            continue;
        };

        let outcome =
            fused_predict(&state, &feature, &text, config).map_err(|e| at_record(index, e))?;
        if config.adaptation_enabled {
            adapt_with_posterior(
                &mut state,
                &feature,
                outcome.posterior.clone(),
                &outcome.zero_shot_probs,
                config,
            )
            .map_err(|e| at_record(index, e))?;
        }

        let zero_shot = outcome.zero_shot_class();
        if let Some(y) = record.label {
            labeled += 1;
            correct_fused += u64::from(outcome.predicted_class == y);
            correct_zero_shot += u64::from(zero_shot == y);
        }
        weight_sum += outcome.sample_weight;
        on_sample(&SampleLog {
            index,
            label: record.label,
            zero_shot,
            predicted: outcome.predicted_class,
            entropy: outcome.self_entropy,
            weight: outcome.sample_weight,
        })?;
    }

    let processed = total - skipped;
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let report = RunReport {
        total,
        labeled,
        correct_fused,
        correct_zero_shot,
        skipped,
        top1_fused: ratio(correct_fused, labeled),
        top1_zero_shot: ratio(correct_zero_shot, labeled),
        mean_sample_weight: if processed == 0 {
            0.0
        } else {
            weight_sum / processed as f64
        },
        wall_time: started.elapsed(),
        config_echo: config.clone(),
    };
    Ok((report, state))
}

/// Convenience wrapper over in-memory records without a per-sample callback.
pub fn run_records(
    text: &ClassTextEmbeddings,
    records: &[EmbeddingRecord],
    config: &AdaptConfig,
) -> Result<(RunReport, MixtureState)> {
    run_stream(text, records.iter().cloned().map(Ok), config, |_| Ok(()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationRow {
    ZeroShot,
    Full,
    FrozenMeans,
    FrozenCovariance,
    NoEntropyWeighting,
}

impl AblationRow {
    pub const ALL: [AblationRow; 5] = [
        AblationRow::ZeroShot,
        AblationRow::Full,
        AblationRow::FrozenMeans,
        AblationRow::FrozenCovariance,
        AblationRow::NoEntropyWeighting,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AblationRow::ZeroShot => "zero-shot",
            AblationRow::Full => "full",
            AblationRow::FrozenMeans => "frozen means",
            AblationRow::FrozenCovariance => "frozen covariance",
            AblationRow::NoEntropyWeighting => "no entropy weighting (beta=0)",
        }
    }

    /// Adjusts `base` for this row. The zero-shot row reuses the full run.
    pub fn config(self, base: &AdaptConfig) -> AdaptConfig {
        let mut c = base.clone();
        match self {
            AblationRow::ZeroShot | AblationRow::Full => {}
            AblationRow::FrozenMeans => c.update_means = false,
            AblationRow::FrozenCovariance => c.update_covariance = false,
            AblationRow::NoEntropyWeighting => c.beta = 0.0,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<(AblationRow, f64)>,
}

impl AblationTable {
    pub fn accuracy(&self, row: AblationRow) -> f64 {
        self.rows
            .iter()
            .find(|(r, _)| *r == row)
            .map(|(_, a)| *a)
            .unwrap_or(f64::NAN)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("row  method                          top1\n");
        for (i, (row, acc)) in self.rows.iter().enumerate() {
            writeln!(out, "{:<4} {:<31} {:.6}", i + 1, row.label(), acc).unwrap();
        }
        out
    }
}

pub fn ablate(
    text: &ClassTextEmbeddings,
    records: &[EmbeddingRecord],
    base: &AdaptConfig,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(AblationRow::ALL.len());
    for row in AblationRow::ALL {
        if row == AblationRow::ZeroShot {
            continue;
        }
        let (report, _) = run_records(text, records, &row.config(base))?;
        if row == AblationRow::Full {
            rows.push((AblationRow::ZeroShot, report.top1_zero_shot));
        }
        rows.push((row, report.top1_fused));
    }
    Ok(AblationTable { rows })
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub batch: BatchEmResult,
    pub online_means: Vec<Vec<f64>>,
    pub online_covariance: SquareMatrix,
    pub online_priors: Vec<f64>,
    /// Euclidean distance between online and batch mean, per class.
    pub mean_distances: Vec<f64>,
    pub covariance_distance: f64,
}

impl OracleReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let fmt_vec = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.6}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(out, "batch_converged: {}", self.batch.converged).unwrap();
        writeln!(out, "batch_iterations: {}", self.batch.iterations).unwrap();
        writeln!(
            out,
            "batch_log_likelihood: {:.9}",
            self.batch.log_likelihood
        )
        .unwrap();
        for (y, (b, o)) in self.batch.means.iter().zip(&self.online_means).enumerate() {
            writeln!(out, "class {y} batch_mean: {}", fmt_vec(b)).unwrap();
            writeln!(out, "class {y} online_mean: {}", fmt_vec(o)).unwrap();
            writeln!(
                out,
                "class {y} mean_distance: {:.6e}",
                self.mean_distances[y]
            )
            .unwrap();
        }
        writeln!(out, "batch_priors: {}", fmt_vec(&self.batch.priors)).unwrap();
        writeln!(out, "online_priors: {}", fmt_vec(&self.online_priors)).unwrap();
        writeln!(
            out,
            "covariance_frobenius_distance: {:.6e}",
            self.covariance_distance
        )
        .unwrap();
        out
    }
}

/// Runs the online method over `records` with `config`, then batch EM on the
/// same prepared features, and compares the two.
pub fn oracle(
    text: &ClassTextEmbeddings,
    records: &[EmbeddingRecord],
    config: &AdaptConfig,
) -> Result<OracleReport> {
    let (_, state) = run_records(text, records, config)?;
    let prepared_text = prepare_text(text, config)?;
    let features: Vec<Vec<f64>> = records
        .iter()
        .filter_map(|r| prepare_feature(&r.feature, config))
        .collect();
    let options = BatchEmOptions {
        regularization_epsilon: config.regularization_epsilon,
        ..BatchEmOptions::default()
    };
    let batch = batch_em(&features, &prepared_text, &options)?;
    let mean_distances = batch
        .means
        .iter()
        .zip(state.means())
        .map(|(b, o)| {
            b.iter()
                .zip(o)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let covariance_distance = batch.covariance.frobenius_distance(state.covariance());
    Ok(OracleReport {
        online_means: state.means().to_vec(),
        online_covariance: state.covariance().clone(),
        online_priors: state.priors().to_vec(),
        batch,
        mean_distances,
        covariance_distance,
    })
}
