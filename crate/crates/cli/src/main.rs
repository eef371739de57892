use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use tta_core::harness::{ablate, oracle, run_stream, SampleLog};
use tta_core::stream_io::{
    generate_synthetic, read_checkpoint, read_embedding_stream, write_checkpoint,
    write_embedding_file, EmbeddingFileHeader, SyntheticSpec, FLAG_LABELS,
};
use tta_core::{AdaptConfig, EmbeddingRecord};

#[derive(Parser, Debug)]
#[command(
    name = "tta",
    version,
    about = "Streaming test-time adaptation over embedding files"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Predict then adapt, one record at a time, and print a report.
    Run {
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Per-sample CSV log.
        #[arg(long, value_name = "PATH")]
        csv_log: Option<PathBuf>,
        /// Write the final state here.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Accuracy of the full method and its ablations.
    Ablate {
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compare the online estimates against batch EM on the same data.
    Oracle {
        input: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write a synthetic shifted-mixture stream.
    Synth(SynthArgs),
    /// Summarize a checkpoint file.
    Ckpt { path: PathBuf },
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    #[arg(long, default_value_t = 4.5)]
    beta: f64,
    /// Zero-shot softmax temperature.
    #[arg(long, default_value_t = 100.0)]
    temp: f64,
    /// Relative ridge on the covariance diagonal.
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 64)]
    refactor_interval: u64,
    /// Predict only; never update the state.
    #[arg(long)]
    no_adapt: bool,
    /// Use features and text embeddings as stored.
    #[arg(long)]
    no_normalize: bool,
}

impl ConfigArgs {
    fn to_config(&self) -> AdaptConfig {
        AdaptConfig {
            alpha: self.alpha,
            beta: self.beta,
            zero_shot_temperature: self.temp,
            regularization_epsilon: self.eps,
            refactor_interval: self.refactor_interval,
            normalize_features: !self.no_normalize,
            adaptation_enabled: !self.no_adapt,
            ..AdaptConfig::default()
        }
    }
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    /// Norm of every true class mean.
    #[arg(long, default_value_t = 2.5)]
    separation: f64,
    /// Shared isotropic covariance `variance * I`.
    #[arg(long, default_value_t = 0.3)]
    variance: f64,
    /// Per-coordinate noise turning true means into text embeddings.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: PathBuf,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn load_all(path: &Path) -> Result<(tta_core::ClassTextEmbeddings, Vec<EmbeddingRecord>)> {
    let (text, reader) = read_embedding_stream(open(path)?)?;
    let records = reader.collect::<tta_core::Result<Vec<_>>>()?;
    Ok((text, records))
}

fn cmd_run(
    input: &Path,
    config: &AdaptConfig,
    csv_log: Option<&Path>,
    checkpoint: Option<&Path>,
) -> Result<()> {
    let (text, reader) = read_embedding_stream(open(input)?)?;
    let mut log = match csv_log {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{}", SampleLog::CSV_HEADER)?;
            Some(w)
        }
        None => None,
    };
    let (report, state) = run_stream(&text, reader, config, |sample| {
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", sample.csv_line())?;
        }
        Ok(())
    })?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    if let Some(path) = checkpoint {
        write_checkpoint(create(path)?, &state)?;
    }
    print!("{}", report.render());
    eprintln!("wall_time_seconds: {:.3}", report.wall_time.as_secs_f64());
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec::isotropic(
        args.classes,
        args.dim,
        args.separation,
        args.variance,
        args.noise,
        args.samples,
        args.seed,
    );
    let data = generate_synthetic(&spec)?;
    let header = EmbeddingFileHeader::new(
        args.dim,
        args.classes,
        data.records.len() as u64,
        FLAG_LABELS,
    );
    let mut out = create(&args.output)?;
    write_embedding_file(&mut out, &header, &data.text, &data.records)?;
    out.flush()?;
    println!(
        "wrote {} records to {}",
        data.records.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_ckpt(path: &Path) -> Result<()> {
    let state = read_checkpoint(open(path)?)?;
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.6}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!("dim: {}", state.dim());
    println!("classes: {}", state.num_classes());
    println!("weighted_total: {}", state.weighted_total());
    println!("updates_since_refactor: {}", state.updates_since_refactor());
    println!("ridge: {:e}", state.ridge());
    println!("ridge_epsilon: {:e}", state.ridge_epsilon());
    println!("covariance_trace: {:.6}", state.covariance().trace());
    println!("soft_counts: {}", join(state.soft_counts()));
    println!("priors: {}", join(state.priors()));
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let started = Instant::now();
    match cli.command {
        Command::Run {
            input,
            config,
            csv_log,
            checkpoint,
        } => {
            return cmd_run(
                &input,
                &config.to_config(),
                csv_log.as_deref(),
                checkpoint.as_deref(),
            );
        }
        Command::Ablate { input, config } => {
            let (text, records) = load_all(&input)?;
            print!("{}", ablate(&text, &records, &config.to_config())?.render());
        }
        Command::Oracle { input, config } => {
            let (text, records) = load_all(&input)?;
            print!("{}", oracle(&text, &records, &config.to_config())?.render());
        }
        Command::Synth(args) => cmd_synth(&args)?,
        Command::Ckpt { path } => cmd_ckpt(&path)?,
    }
    eprintln!("wall_time_seconds: {:.3}", started.elapsed().as_secs_f64());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<tta_core::Error>() {
        Some(tta_core::Error::NumericalBreakdown(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let breakdown = anyhow::Error::new(tta_core::Error::NumericalBreakdown("pivot".into()));
        assert_eq!(exit_code(&breakdown), 3);
        let format =
            anyhow::Error::new(tta_core::Error::Format("magic".into())).context("reading input");
        assert_eq!(exit_code(&format), 2);
        let io = anyhow::Error::new(std::io::Error::other("gone"));
        assert_eq!(exit_code(&io), 2);
    }

    #[test]
    fn config_flags_map_onto_adapt_config() {
        let cli = Cli::try_parse_from([
            "tta",
            "run",
            "in.emb",
            "--alpha",
            "0.5",
            "--beta",
            "0",
            "--temp",
            "50",
            "--eps",
            "1e-3",
            "--refactor-interval",
            "7",
            "--no-adapt",
            "--no-normalize",
        ])
        .unwrap();
        let Command::Run { config, .. } = cli.command else {
            panic!("expected run")
        };
        let c = config.to_config();
        assert_eq!(
            (
                c.alpha,
                c.beta,
                c.zero_shot_temperature,
                c.regularization_epsilon
            ),
            (0.5, 0.0, 50.0, 1e-3)
        );
        assert_eq!(c.refactor_interval, 7);
        assert!(!c.adaptation_enabled && !c.normalize_features);
    }
}
