//! Thin command-line front end over the library's runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use egnn::config::RunConfig;
use egnn::runner::{self, RipeDemoOptions};

#[derive(Parser)]
#[command(name = "egnn", about = "Noisy feedforward network simulator and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override: RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override: estimation tolerance epsilon.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Override: failure probability gamma.
    #[arg(long)]
    gamma: Option<f64>,
    /// Override: estimator kind.
    #[arg(long)]
    estimator: Option<String>,
    /// Override: low-rank initialization rank (implies init = low-rank).
    #[arg(long)]
    rank: Option<usize>,
    /// Override: number of repetitions.
    #[arg(long)]
    repeats: Option<usize>,
    /// Override: output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override: dataset path.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl ConfigArgs {
    fn build(&self) -> egnn::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::parse(&std::fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(eps) = self.epsilon {
            cfg.epsilon = eps;
        }
        if let Some(gamma) = self.gamma {
            cfg.gamma = gamma;
        }
        if let Some(kind) = &self.estimator {
            cfg.apply("estimator", kind, 0)?;
        }
        if let Some(rank) = self.rank {
            cfg.low_rank = true;
            cfg.rank = Some(rank);
        }
        if let Some(repeats) = self.repeats {
            cfg.repeats = repeats;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(data) = &self.data {
            cfg.data_path = Some(data.clone());
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write checkpoint, telemetry and summary files.
    Train(ConfigArgs),
    /// Evaluate a saved checkpoint.
    Eval {
        /// Model checkpoint produced by `train`.
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Sample the inner-product estimator on a reference pair.
    RipeDemo {
        /// Estimation tolerance.
        #[arg(long, default_value_t = 0.3)]
        epsilon: f64,
        /// Failure probability (sets the median count unless --q is given).
        #[arg(long, default_value_t = 0.05)]
        gamma: f64,
        /// Median count override.
        #[arg(long)]
        q: Option<usize>,
        /// Number of samples to draw.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Directory for the histogram CSV and summary JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated x vector (default: built-in reference pair).
        #[arg(long)]
        x: Option<String>,
        /// Comma-separated y vector.
        #[arg(long)]
        y: Option<String>,
    },
    /// Evaluate the running-time cost model from a JSON input.
    Costmodel {
        /// JSON file with scale parameters and measured factors.
        input: PathBuf,
        /// Write the report here as JSON (also printed).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_vector(text: &str) -> egnn::Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| egnn::Error::InvalidConfig(format!("bad vector entry `{s}`")))
        })
        .collect()
}

fn run() -> egnn::Result<()> {
    match Cli::parse().command {
        Command::Train(args) => {
            let cfg = args.build()?;
            let summary = runner::cmd_train(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval { checkpoint, config } => {
            let cfg = config.build()?;
            let out = cfg.output_dir.join("eval.json");
            let summary = runner::cmd_eval(&checkpoint, &cfg, Some(&out))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::RipeDemo { epsilon, gamma, q, samples, seed, out, x, y } => {
            let opts = RipeDemoOptions { epsilon, gamma, q, samples, seed };
            let x = x.as_deref().map(parse_vector).transpose()?;
            let y = y.as_deref().map(parse_vector).transpose()?;
            let summary = runner::cmd_ripe_demo(x, y, &opts, out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            println!(
                "computed <x,y> = {:.4}: matches the published {} (the other printed value \
                 appears to be a transcription slip)",
                summary.computed_inner_product, summary.matching_published_value
            );
        }
        Command::Costmodel { input, out } => {
            let report = runner::cmd_costmodel(&input, out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
