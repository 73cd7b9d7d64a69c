//! Run configuration: a flat, diffable `key = value` text format with `#`
//! comments, plus command-line overrides (flag wins). Parse, serialize and
//! parse again is the identity.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::estimators::{EpsGamma, EstimatorKind, EstimatorSpec};
use crate::implicit::{HistoryMode, InitRank};
use crate::network::{Activation, Architecture, Cost};
use crate::training::{InitScheme, LearningRate, TelemetrySettings, TrainingConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetChoice {
    Mnist,
    Iris,
    Synthetic,
}

impl DatasetChoice {
    fn name(self) -> &'static str {
        match self {
            DatasetChoice::Mnist => "mnist",
            DatasetChoice::Iris => "iris",
            DatasetChoice::Synthetic => "synthetic",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetChoice::Mnist),
            "iris" => Ok(DatasetChoice::Iris),
            "synthetic" => Ok(DatasetChoice::Synthetic),
            other => Err(Error::InvalidConfig(format!("unknown dataset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryChoice {
    Auto,
    Full,
    FullTrees,
    Frobenius,
}

impl HistoryChoice {
    fn name(self) -> &'static str {
        match self {
            HistoryChoice::Auto => "auto",
            HistoryChoice::Full => "full",
            HistoryChoice::FullTrees => "full-trees",
            HistoryChoice::Frobenius => "frobenius",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(HistoryChoice::Auto),
            "full" => Ok(HistoryChoice::Full),
            "full-trees" => Ok(HistoryChoice::FullTrees),
            "frobenius" => Ok(HistoryChoice::Frobenius),
            other => Err(Error::InvalidConfig(format!("unknown history mode `{other}`"))),
        }
    }

    fn mode(self) -> Option<HistoryMode> {
        match self {
            HistoryChoice::Auto => None,
            HistoryChoice::Full => Some(HistoryMode::Full),
            HistoryChoice::FullTrees => Some(HistoryMode::FullWithTrees),
            HistoryChoice::Frobenius => Some(HistoryMode::FrobeniusOnly),
        }
    }
}

/// One experiment: dataset, network, estimator, and harness settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub schema_version: u32,
    pub dataset: DatasetChoice,
    pub data_path: Option<PathBuf>,
    pub arch: Option<Vec<usize>>,
    pub iterations: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub estimator: EstimatorKind,
    pub epsilon: f64,
    pub gamma: f64,
    pub xi: Option<f64>,
    pub ripe_q: Option<usize>,
    pub low_rank: bool,
    pub rank: Option<usize>,
    pub activation: Activation,
    pub cost: Cost,
    pub seed: u64,
    pub repeats: usize,
    pub output_dir: PathBuf,
    pub history: HistoryChoice,
    pub telemetry_every: usize,
    pub allow_slow: bool,
    pub eval_estimator: Option<EstimatorKind>,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: 1,
            dataset: DatasetChoice::Iris,
            data_path: None,
            arch: None,
            iterations: 1200,
            batch_size: 10,
            eta: 0.07,
            estimator: EstimatorKind::Gaussian,
            epsilon: 0.3,
            gamma: 0.05,
            xi: None,
            ripe_q: None,
            low_rank: false,
            rank: None,
            activation: Activation::Tanh,
            cost: Cost::Mse,
            seed: 42,
            repeats: 1,
            output_dir: PathBuf::from("runs/out"),
            history: HistoryChoice::Auto,
            telemetry_every: 50,
            allow_slow: false,
            eval_estimator: None,
            synthetic_train: 64,
            synthetic_test: 32,
        }
    }
}

fn parse_bool(v: &str, line: usize) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::ConfigParse { line, message: format!("expected true/false, got `{v}`") }),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str, line: usize) -> Result<T> {
    v.parse().map_err(|_| Error::ConfigParse { line, message: format!("bad number `{v}`") })
}

impl RunConfig {
    /// Parse the flat `key = value` format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: lineno,
                message: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.apply(key, value, lineno)?;
        }
        Ok(cfg)
    }

    /// Apply one `key = value` assignment (also used for flag overrides).
    pub fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "schema_version" => self.schema_version = parse_num(value, line)?,
            "dataset" => self.dataset = DatasetChoice::parse(value)?,
            "data_path" => self.data_path = Some(PathBuf::from(value)),
            "arch" => {
                let sizes = value
                    .split(',')
                    .map(|s| parse_num::<usize>(s.trim(), line))
                    .collect::<Result<Vec<_>>>()?;
                self.arch = Some(sizes);
            }
            "iterations" => self.iterations = parse_num(value, line)?,
            "batch_size" => self.batch_size = parse_num(value, line)?,
            "eta" => self.eta = parse_num(value, line)?,
            "estimator" => self.estimator = EstimatorKind::parse(value)?,
            "epsilon" => self.epsilon = parse_num(value, line)?,
            "gamma" => self.gamma = parse_num(value, line)?,
            "xi" => self.xi = Some(parse_num(value, line)?),
            "ripe_q" => self.ripe_q = Some(parse_num(value, line)?),
            "init" => match value {
                "standard" => self.low_rank = false,
                "low-rank" => self.low_rank = true,
                other => {
                    return Err(Error::ConfigParse {
                        line,
                        message: format!("init must be standard|low-rank, got `{other}`"),
                    })
                }
            },
            "rank" => {
                self.rank = if value == "log" { None } else { Some(parse_num(value, line)?) }
            }
            "activation" => {
                self.activation = match value {
                    "tanh" => Activation::Tanh,
                    "sigmoid" => Activation::Sigmoid,
                    "relu" => Activation::Relu,
                    other => {
                        return Err(Error::ConfigParse {
                            line,
                            message: format!("unknown activation `{other}`"),
                        })
                    }
                }
            }
            "cost" => {
                if value != "mse" {
                    return Err(Error::ConfigParse {
                        line,
                        message: format!("unknown cost `{value}`"),
                    });
                }
                self.cost = Cost::Mse;
            }
            "seed" => self.seed = parse_num(value, line)?,
            "repeats" => self.repeats = parse_num(value, line)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "history" => self.history = HistoryChoice::parse(value)?,
            "telemetry_every" => self.telemetry_every = parse_num(value, line)?,
            "allow_slow" => self.allow_slow = parse_bool(value, line)?,
            "eval_estimator" => self.eval_estimator = Some(EstimatorKind::parse(value)?),
            "synthetic_train" => self.synthetic_train = parse_num(value, line)?,
            "synthetic_test" => self.synthetic_test = parse_num(value, line)?,
            other => {
                return Err(Error::ConfigParse {
                    line,
                    message: format!("unknown key `{other}`"),
                })
            }
        }
        Ok(())
    }

    /// Serialize in the documented key order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("schema_version", self.schema_version.to_string());
        put("dataset", self.dataset.name().into());
        if let Some(p) = &self.data_path {
            put("data_path", p.display().to_string());
        }
        if let Some(arch) = &self.arch {
            put(
                "arch",
                arch.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
            );
        }
        put("iterations", self.iterations.to_string());
        put("batch_size", self.batch_size.to_string());
        put("eta", format!("{}", self.eta));
        put("estimator", self.estimator.name().into());
        put("epsilon", format!("{}", self.epsilon));
        put("gamma", format!("{}", self.gamma));
        if let Some(xi) = self.xi {
            put("xi", format!("{xi}"));
        }
        if let Some(q) = self.ripe_q {
            put("ripe_q", q.to_string());
        }
        put("init", if self.low_rank { "low-rank".into() } else { "standard".into() });
        if let Some(r) = self.rank {
            put("rank", r.to_string());
        }
        put(
            "activation",
            match self.activation {
                Activation::Tanh => "tanh",
                Activation::Sigmoid => "sigmoid",
                Activation::Relu => "relu",
            }
            .into(),
        );
        put("cost", "mse".into());
        put("seed", self.seed.to_string());
        put("repeats", self.repeats.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("history", self.history.name().into());
        put("telemetry_every", self.telemetry_every.to_string());
        put("allow_slow", self.allow_slow.to_string());
        if let Some(kind) = self.eval_estimator {
            put("eval_estimator", kind.name().into());
        }
        put("synthetic_train", self.synthetic_train.to_string());
        put("synthetic_test", self.synthetic_test.to_string());
        out
    }

    /// Architecture: explicit, or the dataset's published default.
    pub fn resolved_arch(&self) -> Result<Architecture> {
        if let Some(sizes) = &self.arch {
            return Architecture::new(sizes.clone());
        }
        match self.dataset {
            DatasetChoice::Mnist => Architecture::new(vec![784, 100, 30, 10]),
            DatasetChoice::Iris => Architecture::new(vec![4, 10, 3]),
            DatasetChoice::Synthetic => Err(Error::InvalidConfig(
                "synthetic runs need an explicit arch".into(),
            )),
        }
    }

    pub fn tolerances(&self) -> Result<EpsGamma> {
        match self.xi {
            Some(xi) => EpsGamma::with_xi(self.epsilon, self.gamma, xi),
            None => EpsGamma::new(self.epsilon, self.gamma),
        }
    }

    pub fn estimator_spec(&self, seed: u64) -> Result<EstimatorSpec> {
        let mut spec = EstimatorSpec::new(self.estimator, self.tolerances()?, seed);
        spec.ripe_q = self.ripe_q;
        Ok(spec)
    }

    pub fn init_scheme(&self) -> InitScheme {
        if self.low_rank {
            InitScheme::LowRank(match self.rank {
                Some(r) => InitRank::Fixed(r),
                None => InitRank::LogOutputDim,
            })
        } else {
            InitScheme::Standard
        }
    }

    /// The per-repeat training configuration.
    pub fn training_config(&self, seed: u64) -> Result<TrainingConfig> {
        Ok(TrainingConfig {
            arch: self.resolved_arch()?,
            iterations: self.iterations,
            batch_size: self.batch_size,
            eta: LearningRate::Constant(self.eta),
            activation: self.activation,
            cost: self.cost,
            estimator: self.estimator_spec(seed)?,
            init: self.init_scheme(),
            seed,
            history_mode: self.history.mode(),
            telemetry: TelemetrySettings {
                enabled: true,
                full_batch_every: self.telemetry_every,
            },
            allow_slow_estimators: self.allow_slow,
        })
    }
}
