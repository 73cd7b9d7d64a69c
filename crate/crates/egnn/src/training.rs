//! Noisy training and evaluation.
//!
//! The `(ε,γ)` feedforward, backpropagation and training procedures mirror
//! their classical counterparts but obtain every inner product from an
//! estimator. All sequencing is classical: per mini-batch element the
//! feedforward pass estimates `s_j ≈ <W^l_j, a^{l-1}>`, sets
//! `z_j = s_j + b_j` and `a_j = f(z_j)`; backpropagation estimates
//! `<(W^{l+1})^T_j, δ^{l+1}>`; the update rule is exact SGD over the noisy
//! `(a, δ)` pairs.
//!
//! Explicit shadow weights are maintained throughout and serve three roles:
//! the source of true inner products for the error-law estimators (Gaussian,
//! RIPE), the oracle for telemetry and contract counters, and the reference
//! the implicit history is validated against. With low-rank initialization
//! the history records every `(η, a, δ)` update term, so the weights are
//! simultaneously represented implicitly.
//!
//! Within a mini-batch the element passes are independent (parameters are
//! frozen until the batch ends) and run on parallel workers; every random
//! draw comes from a stream derived from `(seed, domain, t, m, layer, j)`,
//! so results are reproducible regardless of worker scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimators::{
    dequantized, gaussian_noise_on, gaussian_z_factor, ripe, EpsGamma, EstimatorKind,
    EstimatorSpec, ImplicitAccess,
};
use crate::implicit::{
    initial_parameters, low_rank_init, HistoryItem, HistoryMode, InitRank, WeightHistory,
};
use crate::l2bst::L2Bst;
use crate::network::{
    argmax, dot, epoch_schedule, norm, Activation, Architecture, Cost, ForwardPass,
    LabeledSample, NetworkParameters, SampleGrads,
};
use crate::rng::{derive_rng, DOMAIN_BACKPROP, DOMAIN_EVAL, DOMAIN_FEEDFORWARD, DOMAIN_NORM_ESTIMATE};
use crate::telemetry::{r_a, r_delta, r_e, r_w, FactorPair, RFactorRow, RFactorSeries};
use crate::{Error, Result};

/// Step-size schedule. The experiments use a single constant; a per-iteration
/// table exists for generality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LearningRate {
    Constant(f64),
    PerIteration(Vec<f64>),
}

impl LearningRate {
    /// Step size for iteration `t >= 1`.
    pub fn at(&self, t: usize) -> f64 {
        match self {
            LearningRate::Constant(eta) => *eta,
            LearningRate::PerIteration(etas) => etas[(t - 1).min(etas.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            LearningRate::Constant(eta) => *eta > 0.0 && eta.is_finite(),
            LearningRate::PerIteration(etas) => {
                !etas.is_empty() && etas.iter().all(|e| *e > 0.0 && e.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("learning rates must be positive".into()))
        }
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Dense Gaussian entries, no update history.
    Standard,
    /// `r` random outer-product pairs per layer stored as history row 0.
    LowRank(InitRank),
}

/// Telemetry recording policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TelemetrySettings {
    pub enabled: bool,
    /// Record a full-batch `(R_a, R_δ)` average every this many iterations,
    /// in addition to the designated element every iteration.
    pub full_batch_every: usize,
}

impl Default for TelemetrySettings {
    fn default() -> Self {
        Self { enabled: true, full_batch_every: 50 }
    }
}

/// Everything a training run depends on.
#[derive(Debug, Clone)]
pub struct TrainingConfig {
    pub arch: Architecture,
    pub iterations: usize,
    pub batch_size: usize,
    pub eta: LearningRate,
    pub activation: Activation,
    pub cost: Cost,
    pub estimator: EstimatorSpec,
    pub init: InitScheme,
    pub seed: u64,
    /// History retention override; `None` picks a mode from the run scale.
    pub history_mode: Option<HistoryMode>,
    pub telemetry: TelemetrySettings,
    /// The history-sampling estimator costs grow with `t M` per inner
    /// product; it must be opted into.
    pub allow_slow_estimators: bool,
}

impl TrainingConfig {
    pub fn new(arch: Architecture, estimator: EstimatorSpec) -> Self {
        Self {
            arch,
            iterations: 1,
            batch_size: 1,
            eta: LearningRate::Constant(0.05),
            activation: Activation::Tanh,
            cost: Cost::Mse,
            estimator,
            init: InitScheme::Standard,
            seed: estimator.seed,
            history_mode: None,
            telemetry: TelemetrySettings::default(),
            allow_slow_estimators: false,
        }
    }

    fn validate(&self, num_samples: usize) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("iterations and batch size must be positive".into()));
        }
        if num_samples == 0 {
            return Err(Error::EmptyInput("empty training set".into()));
        }
        self.eta.validate()?;
        match self.estimator.kind {
            EstimatorKind::DequantizedExplicit => {
                return Err(Error::InvalidConfig(
                    "training stores weights implicitly; use dequantized-implicit (the \
                     explicit-tree estimator applies to evaluation of frozen weights)"
                        .into(),
                ));
            }
            EstimatorKind::DequantizedImplicit => {
                if !matches!(self.init, InitScheme::LowRank(_)) {
                    return Err(Error::InvalidConfig(
                        "dequantized-implicit training requires low-rank initialization".into(),
                    ));
                }
                if !self.allow_slow_estimators {
                    return Err(Error::InvalidConfig(
                        "dequantized-implicit training cost grows with t*M per inner product; \
                         set allow_slow_estimators to opt in"
                            .into(),
                    ));
                }
            }
            EstimatorKind::RipeExactNorms | EstimatorKind::RipeNoisyNorms => {
                if self.estimator.tol.epsilon <= 0.0 {
                    return Err(Error::InvalidConfig(
                        "RIPE estimation requires a positive epsilon".into(),
                    ));
                }
            }
            EstimatorKind::Exact | EstimatorKind::Gaussian => {}
        }
        Ok(())
    }

    /// History retention: explicit override, else full records (with trees
    /// when the estimator samples them) while the run is small enough, else
    /// Frobenius accumulators only.
    pub fn resolved_history_mode(&self) -> HistoryMode {
        if let Some(mode) = self.history_mode {
            return mode;
        }
        if self.estimator.kind == EstimatorKind::DequantizedImplicit {
            return HistoryMode::FullWithTrees;
        }
        let per_sample: usize = (0..self.arch.weight_layers())
            .map(|w| {
                let (o, i) = self.arch.weight_shape(w);
                o + i
            })
            .sum();
        let stored = self.iterations * self.batch_size * per_sample;
        if stored <= 200_000_000 {
            HistoryMode::Full
        } else {
            HistoryMode::FrobeniusOnly
        }
    }
}

/// A trained network: shadow parameters, the update history (low-rank runs),
/// telemetry and the config that produced it.
#[derive(Debug)]
pub struct TrainedModel {
    pub params: NetworkParameters,
    pub history: Option<WeightHistory>,
    pub telemetry: RFactorSeries,
    pub activation: Activation,
    pub cost: Cost,
    pub estimator: EstimatorSpec,
}

/// Per-sample result of one noisy pass, plus trace material for telemetry.
struct SampleOutcome {
    pass: ForwardPass,
    deltas: Vec<Vec<f64>>,
    trace: Option<PassTrace>,
    checked: u64,
    violations: u64,
}

/// Exact shadow inner products of one traced pass.
pub struct PassTrace {
    /// `<W^w_j, a^w>` per weight layer and output neuron.
    pub ff_ips: Vec<Vec<f64>>,
    /// `<(W^w)^T_j, δ^w>` per weight layer and input neuron.
    pub bp_ips: Vec<Vec<f64>>,
}

/// Frozen per-batch state shared by the element passes.
pub struct PassEngine<'a> {
    params: &'a NetworkParameters,
    history: Option<&'a WeightHistory>,
    activation: Activation,
    cost: Cost,
    spec: EstimatorSpec,
    gaussian_z: f64,
    /// Exact row/column norms per weight layer (RIPE kinds).
    row_norms: Vec<Vec<f64>>,
    col_norms: Vec<Vec<f64>>,
    /// Cached relative norm errors for the noisy-norm kind, refreshed per
    /// batch boundary.
    row_norm_errors: Vec<Vec<f64>>,
    col_norm_errors: Vec<Vec<f64>>,
    /// Explicit row trees (evaluation with the tree estimator).
    row_trees: Option<Vec<Vec<L2Bst>>>,
    ff_domain: u64,
}

impl<'a> PassEngine<'a> {
    fn needs_norm_cache(kind: EstimatorKind) -> bool {
        matches!(kind, EstimatorKind::RipeExactNorms | EstimatorKind::RipeNoisyNorms)
    }

    /// Build the engine for one batch (or for evaluation at frozen weights).
    /// `t` tags the norm-perturbation streams of the noisy-norm kind.
    pub fn for_batch(
        params: &'a NetworkParameters,
        history: Option<&'a WeightHistory>,
        activation: Activation,
        cost: Cost,
        spec: EstimatorSpec,
        seed: u64,
        t: usize,
        eval: bool,
    ) -> Result<Self> {
        let arch = params.arch();
        let mut row_norms = Vec::new();
        let mut col_norms = Vec::new();
        let mut row_errors = Vec::new();
        let mut col_errors = Vec::new();
        if Self::needs_norm_cache(spec.kind) {
            for w in 0..arch.weight_layers() {
                let (out_dim, in_dim) = arch.weight_shape(w);
                let mat = params.weight(w);
                row_norms.push((0..out_dim).map(|j| mat.row_norm(j)).collect());
                col_norms.push((0..in_dim).map(|j| mat.col_norm(j)).collect());
                if spec.kind == EstimatorKind::RipeNoisyNorms {
                    // one perturbation per (t, layer, j), cached until the
                    // next batch-boundary re-estimate
                    let xi = spec.tol.xi;
                    let draw = |j: usize, side: u64| -> f64 {
                        if xi == 0.0 {
                            return 0.0;
                        }
                        use rand::Rng;
                        let mut rng = derive_rng(
                            seed,
                            &[DOMAIN_NORM_ESTIMATE, t as u64, w as u64, side, j as u64],
                        );
                        rng.gen_range(-xi..=xi)
                    };
                    row_errors.push((0..out_dim).map(|j| draw(j, 0)).collect());
                    col_errors.push((0..in_dim).map(|j| draw(j, 1)).collect());
                }
            }
        }
        let row_trees = if spec.kind == EstimatorKind::DequantizedExplicit {
            if !eval {
                return Err(Error::InvalidConfig(
                    "the explicit-tree estimator applies to frozen weights only".into(),
                ));
            }
            let mut trees = Vec::new();
            for w in 0..arch.weight_layers() {
                let mat = params.weight(w);
                trees.push(
                    (0..mat.rows())
                        .map(|j| L2Bst::build(mat.row(j)))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            Some(trees)
        } else {
            None
        };
        if spec.kind == EstimatorKind::DequantizedImplicit && history.is_none() {
            return Err(Error::MissingCapability {
                kind: spec.kind.name().into(),
                reason: "no weight history available".into(),
            });
        }
        Ok(Self {
            params,
            history,
            activation,
            cost,
            spec,
            gaussian_z: gaussian_z_factor(spec.tol.gamma),
            row_norms,
            col_norms,
            row_norm_errors: row_errors,
            col_norm_errors: col_errors,
            row_trees,
            ff_domain: if eval { DOMAIN_EVAL } else { DOMAIN_FEEDFORWARD },
        })
    }

    fn tol(&self) -> &EpsGamma {
        &self.spec.tol
    }

    /// Estimate `<W^w_j, prev>` for the feedforward direction.
    fn estimate_row_ip(
        &self,
        t: usize,
        m: usize,
        w: usize,
        j: usize,
        prev: &[f64],
        prev_norm: f64,
        want_exact: bool,
    ) -> Result<(f64, Option<f64>)> {
        let row = self.params.weight(w).row(j);
        let mut rng = derive_rng(
            self.spec.seed,
            &[self.ff_domain, t as u64, m as u64, w as u64, j as u64],
        );
        match self.spec.kind {
            EstimatorKind::Exact => {
                let ip = dot(row, prev);
                Ok((ip, Some(ip)))
            }
            EstimatorKind::Gaussian => {
                let ip = dot(row, prev);
                Ok((
                    gaussian_noise_on(ip, self.tol().epsilon, self.gaussian_z, &mut rng),
                    Some(ip),
                ))
            }
            EstimatorKind::RipeExactNorms => {
                let ip = dot(row, prev);
                let wn = self.row_norms[w][j];
                if wn == 0.0 || prev_norm == 0.0 {
                    return Ok((0.0, Some(ip)));
                }
                let s = ripe::sample_exact_norms(
                    wn * wn,
                    prev_norm * prev_norm,
                    ip,
                    self.tol(),
                    self.spec.ripe_q,
                    &mut rng,
                )?;
                Ok((s, Some(ip)))
            }
            EstimatorKind::RipeNoisyNorms => {
                let ip = dot(row, prev);
                let wn = self.row_norms[w][j];
                if wn == 0.0 || prev_norm == 0.0 {
                    return Ok((0.0, Some(ip)));
                }
                // activation norms are exact (they live in sampling trees);
                // only the implicitly-stored weight norm is an estimate
                let s = ripe::sample_noisy_norms(
                    wn,
                    prev_norm,
                    ip,
                    self.tol(),
                    self.spec.ripe_q,
                    self.row_norm_errors[w][j],
                    0.0,
                    &mut rng,
                )?;
                Ok((s, Some(ip)))
            }
            EstimatorKind::DequantizedExplicit => {
                let tree = &self.row_trees.as_ref().unwrap()[w][j];
                let s = if tree.sq_norm() == 0.0 {
                    0.0
                } else {
                    dequantized::explicit(tree, prev, prev_norm, self.tol(), &mut rng)?
                };
                Ok((s, want_exact.then(|| dot(row, prev))))
            }
            EstimatorKind::DequantizedImplicit => {
                let history = self.history.unwrap();
                let access = ImplicitAccess {
                    matrix: history.x_matrix(w, j)?,
                    history: &history.a_vectors(w)?,
                };
                let s = dequantized::implicit(&access, prev, prev_norm, self.tol(), &mut rng)?;
                Ok((s, want_exact.then(|| dot(row, prev))))
            }
        }
    }

    /// Estimate `<(W^w)^T_j, delta>` for the backpropagation direction.
    fn estimate_col_ip(
        &self,
        t: usize,
        m: usize,
        w: usize,
        j: usize,
        delta: &[f64],
        delta_norm: f64,
        want_exact: bool,
    ) -> Result<(f64, Option<f64>)> {
        let mat = self.params.weight(w);
        let col_dot = || -> f64 {
            let mut acc = 0.0;
            for (k, d) in delta.iter().enumerate() {
                acc += mat.get(k, j) * d;
            }
            acc
        };
        let mut rng = derive_rng(
            self.spec.seed,
            &[DOMAIN_BACKPROP, t as u64, m as u64, w as u64, j as u64],
        );
        match self.spec.kind {
            EstimatorKind::Exact => {
                let ip = col_dot();
                Ok((ip, Some(ip)))
            }
            EstimatorKind::Gaussian => {
                let ip = col_dot();
                Ok((
                    gaussian_noise_on(ip, self.tol().epsilon, self.gaussian_z, &mut rng),
                    Some(ip),
                ))
            }
            EstimatorKind::RipeExactNorms => {
                let ip = col_dot();
                let wn = self.col_norms[w][j];
                if wn == 0.0 || delta_norm == 0.0 {
                    return Ok((0.0, Some(ip)));
                }
                let s = ripe::sample_exact_norms(
                    wn * wn,
                    delta_norm * delta_norm,
                    ip,
                    self.tol(),
                    self.spec.ripe_q,
                    &mut rng,
                )?;
                Ok((s, Some(ip)))
            }
            EstimatorKind::RipeNoisyNorms => {
                let ip = col_dot();
                let wn = self.col_norms[w][j];
                if wn == 0.0 || delta_norm == 0.0 {
                    return Ok((0.0, Some(ip)));
                }
                let s = ripe::sample_noisy_norms(
                    wn,
                    delta_norm,
                    ip,
                    self.tol(),
                    self.spec.ripe_q,
                    self.col_norm_errors[w][j],
                    0.0,
                    &mut rng,
                )?;
                Ok((s, Some(ip)))
            }
            EstimatorKind::DequantizedExplicit => Err(Error::MissingCapability {
                kind: self.spec.kind.name().into(),
                reason: "no column trees for backpropagation".into(),
            }),
            EstimatorKind::DequantizedImplicit => {
                let history = self.history.unwrap();
                let access = ImplicitAccess {
                    matrix: history.xt_matrix(w, j)?,
                    history: &history.delta_vectors(w)?,
                };
                let s = dequantized::implicit(&access, delta, delta_norm, self.tol(), &mut rng)?;
                Ok((s, want_exact.then(col_dot)))
            }
        }
    }

    /// `(ε,γ)`-feedforward: one noisy pass storing `z` and `a` per layer.
    pub fn feedforward(&self, t: usize, m: usize, x: &[f64]) -> Result<ForwardPass> {
        Ok(self.feedforward_inner(t, m, x, None)?.0)
    }

    fn feedforward_inner(
        &self,
        t: usize,
        m: usize,
        x: &[f64],
        mut counters: Option<&mut (u64, u64)>,
    ) -> Result<(ForwardPass, Option<Vec<Vec<f64>>>)> {
        let arch = self.params.arch();
        if x.len() != arch.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} vs input layer size {}",
                x.len(),
                arch.input_dim()
            )));
        }
        let trace = counters.is_some();
        let mut a: Vec<Vec<f64>> = Vec::with_capacity(arch.depth());
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(arch.weight_layers());
        let mut ips: Vec<Vec<f64>> = Vec::new();
        a.push(x.to_vec());
        for w in 0..arch.weight_layers() {
            let prev = &a[w];
            let prev_norm = norm(prev);
            let out_dim = arch.weight_shape(w).0;
            let mut zl = Vec::with_capacity(out_dim);
            let mut al = Vec::with_capacity(out_dim);
            let mut ipl = Vec::with_capacity(if trace { out_dim } else { 0 });
            for j in 0..out_dim {
                let (s, exact) = self.estimate_row_ip(t, m, w, j, prev, prev_norm, trace)?;
                if let Some(counters) = counters.as_deref_mut() {
                    let ip = exact.expect("traced pass computes exact inner products");
                    ipl.push(ip);
                    counters.0 += 1;
                    if (s - ip).abs() > self.tol().band(ip) {
                        counters.1 += 1;
                    }
                }
                let zj = s + self.params.bias(w)[j];
                zl.push(zj);
                al.push(self.activation.apply(zj)?);
            }
            if trace {
                ips.push(ipl);
            }
            z.push(zl);
            a.push(al);
        }
        Ok((ForwardPass { z, a }, trace.then_some(ips)))
    }

    /// `(ε,γ)`-backpropagation over a stored pass. Output-layer deltas use
    /// the exact cost gradient; interior layers estimate the transposed
    /// products.
    pub fn backprop(&self, t: usize, m: usize, pass: &ForwardPass, y: &[f64]) -> Result<Vec<Vec<f64>>> {
        Ok(self.backprop_inner(t, m, pass, y, None)?.0)
    }

    fn backprop_inner(
        &self,
        t: usize,
        m: usize,
        pass: &ForwardPass,
        y: &[f64],
        mut counters: Option<&mut (u64, u64)>,
    ) -> Result<(Vec<Vec<f64>>, Option<Vec<Vec<f64>>>)> {
        let arch = self.params.arch();
        let lw = arch.weight_layers();
        let trace = counters.is_some();
        let grad = self.cost.gradient(y, &pass.a[lw])?;
        let mut deltas = vec![Vec::new(); lw];
        deltas[lw - 1] = pass.z[lw - 1]
            .iter()
            .zip(&grad)
            .map(|(&zj, &gj)| self.activation.derivative_unchecked(zj) * gj)
            .collect();
        // col_ips[w][j] = <(W^w)^T_j, delta^w>; the w = lw-1 layer product
        // feeds level lw-1 deltas, down to the first hidden level
        let mut col_ips: Vec<Vec<f64>> = if trace {
            (0..lw).map(|w| vec![0.0; arch.weight_shape(w).1]).collect()
        } else {
            Vec::new()
        };
        for w in (0..lw - 1).rev() {
            // deltas[w] at level w+1 come through weight layer w+1
            let upper = w + 1;
            let next_delta = deltas[upper].clone();
            let nd_norm = norm(&next_delta);
            let in_dim = arch.weight_shape(upper).1;
            let mut dl = Vec::with_capacity(in_dim);
            for j in 0..in_dim {
                let (s, exact) =
                    self.estimate_col_ip(t, m, upper, j, &next_delta, nd_norm, trace)?;
                if let Some(counters) = counters.as_deref_mut() {
                    let ip = exact.expect("traced pass computes exact inner products");
                    col_ips[upper][j] = ip;
                    counters.0 += 1;
                    if (s - ip).abs() > self.tol().band(ip) {
                        counters.1 += 1;
                    }
                }
                dl.push(self.activation.derivative_unchecked(pass.z[w][j]) * s);
            }
            deltas[w] = dl;
        }
        if trace {
            // the first weight layer's columns are never estimated during
            // backprop; fill them from the shadow weights so the R_delta
            // formula can include every layer term
            let mat = self.params.weight(0);
            let d0 = &deltas[0];
            for (j, slot) in col_ips[0].iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, d) in d0.iter().enumerate() {
                    acc += mat.get(k, j) * d;
                }
                *slot = acc;
            }
        }
        Ok((deltas, trace.then_some(col_ips)))
    }

    fn run_sample(
        &self,
        t: usize,
        m: usize,
        sample: &LabeledSample,
        trace: bool,
    ) -> Result<SampleOutcome> {
        if trace {
            let mut counters = (0u64, 0u64);
            let (pass, ff_ips) = self.feedforward_inner(t, m, &sample.x, Some(&mut counters))?;
            let (deltas, bp_ips) =
                self.backprop_inner(t, m, &pass, &sample.y, Some(&mut counters))?;
            Ok(SampleOutcome {
                pass,
                deltas,
                trace: Some(PassTrace { ff_ips: ff_ips.unwrap(), bp_ips: bp_ips.unwrap() }),
                checked: counters.0,
                violations: counters.1,
            })
        } else {
            let pass = self.feedforward(t, m, &sample.x)?;
            let deltas = self.backprop(t, m, &pass, &sample.y)?;
            Ok(SampleOutcome { pass, deltas, trace: None, checked: 0, violations: 0 })
        }
    }
}

/// Observer hook called after each completed iteration.
pub type IterationObserver<'o> = dyn FnMut(usize, &NetworkParameters, Option<&WeightHistory>) + 'o;

/// `(ε,γ)`-training over a dataset.
pub fn eg_train(dataset: &[LabeledSample], config: &TrainingConfig) -> Result<TrainedModel> {
    eg_train_observed(dataset, config, &mut |_, _, _| {})
}

/// `(ε,γ)`-training with a per-iteration observer (used by the equivalence
/// and consistency checks).
pub fn eg_train_observed(
    dataset: &[LabeledSample],
    config: &TrainingConfig,
    observer: &mut IterationObserver<'_>,
) -> Result<TrainedModel> {
    config.validate(dataset.len())?;
    let arch = &config.arch;
    for s in dataset {
        if s.x.len() != arch.input_dim() || s.y.len() != arch.output_dim() {
            return Err(Error::ShapeMismatch("sample does not match architecture".into()));
        }
    }

    let mut history;
    let mut params;
    match config.init {
        InitScheme::Standard => {
            params = NetworkParameters::standard_init(arch.clone(), config.seed);
            history = None;
        }
        InitScheme::LowRank(rank) => {
            let h = low_rank_init(
                arch,
                rank,
                config.batch_size,
                config.seed,
                config.resolved_history_mode(),
            )?;
            params = initial_parameters(&h)?;
            history = Some(h);
        }
    }

    let schedule = epoch_schedule(
        dataset.len(),
        config.batch_size,
        config.iterations,
        config.seed,
    )?;
    let mut telemetry = RFactorSeries::new();
    let telemetry_on = config.telemetry.enabled && history.is_some();

    for t in 1..=config.iterations {
        let eta = config.eta.at(t);
        let engine = PassEngine::for_batch(
            &params,
            history.as_ref(),
            config.activation,
            config.cost,
            config.estimator,
            config.seed,
            t,
            false,
        )?;
        let full_batch_trace = telemetry_on
            && config.telemetry.full_batch_every > 0
            && t % config.telemetry.full_batch_every == 0;

        let batch = &schedule.batches[t - 1];
        let outcomes: Vec<SampleOutcome> = batch
            .par_iter()
            .enumerate()
            .map(|(m, &idx)| {
                let trace = telemetry_on && (m == 0 || full_batch_trace);
                engine.run_sample(t, m, &dataset[idx], trace)
            })
            .collect::<Result<Vec<_>>>()?;

        if telemetry_on {
            let h = history.as_ref().unwrap();
            let (r_w_r, r_w_c) = r_w(h, &params);
            let first = &outcomes[0];
            let trace = first.trace.as_ref().unwrap();
            let a_pair = r_a(h, &first.pass.a, &trace.ff_ips);
            let d_pair = r_delta(h, &first.deltas, &trace.bp_ips);
            telemetry.record_iteration(RFactorRow {
                t,
                r_a: a_pair.quantum,
                r_delta: d_pair.quantum,
                r_w_r,
                r_w_c,
                r_a_cl: a_pair.classical,
                r_delta_cl: d_pair.classical,
            });
            if full_batch_trace {
                for outcome in outcomes.iter().skip(1) {
                    let trace = outcome.trace.as_ref().unwrap();
                    telemetry.record_extra_sample(
                        r_a(h, &outcome.pass.a, &trace.ff_ips),
                        r_delta(h, &outcome.deltas, &trace.bp_ips),
                    );
                }
            }
            let (checked, violations) = outcomes
                .iter()
                .fold((0, 0), |(c, v), o| (c + o.checked, v + o.violations));
            telemetry.record_contract(checked, violations);
            // per-batch norm re-estimation cost, T_W / xi per row and column
            if config.estimator.tol.xi > 0.0 {
                let xi = config.estimator.tol.xi;
                let tm = ((h.iterations(0) * h.batch_size()) as f64).sqrt();
                let mut cost = 0.0;
                for w in 0..arch.weight_layers() {
                    let (out_dim, in_dim) = arch.weight_shape(w);
                    let mat = params.weight(w);
                    for j in 0..out_dim {
                        let wn = mat.row_norm(j);
                        if wn > 0.0 {
                            cost += h.x_frobenius_sq(w, j).sqrt() / wn * tm / xi;
                        }
                    }
                    for j in 0..in_dim {
                        let wn = mat.col_norm(j);
                        if wn > 0.0 {
                            cost += h.xt_frobenius_sq(w, j).sqrt() / wn * tm / xi;
                        }
                    }
                }
                telemetry.norm_estimation_cost += cost;
            }
        }

        // exact SGD over the noisy (a, delta) pairs
        let grads: Vec<SampleGrads<'_>> = outcomes
            .iter()
            .map(|o| SampleGrads { activations: &o.pass.a, deltas: &o.deltas })
            .collect();
        params = crate::network::sgd_update(&params, &grads, eta)?;

        if let Some(h) = history.as_mut() {
            for w in 0..arch.weight_layers() {
                let items: Vec<HistoryItem> = outcomes
                    .iter()
                    .map(|o| HistoryItem::new(o.pass.a[w].clone(), o.deltas[w].clone()))
                    .collect();
                h.record_iteration(t, w, eta, items)?;
            }
        }

        observer(t, &params, history.as_deref_ref());
    }

    Ok(TrainedModel {
        params,
        history,
        telemetry,
        activation: config.activation,
        cost: config.cost,
        estimator: config.estimator,
    })
}

trait AsDerefRef {
    fn as_deref_ref(&self) -> Option<&WeightHistory>;
}

impl AsDerefRef for Option<WeightHistory> {
    fn as_deref_ref(&self) -> Option<&WeightHistory> {
        self.as_ref()
    }
}

/// Outcome of evaluating one input.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub activations: Vec<f64>,
    pub label: usize,
    pub r_e: FactorPair,
}

/// Accuracy plus averaged evaluation telemetry over a test set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub r_e_mean: f64,
    pub r_e_cl_mean: f64,
}

/// Evaluation driver at frozen parameters.
pub struct Evaluator<'a> {
    engine: PassEngine<'a>,
    row_norms: Vec<Vec<f64>>,
    hidden_and_output: usize,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        params: &'a NetworkParameters,
        history: Option<&'a WeightHistory>,
        activation: Activation,
        cost: Cost,
        estimator: EstimatorSpec,
    ) -> Result<Self> {
        let engine = PassEngine::for_batch(
            params,
            history,
            activation,
            cost,
            estimator,
            estimator.seed,
            0,
            true,
        )?;
        let arch = params.arch();
        let row_norms = (0..arch.weight_layers())
            .map(|w| {
                let mat = params.weight(w);
                (0..mat.rows()).map(|j| mat.row_norm(j)).collect()
            })
            .collect();
        Ok(Self { engine, row_norms, hidden_and_output: arch.hidden_and_output_neurons() })
    }

    pub fn for_model(model: &'a TrainedModel, estimator: EstimatorSpec) -> Result<Self> {
        Self::new(
            &model.params,
            model.history.as_ref(),
            model.activation,
            model.cost,
            estimator,
        )
    }

    /// One noisy feedforward pass at frozen parameters; the label is the
    /// argmax over the output activations. `sample_tag` keys the noise
    /// stream (use the test-set index).
    pub fn evaluate(&self, sample_tag: usize, x: &[f64]) -> Result<EvalOutcome> {
        let mut counters = (0u64, 0u64);
        let (pass, ips) = self.engine.feedforward_inner(sample_tag, 0, x, Some(&mut counters))?;
        let r_e_pair = r_e(
            &self.row_norms,
            &pass.a,
            ips.as_ref().unwrap(),
            self.hidden_and_output,
        );
        let out = pass.a.last().unwrap().clone();
        let label = argmax(&out);
        Ok(EvalOutcome { activations: out, label, r_e: r_e_pair })
    }

    /// Fraction of correctly labelled samples, with `R_e` telemetry.
    pub fn accuracy(&self, testset: &[LabeledSample]) -> Result<AccuracyReport> {
        if testset.is_empty() {
            return Err(Error::EmptyInput("empty test set".into()));
        }
        let outcomes: Vec<(bool, FactorPair)> = testset
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let out = self.evaluate(i, &s.x)?;
                Ok((out.label == s.label(), out.r_e))
            })
            .collect::<Result<Vec<_>>>()?;
        let correct = outcomes.iter().filter(|(ok, _)| *ok).count();
        let mut sum_e = 0.0;
        let mut sum_e_cl = 0.0;
        for (_, pair) in &outcomes {
            sum_e += pair.quantum;
            sum_e_cl += pair.classical;
        }
        Ok(AccuracyReport {
            accuracy: correct as f64 / testset.len() as f64,
            correct,
            total: testset.len(),
            r_e_mean: sum_e / testset.len() as f64,
            r_e_cl_mean: sum_e_cl / testset.len() as f64,
        })
    }
}

/// Record evaluation telemetry for a whole test set into a series.
pub fn record_eval_telemetry(
    series: &mut RFactorSeries,
    evaluator: &Evaluator<'_>,
    testset: &[LabeledSample],
) -> Result<AccuracyReport> {
    let report = evaluator.accuracy(testset)?;
    for _ in 0..testset.len() {
        // means were already computed over the whole set; record the
        // aggregate once per sample to keep counts meaningful
        series.record_eval(FactorPair { quantum: report.r_e_mean, classical: report.r_e_cl_mean });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_dataset;
    use crate::network::{classical_backprop, classical_feedforward};
    use approx::assert_relative_eq;

    fn arch(sizes: &[usize]) -> Architecture {
        Architecture::new(sizes.to_vec()).unwrap()
    }

    fn spec(kind: EstimatorKind, eps: f64, gamma: f64, seed: u64) -> EstimatorSpec {
        EstimatorSpec::new(kind, EpsGamma::new(eps, gamma).unwrap(), seed)
    }

    fn toy_config(kind: EstimatorKind, eps: f64) -> (Vec<LabeledSample>, TrainingConfig) {
        let a = arch(&[4, 6, 3]);
        let data = synthetic_dataset(&a, 24, 99);
        let mut config = TrainingConfig::new(a, spec(kind, eps, 0.05, 7));
        config.iterations = 30;
        config.batch_size = 4;
        config.eta = LearningRate::Constant(0.1);
        config.init = InitScheme::LowRank(InitRank::Fixed(2));
        config.seed = 7;
        (data, config)
    }

    #[test]
    fn exact_estimator_reduces_to_classical_pass() {
        let (data, config) = toy_config(EstimatorKind::Exact, 0.0);
        let h = low_rank_init(&config.arch, InitRank::Fixed(2), 4, 7, HistoryMode::Full).unwrap();
        let params = initial_parameters(&h).unwrap();
        let engine = PassEngine::for_batch(
            &params,
            Some(&h),
            config.activation,
            config.cost,
            config.estimator,
            7,
            1,
            false,
        )
        .unwrap();
        let x = &data[0].x;
        let noisy = engine.feedforward(1, 0, x).unwrap();
        let exact = classical_feedforward(&params, config.activation, x).unwrap();
        assert_eq!(noisy.z, exact.z);
        assert_eq!(noisy.a, exact.a);
        let nd = engine.backprop(1, 0, &noisy, &data[0].y).unwrap();
        let ed =
            classical_backprop(&params, config.activation, config.cost, &exact, &data[0].y)
                .unwrap();
        assert_eq!(nd, ed);
    }

    #[test]
    fn zero_input_zero_bias_stays_dark() {
        let a = arch(&[3, 4, 2]);
        let h = low_rank_init(&a, InitRank::Fixed(2), 4, 3, HistoryMode::Full).unwrap();
        let params = initial_parameters(&h).unwrap();
        let engine = PassEngine::for_batch(
            &params,
            Some(&h),
            Activation::Tanh,
            Cost::Mse,
            spec(EstimatorKind::Gaussian, 0.1, 0.05, 5),
            5,
            1,
            false,
        )
        .unwrap();
        let pass = engine.feedforward(1, 0, &[0.0, 0.0, 0.0]).unwrap();
        // true inner products are all zero, so |z| <= band with high
        // probability; at the contract level |z_j| <= 4 * eps is a loose
        // envelope for the seeded draw
        for zl in &pass.z {
            for &z in zl {
                assert!(z.abs() < 0.4, "z {z}");
            }
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let (data, config) = toy_config(EstimatorKind::Gaussian, 0.3);
        let m1 = eg_train(&data, &config).unwrap();
        let m2 = eg_train(&data, &config).unwrap();
        assert_eq!(m1.params, m2.params);
        assert_eq!(
            m1.telemetry.rows().last().unwrap().r_a,
            m2.telemetry.rows().last().unwrap().r_a
        );
        let e1 = Evaluator::for_model(&m1, m1.estimator).unwrap();
        let e2 = Evaluator::for_model(&m2, m2.estimator).unwrap();
        let o1 = e1.evaluate(3, &data[0].x).unwrap();
        let o2 = e2.evaluate(3, &data[0].x).unwrap();
        assert_eq!(o1.activations, o2.activations);
    }

    #[test]
    fn gradient_direction_survives_small_noise() {
        let a = arch(&[4, 6, 3]);
        let data = synthetic_dataset(&a, 16, 5);
        let h = low_rank_init(&a, InitRank::Fixed(2), 4, 11, HistoryMode::Full).unwrap();
        let params = initial_parameters(&h).unwrap();
        let noisy_engine = PassEngine::for_batch(
            &params,
            Some(&h),
            Activation::Tanh,
            Cost::Mse,
            spec(EstimatorKind::Gaussian, 0.01, 0.05, 21),
            21,
            1,
            false,
        )
        .unwrap();
        let mut cos_sum = 0.0;
        let mut count = 0;
        for (m, sample) in data.iter().enumerate().take(8) {
            let exact_pass = classical_feedforward(&params, Activation::Tanh, &sample.x).unwrap();
            let exact_d =
                classical_backprop(&params, Activation::Tanh, Cost::Mse, &exact_pass, &sample.y)
                    .unwrap();
            let noisy_pass = noisy_engine.feedforward(1, m, &sample.x).unwrap();
            let noisy_d = noisy_engine.backprop(1, m, &noisy_pass, &sample.y).unwrap();
            // full parameter gradient entries a_k * delta_j, flattened
            let mut dot_g = 0.0;
            let mut n_e = 0.0;
            let mut n_n = 0.0;
            for w in 0..2 {
                for j in 0..exact_d[w].len() {
                    for k in 0..exact_pass.a[w].len() {
                        let ge = exact_pass.a[w][k] * exact_d[w][j];
                        let gn = noisy_pass.a[w][k] * noisy_d[w][j];
                        dot_g += ge * gn;
                        n_e += ge * ge;
                        n_n += gn * gn;
                    }
                }
            }
            if n_e > 0.0 && n_n > 0.0 {
                cos_sum += dot_g / (n_e.sqrt() * n_n.sqrt());
                count += 1;
            }
        }
        let mean_cos = cos_sum / count as f64;
        assert!(mean_cos.acos().to_degrees() <= 5.0, "angle {}", mean_cos.acos().to_degrees());
    }

    #[test]
    fn training_rejects_bad_configs() {
        let (data, mut config) = toy_config(EstimatorKind::DequantizedExplicit, 0.3);
        assert!(eg_train(&data, &config).is_err());
        config.estimator.kind = EstimatorKind::DequantizedImplicit;
        config.allow_slow_estimators = false;
        assert!(eg_train(&data, &config).is_err());
        config.allow_slow_estimators = true;
        config.init = InitScheme::Standard;
        assert!(eg_train(&data, &config).is_err());
        let (data, mut config) = toy_config(EstimatorKind::RipeExactNorms, 0.0);
        config.estimator.tol = EpsGamma::new(0.0, 0.05).unwrap();
        assert!(eg_train(&data, &config).is_err());
    }

    #[test]
    fn history_matches_shadow_weights_during_training() {
        let (data, config) = toy_config(EstimatorKind::Gaussian, 0.3);
        let mut max_rel = 0.0f64;
        let model = eg_train_observed(&data, &config, &mut |t, params, history| {
            if t % 10 != 0 {
                return;
            }
            let h = history.unwrap();
            for w in 0..params.arch().weight_layers() {
                let t_rows = h.iterations(w);
                for j in 0..params.arch().weight_shape(w).0 {
                    let rec = h.weight_row(t_rows, w, j).unwrap();
                    let shadow = params.weight(w).row(j);
                    let wn = norm(shadow).max(1e-12);
                    for (r, s) in rec.iter().zip(shadow) {
                        max_rel = max_rel.max((r - s).abs() / wn);
                    }
                }
            }
        })
        .unwrap();
        assert!(max_rel <= 1e-6, "max relative deviation {max_rel}");
        assert!(model.history.is_some());
    }

    #[test]
    fn contract_violation_rate_within_gamma_window() {
        let (data, mut config) = toy_config(EstimatorKind::Gaussian, 0.3);
        config.iterations = 200;
        config.telemetry.full_batch_every = 1; // trace every element
        let model = eg_train(&data, &config).unwrap();
        assert!(model.telemetry.contract_checked >= 10_000);
        let rate = model.telemetry.violation_rate();
        assert!(rate <= 0.05 + 0.02, "violation rate {rate}");
    }

    #[test]
    fn bias_update_matches_delta_mean() {
        let a = arch(&[2, 2]);
        let data = vec![
            LabeledSample { x: vec![1.0, 0.0], y: vec![0.0, 1.0] },
            LabeledSample { x: vec![0.0, 1.0], y: vec![1.0, 0.0] },
        ];
        let mut config = TrainingConfig::new(a, spec(EstimatorKind::Exact, 0.0, 0.05, 1));
        config.iterations = 1;
        config.batch_size = 2;
        config.eta = LearningRate::Constant(0.5);
        config.init = InitScheme::LowRank(InitRank::Fixed(1));
        let model = eg_train(&data, &config).unwrap();
        // biases moved away from zero in the direction of -eta * mean(delta)
        assert!(model.params.bias(0).iter().any(|b| *b != 0.0));
    }

    #[test]
    fn zero_iterations_is_rejected() {
        let (data, mut config) = toy_config(EstimatorKind::Exact, 0.0);
        config.iterations = 0;
        assert!(eg_train(&data, &config).is_err());
    }

    #[test]
    fn evaluation_label_matches_classical_for_exact_kind() {
        let (data, config) = toy_config(EstimatorKind::Gaussian, 0.3);
        let model = eg_train(&data, &config).unwrap();
        let exact_eval =
            Evaluator::for_model(&model, spec(EstimatorKind::Exact, 0.0, 0.05, 0)).unwrap();
        for (i, s) in data.iter().enumerate() {
            let out = exact_eval.evaluate(i, &s.x).unwrap();
            let pass = classical_feedforward(&model.params, model.activation, &s.x).unwrap();
            assert_eq!(out.label, argmax(pass.a.last().unwrap()));
        }
    }

    #[test]
    fn argmax_is_scale_invariant() {
        let v = vec![0.2, -0.4, 0.9, 0.1];
        let scaled: Vec<f64> = v.iter().map(|x| x * 3.5).collect();
        assert_eq!(argmax(&v), argmax(&scaled));
    }

    #[test]
    fn memorizes_separable_toy_data() {
        // four well-separated points, exact training
        let a = arch(&[2, 6, 2]);
        let data = vec![
            LabeledSample { x: vec![1.0, 1.0], y: vec![1.0, 0.0] },
            LabeledSample { x: vec![-1.0, -1.0], y: vec![0.0, 1.0] },
            LabeledSample { x: vec![0.8, 1.2], y: vec![1.0, 0.0] },
            LabeledSample { x: vec![-1.2, -0.8], y: vec![0.0, 1.0] },
        ];
        let mut config = TrainingConfig::new(a, spec(EstimatorKind::Exact, 0.0, 0.05, 3));
        config.iterations = 200;
        config.batch_size = 4;
        config.eta = LearningRate::Constant(0.5);
        config.init = InitScheme::Standard;
        let model = eg_train(&data, &config).unwrap();
        let eval = Evaluator::for_model(&model, model.estimator).unwrap();
        let report = eval.accuracy(&data).unwrap();
        assert_relative_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn dequantized_implicit_training_runs_on_toy_scale() {
        let a = arch(&[3, 4, 2]);
        let data = synthetic_dataset(&a, 8, 42);
        let mut config =
            TrainingConfig::new(a, spec(EstimatorKind::DequantizedImplicit, 0.5, 0.2, 13));
        config.iterations = 3;
        config.batch_size = 2;
        config.eta = LearningRate::Constant(0.1);
        config.init = InitScheme::LowRank(InitRank::Fixed(2));
        config.allow_slow_estimators = true;
        config.telemetry.full_batch_every = 1;
        let model = eg_train(&data, &config).unwrap();
        assert!(model.params.weight(0).data().iter().all(|v| v.is_finite()));
        assert!(model.telemetry.contract_checked > 0);
    }
}
