//! R-factor telemetry and the running-time cost model.
//!
//! The quantum running-time bounds carry trajectory-dependent norm ratios:
//!
//! - `R_a^{t,m}`: feedforward factor, averaging
//!   `||X^{[t,l,j]}||_F ||a^{t,m,l-1}|| / max(1, |<W_j, a>|)` over non-input
//!   neurons;
//! - `R_δ^{t,m}`: the backpropagation analogue with `X̃` and `δ`;
//! - `R_W_r^t` / `R_W_c^t`: per-batch norm-estimation factors
//!   `||X||_F / ||W_j||` and `||X̃||_F / ||W^T_j||`, scaled by `1/M`;
//! - `R_e`: the evaluation factor `||W_j|| ||a|| / max(1, |<W_j, a>|)`.
//!
//! Each factor also has a squared-term classical analogue (`R^cl >= R^2` by
//! Cauchy-Schwarz) entering the quantum-inspired running times. The
//! [`cost_compare`] report evaluates all the running-time expressions as
//! figures of merit with the hidden polylog constants set to one.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::implicit::WeightHistory;
use crate::network::{norm, NetworkParameters};
use crate::{Error, Result};

/// Joint value of a factor and its squared-term classical analogue.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FactorPair {
    pub quantum: f64,
    pub classical: f64,
}

/// Feedforward factor `R_a^{t,m}` (and classical analogue) for one sample.
///
/// `activations[w]` are the level-`w` activations of the sample's pass and
/// `ips[w][j]` the exact shadow-weight inner products `<W_j, a^{w}>`.
pub fn r_a(history: &WeightHistory, activations: &[Vec<f64>], ips: &[Vec<f64>]) -> FactorPair {
    let arch = history.arch();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for w in 0..arch.weight_layers() {
        let a_norm = norm(&activations[w]);
        let out_dim = arch.weight_shape(w).0;
        for j in 0..out_dim {
            let term =
                history.x_frobenius_sq(w, j).sqrt() * a_norm / ips[w][j].abs().max(1.0);
            sum += term;
            sum_sq += term * term;
        }
    }
    let denom = arch.hidden_and_output_neurons() as f64;
    FactorPair { quantum: sum / denom, classical: sum_sq / denom }
}

/// Backpropagation factor `R_δ^{t,m}` (and classical analogue) for one
/// sample. `deltas[w]` are the level-`w+1` errors and `col_ips[w][j]` the
/// exact `<(W^{w})^T_j, δ^{w}>` column products for `j < n_w_in`.
pub fn r_delta(history: &WeightHistory, deltas: &[Vec<f64>], col_ips: &[Vec<f64>]) -> FactorPair {
    let arch = history.arch();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for w in 0..arch.weight_layers() {
        let d_norm = norm(&deltas[w]);
        let in_dim = arch.weight_shape(w).1;
        for j in 0..in_dim {
            let term =
                history.xt_frobenius_sq(w, j).sqrt() * d_norm / col_ips[w][j].abs().max(1.0);
            sum += term;
            sum_sq += term * term;
        }
    }
    // one term per neuron feeding a weight layer: N - n_L of them
    let denom = (arch.total_neurons() - arch.output_dim()) as f64;
    FactorPair { quantum: sum / denom, classical: sum_sq / denom }
}

/// Per-batch norm-estimation factors `(R_W_r^t, R_W_c^t)` against the shadow
/// weights.
pub fn r_w(history: &WeightHistory, params: &NetworkParameters) -> (f64, f64) {
    let arch = history.arch();
    let denom = arch.hidden_and_output_neurons() as f64 * history.batch_size() as f64;
    let mut rows = 0.0;
    let mut cols = 0.0;
    for w in 0..arch.weight_layers() {
        let (out_dim, in_dim) = arch.weight_shape(w);
        let mat = params.weight(w);
        for j in 0..out_dim {
            let wn = mat.row_norm(j);
            if wn > 0.0 {
                rows += history.x_frobenius_sq(w, j).sqrt() / wn;
            }
        }
        for j in 0..in_dim {
            let wn = mat.col_norm(j);
            if wn > 0.0 {
                cols += history.xt_frobenius_sq(w, j).sqrt() / wn;
            }
        }
    }
    (rows / denom, cols / denom)
}

/// Evaluation factor `R_e` (and classical analogue) for one sample, given
/// precomputed weight row norms.
pub fn r_e(
    row_norms: &[Vec<f64>],
    activations: &[Vec<f64>],
    ips: &[Vec<f64>],
    hidden_and_output: usize,
) -> FactorPair {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for (w, norms) in row_norms.iter().enumerate() {
        let a_norm = norm(&activations[w]);
        for (j, wn) in norms.iter().enumerate() {
            let term = wn * a_norm / ips[w][j].abs().max(1.0);
            sum += term;
            sum_sq += term * term;
        }
    }
    let denom = hidden_and_output as f64;
    FactorPair { quantum: sum / denom, classical: sum_sq / denom }
}

/// One per-iteration telemetry record (designated batch element).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RFactorRow {
    pub t: usize,
    pub r_a: f64,
    pub r_delta: f64,
    pub r_w_r: f64,
    pub r_w_c: f64,
    pub r_a_cl: f64,
    pub r_delta_cl: f64,
}

/// Accumulated telemetry of a run: the per-iteration series plus running
/// averages over every recorded sample point, estimator contract counters
/// and the simulated norm-estimation cost.
#[derive(Debug, Clone, Default)]
pub struct RFactorSeries {
    rows: Vec<RFactorRow>,
    sum_a: f64,
    sum_a_cl: f64,
    sum_delta: f64,
    sum_delta_cl: f64,
    samples: usize,
    sum_w: f64,
    w_samples: usize,
    sum_e: f64,
    sum_e_cl: f64,
    eval_samples: usize,
    pub contract_checked: u64,
    pub contract_violations: u64,
    pub norm_estimation_cost: f64,
}

impl RFactorSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_iteration(&mut self, row: RFactorRow) {
        self.sum_a += row.r_a;
        self.sum_a_cl += row.r_a_cl;
        self.sum_delta += row.r_delta;
        self.sum_delta_cl += row.r_delta_cl;
        self.samples += 1;
        self.sum_w += row.r_w_r + row.r_w_c;
        self.w_samples += 1;
        self.rows.push(row);
    }

    /// Extra `(R_a, R_δ)` sample points (full-batch averaging passes).
    pub fn record_extra_sample(&mut self, a: FactorPair, delta: FactorPair) {
        self.sum_a += a.quantum;
        self.sum_a_cl += a.classical;
        self.sum_delta += delta.quantum;
        self.sum_delta_cl += delta.classical;
        self.samples += 1;
    }

    pub fn record_eval(&mut self, e: FactorPair) {
        self.sum_e += e.quantum;
        self.sum_e_cl += e.classical;
        self.eval_samples += 1;
    }

    pub fn record_contract(&mut self, checked: u64, violations: u64) {
        self.contract_checked += checked;
        self.contract_violations += violations;
    }

    pub fn rows(&self) -> &[RFactorRow] {
        &self.rows
    }

    pub fn r_a_mean(&self) -> f64 {
        mean(self.sum_a, self.samples)
    }

    pub fn r_a_cl_mean(&self) -> f64 {
        mean(self.sum_a_cl, self.samples)
    }

    pub fn r_delta_mean(&self) -> f64 {
        mean(self.sum_delta, self.samples)
    }

    pub fn r_delta_cl_mean(&self) -> f64 {
        mean(self.sum_delta_cl, self.samples)
    }

    /// Mean over iterations of `R_W_r^t + R_W_c^t`.
    pub fn r_w_mean(&self) -> f64 {
        mean(self.sum_w, self.w_samples)
    }

    pub fn r_e_mean(&self) -> f64 {
        mean(self.sum_e, self.eval_samples)
    }

    pub fn r_e_cl_mean(&self) -> f64 {
        mean(self.sum_e_cl, self.eval_samples)
    }

    pub fn violation_rate(&self) -> f64 {
        if self.contract_checked == 0 {
            0.0
        } else {
            self.contract_violations as f64 / self.contract_checked as f64
        }
    }

    /// Mean and standard deviation of `R_W_r` over the trailing fraction of
    /// the recorded iterations.
    pub fn r_w_r_tail_stats(&self, fraction: f64) -> Option<(f64, f64)> {
        if self.rows.is_empty() {
            return None;
        }
        let start = ((self.rows.len() as f64) * (1.0 - fraction)).floor() as usize;
        let tail: Vec<f64> = self.rows[start.min(self.rows.len() - 1)..]
            .iter()
            .map(|r| r.r_w_r)
            .collect();
        let n = tail.len() as f64;
        let m = tail.iter().sum::<f64>() / n;
        let var = tail.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        Some((m, var.sqrt()))
    }

    /// CSV time series `t, r_a, r_delta, r_w_r, r_w_c`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "t,r_a,r_delta,r_w_r,r_w_c")?;
        for row in &self.rows {
            writeln!(
                out,
                "{},{:.12e},{:.12e},{:.12e},{:.12e}",
                row.t, row.r_a, row.r_delta, row.r_w_r, row.r_w_c
            )?;
        }
        Ok(())
    }
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Inputs to the running-time comparison: problem scale, tolerances and the
/// measured trajectory factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModelInput {
    /// Update iterations `T`.
    pub t: f64,
    /// Mini-batch size `M`.
    pub m: f64,
    /// Total neurons `N`.
    pub n: f64,
    /// Total edges `E`.
    pub e: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub r_a: f64,
    pub r_delta: f64,
    pub r_w: f64,
    pub r_e: f64,
    pub r_a_cl: f64,
    pub r_delta_cl: f64,
    pub r_e_cl: f64,
}

/// Figures of merit for the three algorithm families. These are the
/// asymptotic expressions with all hidden constants set to one, not
/// wall-clock predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub schema_version: u32,
    /// `ln(1/γ) / ε`.
    pub log_term: f64,
    /// `(TM)^1.5 N ln(1/γ)/ε (R_a + R_δ + R_W)`.
    pub quantum_train: f64,
    /// `(TM)^2 N ln(1/γ)/ε² (R_a^cl + R_δ^cl)`.
    pub quantum_inspired_train: f64,
    /// `T M E`.
    pub classical_train: f64,
    /// `N ln(1/γ)/ε R_e`.
    pub quantum_eval: f64,
    /// `N ln(1/γ)/ε² R_e^cl`.
    pub quantum_inspired_eval: f64,
    /// `E`.
    pub classical_eval: f64,
    /// `quantum_train / classical_train`.
    pub quantum_advantage_ratio: f64,
    /// `quantum_inspired_train / classical_train`.
    pub quantum_inspired_advantage_ratio: f64,
}

/// Evaluate the cost expressions for one parameter set.
pub fn cost_compare(input: &CostModelInput) -> Result<CostReport> {
    for (name, v) in [
        ("t", input.t),
        ("m", input.m),
        ("n", input.n),
        ("e", input.e),
        ("epsilon", input.epsilon),
        ("gamma", input.gamma),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "cost model input `{name}` must be positive and finite, got {v}"
            )));
        }
    }
    if input.gamma >= 1.0 {
        return Err(Error::InvalidConfig("gamma must lie in (0,1)".into()));
    }
    let tm = input.t * input.m;
    let log_term = (1.0 / input.gamma).ln() / input.epsilon;
    let r_sum = input.r_a + input.r_delta + input.r_w;
    let r_cl_sum = input.r_a_cl + input.r_delta_cl;
    let quantum_train = tm.powf(1.5) * input.n * log_term * r_sum;
    let quantum_inspired_train = tm * tm * input.n * log_term / input.epsilon * r_cl_sum;
    let classical_train = tm * input.e;
    Ok(CostReport {
        schema_version: 1,
        log_term,
        quantum_train,
        quantum_inspired_train,
        classical_train,
        quantum_eval: input.n * log_term * input.r_e,
        quantum_inspired_eval: input.n * log_term / input.epsilon * input.r_e_cl,
        classical_eval: input.e,
        quantum_advantage_ratio: quantum_train / classical_train,
        quantum_inspired_advantage_ratio: quantum_inspired_train / classical_train,
    })
}
