//! Implicit weight storage via update histories.
//!
//! Instead of materializing `W^{t,l}` elementwise, each weight layer keeps
//! the sequence of update terms that produced it: per iteration `τ` a step
//! size `η^τ` and, per batch element `μ`, the pair
//! `(a^{τ,μ,l-1}, δ^{τ,μ,l})` with their norms. The weight entries are then
//!
//! ```text
//! W^{t,l}_jk = Σ_{τ<t} Σ_μ (-η^τ / M) δ^{τ,μ,l}_j a^{τ,μ,l-1}_k
//! ```
//!
//! Low-rank initialization seeds row `τ = 0` with `r` random pairs and
//! `η^0 = -1`, so the sum starts at a rank-`r` matrix.
//!
//! Alongside the raw records, the module maintains the derived `X^{[t,l,j]}`
//! matrices (entries `(-η^τ/M) δ^{τ,μ}_j ||a^{τ,μ}||`, one matrix per output
//! neuron `j`) and their transposed analogues `X̃^{[t,l,j]}` (entries
//! `(-η^τ/M) a^{τ,μ}_j ||δ^{τ,μ}||`, one per input neuron). Their Frobenius
//! norms drive the cost telemetry; in tree mode they are materialized as
//! [`L2BstMatrix`] so the history-based estimator can sample from them.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::estimators::HistoryVectors;
use crate::l2bst::{L2Bst, L2BstMatrix};
use crate::network::{norm, Architecture, Mat, NetworkParameters};
use crate::rng::{derive_rng, DOMAIN_INIT, DOMAIN_NORM_ESTIMATE};
use crate::{Error, Result};

/// How much of the history a run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryMode {
    /// Only the running `||X||_F` / `||X̃||_F` accumulators (enough for
    /// telemetry at large scale).
    FrobeniusOnly,
    /// Full records for reconstruction oracles.
    Full,
    /// Full records plus ℓ2 trees over every stored vector and `X` matrix,
    /// as needed by the history-based estimator.
    FullWithTrees,
}

impl HistoryMode {
    fn keeps_records(self) -> bool {
        !matches!(self, HistoryMode::FrobeniusOnly)
    }

    fn keeps_trees(self) -> bool {
        matches!(self, HistoryMode::FullWithTrees)
    }
}

/// One `(a, δ)` pair of a history row.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryItem {
    pub a_prev: Vec<f64>,
    pub a_norm: f64,
    pub delta: Vec<f64>,
    pub delta_norm: f64,
}

impl HistoryItem {
    pub fn new(a_prev: Vec<f64>, delta: Vec<f64>) -> Self {
        let a_norm = norm(&a_prev);
        let delta_norm = norm(&delta);
        Self { a_prev, a_norm, delta, delta_norm }
    }

    fn zero(in_dim: usize, out_dim: usize) -> Self {
        Self {
            a_prev: vec![0.0; in_dim],
            a_norm: 0.0,
            delta: vec![0.0; out_dim],
            delta_norm: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.a_norm == 0.0 && self.delta_norm == 0.0
    }
}

/// One recorded iteration of one weight layer.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub eta: f64,
    pub items: Vec<HistoryItem>,
}

#[derive(Debug)]
struct LayerHistory {
    in_dim: usize,
    out_dim: usize,
    records: Vec<IterationRecord>,
    iterations: usize,
    x_frob_sq: Vec<f64>,
    xt_frob_sq: Vec<f64>,
    x_mats: Option<Vec<L2BstMatrix>>,
    xt_mats: Option<Vec<L2BstMatrix>>,
    a_trees: Option<Vec<Vec<Option<L2Bst>>>>,
    d_trees: Option<Vec<Vec<Option<L2Bst>>>>,
}

impl LayerHistory {
    fn new(in_dim: usize, out_dim: usize, batch_size: usize, mode: HistoryMode) -> Result<Self> {
        let (x_mats, xt_mats) = if mode.keeps_trees() {
            let x = (0..out_dim)
                .map(|_| L2BstMatrix::new(batch_size))
                .collect::<Result<Vec<_>>>()?;
            let xt = (0..in_dim)
                .map(|_| L2BstMatrix::new(batch_size))
                .collect::<Result<Vec<_>>>()?;
            (Some(x), Some(xt))
        } else {
            (None, None)
        };
        Ok(Self {
            in_dim,
            out_dim,
            records: Vec::new(),
            iterations: 0,
            x_frob_sq: vec![0.0; out_dim],
            xt_frob_sq: vec![0.0; in_dim],
            x_mats,
            xt_mats,
            a_trees: mode.keeps_trees().then(Vec::new),
            d_trees: mode.keeps_trees().then(Vec::new),
        })
    }

    fn append(&mut self, eta: f64, items: Vec<IterationItems>, mode: HistoryMode) -> Result<()> {
        let m = items.len() as f64;
        // Frobenius accumulators: entries of X row t are (-eta/M) delta_j ||a||,
        // entries of the X-tilde rows are (-eta/M) a_j ||delta||.
        for item in &items {
            let scale = eta / m;
            for j in 0..self.out_dim {
                let e = scale * item.item.delta[j] * item.item.a_norm;
                self.x_frob_sq[j] += e * e;
            }
            for j in 0..self.in_dim {
                let e = scale * item.item.a_prev[j] * item.item.delta_norm;
                self.xt_frob_sq[j] += e * e;
            }
        }
        if let (Some(x_mats), Some(xt_mats)) = (&mut self.x_mats, &mut self.xt_mats) {
            let scale = -eta / m;
            for j in 0..self.out_dim {
                let row: Vec<f64> = items
                    .iter()
                    .map(|it| scale * it.item.delta[j] * it.item.a_norm)
                    .collect();
                x_mats[j].append_row(&row)?;
            }
            for j in 0..self.in_dim {
                let row: Vec<f64> = items
                    .iter()
                    .map(|it| scale * it.item.a_prev[j] * it.item.delta_norm)
                    .collect();
                xt_mats[j].append_row(&row)?;
            }
        }
        if let (Some(a_trees), Some(d_trees)) = (&mut self.a_trees, &mut self.d_trees) {
            let mut a_row = Vec::with_capacity(items.len());
            let mut d_row = Vec::with_capacity(items.len());
            for it in &items {
                if it.item.is_zero() {
                    a_row.push(None);
                    d_row.push(None);
                } else {
                    a_row.push(Some(L2Bst::build(&it.item.a_prev)?));
                    d_row.push(Some(L2Bst::build(&it.item.delta)?));
                }
            }
            a_trees.push(a_row);
            d_trees.push(d_row);
        }
        // the initialization row is always retained (it is tiny and the
        // initial weights are only defined through it)
        if mode.keeps_records() || self.iterations == 0 {
            self.records.push(IterationRecord {
                eta,
                items: items.into_iter().map(|it| it.item).collect(),
            });
        }
        self.iterations += 1;
        Ok(())
    }
}

struct IterationItems {
    item: HistoryItem,
}

/// Per-layer history of update terms, with derived `X` / `X̃` bookkeeping.
#[derive(Debug)]
pub struct WeightHistory {
    arch: Architecture,
    batch_size: usize,
    mode: HistoryMode,
    layers: Vec<LayerHistory>,
}

impl WeightHistory {
    pub fn empty(arch: Architecture, batch_size: usize, mode: HistoryMode) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        let layers = (0..arch.weight_layers())
            .map(|w| {
                let (out_dim, in_dim) = arch.weight_shape(w);
                LayerHistory::new(in_dim, out_dim, batch_size, mode)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { arch, batch_size, mode, layers })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn mode(&self) -> HistoryMode {
        self.mode
    }

    /// Recorded rows of weight layer `w`; the represented weights are
    /// `W^t` with `t = iterations(w)`.
    pub fn iterations(&self, layer: usize) -> usize {
        self.layers[layer].iterations
    }

    pub fn records(&self, layer: usize) -> &[IterationRecord] {
        &self.layers[layer].records
    }

    /// Append row `t` for one weight layer. `t` must be the next unrecorded
    /// index (duplicates rejected) and exactly one item per batch slot.
    pub fn record_iteration(
        &mut self,
        t: usize,
        layer: usize,
        eta: f64,
        items: Vec<HistoryItem>,
    ) -> Result<()> {
        if layer >= self.layers.len() {
            return Err(Error::IndexOutOfRange { index: layer, len: self.layers.len() });
        }
        if t != self.layers[layer].iterations {
            return Err(Error::History(format!(
                "layer {layer}: expected row {}, got {t} (duplicate or gap)",
                self.layers[layer].iterations
            )));
        }
        if items.len() != self.batch_size {
            return Err(Error::ShapeMismatch(format!(
                "{} items vs batch size {}",
                items.len(),
                self.batch_size
            )));
        }
        let (out_dim, in_dim) = self.arch.weight_shape(layer);
        for item in &items {
            if item.a_prev.len() != in_dim || item.delta.len() != out_dim {
                return Err(Error::ShapeMismatch(format!(
                    "layer {layer}: item shapes {}x{} vs {}x{}",
                    item.delta.len(),
                    item.a_prev.len(),
                    out_dim,
                    in_dim
                )));
            }
        }
        let mode = self.mode;
        self.layers[layer].append(
            eta,
            items.into_iter().map(|item| IterationItems { item }).collect(),
            mode,
        )
    }

    /// Brute-force reconstruction of `W^{t,l}_j`:
    /// `W_jk = Σ_{τ<t} Σ_μ (-η^τ/M) δ^{τ,μ}_j a^{τ,μ}_k`. This is the oracle
    /// every implicit estimator is checked against.
    pub fn weight_row(&self, t: usize, layer: usize, j: usize) -> Result<Vec<f64>> {
        let lh = self.require_records(layer, t)?;
        if j >= lh.out_dim {
            return Err(Error::IndexOutOfRange { index: j, len: lh.out_dim });
        }
        let m = self.batch_size as f64;
        let mut row = vec![0.0; lh.in_dim];
        for rec in &lh.records[..t] {
            let scale = -rec.eta / m;
            for item in &rec.items {
                let c = scale * item.delta[j];
                if c == 0.0 {
                    continue;
                }
                for (rk, ak) in row.iter_mut().zip(&item.a_prev) {
                    *rk += c * ak;
                }
            }
        }
        Ok(row)
    }

    /// Reconstruction of the column `(W^{t,l})^T_j`, with the roles of `a`
    /// and `δ` exchanged.
    pub fn weight_col(&self, t: usize, layer: usize, j: usize) -> Result<Vec<f64>> {
        let lh = self.require_records(layer, t)?;
        if j >= lh.in_dim {
            return Err(Error::IndexOutOfRange { index: j, len: lh.in_dim });
        }
        let m = self.batch_size as f64;
        let mut col = vec![0.0; lh.out_dim];
        for rec in &lh.records[..t] {
            let scale = -rec.eta / m;
            for item in &rec.items {
                let c = scale * item.a_prev[j];
                if c == 0.0 {
                    continue;
                }
                for (ck, dk) in col.iter_mut().zip(&item.delta) {
                    *ck += c * dk;
                }
            }
        }
        Ok(col)
    }

    /// All weight matrices at iteration `t`, reconstructed row by row.
    pub fn reconstruct_weights(&self, t: usize) -> Result<Vec<Mat>> {
        (0..self.arch.weight_layers())
            .map(|w| {
                let rows = (0..self.arch.weight_shape(w).0)
                    .map(|j| self.weight_row(t, w, j))
                    .collect::<Result<Vec<_>>>()?;
                Mat::from_rows(rows)
            })
            .collect()
    }

    /// `||X^{[t,l,j]}||_F^2` at the current `t` (running accumulator).
    pub fn x_frobenius_sq(&self, layer: usize, j: usize) -> f64 {
        self.layers[layer].x_frob_sq[j]
    }

    /// `||X̃^{[t,l,j]}||_F^2` at the current `t`.
    pub fn xt_frobenius_sq(&self, layer: usize, j: usize) -> f64 {
        self.layers[layer].xt_frob_sq[j]
    }

    /// Sampling matrix `X^{[t,l,j]}` (tree mode only).
    pub fn x_matrix(&self, layer: usize, j: usize) -> Result<&L2BstMatrix> {
        self.layers[layer]
            .x_mats
            .as_ref()
            .map(|m| &m[j])
            .ok_or_else(|| Error::History("X matrices not materialized in this mode".into()))
    }

    /// Sampling matrix `X̃^{[t,l,j]}` (tree mode only).
    pub fn xt_matrix(&self, layer: usize, j: usize) -> Result<&L2BstMatrix> {
        self.layers[layer]
            .xt_mats
            .as_ref()
            .map(|m| &m[j])
            .ok_or_else(|| Error::History("X-tilde matrices not materialized in this mode".into()))
    }

    /// Stored `a^{τ,μ,l-1}` trees of a layer (tree mode only).
    pub fn a_vectors(&self, layer: usize) -> Result<StoredVectors<'_>> {
        self.layers[layer]
            .a_trees
            .as_ref()
            .map(|t| StoredVectors { trees: t })
            .ok_or_else(|| Error::History("history trees not materialized in this mode".into()))
    }

    /// Stored `δ^{τ,μ,l}` trees of a layer (tree mode only).
    pub fn delta_vectors(&self, layer: usize) -> Result<StoredVectors<'_>> {
        self.layers[layer]
            .d_trees
            .as_ref()
            .map(|t| StoredVectors { trees: t })
            .ok_or_else(|| Error::History("history trees not materialized in this mode".into()))
    }

    fn require_records(&self, layer: usize, t: usize) -> Result<&LayerHistory> {
        if layer >= self.layers.len() {
            return Err(Error::IndexOutOfRange { index: layer, len: self.layers.len() });
        }
        let lh = &self.layers[layer];
        if t > lh.records.len() {
            if !self.mode.keeps_records() {
                return Err(Error::History(
                    "history rows beyond initialization are not retained in this mode".into(),
                ));
            }
            return Err(Error::IndexOutOfRange { index: t, len: lh.records.len() });
        }
        Ok(lh)
    }

    /// Simulated quantum estimate of `||W^{t,l}_j||`: the reconstructed norm
    /// perturbed by a relative error uniform on `[-ξ, ξ]`, costed at
    /// `T_W / ξ` with `T_W = (||X^{[t,l,j]}||_F / ||W_j||) sqrt(t M)`.
    pub fn estimate_row_norm(
        &self,
        t: usize,
        layer: usize,
        j: usize,
        xi: f64,
        seed: u64,
    ) -> Result<NormEstimate> {
        if xi < 0.0 || !xi.is_finite() {
            return Err(Error::InvalidTolerance(format!("xi {xi} must be non-negative")));
        }
        let true_norm = norm(&self.weight_row(t, layer, j)?);
        if true_norm == 0.0 {
            return Ok(NormEstimate {
                value: 0.0,
                xi,
                stale_at: t + 1,
                simulated_cost: 0.0,
                zero_row: true,
            });
        }
        let mut rng = derive_rng(seed, &[DOMAIN_NORM_ESTIMATE, t as u64, layer as u64, j as u64]);
        let u = if xi == 0.0 { 0.0 } else { rng.gen_range(-xi..=xi) };
        let t_w = self.x_frobenius_sq(layer, j).sqrt() / true_norm
            * ((t * self.batch_size) as f64).sqrt();
        let cost = if xi == 0.0 { f64::INFINITY } else { t_w / xi };
        Ok(NormEstimate {
            value: true_norm * (1.0 + u),
            xi,
            stale_at: t + 1,
            simulated_cost: cost,
            zero_row: false,
        })
    }
}

/// Norm estimate with its error budget, refresh deadline and the simulated
/// quantum cost of producing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub xi: f64,
    /// Batch index at which the estimate must be refreshed.
    pub stale_at: usize,
    pub simulated_cost: f64,
    pub zero_row: bool,
}

/// Tree lookup over stored history vectors, as consumed by the
/// history-based estimator.
pub struct StoredVectors<'a> {
    trees: &'a [Vec<Option<L2Bst>>],
}

impl HistoryVectors for StoredVectors<'_> {
    fn vector(&self, tau: usize, mu: usize) -> Option<&L2Bst> {
        self.trees.get(tau)?.get(mu)?.as_ref()
    }
}

/// How many random pairs seed each weight layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitRank {
    Fixed(usize),
    /// `ceil(log2(n_out))` pairs per layer.
    LogOutputDim,
}

impl InitRank {
    pub fn for_layer(self, out_dim: usize) -> usize {
        match self {
            InitRank::Fixed(r) => r,
            InitRank::LogOutputDim => (out_dim as f64).log2().ceil().max(1.0) as usize,
        }
    }
}

/// Populate history row `τ = 0` with `r` random `(a, δ)` pairs per layer and
/// `η^0 = -1`, so the accumulated `W^1` is the rank-`r` sum
/// `Σ_m δ^{0,m} (a^{0,m})^T / M`.
///
/// Scales: `a` entries are standard normal and `δ` entries have standard
/// deviation `M / sqrt(r n_in)`, which makes `Var(W^1_jk) = 1 / n_in` —
/// the same element scale as the dense baseline initialization.
pub fn low_rank_init(
    arch: &Architecture,
    rank: InitRank,
    batch_size: usize,
    seed: u64,
    mode: HistoryMode,
) -> Result<WeightHistory> {
    let mut history = WeightHistory::empty(arch.clone(), batch_size, mode)?;
    for w in 0..arch.weight_layers() {
        let (out_dim, in_dim) = arch.weight_shape(w);
        let r = rank.for_layer(out_dim);
        if r == 0 || r > batch_size {
            return Err(Error::InvalidConfig(format!(
                "layer {w}: rank {r} must lie in 1..={batch_size}"
            )));
        }
        let mut rng = derive_rng(seed, &[DOMAIN_INIT, w as u64]);
        let a_dist = Normal::new(0.0, 1.0).unwrap();
        let d_dist =
            Normal::new(0.0, batch_size as f64 / (r as f64 * in_dim as f64).sqrt()).unwrap();
        let mut items = Vec::with_capacity(batch_size);
        for m in 0..batch_size {
            if m < r {
                let a: Vec<f64> = (0..in_dim).map(|_| a_dist.sample(&mut rng)).collect();
                let d: Vec<f64> = (0..out_dim).map(|_| d_dist.sample(&mut rng)).collect();
                items.push(HistoryItem::new(a, d));
            } else {
                items.push(HistoryItem::zero(in_dim, out_dim));
            }
        }
        history.record_iteration(0, w, -1.0, items)?;
    }
    Ok(history)
}

/// Shadow parameters matching a freshly initialized history: reconstructed
/// `W^1` plus zero biases.
pub fn initial_parameters(history: &WeightHistory) -> Result<NetworkParameters> {
    let weights = history.reconstruct_weights(1)?;
    let biases = (0..history.arch().weight_layers())
        .map(|w| vec![0.0; history.arch().weight_shape(w).0])
        .collect();
    NetworkParameters::new(history.arch().clone(), weights, biases)
}
