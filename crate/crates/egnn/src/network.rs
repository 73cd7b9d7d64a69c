//! Exact classical feedforward network machinery.
//!
//! This module is both the classical baseline and the shadow ground truth for
//! every noisy mode: architecture and parameters, activations, the cost
//! function, exact feedforward / backpropagation, the SGD update and
//! mini-batch scheduling. Everything here is pure; parameter mutation only
//! happens through [`sgd_update`], which returns a new value.
//!
//! Layer indexing is zero-based: a network with layer sizes
//! `[n_0, ..., n_{L-1}]` has `L - 1` weight matrices, where weight layer `w`
//! maps level `w` activations to level `w + 1` and has shape
//! `n_{w+1} x n_w`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::derive_rng;
use crate::{Error, Result};

/// Layer sizes of a feedforward network. At least two layers, all non-empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least 2 layers, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArchitecture(
                "every layer needs at least one neuron".into(),
            ));
        }
        Ok(Self { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of layers, `L`.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len()
    }

    /// Number of weight matrices, `L - 1`.
    pub fn weight_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Total neuron count `N`.
    pub fn total_neurons(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    /// Total edge count `E`.
    pub fn total_edges(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1])
            .sum()
    }

    /// Neurons in all layers past the input, `N - n_1`.
    pub fn hidden_and_output_neurons(&self) -> usize {
        self.total_neurons() - self.input_dim()
    }

    /// (rows, cols) of weight layer `w`.
    pub fn weight_shape(&self, w: usize) -> (usize, usize) {
        (self.layer_sizes[w + 1], self.layer_sizes[w])
    }
}

/// Dense row-major matrix. Rows are contiguous so weight rows can be handed
/// to the estimators as slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput("matrix with no rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        let n = rows.len();
        let data = rows.into_iter().flatten().collect();
        Ok(Self { rows: n, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.cols..(j + 1) * self.cols]
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.cols + k]
    }

    pub fn set(&mut self, j: usize, k: usize, v: f64) {
        self.data[j * self.cols + k] = v;
    }

    pub fn col(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|j| self.get(j, k)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row_norm(&self, j: usize) -> f64 {
        self.row(j).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn col_norm(&self, k: usize) -> f64 {
        (0..self.rows)
            .map(|j| {
                let v = self.get(j, k);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// The one dot product used everywhere. Exact estimation and the classical
/// pass must stay bit-identical, so both call this.
#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y) {
        acc += a * b;
    }
    acc
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Pointwise non-linearity applied to pre-activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    /// `f(z)`.
    pub fn apply(self, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::Domain(format!("non-finite pre-activation {z}")));
        }
        Ok(self.apply_unchecked(z))
    }

    #[inline]
    pub fn apply_unchecked(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Exact analytic derivative `f'(z)`. For relu the subgradient at zero is
    /// fixed to 0.
    pub fn derivative(self, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::Domain(format!("non-finite pre-activation {z}")));
        }
        Ok(self.derivative_unchecked(z))
    }

    #[inline]
    pub fn derivative_unchecked(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Cost function comparing a label against output activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cost {
    Mse,
}

impl Cost {
    /// Per-sample cost. For MSE this is `0.5 * ||y - a||^2`; any `1/M`
    /// averaging happens at batch aggregation.
    pub fn value(self, y: &[f64], a: &[f64]) -> Result<f64> {
        check_same_len(y, a)?;
        match self {
            Cost::Mse => Ok(0.5
                * y.iter()
                    .zip(a)
                    .map(|(yi, ai)| (yi - ai) * (yi - ai))
                    .sum::<f64>()),
        }
    }

    /// Per-sample gradient `dC/da`. For MSE this is `a - y`.
    pub fn gradient(self, y: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        check_same_len(y, a)?;
        match self {
            Cost::Mse => Ok(y.iter().zip(a).map(|(yi, ai)| ai - yi).collect()),
        }
    }
}

fn check_same_len(y: &[f64], a: &[f64]) -> Result<()> {
    if y.len() != a.len() {
        return Err(Error::ShapeMismatch(format!(
            "label length {} vs activation length {}",
            y.len(),
            a.len()
        )));
    }
    Ok(())
}

/// One training or test point: input vector plus target vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl LabeledSample {
    pub fn label(&self) -> usize {
        argmax(&self.y)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Weight matrices and bias vectors matching an [`Architecture`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParameters {
    arch: Architecture,
    weights: Vec<Mat>,
    biases: Vec<Vec<f64>>,
}

impl NetworkParameters {
    pub fn new(arch: Architecture, weights: Vec<Mat>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != arch.weight_layers() || biases.len() != arch.weight_layers() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} weight layers, got {} weights / {} biases",
                arch.weight_layers(),
                weights.len(),
                biases.len()
            )));
        }
        for w in 0..arch.weight_layers() {
            let (r, c) = arch.weight_shape(w);
            if weights[w].rows() != r || weights[w].cols() != c {
                return Err(Error::ShapeMismatch(format!(
                    "weight layer {w}: expected {r}x{c}, got {}x{}",
                    weights[w].rows(),
                    weights[w].cols()
                )));
            }
            if biases[w].len() != r {
                return Err(Error::ShapeMismatch(format!(
                    "bias layer {w}: expected length {r}, got {}",
                    biases[w].len()
                )));
            }
            if weights[w].data().iter().any(|v| !v.is_finite())
                || biases[w].iter().any(|v| !v.is_finite())
            {
                return Err(Error::Domain(format!("non-finite parameter in layer {w}")));
            }
        }
        Ok(Self { arch, weights, biases })
    }

    pub fn zeros(arch: Architecture) -> Self {
        let weights = (0..arch.weight_layers())
            .map(|w| {
                let (r, c) = arch.weight_shape(w);
                Mat::zeros(r, c)
            })
            .collect();
        let biases = (0..arch.weight_layers())
            .map(|w| vec![0.0; arch.weight_shape(w).0])
            .collect();
        Self { arch, weights, biases }
    }

    /// The usual dense Gaussian initialization: entries of weight layer `w`
    /// are N(0, sigma^2) with sigma = 1/sqrt(fan_in), biases zero.
    pub fn standard_init(arch: Architecture, seed: u64) -> Self {
        let mut params = Self::zeros(arch);
        let mut rng = derive_rng(seed, &[crate::rng::DOMAIN_INIT]);
        for w in 0..params.arch.weight_layers() {
            let (rows, cols) = params.arch.weight_shape(w);
            let sigma = 1.0 / (cols as f64).sqrt();
            let normal = Normal::new(0.0, sigma).unwrap();
            for j in 0..rows {
                for k in 0..cols {
                    params.weights[w].set(j, k, normal.sample(&mut rng));
                }
            }
        }
        params
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn weight(&self, w: usize) -> &Mat {
        &self.weights[w]
    }

    pub fn weight_mut(&mut self, w: usize) -> &mut Mat {
        &mut self.weights[w]
    }

    pub fn bias(&self, w: usize) -> &[f64] {
        &self.biases[w]
    }

    pub fn bias_mut(&mut self, w: usize) -> &mut Vec<f64> {
        &mut self.biases[w]
    }
}

/// Stored intermediate state of one feedforward pass: `a[0] = x` and, for
/// each weight layer `w`, the pre-activations `z[w]` and activations
/// `a[w + 1]` of level `w + 1`.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub z: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
}

/// Exact feedforward: `z^l_j = <W^l_j, a^{l-1}> + b^l_j`, `a^l_j = f(z^l_j)`.
pub fn classical_feedforward(
    params: &NetworkParameters,
    activation: Activation,
    x: &[f64],
) -> Result<ForwardPass> {
    let arch = params.arch();
    if x.len() != arch.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input length {} vs input layer size {}",
            x.len(),
            arch.input_dim()
        )));
    }
    let mut a: Vec<Vec<f64>> = Vec::with_capacity(arch.depth());
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(arch.weight_layers());
    a.push(x.to_vec());
    for w in 0..arch.weight_layers() {
        let mat = params.weight(w);
        let prev = &a[w];
        let mut zl = Vec::with_capacity(mat.rows());
        let mut al = Vec::with_capacity(mat.rows());
        for j in 0..mat.rows() {
            let zj = dot(mat.row(j), prev) + params.bias(w)[j];
            zl.push(zj);
            al.push(activation.apply(zj)?);
        }
        z.push(zl);
        a.push(al);
    }
    Ok(ForwardPass { z, a })
}

/// Exact backpropagation. Returns one delta vector per weight layer:
/// `deltas[w]` are the errors of level `w + 1`. The level-0 deltas are never
/// consumed by the update rule and are not computed.
pub fn classical_backprop(
    params: &NetworkParameters,
    activation: Activation,
    cost: Cost,
    pass: &ForwardPass,
    y: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let arch = params.arch();
    let lw = arch.weight_layers();
    if pass.a.len() != arch.depth() || pass.z.len() != lw {
        return Err(Error::ShapeMismatch("forward pass does not match architecture".into()));
    }
    let out = &pass.a[lw];
    let grad = cost.gradient(y, out)?;
    let mut deltas = vec![Vec::new(); lw];
    deltas[lw - 1] = pass.z[lw - 1]
        .iter()
        .zip(&grad)
        .map(|(&zj, &gj)| activation.derivative_unchecked(zj) * gj)
        .collect();
    for w in (0..lw - 1).rev() {
        // delta^l_j = f'(z^l_j) <(W^{l+1})^T_j, delta^{l+1}>
        let next = params.weight(w + 1);
        let next_delta = deltas[w + 1].clone();
        let mut dl = Vec::with_capacity(pass.z[w].len());
        for j in 0..pass.z[w].len() {
            let back: f64 = dot(&next.col(j), &next_delta);
            dl.push(activation.derivative_unchecked(pass.z[w][j]) * back);
        }
        deltas[w] = dl;
    }
    Ok(deltas)
}

/// Per-sample contribution to a mini-batch update: the activations and deltas
/// produced by one feedforward + backprop pass.
pub struct SampleGrads<'a> {
    pub activations: &'a [Vec<f64>],
    pub deltas: &'a [Vec<f64>],
}

/// Stochastic gradient descent over one mini-batch:
/// `W_jk -= eta/M * sum_m a^{m,l-1}_k delta^{m,l}_j`, biases likewise.
/// Pure: returns the updated parameters.
pub fn sgd_update(
    params: &NetworkParameters,
    batch: &[SampleGrads<'_>],
    eta: f64,
) -> Result<NetworkParameters> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty mini-batch".into()));
    }
    let mut out = params.clone();
    let scale = eta / batch.len() as f64;
    for w in 0..out.arch.weight_layers() {
        for sample in batch {
            let prev = &sample.activations[w];
            let delta = &sample.deltas[w];
            let mat = out.weight_mut(w);
            for j in 0..mat.rows() {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = mat.row_mut(j);
                for (rk, ak) in row.iter_mut().zip(prev) {
                    *rk -= scale * ak * dj;
                }
            }
            let bias = out.bias_mut(w);
            for (bj, dj) in bias.iter_mut().zip(delta) {
                *bj -= scale * dj;
            }
        }
    }
    Ok(out)
}

/// A fixed assignment of sample indices to `T` mini-batches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatchSchedule {
    pub batches: Vec<Vec<usize>>,
    pub seed: u64,
}

/// Epoch-shuffled mini-batch schedule: each epoch is a fresh seeded
/// permutation of all sample indices, cut into batches of `batch_size`
/// without replacement. If `batch_size` does not divide `num_samples` the
/// short tail of each epoch is dropped, keeping every batch exactly
/// `batch_size` wide. Exactly `num_batches` batches are emitted.
pub fn epoch_schedule(
    num_samples: usize,
    batch_size: usize,
    num_batches: usize,
    seed: u64,
) -> Result<MiniBatchSchedule> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    if batch_size > num_samples {
        return Err(Error::InvalidConfig(format!(
            "batch size {batch_size} exceeds {num_samples} samples"
        )));
    }
    let per_epoch = num_samples / batch_size;
    let mut batches = Vec::with_capacity(num_batches);
    let mut epoch = 0u64;
    while batches.len() < num_batches {
        let mut order: Vec<usize> = (0..num_samples).collect();
        let mut rng = derive_rng(seed, &[crate::rng::DOMAIN_SCHEDULE, epoch]);
        // Fisher-Yates
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for b in 0..per_epoch {
            if batches.len() == num_batches {
                break;
            }
            batches.push(order[b * batch_size..(b + 1) * batch_size].to_vec());
        }
        epoch += 1;
    }
    Ok(MiniBatchSchedule { batches, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Tanh.apply(0.0).unwrap(), 0.0);
        assert_eq!(Activation::Sigmoid.apply(0.0).unwrap(), 0.5);
        assert_eq!(Activation::Relu.apply(-1.5).unwrap(), 0.0);
        assert!(Activation::Tanh.apply(f64::NAN).is_err());
        assert!(Activation::Relu.apply(f64::INFINITY).is_err());
    }

    #[test]
    fn activation_ranges() {
        for z in [-20.0, -3.0, -0.1, 0.0, 0.1, 3.0, 20.0] {
            let t = Activation::Tanh.apply(z).unwrap();
            assert!((-1.0..=1.0).contains(&t));
            let s = Activation::Sigmoid.apply(z).unwrap();
            assert!(s > 0.0 && s < 1.0);
            assert!(Activation::Relu.apply(z).unwrap() >= 0.0);
        }
    }

    #[test]
    fn activation_derivatives() {
        assert_eq!(Activation::Tanh.derivative(0.0).unwrap(), 1.0);
        assert_eq!(Activation::Sigmoid.derivative(0.0).unwrap(), 0.25);
        // subgradient convention at the kink
        assert_eq!(Activation::Relu.derivative(0.0).unwrap(), 0.0);
        assert_eq!(Activation::Relu.derivative(1e-12).unwrap(), 1.0);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let h = 1e-5;
        for kind in [Activation::Tanh, Activation::Sigmoid, Activation::Relu] {
            for i in -40..=40 {
                let z = i as f64 * 0.1 + 0.05; // avoid the relu kink
                let fd = (kind.apply(z + h).unwrap() - kind.apply(z - h).unwrap()) / (2.0 * h);
                let an = kind.derivative(z).unwrap();
                if an.abs() > 1e-12 {
                    assert_relative_eq!(fd, an, max_relative = 1e-6);
                } else {
                    assert!(fd.abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn mse_values() {
        assert_eq!(Cost::Mse.value(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(Cost::Mse.value(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        // 0.5 * (0.25 + 2.25)
        assert_eq!(Cost::Mse.value(&[1.0, -1.0], &[0.5, 0.5]).unwrap(), 1.25);
        assert!(Cost::Mse.value(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_gradient() {
        assert_eq!(Cost::Mse.gradient(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(Cost::Mse.gradient(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), vec![-1.0, 0.0]);
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let y = vec![0.3, -1.2, 0.7];
        let a = vec![0.1, 0.4, -0.9];
        let g = Cost::Mse.gradient(&y, &a).unwrap();
        let h = 1e-6;
        for j in 0..a.len() {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[j] += h;
            am[j] -= h;
            let fd =
                (Cost::Mse.value(&y, &ap).unwrap() - Cost::Mse.value(&y, &am).unwrap()) / (2.0 * h);
            assert_relative_eq!(fd, g[j], max_relative = 1e-7);
        }
    }

    #[test]
    fn feedforward_zero_params() {
        let arch = Architecture::new(vec![3, 4, 2]).unwrap();
        let params = NetworkParameters::zeros(arch);
        let pass =
            classical_feedforward(&params, Activation::Tanh, &[0.5, -0.2, 0.9]).unwrap();
        assert!(pass.z.iter().flatten().all(|&v| v == 0.0));
        assert!(pass.a[1..].iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn feedforward_odd_symmetry() {
        // 2-2-1 net, identity-ish weights, tanh: z3 = tanh(0.5) + tanh(-0.5) = 0
        let arch = Architecture::new(vec![2, 2, 1]).unwrap();
        let w2 = Mat::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let w3 = Mat::from_rows(vec![vec![1.0, 1.0]]).unwrap();
        let params =
            NetworkParameters::new(arch, vec![w2, w3], vec![vec![0.0, 0.0], vec![0.0]]).unwrap();
        let pass = classical_feedforward(&params, Activation::Tanh, &[0.5, -0.5]).unwrap();
        assert_relative_eq!(pass.z[1][0], 0.0, epsilon = 1e-15);
    }

    /// With relu on non-negative inputs and non-negative weights the network
    /// is a plain matrix chain, so compare against dense multiplication.
    #[test]
    fn feedforward_matches_matrix_chain() {
        let arch = Architecture::new(vec![3, 4, 2]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut mats = Vec::new();
        for w in 0..2 {
            let (r, c) = arch.weight_shape(w);
            let rows = (0..r)
                .map(|_| (0..c).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect();
            mats.push(Mat::from_rows(rows).unwrap());
        }
        let params = NetworkParameters::new(
            arch,
            mats.clone(),
            vec![vec![0.0; 4], vec![0.0; 2]],
        )
        .unwrap();
        let x = vec![0.3, 0.8, 0.1];
        let pass = classical_feedforward(&params, Activation::Relu, &x).unwrap();
        // oracle: dense chain product (all values stay non-negative)
        let mid: Vec<f64> = (0..4).map(|j| dot(mats[0].row(j), &x)).collect();
        let out: Vec<f64> = (0..2).map(|j| dot(mats[1].row(j), &mid)).collect();
        for j in 0..2 {
            assert_relative_eq!(pass.a[2][j], out[j], max_relative = 1e-12);
        }
    }

    #[test]
    fn backprop_zero_gradient() {
        let arch = Architecture::new(vec![2, 3, 2]).unwrap();
        let params = NetworkParameters::standard_init(arch, 3);
        let pass = classical_feedforward(&params, Activation::Tanh, &[0.4, -0.7]).unwrap();
        let y = pass.a.last().unwrap().clone();
        let deltas =
            classical_backprop(&params, Activation::Tanh, Cost::Mse, &pass, &y).unwrap();
        assert!(deltas.iter().flatten().all(|&d| d == 0.0));
    }

    #[test]
    fn backprop_linear_output_reduces_to_residual() {
        // relu with positive pre-activations acts as identity with f' = 1
        let arch = Architecture::new(vec![2, 2].to_vec()).unwrap();
        let w = Mat::from_rows(vec![vec![0.5, 0.25], vec![0.25, 0.5]]).unwrap();
        let params =
            NetworkParameters::new(arch, vec![w], vec![vec![1.0, 1.0]]).unwrap();
        let x = vec![0.5, 0.5];
        let pass = classical_feedforward(&params, Activation::Relu, &x).unwrap();
        let y = vec![0.0, 0.0];
        let deltas =
            classical_backprop(&params, Activation::Relu, Cost::Mse, &pass, &y).unwrap();
        for j in 0..2 {
            assert_relative_eq!(deltas[0][j], pass.a[1][j] - y[j], max_relative = 1e-12);
        }
    }

    /// Full parameter gradient against central finite differences of the
    /// batch cost on a random net.
    #[test]
    fn backprop_matches_finite_differences() {
        let arch = Architecture::new(vec![5, 7, 4, 3]).unwrap();
        let params = NetworkParameters::standard_init(arch.clone(), 11);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let pass = classical_feedforward(&params, Activation::Tanh, &x).unwrap();
        let deltas =
            classical_backprop(&params, Activation::Tanh, Cost::Mse, &pass, &y).unwrap();

        let cost_at = |p: &NetworkParameters| {
            let f = classical_feedforward(p, Activation::Tanh, &x).unwrap();
            Cost::Mse.value(&y, f.a.last().unwrap()).unwrap()
        };
        let h = 1e-6;
        for w in 0..arch.weight_layers() {
            let (rows, cols) = arch.weight_shape(w);
            for j in 0..rows {
                for k in (0..cols).step_by(3) {
                    let analytic = pass.a[w][k] * deltas[w][j];
                    let mut pp = params.clone();
                    pp.weight_mut(w).set(j, k, params.weight(w).get(j, k) + h);
                    let mut pm = params.clone();
                    pm.weight_mut(w).set(j, k, params.weight(w).get(j, k) - h);
                    let fd = (cost_at(&pp) - cost_at(&pm)) / (2.0 * h);
                    if fd.abs() > 1e-8 {
                        assert_relative_eq!(analytic, fd, max_relative = 1e-5);
                    } else {
                        assert!(analytic.abs() < 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn sgd_update_hand_computed() {
        // M = 1, single weight w, a = 2, delta = 3, eta = 0.1 -> w - 0.6
        let arch = Architecture::new(vec![1, 1]).unwrap();
        let w = Mat::from_rows(vec![vec![1.5]]).unwrap();
        let params = NetworkParameters::new(arch, vec![w], vec![vec![0.0]]).unwrap();
        let activations = vec![vec![2.0], vec![0.0]];
        let deltas = vec![vec![3.0]];
        let batch = [SampleGrads { activations: &activations, deltas: &deltas }];
        let updated = sgd_update(&params, &batch, 0.1).unwrap();
        assert_relative_eq!(updated.weight(0).get(0, 0), 1.5 - 0.6, max_relative = 1e-15);
        assert_relative_eq!(updated.bias(0)[0], -0.3, max_relative = 1e-15);
    }

    #[test]
    fn sgd_update_zero_delta_is_identity() {
        let arch = Architecture::new(vec![2, 2]).unwrap();
        let params = NetworkParameters::standard_init(arch, 1);
        let activations = vec![vec![1.0, -1.0], vec![0.0, 0.0]];
        let deltas = vec![vec![0.0, 0.0]];
        let batch = [SampleGrads { activations: &activations, deltas: &deltas }];
        let updated = sgd_update(&params, &batch, 0.5).unwrap();
        assert_eq!(updated, params);
    }

    #[test]
    fn sgd_update_zero_eta_is_identity() {
        let arch = Architecture::new(vec![2, 3]).unwrap();
        let params = NetworkParameters::standard_init(arch, 9);
        let activations = vec![vec![1.0, 2.0], vec![0.0; 3]];
        let deltas = vec![vec![0.4, -0.2, 0.9]];
        let batch = [SampleGrads { activations: &activations, deltas: &deltas }];
        let updated = sgd_update(&params, &batch, 0.0).unwrap();
        assert_eq!(updated, params);
        assert!(sgd_update(&params, &[], 0.1).is_err());
    }

    #[test]
    fn schedule_small() {
        let s = epoch_schedule(4, 2, 2, 0).unwrap();
        assert_eq!(s.batches.len(), 2);
        let mut all: Vec<usize> = s.batches.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn schedule_deterministic() {
        let a = epoch_schedule(50, 5, 30, 123).unwrap();
        let b = epoch_schedule(50, 5, 30, 123).unwrap();
        assert_eq!(a, b);
        let c = epoch_schedule(50, 5, 30, 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn schedule_iris_shape() {
        // 120 samples, batches of 10, 1200 batches -> 100 epochs of 12
        let s = epoch_schedule(120, 10, 1200, 7).unwrap();
        assert_eq!(s.batches.len(), 1200);
        for epoch in 0..100 {
            let mut seen: Vec<usize> = s.batches[epoch * 12..(epoch + 1) * 12]
                .iter()
                .flatten()
                .copied()
                .collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..120).collect::<Vec<_>>());
        }
    }

    #[test]
    fn schedule_rejects_oversized_batch() {
        assert!(epoch_schedule(4, 8, 1, 0).is_err());
    }

    proptest! {
        /// Every epoch covers each index exactly once when the batch size
        /// divides the sample count.
        #[test]
        fn epochs_are_permutations(num_batches in 1usize..40, seed in 0u64..500) {
            let num_samples = 24;
            let batch_size = 6;
            let s = epoch_schedule(num_samples, batch_size, num_batches, seed).unwrap();
            prop_assert_eq!(s.batches.len(), num_batches);
            let per_epoch = num_samples / batch_size;
            for chunk in s.batches.chunks(per_epoch) {
                if chunk.len() < per_epoch { break; }
                let mut seen: Vec<usize> = chunk.iter().flatten().copied().collect();
                seen.sort_unstable();
                prop_assert_eq!(seen, (0..num_samples).collect::<Vec<_>>());
            }
        }

        #[test]
        fn tanh_derivative_identity(z in -5.0f64..5.0) {
            let t = z.tanh();
            let d = Activation::Tanh.derivative(z).unwrap();
            prop_assert!((d - (1.0 - t * t)).abs() < 1e-15);
        }
    }
}
