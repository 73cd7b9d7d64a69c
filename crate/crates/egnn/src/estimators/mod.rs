//! Inner-product estimation strategies behind one `(ε,γ)` interface.
//!
//! Every estimator returns a value `s` for `<x,y>` that satisfies, with
//! probability at least `1 - γ` over its randomness,
//!
//! ```text
//! |s - <x,y>| <= max(ε |<x,y>|, ε)
//! ```
//!
//! Kinds:
//!
//! - `Exact`: the plain dot product (bit-identical to the classical pass).
//! - `Gaussian`: the true value plus zero-mean Gaussian noise scaled so the
//!   contract holds at the requested `γ`.
//! - `RipeExactNorms` / `RipeNoisyNorms`: draws from the amplitude-estimation
//!   outcome distribution of the quantum inner-product subroutine
//!   (see [`ripe`]), with norms known exactly or to relative error `ξ`.
//! - `DequantizedExplicit` / `DequantizedImplicit`: classical importance
//!   sampling from ℓ2 trees with median-of-means aggregation
//!   (see [`dequantized`]).

pub mod dequantized;
pub mod ripe;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::l2bst::{L2Bst, L2BstMatrix};
use crate::network::{dot, norm};
use crate::rng::derive_rng;
use crate::{Error, Result};

/// Error tolerance pair plus the relative norm-error budget `ξ` used by the
/// noisy-norm modes (default `ε / 3`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsGamma {
    pub epsilon: f64,
    pub gamma: f64,
    pub xi: f64,
}

impl EpsGamma {
    pub fn new(epsilon: f64, gamma: f64) -> Result<Self> {
        Self::with_xi(epsilon, gamma, epsilon / 3.0)
    }

    pub fn with_xi(epsilon: f64, gamma: f64, xi: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::InvalidTolerance(format!("epsilon {epsilon} must be >= 0")));
        }
        if !(0.0..1.0).contains(&gamma) || gamma <= 0.0 {
            return Err(Error::InvalidTolerance(format!("gamma {gamma} must lie in (0,1)")));
        }
        if !xi.is_finite() || xi < 0.0 || xi > epsilon / 3.0 + 1e-15 {
            return Err(Error::InvalidTolerance(format!(
                "xi {xi} must lie in [0, epsilon/3 = {}]",
                epsilon / 3.0
            )));
        }
        Ok(Self { epsilon, gamma, xi })
    }

    /// The contract band `max(ε |v|, ε)` around a true value `v`.
    pub fn band(&self, true_value: f64) -> f64 {
        self.epsilon * true_value.abs().max(1.0)
    }
}

/// Which estimation strategy to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Exact,
    Gaussian,
    RipeExactNorms,
    RipeNoisyNorms,
    DequantizedExplicit,
    DequantizedImplicit,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Exact => "exact",
            EstimatorKind::Gaussian => "gaussian",
            EstimatorKind::RipeExactNorms => "ripe-exact-norms",
            EstimatorKind::RipeNoisyNorms => "ripe-noisy-norms",
            EstimatorKind::DequantizedExplicit => "dequantized-explicit",
            EstimatorKind::DequantizedImplicit => "dequantized-implicit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(EstimatorKind::Exact),
            "gaussian" => Ok(EstimatorKind::Gaussian),
            "ripe" | "ripe-exact-norms" | "ripe-exact" => Ok(EstimatorKind::RipeExactNorms),
            "ripe-noisy-norms" | "ripe-noisy" => Ok(EstimatorKind::RipeNoisyNorms),
            "dequantized-explicit" => Ok(EstimatorKind::DequantizedExplicit),
            "dequantized-implicit" => Ok(EstimatorKind::DequantizedImplicit),
            other => Err(Error::InvalidConfig(format!("unknown estimator kind `{other}`"))),
        }
    }
}

/// Estimator kind, tolerances and the seed that fully determines the sample
/// stream. `ripe_q` pins the RIPE median count; when `None` the count comes
/// from [`ripe::default_median_count`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub tol: EpsGamma,
    pub seed: u64,
    pub ripe_q: Option<usize>,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind, tol: EpsGamma, seed: u64) -> Self {
        Self { kind, tol, seed, ripe_q: None }
    }

    pub fn with_ripe_q(mut self, q: usize) -> Self {
        self.ripe_q = Some(q);
        self
    }

    /// Independent stream for a tag path under this spec's seed.
    pub fn rng(&self, tags: &[u64]) -> rand_chacha::ChaCha8Rng {
        derive_rng(self.seed, tags)
    }
}

/// A plain vector with its precomputed norm.
#[derive(Debug, Clone, Copy)]
pub struct DenseAccess<'a> {
    pub values: &'a [f64],
    pub norm: f64,
}

impl<'a> DenseAccess<'a> {
    pub fn new(values: &'a [f64]) -> Self {
        Self { values, norm: norm(values) }
    }

    pub fn with_norm(values: &'a [f64], norm: f64) -> Self {
        Self { values, norm }
    }
}

/// An implicitly stored weight row (or column): the `X` matrix whose entries
/// weight the history cells, plus access to the stored history vectors.
pub struct ImplicitAccess<'a> {
    pub matrix: &'a L2BstMatrix,
    pub history: &'a dyn HistoryVectors,
}

/// Lookup of the ℓ2 tree stored for history cell `(tau, mu)`. Zero-padded
/// slots return `None`; their `X` entries are zero so they are never sampled.
pub trait HistoryVectors {
    fn vector(&self, tau: usize, mu: usize) -> Option<&L2Bst>;
}

/// One side of an inner product, at whatever capability level the caller has.
pub enum VectorAccess<'a> {
    Dense(DenseAccess<'a>),
    Tree(&'a L2Bst),
    Implicit(ImplicitAccess<'a>),
}

impl<'a> VectorAccess<'a> {
    pub fn dense(values: &'a [f64]) -> Self {
        VectorAccess::Dense(DenseAccess::new(values))
    }

    fn values(&self) -> Option<&[f64]> {
        match self {
            VectorAccess::Dense(d) => Some(d.values),
            VectorAccess::Tree(t) => Some(t.values()),
            VectorAccess::Implicit(_) => None,
        }
    }

    fn norm(&self) -> Option<f64> {
        match self {
            VectorAccess::Dense(d) => Some(d.norm),
            VectorAccess::Tree(t) => Some(t.norm()),
            VectorAccess::Implicit(_) => None,
        }
    }
}

fn need_values<'r>(access: &'r VectorAccess<'_>, kind: EstimatorKind, side: &str) -> Result<&'r [f64]> {
    access.values().ok_or_else(|| Error::MissingCapability {
        kind: kind.name().into(),
        reason: format!("{side} side provides no component values"),
    })
}

/// Estimate `<x,y>` under the spec's `(ε,γ)` contract, dispatching to the
/// kind-specific strategy. The caller owns the random stream.
pub fn estimate<R: Rng + ?Sized>(
    spec: &EstimatorSpec,
    x: &VectorAccess<'_>,
    y: &VectorAccess<'_>,
    rng: &mut R,
) -> Result<f64> {
    let kind = spec.kind;
    match kind {
        EstimatorKind::Exact => {
            let (xv, yv) = (need_values(x, kind, "x")?, need_values(y, kind, "y")?);
            check_same_len(xv, yv)?;
            Ok(dot(xv, yv))
        }
        EstimatorKind::Gaussian => {
            let (xv, yv) = (need_values(x, kind, "x")?, need_values(y, kind, "y")?);
            check_same_len(xv, yv)?;
            estimate_gaussian(xv, yv, &spec.tol, rng)
        }
        EstimatorKind::RipeExactNorms => {
            let (xv, yv) = (need_values(x, kind, "x")?, need_values(y, kind, "y")?);
            check_same_len(xv, yv)?;
            let ip = dot(xv, yv);
            let (nx, ny) = (x.norm().unwrap(), y.norm().unwrap());
            ripe::sample_exact_norms(nx * nx, ny * ny, ip, &spec.tol, spec.ripe_q, rng)
        }
        EstimatorKind::RipeNoisyNorms => {
            let (xv, yv) = (need_values(x, kind, "x")?, need_values(y, kind, "y")?);
            check_same_len(xv, yv)?;
            let ip = dot(xv, yv);
            let (nx, ny) = (x.norm().unwrap(), y.norm().unwrap());
            let (ux, uy) = ripe::draw_norm_perturbations(spec.tol.xi, rng);
            ripe::sample_noisy_norms(nx, ny, ip, &spec.tol, spec.ripe_q, ux, uy, rng)
        }
        EstimatorKind::DequantizedExplicit => {
            let tree = match x {
                VectorAccess::Tree(t) => *t,
                _ => {
                    return Err(Error::MissingCapability {
                        kind: kind.name().into(),
                        reason: "x side must be an l2 sampling tree".into(),
                    })
                }
            };
            let yv = need_values(y, kind, "y")?;
            dequantized::explicit(tree, yv, y.norm().unwrap(), &spec.tol, rng)
        }
        EstimatorKind::DequantizedImplicit => {
            let implicit = match x {
                VectorAccess::Implicit(i) => i,
                _ => {
                    return Err(Error::MissingCapability {
                        kind: kind.name().into(),
                        reason: "x side must be an implicit weight-row access".into(),
                    })
                }
            };
            let yv = need_values(y, kind, "y")?;
            dequantized::implicit(implicit, yv, y.norm().unwrap(), &spec.tol, rng)
        }
    }
}

fn check_same_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("lengths {} vs {}", x.len(), y.len())));
    }
    Ok(())
}

/// Deviation scale of the Gaussian noise model at a given `γ`: the number of
/// standard deviations that fit inside the contract band. `γ = 0.05` gives
/// the classic `z = 2` (noise std `ε/2 * max(1, |ip|)`, violating the band
/// with probability `2Φ(-2) ≈ 0.0455`); smaller `γ` tightens the noise via
/// the normal quantile so the contract keeps holding.
pub fn gaussian_z_factor(gamma: f64) -> f64 {
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    std_normal.inverse_cdf(1.0 - gamma / 2.0).max(2.0)
}

/// `<x,y>` plus zero-mean Gaussian noise with std `ε * max(1, |ip|) / z(γ)`.
pub fn estimate_gaussian<R: Rng + ?Sized>(
    x: &[f64],
    y: &[f64],
    tol: &EpsGamma,
    rng: &mut R,
) -> Result<f64> {
    check_same_len(x, y)?;
    let ip = dot(x, y);
    Ok(gaussian_noise_on(ip, tol.epsilon, gaussian_z_factor(tol.gamma), rng))
}

/// Inner loop of the Gaussian kind with the quantile precomputed.
#[inline]
pub fn gaussian_noise_on<R: Rng + ?Sized>(ip: f64, epsilon: f64, z: f64, rng: &mut R) -> f64 {
    if epsilon == 0.0 {
        return ip;
    }
    let sigma = epsilon * ip.abs().max(1.0) / z;
    let g: f64 = rng.sample(StandardNormal);
    ip + sigma * g
}
