//! Quantum-inspired classical inner-product estimation.
//!
//! Both estimators importance-sample from ℓ2 trees and aggregate with a
//! median of means:
//!
//! - [`explicit`]: `x` lives in a tree, `y` is queryable. Draws
//!   `i ~ x_i^2 / ||x||^2` and averages `Z = y_i ||x||^2 / x_i`.
//! - [`implicit`]: the weight row exists only as an update history. Draws a
//!   history cell `(τ, μ) ~ X_τμ^2 / ||X||_F^2`, then a component
//!   `k ~ (v_k / ||v||)^2` of the stored vector `v` for that cell, and
//!   averages `Z = y_k (||v|| / v_k) (||X||_F^2 / X_τμ)`.
//!
//! Only nonzero entries are ever sampled, so the quotients are safe. The
//! per-copy deviation target `ε'` depends on the unknown inner product, so
//! each estimate runs an absolute-target pass first and repeats with the
//! implied relative target when the first pass lands above 1.

use rand::Rng;

use super::{EpsGamma, ImplicitAccess};
use crate::l2bst::L2Bst;
use crate::{Error, Result};

/// Hard ceiling on the total sample count of one estimate.
pub const MAX_TOTAL_COPIES: u128 = 1 << 36;

/// Median-of-means schedule: `groups` independent means of
/// `copies_per_group` copies each. Chebyshev keeps each group mean within
/// `ε' σ` of the expectation with probability 2/3; the median over an odd
/// number of groups boosts that to `1 - γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MedianOfMeansPlan {
    pub copies_per_group: usize,
    pub groups: usize,
}

impl MedianOfMeansPlan {
    /// `copies_per_group = ceil(3 / ε'^2)`, `groups = ceil_odd(18 ln(1/γ))`.
    pub fn new(eps_prime: f64, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidTolerance(format!("gamma {gamma} must lie in (0,1)")));
        }
        if eps_prime <= 0.0 {
            return Err(Error::InvalidTolerance(format!(
                "per-copy deviation target {eps_prime} must be positive"
            )));
        }
        let copies = if eps_prime.is_finite() {
            (3.0 / (eps_prime * eps_prime)).ceil().max(1.0)
        } else {
            1.0
        };
        let groups = {
            let g = (18.0 * (1.0 / gamma).ln()).ceil().max(1.0) as usize;
            if g % 2 == 0 {
                g + 1
            } else {
                g
            }
        };
        let total = copies as u128 * groups as u128;
        if total > MAX_TOTAL_COPIES {
            return Err(Error::PlanTooLarge(total));
        }
        Ok(Self { copies_per_group: copies as usize, groups })
    }

    pub fn total_copies(&self) -> usize {
        self.copies_per_group * self.groups
    }
}

fn median_of_means<R: Rng + ?Sized>(
    plan: &MedianOfMeansPlan,
    rng: &mut R,
    mut draw: impl FnMut(&mut R) -> Result<f64>,
) -> Result<f64> {
    let mut means = Vec::with_capacity(plan.groups);
    for _ in 0..plan.groups {
        let mut acc = 0.0;
        for _ in 0..plan.copies_per_group {
            acc += draw(rng)?;
        }
        means.push(acc / plan.copies_per_group as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(means[means.len() / 2])
}

/// The relative target depends on the unknown value, so resolve it in two
/// passes: one absolute pass (`bound = 1`), then a relative rerun when the
/// first estimate exceeds 1 in magnitude.
fn two_phase<R: Rng + ?Sized>(
    epsilon: f64,
    rng: &mut R,
    mut run: impl FnMut(f64, &mut R) -> Result<f64>,
) -> Result<f64> {
    let s0 = run(1.0, rng)?;
    if s0.abs() > 1.0 {
        run(s0.abs() / (1.0 + epsilon), rng)
    } else {
        Ok(s0)
    }
}

/// Single raw copy of the explicit-tree estimator.
pub fn explicit_draw<R: Rng + ?Sized>(x: &L2Bst, y: &[f64], rng: &mut R) -> Result<f64> {
    let i = x.sample(rng)?;
    Ok(y[i] * x.sq_norm() / x.query(i))
}

/// Tree-based estimate of `<x,y>` under the `(ε,γ)` contract.
pub fn explicit<R: Rng + ?Sized>(
    x: &L2Bst,
    y: &[f64],
    y_norm: f64,
    tol: &EpsGamma,
    rng: &mut R,
) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "tree dimension {} vs vector length {}",
            x.len(),
            y.len()
        )));
    }
    if x.sq_norm() <= 0.0 {
        return Err(Error::ZeroNorm);
    }
    if tol.epsilon <= 0.0 {
        return Err(Error::InvalidTolerance(
            "dequantized estimation needs a positive epsilon".into(),
        ));
    }
    if y_norm == 0.0 {
        return Ok(0.0); // every copy is exactly zero
    }
    let scale = x.norm() * y_norm;
    two_phase(tol.epsilon, rng, |bound, rng| {
        let eps_prime = tol.epsilon * bound.max(1.0) / scale;
        let plan = MedianOfMeansPlan::new(eps_prime, tol.gamma)?;
        median_of_means(&plan, rng, |rng| explicit_draw(x, y, rng))
    })
}

/// Single raw copy of the implicit-history estimator.
pub fn implicit_draw<R: Rng + ?Sized>(
    access: &ImplicitAccess<'_>,
    y: &[f64],
    rng: &mut R,
) -> Result<f64> {
    let (tau, mu) = access.matrix.sample_entry(rng)?;
    let stored = access.history.vector(tau, mu).ok_or_else(|| {
        Error::History(format!("sampled history cell ({tau},{mu}) holds no vector"))
    })?;
    let k = stored.sample(rng)?;
    debug_assert!(k < y.len());
    let x_entry = access.matrix.entry(tau, mu);
    Ok(y[k] * stored.norm() / stored.query(k) * access.matrix.frobenius_sq() / x_entry)
}

/// History-based estimate of `<W_j, y>` for an implicitly stored weight row
/// under the `(ε,γ)` contract.
pub fn implicit<R: Rng + ?Sized>(
    access: &ImplicitAccess<'_>,
    y: &[f64],
    y_norm: f64,
    tol: &EpsGamma,
    rng: &mut R,
) -> Result<f64> {
    let frob_sq = access.matrix.frobenius_sq();
    if frob_sq <= 0.0 {
        return Err(Error::ZeroNorm);
    }
    if tol.epsilon <= 0.0 {
        return Err(Error::InvalidTolerance(
            "dequantized estimation needs a positive epsilon".into(),
        ));
    }
    if y_norm == 0.0 {
        return Ok(0.0);
    }
    let cells = (access.matrix.num_rows() * access.matrix.width()) as f64;
    let scale = cells.sqrt() * y_norm * frob_sq.sqrt();
    two_phase(tol.epsilon, rng, |bound, rng| {
        let eps_prime = tol.epsilon * bound.max(1.0) / scale;
        let plan = MedianOfMeansPlan::new(eps_prime, tol.gamma)?;
        median_of_means(&plan, rng, |rng| implicit_draw(access, y, rng))
    })
}
