//! Classical sampling from the robust inner-product estimation distribution.
//!
//! The quantum subroutine encodes the inner product of `x` and `y` in an
//! amplitude `a = (||x||^2 + ||y||^2 - 2<x,y>) / (2(||x||^2 + ||y||^2))` and
//! reads it out with amplitude estimation on an `M`-point grid. Instead of
//! simulating the circuit, this module evaluates the exact outcome
//! distribution of that readout and samples from it:
//!
//! - outcomes are the grid values `ã_j = sin^2(π j / M)`, `j = 0..M-1`;
//! - outcome `j` carries weight `sin^2(M π d) / (M^2 sin^2(π d))` where `d`
//!   is the wrapped distance between `j / M` and `θ_a / π`,
//!   `θ_a = asin(sqrt(a))` (the `d = 0` case is the limit value 1);
//! - the table is renormalized to sum to one.
//!
//! `Q` independent draws are combined by their median and mapped back to an
//! inner-product estimate `s = (||x||^2 + ||y||^2)(1 - 2 ā) / 2`.

use std::f64::consts::PI;

use rand::Rng;

use super::EpsGamma;
use crate::{Error, Result};

/// Largest grid a single estimate may request. A grid beyond this means the
/// tolerances ask for more precision than the simulation can reasonably
/// tabulate in one call.
pub const MAX_GRID: usize = 1 << 24;

/// Probability that one amplitude-estimation readout lands within one grid
/// step of the true angle: `8 / π^2`.
pub const SINGLE_SHOT_CONFIDENCE: f64 = 8.0 / (PI * PI);

/// Smallest odd `Q` with `ceil(ln(1/γ) / (2 (8/π² - 1/2)²))` median draws,
/// boosting the single-shot confidence to `1 - γ`.
pub fn default_median_count(gamma: f64) -> usize {
    let denom = 2.0 * (SINGLE_SHOT_CONFIDENCE - 0.5).powi(2);
    ceil_odd((1.0 / gamma).ln() / denom)
}

fn ceil_odd(z: f64) -> usize {
    let c = z.ceil().max(1.0) as usize;
    if c % 2 == 0 {
        c + 1
    } else {
        c
    }
}

/// Grid size `M = ceil(π / (2 ε_a) * (1 + sqrt(1 + 4 ε_a)))`, enough for the
/// amplitude error `|ã - a| <= π/M + (π/M)^2` to fall below `ε_a`.
pub fn grid_size(eps_a: f64) -> Result<usize> {
    if !(eps_a > 0.0) {
        return Err(Error::InvalidTolerance(format!(
            "amplitude tolerance {eps_a} must be positive"
        )));
    }
    let m = (PI / (2.0 * eps_a) * (1.0 + (1.0 + 4.0 * eps_a).sqrt())).ceil();
    if !(m <= MAX_GRID as f64) {
        return Err(Error::PlanTooLarge(m as u128));
    }
    Ok((m as usize).max(2))
}

/// Derived quantities of one RIPE invocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RipeParams {
    /// Encoded amplitude, in `[0, 1]` by Cauchy-Schwarz.
    pub a: f64,
    /// `asin(sqrt(a))`.
    pub theta_a: f64,
    /// Additive amplitude tolerance.
    pub eps_a: f64,
    /// Grid size `M`.
    pub grid: usize,
    /// Median count `Q`.
    pub q: usize,
}

impl RipeParams {
    /// Parameters for estimating `<x,y>` given squared norms and the true
    /// inner product (the distribution being sampled depends on the true
    /// value; all estimation error comes from the sampling itself).
    pub fn for_pair(
        sq_norm_x: f64,
        sq_norm_y: f64,
        ip: f64,
        tol: &EpsGamma,
        q_override: Option<usize>,
    ) -> Result<Self> {
        if sq_norm_x <= 0.0 || sq_norm_y <= 0.0 {
            return Err(Error::ZeroNorm);
        }
        let total = sq_norm_x + sq_norm_y;
        let a = ((total - 2.0 * ip) / (2.0 * total)).clamp(0.0, 1.0);
        let eps_a = tol.epsilon * ip.abs().max(1.0) / total;
        let grid = grid_size(eps_a)?;
        let q = q_override.unwrap_or_else(|| default_median_count(tol.gamma));
        Ok(Self { a, theta_a: a.sqrt().asin(), eps_a, grid, q })
    }
}

/// Normalized outcome table of one amplitude-estimation readout.
#[derive(Debug, Clone)]
pub struct OutcomeTable {
    estimates: Vec<f64>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

/// Outcome distribution over the grid values `ã_j = sin^2(π j / M)`.
pub fn outcome_distribution(theta_a: f64, grid: usize) -> Result<OutcomeTable> {
    if grid < 2 {
        return Err(Error::InvalidTolerance(format!("grid size {grid} must be at least 2")));
    }
    let m = grid as f64;
    let phase = theta_a / PI;
    let mut estimates = Vec::with_capacity(grid);
    let mut probs = Vec::with_capacity(grid);
    for j in 0..grid {
        let jf = j as f64;
        estimates.push((PI * jf / m).sin().powi(2));
        // wrapped distance of j/M to the phase
        let u = jf / m - phase;
        let d = (u - u.round()).abs();
        let denom = (PI * d).sin();
        let p = if denom.abs() < 1e-300 {
            1.0 // d -> 0 limit
        } else {
            let num = (m * PI * d).sin();
            (num / (m * denom)).powi(2)
        };
        probs.push(p);
    }
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    let mut cdf = Vec::with_capacity(grid);
    let mut acc = 0.0;
    for &p in &probs {
        acc += p;
        cdf.push(acc);
    }
    *cdf.last_mut().unwrap() = 1.0;
    Ok(OutcomeTable { estimates, probs, cdf })
}

impl OutcomeTable {
    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn estimate(&self, j: usize) -> f64 {
        self.estimates[j]
    }

    pub fn prob(&self, j: usize) -> f64 {
        self.probs[j]
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Expectation of `ã` under the table.
    pub fn mean(&self) -> f64 {
        self.estimates.iter().zip(&self.probs).map(|(e, p)| e * p).sum()
    }

    /// Draw one grid outcome `ã_j`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let idx = self.cdf.partition_point(|&c| c <= u).min(self.len() - 1);
        self.estimates[idx]
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// One RIPE estimate of `<x,y>` with exactly known norms: median of `Q`
/// amplitude readouts mapped back through
/// `s = (||x||^2 + ||y||^2)(1 - 2 ā) / 2`.
pub fn sample_exact_norms<R: Rng + ?Sized>(
    sq_norm_x: f64,
    sq_norm_y: f64,
    ip: f64,
    tol: &EpsGamma,
    q_override: Option<usize>,
    rng: &mut R,
) -> Result<f64> {
    let params = RipeParams::for_pair(sq_norm_x, sq_norm_y, ip, tol, q_override)?;
    let table = outcome_distribution(params.theta_a, params.grid)?;
    let mut draws: Vec<f64> = (0..params.q).map(|_| table.draw(rng)).collect();
    let a_bar = median(&mut draws);
    Ok((sq_norm_x + sq_norm_y) * (1.0 - 2.0 * a_bar) / 2.0)
}

/// Relative norm perturbations, uniform on `[-ξ, ξ]`.
pub fn draw_norm_perturbations<R: Rng + ?Sized>(xi: f64, rng: &mut R) -> (f64, f64) {
    if xi == 0.0 {
        return (0.0, 0.0);
    }
    (rng.gen_range(-xi..=xi), rng.gen_range(-xi..=xi))
}

/// One RIPE estimate when only norm estimates are available. The readout
/// runs on the normalized states with a quarter of the error budget and the
/// result is rescaled by the perturbed norm product
/// `s' = nx * ny * (1 - 2 ā)`; the remaining budget absorbs the norm errors.
///
/// `ux`, `uy` are the relative norm errors (from
/// [`draw_norm_perturbations`], or cached across calls by a training driver
/// that re-estimates norms once per mini-batch).
#[allow(clippy::too_many_arguments)]
pub fn sample_noisy_norms<R: Rng + ?Sized>(
    norm_x: f64,
    norm_y: f64,
    ip: f64,
    tol: &EpsGamma,
    q_override: Option<usize>,
    ux: f64,
    uy: f64,
    rng: &mut R,
) -> Result<f64> {
    if norm_x <= 0.0 || norm_y <= 0.0 {
        return Err(Error::ZeroNorm);
    }
    let nx = norm_x * (1.0 + ux);
    let ny = norm_y * (1.0 + uy);
    // unit-vector problem
    let cosine = (ip / (norm_x * norm_y)).clamp(-1.0, 1.0);
    let a = ((1.0 - cosine) / 2.0).clamp(0.0, 1.0);
    // |s_unit - c| = 2 |ā - a|, so an ε/4 budget on s_unit means ε/8 on a
    let eps_a = tol.epsilon / 8.0 * cosine.abs().max(1.0 / (nx * ny));
    let grid = grid_size(eps_a)?;
    let q = q_override.unwrap_or_else(|| default_median_count(tol.gamma));
    let table = outcome_distribution(a.sqrt().asin(), grid)?;
    let mut draws: Vec<f64> = (0..q).map(|_| table.draw(rng)).collect();
    let a_bar = median(&mut draws);
    Ok(nx * ny * (1.0 - 2.0 * a_bar))
}

/// The vector pair used throughout the sampler's reference experiments.
pub mod reference_pair {
    pub const X: [f64; 5] = [5.88414114, 2.0327562, 1.68155901, 7.91848042, 1.61922687];
    pub const Y: [f64; 5] = [5.15610287, 7.2034771, 9.88496245, 3.46281654, 4.20607662];
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{dot, norm};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tol(e: f64, g: f64) -> EpsGamma {
        EpsGamma::new(e, g).unwrap()
    }

    #[test]
    fn median_counts() {
        // ceil_odd(ln(1/gamma) / (2 (8/pi^2 - 1/2)^2)), natural log
        assert_eq!(default_median_count(0.2), 9);
        assert_eq!(default_median_count(0.05), 17);
        assert_eq!(default_median_count(0.01), 25);
    }

    #[test]
    fn grid_size_for_reference_pair() {
        let x = reference_pair::X;
        let y = reference_pair::Y;
        let ip = dot(&x, &y);
        let p = RipeParams::for_pair(
            norm(&x).powi(2),
            norm(&y).powi(2),
            ip,
            &tol(0.3, 0.05),
            None,
        )
        .unwrap();
        assert_eq!(p.grid, 38);
        assert!(p.a > 0.0 && p.a < 1.0);
    }

    #[test]
    fn reference_pair_moments_match_published_values() {
        let x = reference_pair::X;
        let y = reference_pair::Y;
        // printed norms 10.34 and 14.35
        assert!((norm(&x) - 10.34).abs() < 0.005);
        assert!((norm(&y) - 14.35).abs() < 0.005);
        // the two printed inner products disagree (95.38 vs 95.83); the
        // actual dot product decides
        let ip = dot(&x, &y);
        assert!((ip - 95.83).abs() < 0.01, "ip = {ip}");
        assert!((ip - 95.38).abs() > 0.4);
    }

    #[test]
    fn on_grid_angle_gives_point_mass() {
        let m = 16;
        let theta = PI * 3.0 / m as f64;
        let table = outcome_distribution(theta, m).unwrap();
        assert!(table.prob(3) > 1.0 - 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(table.draw(&mut rng), table.estimate(3));
        }
    }

    #[test]
    fn table_is_normalized() {
        for (a, m) in [(0.1951, 38usize), (0.5, 17), (0.999, 64), (0.0, 8)] {
            let table = outcome_distribution((a as f64).sqrt().asin(), m).unwrap();
            assert!((table.total_mass() - 1.0).abs() < 1e-12);
        }
        assert!(outcome_distribution(0.3, 1).is_err());
    }

    #[test]
    fn neighbor_mass_exceeds_single_shot_confidence() {
        // direct evaluation at the reference-pair-derived amplitude
        let a: f64 = 0.1951;
        let m = 38usize;
        let theta = a.sqrt().asin();
        let table = outcome_distribution(theta, m).unwrap();
        let center = theta / PI * m as f64;
        let mass: f64 = (0..m)
            .filter(|&j| (j as f64 - center).abs() <= 1.0)
            .map(|j| table.prob(j))
            .sum();
        assert!(mass > SINGLE_SHOT_CONFIDENCE, "mass {mass}");
    }

    #[test]
    fn table_mean_concentrates_on_amplitude() {
        for a in [0.05, 0.1951, 0.37, 0.62, 0.9] {
            for m in [24usize, 64, 256] {
                let table = outcome_distribution((a as f64).sqrt().asin(), m).unwrap();
                let bound = 2.0 * PI / m as f64 + (PI / m as f64).powi(2);
                assert!(
                    (table.mean() - a).abs() <= bound,
                    "a {a} m {m}: mean {} bound {bound}",
                    table.mean()
                );
            }
        }
    }

    #[test]
    fn identical_vectors_estimate_exactly() {
        // x = y puts the amplitude at the a = 0 grid point
        let x = vec![1.0, -2.0, 0.5];
        let sq = x.iter().map(|v| v * v).sum::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = sample_exact_norms(sq, sq, sq, &tol(0.3, 0.01), None, &mut rng).unwrap();
            assert_relative_eq!(s, sq, max_relative = 1e-12);
        }
        assert!(sample_exact_norms(0.0, 1.0, 0.0, &tol(0.3, 0.05), None, &mut rng).is_err());
    }

    fn reference_fraction(q: usize, trials: usize, seed: u64) -> f64 {
        let x = reference_pair::X;
        let y = reference_pair::Y;
        let ip = dot(&x, &y);
        let sq_x = norm(&x).powi(2);
        let sq_y = norm(&y).powi(2);
        let t = tol(0.3, 0.05);
        let band = t.band(ip);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inside = (0..trials)
            .filter(|_| {
                let s = sample_exact_norms(sq_x, sq_y, ip, &t, Some(q), &mut rng).unwrap();
                (s - ip).abs() <= band
            })
            .count();
        inside as f64 / trials as f64
    }

    #[test]
    fn reference_pair_concentration_by_median_count() {
        let f1 = reference_fraction(1, 10_000, 11);
        let f3 = reference_fraction(3, 10_000, 12);
        let f5 = reference_fraction(5, 10_000, 13);
        assert!((f1 - 0.86).abs() <= 0.03, "f1 = {f1}");
        assert!((f3 - 0.97).abs() <= 0.03, "f3 = {f3}");
        assert!((f5 - 0.99).abs() <= 0.02, "f5 = {f5}");
        // medians are monotone in concentration (2-point slack)
        assert!(f3 >= f1 - 0.02);
        assert!(f5 >= f3 - 0.02);
    }

    #[test]
    fn noisy_norm_estimates_stay_in_band() {
        let x = reference_pair::X;
        let y = reference_pair::Y;
        let ip = dot(&x, &y);
        let t = tol(0.3, 0.05);
        let band = t.band(ip);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 4000;
        let mut inside = 0;
        for _ in 0..trials {
            let (ux, uy) = draw_norm_perturbations(t.xi, &mut rng);
            let s =
                sample_noisy_norms(norm(&x), norm(&y), ip, &t, None, ux, uy, &mut rng).unwrap();
            if (s - ip).abs() <= band {
                inside += 1;
            }
        }
        let rate = inside as f64 / trials as f64;
        assert!(rate >= 1.0 - t.gamma - 0.02, "inside rate {rate}");
    }
}
