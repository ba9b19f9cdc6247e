//! Seeded Monte Carlo baseline estimator for the same expectations, with
//! multi-trial error averaging.
//!
//! Variates are generated counter-style: each (seed, sample, dimension)
//! triple is hashed independently to a uniform and mapped to a standard
//! normal by the inverse CDF. Sample i is therefore identical no matter how
//! trials are scheduled, and the mean is reduced in sample order, so every
//! estimate is bitwise reproducible from (seed, n).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse_quad::{Integrand, SparseQuadError};
use crate::value::QuadValue;

#[derive(Debug, Error)]
pub enum McError {
    #[error("sample schedule must be nonempty and strictly increasing")]
    BadSchedule,
    #[error("n_trials must be >= 1")]
    NoTrials,
    #[error(transparent)]
    Quad(#[from] SparseQuadError),
}

/// Schedule and seeding of a Monte Carlo convergence study.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    /// Sample counts, strictly increasing (geometric in the presets).
    pub schedule: Vec<u64>,
    pub n_trials: u32,
    pub seed: u64,
}

impl McConfig {
    /// The schedule `2^lo, 2^(lo+1), ..., 2^hi`.
    pub fn geometric(lo: u32, hi: u32, n_trials: u32, seed: u64) -> Self {
        McConfig {
            schedule: (lo..=hi).map(|k| 1u64 << k).collect(),
            n_trials,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.schedule.is_empty() || self.schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(McError::BadSchedule);
        }
        if self.n_trials == 0 {
            return Err(McError::NoTrials);
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; bijective with strong avalanche, the standard
/// choice for hashing counters into streams.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in the open interval (0, 1) from the (seed, sample, dimension)
/// counter.
fn uniform_open(seed: u64, sample: u64, dim: u64) -> f64 {
    let h = mix64(mix64(mix64(seed) ^ sample.wrapping_mul(0xA24B_AED4_963E_E407)) ^ dim);
    ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal variate for the (seed, sample, dimension) counter via the
/// inverse-CDF transform.
pub fn standard_normal(seed: u64, sample: u64, dim: u64) -> f64 {
    let u = uniform_open(seed, sample, dim);
    std::f64::consts::SQRT_2 * statrs::function::erf::erf_inv(2.0 * u - 1.0)
}

/// The i.i.d. standard normal parameter vector of sample `i`.
pub fn sample_vector(seed: u64, sample: u64, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| standard_normal(seed, sample, j as u64 + 1))
        .collect()
}

/// Derived seed of trial `t`, keeping trial streams disjoint.
pub fn trial_seed(seed: u64, trial: u32) -> u64 {
    mix64(seed ^ mix64(trial as u64 + 1))
}

/// `(1/n) sum_i psi(y_i)`; deterministic given (seed, n).
pub fn mc_estimate<I: Integrand>(psi: &I, n: u64, seed: u64) -> Result<I::Value, McError> {
    assert!(n >= 1, "at least one sample required");
    let mut acc = McAccumulator::new(psi, seed);
    acc.extend_to(n)?;
    Ok(acc.mean())
}

/// Running-sum view of an estimate, so a schedule of sample counts reuses
/// the shared prefix of the stream. The final mean is bitwise identical to
/// a from-scratch estimate at the same n (same additions in sample order).
struct McAccumulator<'a, I: Integrand> {
    psi: &'a I,
    seed: u64,
    count: u64,
    sum: Option<I::Value>,
}

impl<'a, I: Integrand> McAccumulator<'a, I> {
    fn new(psi: &'a I, seed: u64) -> Self {
        McAccumulator {
            psi,
            seed,
            count: 0,
            sum: None,
        }
    }

    fn extend_to(&mut self, n: u64) -> Result<(), McError> {
        let dim = self.psi.dim();
        while self.count < n {
            let i = self.count;
            let y = sample_vector(self.seed, i, dim);
            let value = self
                .psi
                .eval(&y)
                .map_err(|source| SparseQuadError::Eval { node: y, source })?;
            match self.sum.as_mut() {
                Some(sum) => sum.add_scaled(1.0, &value),
                None => self.sum = Some(value),
            }
            self.count += 1;
        }
        Ok(())
    }

    fn mean(&self) -> I::Value {
        let mut mean = self.sum.clone().expect("at least one sample");
        mean.scale(1.0 / self.count as f64);
        mean
    }
}

/// One (n_samples, trial) error measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct McRow {
    pub n_samples: u64,
    pub trial: u32,
    pub error: f64,
}

/// Trial-averaged Monte Carlo errors over a schedule, with the fitted
/// log-log convergence slope.
#[derive(Clone, Debug)]
pub struct McStudy {
    pub rows: Vec<McRow>,
    /// (n_samples, error averaged over trials).
    pub averaged: Vec<(u64, f64)>,
    /// Least-squares slope of `log error` vs `log n`.
    pub slope: f64,
}

impl McStudy {
    /// Trial-averaged error at an arbitrary sample count: log-log
    /// interpolation inside the schedule range, and extrapolation along the
    /// fitted slope from the nearest endpoint outside it (single segments
    /// are too noisy to extrapolate with).
    pub fn error_at(&self, n: f64) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .averaged
            .iter()
            .filter(|(_, e)| *e > 0.0)
            .map(|&(n, e)| ((n as f64).ln(), e.ln()))
            .collect();
        assert!(!pts.is_empty(), "no positive errors in study");
        let x = n.ln();
        let slope = if self.slope.is_finite() {
            self.slope
        } else {
            -0.5
        };
        if x <= pts[0].0 {
            return (pts[0].1 + slope * (x - pts[0].0)).exp();
        }
        if let Some(&(xn, yn)) = pts.last().filter(|&&(xn, _)| x >= xn) {
            return (yn + slope * (x - xn)).exp();
        }
        let i = pts
            .iter()
            .position(|&(px, _)| px >= x)
            .expect("inside range");
        let (x0, y0) = pts[i - 1];
        let (x1, y1) = pts[i];
        (y0 + (y1 - y0) * (x - x0) / (x1 - x0)).exp()
    }
}

/// Runs `n_trials` independently seeded estimates per schedule entry and
/// reports errors against the supplied reference (normally a converged
/// sparse quadrature value).
pub fn mc_convergence_study<I: Integrand>(
    psi: &I,
    config: &McConfig,
    reference: &I::Value,
) -> Result<McStudy, McError> {
    config.validate()?;
    let mut rows = Vec::with_capacity(config.schedule.len() * config.n_trials as usize);
    for trial in 0..config.n_trials {
        let seed = trial_seed(config.seed, trial);
        let mut acc = McAccumulator::new(psi, seed);
        for &n in &config.schedule {
            acc.extend_to(n)?;
            let mut diff = acc.mean();
            diff.add_scaled(-1.0, reference);
            rows.push(McRow {
                n_samples: n,
                trial,
                error: psi.norm(&diff),
            });
        }
    }
    rows.sort_by_key(|row| (row.n_samples, row.trial));

    let averaged: Vec<(u64, f64)> = config
        .schedule
        .iter()
        .map(|&n| {
            let sum: f64 = rows
                .iter()
                .filter(|row| row.n_samples == n)
                .map(|row| row.error)
                .sum();
            (n, sum / config.n_trials as f64)
        })
        .collect();

    let points: Vec<(f64, f64)> = averaged.iter().map(|&(n, e)| (n as f64, e)).collect();
    let slope = loglog_slope(&points).unwrap_or(f64::NAN);
    Ok(McStudy {
        rows,
        averaged,
        slope,
    })
}

/// Least-squares slope of `log y` against `log x`, ignoring nonpositive
/// points. Returns `None` with fewer than two usable points.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = logs.iter().map(|&(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let var: f64 = logs.iter().map(|&(x, _)| (x - mean_x) * (x - mean_x)).sum();
    if var == 0.0 {
        return None;
    }
    Some(cov / var)
}
