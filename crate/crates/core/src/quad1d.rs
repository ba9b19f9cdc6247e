//! Univariate Gauss-Hermite quadrature for the unit Gaussian measure
//! N(0, 1), orthonormal Hermite polynomial evaluation, and the bound sweep
//! over quadrature values of Hermite polynomials.
//!
//! Probabilists' normalization is used throughout: rules integrate against
//! the standard normal density, and `H_l` are orthonormal in L2(N(0,1)).
//! A rule at level `nu` has `m(nu) = nu + 1` points and is exact for
//! polynomials of degree `2 nu + 1`.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::value::QuadValue;

/// Largest supported point count for rule construction.
pub const MAX_POINTS: usize = 200;

/// Largest supported Hermite polynomial degree.
pub const MAX_HERMITE_DEGREE: u32 = 500;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("point count {0} outside 1..={MAX_POINTS}")]
    PointCountOutOfRange(usize),
    #[error("Hermite degree {0} above {MAX_HERMITE_DEGREE}")]
    DegreeOutOfRange(u32),
    #[error("eigenvalue iteration failed for the {0}-point Jacobi matrix")]
    EigenFailure(usize),
}

/// A univariate quadrature rule for the standard Gaussian measure.
///
/// Nodes are strictly increasing and symmetric about 0; weights are positive
/// and sum to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct UnivariateRule {
    pub level: u32,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl UnivariateRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Number of points `m(nu) = nu + 1` of the rule at level `nu`.
pub fn points_for_level(level: u32) -> usize {
    level as usize + 1
}

/// Builds the m-point Gauss-Hermite rule for N(0, 1).
///
/// Nodes and weights come from the symmetric tridiagonal Jacobi matrix of
/// the probabilists' Hermite recurrence (zero diagonal, off-diagonal
/// `sqrt(k)`): nodes are its eigenvalues and weights the squared first
/// components of the normalized eigenvectors. The rule is exact for
/// polynomials up to degree `2m - 1`.
pub fn gauss_hermite(m: usize) -> Result<UnivariateRule, QuadError> {
    if !(1..=MAX_POINTS).contains(&m) {
        return Err(QuadError::PointCountOutOfRange(m));
    }
    let mut jacobi = DMatrix::<f64>::zeros(m, m);
    for k in 1..m {
        let b = (k as f64).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eigen = jacobi
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or(QuadError::EigenFailure(m))?;

    let mut nodes: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
    nodes.sort_unstable_by(f64::total_cmp);

    // The eigenvalues locate the nodes to ~1e-13 relative; two Newton steps
    // on H_m (using H_m' = sqrt(m) H_{m-1}) pin them to machine precision,
    // and the Christoffel sum 1 / sum_{l<m} H_l(x)^2 then gives weights at
    // matching accuracy. Without the polish, high-degree moments miss their
    // exactness tolerance.
    let mut weights = vec![0.0; m];
    for (node, weight) in nodes.iter_mut().zip(weights.iter_mut()) {
        for _ in 0..2 {
            let mut h_prev = 0.0;
            let mut h_curr = 0.0;
            hermite_sweep(m as u32, *node, |_, h| {
                h_prev = h_curr;
                h_curr = h;
            });
            let derivative = (m as f64).sqrt() * h_prev;
            if derivative != 0.0 {
                *node -= h_curr / derivative;
            }
        }
        let mut christoffel = 0.0;
        hermite_sweep(m as u32 - 1, *node, |_, h| christoffel += h * h);
        *weight = 1.0 / christoffel;
    }

    // Enforce the exact +/- symmetry of the rule; the eigensolver is only
    // symmetric to rounding. Pair averaging preserves the weight sum and
    // pins the middle node of odd rules at exactly 0.
    for k in 0..m / 2 {
        let mirror = m - 1 - k;
        let node = 0.5 * (nodes[k] - nodes[mirror]);
        nodes[k] = node;
        nodes[mirror] = -node;
        let weight = 0.5 * (weights[k] + weights[mirror]);
        weights[k] = weight;
        weights[mirror] = weight;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }

    Ok(UnivariateRule {
        level: (m - 1) as u32,
        nodes,
        weights,
    })
}

fn rule_cache() -> &'static RwLock<HashMap<u32, Arc<UnivariateRule>>> {
    static CACHE: OnceLock<RwLock<HashMap<u32, Arc<UnivariateRule>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// The rule at level `nu` (with `m(nu) = nu + 1` points), cached for the
/// process lifetime. Construction is deterministic, so a lost race simply
/// recomputes the identical rule.
pub fn rule_for_level(level: u32) -> Result<Arc<UnivariateRule>, QuadError> {
    if let Some(rule) = rule_cache()
        .read()
        .expect("rule cache poisoned")
        .get(&level)
    {
        return Ok(Arc::clone(rule));
    }
    let rule = Arc::new(gauss_hermite(points_for_level(level))?);
    let mut cache = rule_cache().write().expect("rule cache poisoned");
    Ok(Arc::clone(cache.entry(level).or_insert(rule)))
}

/// Applies the rule to `f`: returns `sum_k f(node_k) * weight_k`.
pub fn apply_rule<V, F>(rule: &UnivariateRule, mut f: F) -> V
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    let mut acc = f(rule.nodes[0]);
    acc.scale(rule.weights[0]);
    for k in 1..rule.len() {
        let value = f(rule.nodes[k]);
        acc.add_scaled(rule.weights[k], &value);
    }
    acc
}

/// Evaluates the orthonormal Hermite polynomial `H_l` at `y` via the stable
/// three-term recurrence `sqrt(l+1) H_{l+1}(y) = y H_l(y) - sqrt(l) H_{l-1}(y)`.
pub fn hermite_orthonormal(l: u32, y: f64) -> Result<f64, QuadError> {
    if l > MAX_HERMITE_DEGREE {
        return Err(QuadError::DegreeOutOfRange(l));
    }
    let mut values = [0.0; 2];
    hermite_sweep(l, y, |degree, value| {
        values.swap(0, 1);
        values[1] = value;
        debug_assert!(degree <= l);
    });
    Ok(values[1])
}

/// Runs the Hermite recurrence once, reporting `(l, H_l(y))` for every
/// `l = 0..=l_max`. Used where all degrees are needed at a fixed node.
pub fn hermite_sweep<F: FnMut(u32, f64)>(l_max: u32, y: f64, mut visit: F) {
    let mut prev = 0.0;
    let mut current = 1.0;
    visit(0, current);
    for l in 0..l_max {
        let next = (y * current - (l as f64).sqrt() * prev) / ((l + 1) as f64).sqrt();
        prev = current;
        current = next;
        visit(l + 1, current);
    }
}

/// Evaluates the tensorized orthonormal Hermite polynomial
/// `H_nu(y) = prod_j H_{nu_j}(y_j)` over the support of `nu`; `y` is indexed
/// by 0-based dimension.
pub fn hermite_tensor(nu: &crate::multiindex::MultiIndex, y: &[f64]) -> Result<f64, QuadError> {
    let mut product = 1.0;
    for (j, level) in nu.support() {
        let coord = y[(j - 1) as usize];
        product *= hermite_orthonormal(level, coord)?;
    }
    Ok(product)
}

/// The sweep over `|Q_nu[H_l]|` for `0 <= nu <= nu_max`, `0 <= l <= l_max`.
///
/// Entries with magnitude above 2 are flagged; the expectation from the
/// quadrature-boundedness assumption is that none are, and numerically the
/// observed maximum stays at 1.
#[derive(Clone, Debug)]
pub struct HermiteBoundReport {
    pub nu_max: u32,
    pub l_max: u32,
    /// Row-major `(nu_max + 1) x (l_max + 1)` table of `Q_nu[H_l]`.
    pub values: Vec<f64>,
    /// Max over the table of `|Q_nu[H_l]|`.
    pub max_abs: f64,
    /// Entries with `|Q_nu[H_l]| > 2`.
    pub flagged: Vec<(u32, u32)>,
}

impl HermiteBoundReport {
    pub fn value(&self, nu: u32, l: u32) -> f64 {
        self.values[(nu as usize) * (self.l_max as usize + 1) + l as usize]
    }
}

/// Computes `Q_nu[H_l]` for all levels and degrees in range.
pub fn hermite_bound_report(nu_max: u32, l_max: u32) -> Result<HermiteBoundReport, QuadError> {
    const FLAG_THRESHOLD: f64 = 2.0;
    if nu_max > 50 {
        return Err(QuadError::PointCountOutOfRange(nu_max as usize + 1));
    }
    if l_max > MAX_HERMITE_DEGREE {
        return Err(QuadError::DegreeOutOfRange(l_max));
    }
    let cols = l_max as usize + 1;
    let mut values = vec![0.0; (nu_max as usize + 1) * cols];
    for nu in 0..=nu_max {
        let rule = rule_for_level(nu)?;
        let row = &mut values[(nu as usize) * cols..(nu as usize + 1) * cols];
        for (node, weight) in rule.nodes.iter().zip(&rule.weights) {
            hermite_sweep(l_max, *node, |l, h| row[l as usize] += weight * h);
        }
    }
    let mut max_abs = 0.0f64;
    let mut flagged = Vec::new();
    for nu in 0..=nu_max {
        for l in 0..=l_max {
            let v = values[(nu as usize) * cols + l as usize].abs();
            max_abs = max_abs.max(v);
            if v > FLAG_THRESHOLD {
                flagged.push((nu, l));
            }
        }
    }
    Ok(HermiteBoundReport {
        nu_max,
        l_max,
        values,
        max_abs,
        flagged,
    })
}

/// Exact Gaussian moment `E[y^d]`: 0 for odd d, `(d-1)!!` for even d.
pub fn gaussian_moment(d: u32) -> f64 {
    if d % 2 == 1 {
        return 0.0;
    }
    let mut m = 1.0;
    let mut k = 1u32;
    while k < d {
        m *= k as f64;
        k += 2;
    }
    m
}
