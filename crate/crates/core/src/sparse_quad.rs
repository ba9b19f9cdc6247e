//! Tensorized difference quadrature, sparse quadrature over downward-closed
//! index sets, a-priori and a-posteriori error indicators, and the greedy
//! adaptive construction over the reduced forward neighbor front.
//!
//! The difference operator for a multi-index applies, per supported
//! dimension, the difference of two consecutive univariate rules; inactive
//! dimensions are collapsed to the single node y = 0 with weight 1 (the
//! one-point rule), which makes the formally infinite tensor product finite.
//! Gauss-Hermite nodes are non-nested, so evaluations are keyed by
//! (dimension, level, node ordinal) triples rather than floating
//! coordinates, and shared across difference operators through a cache.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::error::Error;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::Field;
use crate::multiindex::{IndexSet, MultiIndex, MultiIndexError};
use crate::quad1d::{self, QuadError, UnivariateRule};
use crate::value::QuadValue;

pub type IntegrandError = Box<dyn Error + Send + Sync + 'static>;

#[derive(Debug, Error)]
pub enum SparseQuadError {
    #[error(transparent)]
    Index(#[from] MultiIndexError),
    #[error(transparent)]
    Rule(#[from] QuadError),
    #[error("integrand evaluation failed at node {node:?}: {source}")]
    Eval {
        node: Vec<f64>,
        source: IntegrandError,
    },
    #[error("integrand dimension {integrand} does not match field dimension {field}")]
    DimensionMismatch { integrand: usize, field: usize },
    #[error("adaptive construction needs max_indices >= 1")]
    EmptyBudget,
}

/// A multivariate map into a normed result space.
///
/// Evaluation must be deterministic: the same y must produce the bitwise
/// identical value, since results are shared through the evaluation cache.
pub trait Integrand {
    type Value: QuadValue;

    /// Parameter dimension J; `eval` receives vectors of exactly this length.
    fn dim(&self) -> usize;

    fn eval(&self, y: &[f64]) -> Result<Self::Value, IntegrandError>;

    /// The norm of the result space (used by the a-posteriori indicator and
    /// error reporting).
    fn norm(&self, value: &Self::Value) -> f64;
}

/// Adapter turning a closure into a scalar integrand.
pub struct FnIntegrand<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64> FnIntegrand<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnIntegrand { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64> Integrand for FnIntegrand<F> {
    type Value = f64;

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, y: &[f64]) -> Result<f64, IntegrandError> {
        Ok((self.f)(y))
    }

    fn norm(&self, value: &f64) -> f64 {
        value.abs()
    }
}

/// Canonical evaluation-point key: sorted (dimension, level, ordinal)
/// triples of the dimensions at nonzero level.
pub type NodeKey = Vec<(u32, u32, u32)>;

/// Cache of integrand values keyed by quadrature node identity.
///
/// One cache serves one integrand; the key does not identify the map.
#[derive(Clone, Debug)]
pub struct EvalCache<V> {
    entries: HashMap<NodeKey, V>,
    hits: u64,
    misses: u64,
    enabled: bool,
}

impl<V: Clone> EvalCache<V> {
    pub fn new() -> Self {
        EvalCache {
            entries: HashMap::new(),
            hits: 0,
            misses: 0,
            enabled: true,
        }
    }

    /// A cache that never stores; every evaluation is recomputed. Results
    /// must be bitwise identical either way.
    pub fn disabled() -> Self {
        EvalCache {
            enabled: false,
            ..Self::new()
        }
    }

    /// Number of distinct evaluation points seen so far.
    pub fn unique_points(&self) -> usize {
        self.entries.len()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    /// Total evaluation requests, cached or not.
    pub fn raw_evals(&self) -> u64 {
        self.hits + self.misses
    }

    fn lookup(&mut self, key: &NodeKey) -> Option<V> {
        if !self.enabled {
            return None;
        }
        match self.entries.get(key) {
            Some(v) => {
                self.hits += 1;
                Some(v.clone())
            }
            None => None,
        }
    }

    fn store(&mut self, key: NodeKey, value: &V) {
        self.misses += 1;
        if self.enabled {
            self.entries.insert(key, value.clone());
        }
    }
}

impl<V: Clone> Default for EvalCache<V> {
    fn default() -> Self {
        Self::new()
    }
}

/// The tensorized difference quadrature applied to `psi`:
/// the alternating-sign sum over binary subsets of the support of tensor
/// rules at levels `nu_j` and `nu_j - 1`.
pub fn delta<I: Integrand>(
    nu: &MultiIndex,
    psi: &I,
    cache: &mut EvalCache<I::Value>,
) -> Result<I::Value, SparseQuadError> {
    let dim = psi.dim();
    let support: Vec<(u32, u32)> = nu.support().collect();
    assert!(
        support.last().is_none_or(|&(j, _)| j as usize <= dim),
        "support of {nu} exceeds integrand dimension {dim}"
    );
    assert!(support.len() < 64, "support too large for subset masks");

    let mut y = vec![0.0; dim];
    let mut acc: Option<I::Value> = None;
    let mut active = Vec::with_capacity(support.len());
    for mask in 0u64..(1 << support.len()) {
        let sign = if mask.count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        active.clear();
        for (i, &(j, level)) in support.iter().enumerate() {
            let level = level - ((mask >> i) & 1) as u32;
            if level >= 1 {
                active.push((j, level));
            }
        }
        tensor_accumulate(&active, sign, psi, cache, &mut y, &mut acc)?;
    }
    Ok(acc.expect("difference operator has at least one term"))
}

/// Accumulates `sign * (tensor rule at the given active levels)[psi]`
/// into `acc`. `y` is scratch space, all zeros on entry and on exit.
fn tensor_accumulate<I: Integrand>(
    active: &[(u32, u32)],
    sign: f64,
    psi: &I,
    cache: &mut EvalCache<I::Value>,
    y: &mut [f64],
    acc: &mut Option<I::Value>,
) -> Result<(), SparseQuadError> {
    let rules: Vec<Arc<UnivariateRule>> = active
        .iter()
        .map(|&(_, level)| quad1d::rule_for_level(level))
        .collect::<Result<_, _>>()?;
    let mut ordinals = vec![0usize; active.len()];
    loop {
        let mut weight = sign;
        let mut key: NodeKey = Vec::with_capacity(active.len());
        for (i, &(j, level)) in active.iter().enumerate() {
            let rule = &rules[i];
            y[(j - 1) as usize] = rule.nodes[ordinals[i]];
            weight *= rule.weights[ordinals[i]];
            key.push((j, level, ordinals[i] as u32));
        }
        let value = match cache.lookup(&key) {
            Some(v) => v,
            None => {
                let v = psi.eval(y).map_err(|source| SparseQuadError::Eval {
                    node: y.to_vec(),
                    source,
                })?;
                cache.store(key, &v);
                v
            }
        };
        match acc.as_mut() {
            Some(a) => a.add_scaled(weight, &value),
            None => {
                let mut v = value;
                v.scale(weight);
                *acc = Some(v);
            }
        }

        let mut pos = 0;
        loop {
            if pos == active.len() {
                for &(j, _) in active {
                    y[(j - 1) as usize] = 0.0;
                }
                return Ok(());
            }
            ordinals[pos] += 1;
            if ordinals[pos] < rules[pos].len() {
                break;
            }
            ordinals[pos] = 0;
            pos += 1;
        }
    }
}

/// All evaluation-point keys of the full tensor grid at the levels of `nu`.
fn tensor_grid_keys(nu: &MultiIndex) -> Vec<NodeKey> {
    let support: Vec<(u32, u32)> = nu.support().collect();
    let sizes: Vec<usize> = support
        .iter()
        .map(|&(_, level)| quad1d::points_for_level(level))
        .collect();
    let total: usize = sizes.iter().product();
    let mut keys = Vec::with_capacity(total);
    let mut ordinals = vec![0usize; support.len()];
    loop {
        keys.push(
            support
                .iter()
                .zip(&ordinals)
                .map(|(&(j, level), &ord)| (j, level, ord as u32))
                .collect(),
        );
        let mut pos = 0;
        loop {
            if pos == support.len() {
                return keys;
            }
            ordinals[pos] += 1;
            if ordinals[pos] < sizes[pos] {
                break;
            }
            ordinals[pos] = 0;
            pos += 1;
        }
    }
}

/// Number of physically distinct evaluation points of the union of tensor
/// grids over `indices`.
///
/// Cache keys identify points by (dimension, level, ordinal), which never
/// collide across levels; physically, though, every odd-point rule places a
/// node exactly at 0, so grids of different indices share those points.
/// This is the honest "unique quadrature points" count of an index set.
pub fn unique_evaluation_points<'a, I>(indices: I) -> Result<usize, QuadError>
where
    I: IntoIterator<Item = &'a MultiIndex>,
{
    let mut seen: HashSet<Vec<(u32, u64)>> = HashSet::new();
    for nu in indices {
        for key in tensor_grid_keys(nu) {
            let mut physical = Vec::with_capacity(key.len());
            for (j, level, ord) in key {
                let node = quad1d::rule_for_level(level)?.nodes[ord as usize];
                if node != 0.0 {
                    physical.push((j, node.to_bits()));
                }
            }
            seen.insert(physical);
        }
    }
    Ok(seen.len())
}

/// `Q_Lambda[psi] = sum_{nu in Lambda} delta_nu[psi]`, summed in insertion
/// order. Rejects sets that are not downward closed.
pub fn sparse_quadrature<I: Integrand>(
    set: &IndexSet,
    psi: &I,
    cache: &mut EvalCache<I::Value>,
) -> Result<I::Value, SparseQuadError> {
    set.ensure_downward_closed()?;
    let mut acc: Option<I::Value> = None;
    for nu in set.iter() {
        let d = delta(nu, psi, cache)?;
        match acc.as_mut() {
            Some(a) => a.add_scaled(1.0, &d),
            None => acc = Some(d),
        }
    }
    Ok(acc.expect("index set always contains the zero index"))
}

/// The a-priori indicator
/// `b_nu = prod_j sum_{l=0}^{r} C(nu_j, l) rho_j^{2l}`;
/// dimensions outside the support contribute a factor 1.
pub fn apriori_indicator(nu: &MultiIndex, field: &Field) -> f64 {
    let r = field.spec().r;
    nu.support()
        .map(|(j, level)| {
            let rho_sq = field.rho(j as usize).powi(2);
            let mut sum = 0.0;
            let mut rho_pow = 1.0;
            for l in 0..=r.min(level) {
                sum += binomial(level, l) * rho_pow;
                rho_pow *= rho_sq;
            }
            sum
        })
        .product()
}

fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut value = 1.0;
    for i in 0..k {
        value = value * (n - i) as f64 / (i + 1) as f64;
    }
    value
}

/// The a-posteriori indicator `|delta_nu[psi]|_X`.
pub fn aposteriori_indicator<I: Integrand>(
    nu: &MultiIndex,
    psi: &I,
    cache: &mut EvalCache<I::Value>,
) -> Result<f64, SparseQuadError> {
    Ok(psi.norm(&delta(nu, psi, cache)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorMode {
    Apriori,
    Aposteriori,
}

impl IndicatorMode {
    pub fn label(&self) -> &'static str {
        match self {
            IndicatorMode::Apriori => "apriori",
            IndicatorMode::Aposteriori => "aposteriori",
        }
    }
}

/// Stopping and selection controls for [`adaptive_construct`].
#[derive(Clone, Debug)]
pub struct AdaptiveOptions {
    pub mode: IndicatorMode,
    /// Stop once the index set holds this many indices.
    pub max_indices: usize,
    /// Optional stop once `n_points(Lambda)` reaches this budget.
    pub max_points: Option<usize>,
    /// Optional stop once the error proxy of every front index falls below
    /// this tolerance: `|delta|` in a-posteriori mode, `b^{-1/2}` in
    /// a-priori mode.
    pub tolerance: Option<f64>,
}

impl AdaptiveOptions {
    pub fn new(mode: IndicatorMode, max_indices: usize) -> Self {
        AdaptiveOptions {
            mode,
            max_indices,
            max_points: None,
            tolerance: None,
        }
    }
}

/// One enrichment step of an adaptive run.
#[derive(Clone, Debug)]
pub struct StepRecord<V> {
    pub step: usize,
    pub n_indices: usize,
    pub n_points_lambda: usize,
    pub n_points_lambda_bar: usize,
    pub selected: MultiIndex,
    /// Selection indicator of the chosen index: `b_nu` (a-priori) or
    /// `|delta_nu|` (a-posteriori).
    pub indicator: f64,
    /// The quadrature value after this step.
    pub value: V,
    pub raw_evals: u64,
}

/// Result and full history of an adaptive construction.
#[derive(Clone, Debug)]
pub struct AdaptiveRun<V> {
    pub mode: IndicatorMode,
    pub index_set: IndexSet,
    /// The reduced forward neighbor front at termination, canonical order.
    pub front: Vec<MultiIndex>,
    /// Indicator values over the final front, canonical order.
    pub indicators: Vec<(MultiIndex, f64)>,
    /// `Q_Lambda[psi]`.
    pub value: V,
    pub n_points_lambda: usize,
    pub n_points_lambda_bar: usize,
    pub raw_evals: u64,
    pub history: Vec<StepRecord<V>>,
}

impl<V: QuadValue> AdaptiveRun<V> {
    /// The reference value `Q_{Lambda union N(Lambda)}[psi]`: the run's value
    /// plus every front contribution.
    pub fn reference_value<I: Integrand<Value = V>>(
        &self,
        psi: &I,
        cache: &mut EvalCache<V>,
    ) -> Result<V, SparseQuadError> {
        let mut total = self.value.clone();
        for nu in &self.front {
            let d = delta(nu, psi, cache)?;
            total.add_scaled(1.0, &d);
        }
        Ok(total)
    }

    /// Per-dimension maximum levels `l_j = max nu_j`, over the index set
    /// alone or over set plus front.
    pub fn max_levels(&self, include_front: bool) -> BTreeMap<u32, u32> {
        let mut levels = BTreeMap::new();
        let front_iter = self.front.iter().filter(|_| include_front);
        for nu in self.index_set.iter().chain(front_iter) {
            for (j, l) in nu.support() {
                let entry = levels.entry(j).or_insert(0);
                *entry = (*entry).max(l);
            }
        }
        levels
    }
}

struct FrontEntry<V> {
    indicator: f64,
    delta: Option<V>,
}

/// Greedy adaptive sparse quadrature: start from the root set, and
/// repeatedly enrich by the front index minimizing `b_nu` (a-priori) or
/// maximizing `|delta_nu|` (a-posteriori), keeping the quadrature value
/// updated incrementally. Ties break to the first index in canonical order.
pub fn adaptive_construct<I: Integrand>(
    psi: &I,
    field: &Field,
    options: &AdaptiveOptions,
    cache: &mut EvalCache<I::Value>,
) -> Result<AdaptiveRun<I::Value>, SparseQuadError> {
    if psi.dim() != field.dim() {
        return Err(SparseQuadError::DimensionMismatch {
            integrand: psi.dim(),
            field: field.dim(),
        });
    }
    if options.max_indices < 1 {
        return Err(SparseQuadError::EmptyBudget);
    }
    let dim_cap = field.dim() as u32;
    // Rules exist up to MAX_POINTS points; candidates needing deeper levels
    // cannot be evaluated and never enter the front (the level analogue of
    // the dimension truncation).
    let level_cap = quad1d::MAX_POINTS as u32 - 1;
    let mode = options.mode;

    let mut set = IndexSet::new();
    let zero = MultiIndex::zero();
    let mut value = delta(&zero, psi, cache)?;

    let mut lambda_points: HashSet<NodeKey> = HashSet::new();
    let mut bar_points: HashSet<NodeKey> = HashSet::new();
    for key in tensor_grid_keys(&zero) {
        lambda_points.insert(key.clone());
        bar_points.insert(key);
    }

    let mut front: BTreeMap<MultiIndex, FrontEntry<I::Value>> = BTreeMap::new();
    let admit = |candidate: MultiIndex,
                 front: &mut BTreeMap<MultiIndex, FrontEntry<I::Value>>,
                 bar_points: &mut HashSet<NodeKey>,
                 cache: &mut EvalCache<I::Value>|
     -> Result<(), SparseQuadError> {
        for key in tensor_grid_keys(&candidate) {
            bar_points.insert(key);
        }
        let entry = match mode {
            IndicatorMode::Apriori => FrontEntry {
                indicator: apriori_indicator(&candidate, field),
                delta: None,
            },
            IndicatorMode::Aposteriori => {
                let d = delta(&candidate, psi, cache)?;
                FrontEntry {
                    indicator: psi.norm(&d),
                    delta: Some(d),
                }
            }
        };
        front.insert(candidate, entry);
        Ok(())
    };

    for candidate in set.reduced_forward_neighbors(dim_cap)? {
        if candidate.max_level() <= level_cap {
            admit(candidate, &mut front, &mut bar_points, cache)?;
        }
    }

    let mut history = Vec::new();
    let initial_indicator = match mode {
        IndicatorMode::Apriori => apriori_indicator(&zero, field),
        IndicatorMode::Aposteriori => psi.norm(&value),
    };
    let mut raw_evals = cache.raw_evals();
    history.push(StepRecord {
        step: 0,
        n_indices: 1,
        n_points_lambda: lambda_points.len(),
        n_points_lambda_bar: bar_points.len(),
        selected: zero,
        indicator: initial_indicator,
        value: value.clone(),
        raw_evals,
    });

    while set.len() < options.max_indices {
        if let Some(budget) = options.max_points {
            if lambda_points.len() >= budget {
                break;
            }
        }
        if front.is_empty() {
            break;
        }

        // Selection scan in canonical order; strict improvement keeps the
        // first of tied candidates.
        let mut selected: Option<(&MultiIndex, f64)> = None;
        let mut max_proxy = 0.0f64;
        for (nu, entry) in &front {
            let proxy = match mode {
                IndicatorMode::Apriori => entry.indicator.powf(-0.5),
                IndicatorMode::Aposteriori => entry.indicator,
            };
            max_proxy = max_proxy.max(proxy);
            let better = match (&selected, mode) {
                (None, _) => true,
                (Some((_, best)), IndicatorMode::Apriori) => entry.indicator < *best,
                (Some((_, best)), IndicatorMode::Aposteriori) => entry.indicator > *best,
            };
            if better {
                selected = Some((nu, entry.indicator));
            }
        }
        if let Some(tol) = options.tolerance {
            if max_proxy < tol {
                break;
            }
        }
        let (selected, indicator) = selected
            .map(|(nu, ind)| (nu.clone(), ind))
            .expect("front nonempty");

        let entry = front.remove(&selected).expect("selected from front");
        let contribution = match entry.delta {
            Some(d) => d,
            None => delta(&selected, psi, cache)?,
        };
        value.add_scaled(1.0, &contribution);
        let previous_active = set.active_dim();
        set.insert(selected.clone())?;
        for key in tensor_grid_keys(&selected) {
            lambda_points.insert(key);
        }

        // Newly admissible candidates: children of the enriched index, plus
        // the unit index of the next dimension when one just activated.
        let reachable = set.active_dim().saturating_add(1).min(dim_cap);
        for j in 1..=reachable {
            let candidate = selected.incremented(j);
            if candidate.max_level() > level_cap
                || set.contains(&candidate)
                || front.contains_key(&candidate)
            {
                continue;
            }
            let admissible = candidate.support().all(|(k, _)| {
                candidate
                    .decremented(k)
                    .map(|parent| set.contains(&parent))
                    .unwrap_or(false)
            });
            if admissible {
                admit(candidate, &mut front, &mut bar_points, cache)?;
            }
        }
        if set.active_dim() > previous_active {
            let next_dim = set.active_dim() + 1;
            if next_dim <= dim_cap {
                admit(
                    MultiIndex::unit(next_dim),
                    &mut front,
                    &mut bar_points,
                    cache,
                )?;
            }
        }

        raw_evals = cache.raw_evals();
        history.push(StepRecord {
            step: history.len(),
            n_indices: set.len(),
            n_points_lambda: lambda_points.len(),
            n_points_lambda_bar: bar_points.len(),
            selected,
            indicator,
            value: value.clone(),
            raw_evals,
        });
    }

    let indicators: Vec<(MultiIndex, f64)> = front
        .iter()
        .map(|(nu, entry)| (nu.clone(), entry.indicator))
        .collect();
    Ok(AdaptiveRun {
        mode,
        index_set: set,
        front: front.keys().cloned().collect(),
        indicators,
        value,
        n_points_lambda: lambda_points.len(),
        n_points_lambda_bar: bar_points.len(),
        raw_evals,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldSpec, Rescale};
    use crate::quad1d::gaussian_moment;
    use approx::assert_abs_diff_eq;

    fn mi(pairs: &[(u32, u32)]) -> MultiIndex {
        MultiIndex::from_pairs(pairs.iter().copied()).unwrap()
    }

    fn test_field(alpha: f64, dim: usize) -> Field {
        Field::new(FieldSpec {
            rescale: Rescale::Fixed(1.0),
            ..FieldSpec::new(alpha, dim)
        })
        .unwrap()
    }

    #[test]
    fn delta_at_zero_is_single_evaluation() {
        let psi = FnIntegrand::new(3, |y: &[f64]| 7.0 + y[0]);
        let mut cache = EvalCache::new();
        let d = delta(&MultiIndex::zero(), &psi, &mut cache).unwrap();
        assert_eq!(d, 7.0);
        assert_eq!(cache.unique_points(), 1);
        assert_eq!(cache.raw_evals(), 1);
    }

    #[test]
    fn delta_examples() {
        let mut cache = EvalCache::new();
        let linear = FnIntegrand::new(2, |y: &[f64]| y[0]);
        let d = delta(&MultiIndex::unit(1), &linear, &mut cache).unwrap();
        assert_abs_diff_eq!(d, 0.0, epsilon = 1e-15);

        let mut cache = EvalCache::new();
        let square = FnIntegrand::new(2, |y: &[f64]| y[0] * y[0]);
        let d = delta(&MultiIndex::unit(1), &square, &mut cache).unwrap();
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn delta_propagates_failure_with_node() {
        struct Failing;
        impl Integrand for Failing {
            type Value = f64;
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, y: &[f64]) -> Result<f64, IntegrandError> {
                if y[0] > 0.0 {
                    Err("boom".into())
                } else {
                    Ok(0.0)
                }
            }
            fn norm(&self, v: &f64) -> f64 {
                v.abs()
            }
        }
        let mut cache = EvalCache::new();
        let err = delta(&MultiIndex::unit(1), &Failing, &mut cache).unwrap_err();
        match err {
            SparseQuadError::Eval { node, .. } => assert!(node[0] > 0.0),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn sparse_quadrature_on_root_set() {
        let psi = FnIntegrand::new(2, |y: &[f64]| 3.0 - y[1]);
        let mut cache = EvalCache::new();
        let q = sparse_quadrature(&IndexSet::new(), &psi, &mut cache).unwrap();
        assert_eq!(q, 3.0);
    }

    #[test]
    fn sparse_quadrature_rejects_bad_sets() {
        let bad = IndexSet::from_members_unchecked(vec![MultiIndex::zero(), mi(&[(1, 2)])]);
        let psi = FnIntegrand::new(1, |_: &[f64]| 1.0);
        let mut cache = EvalCache::new();
        assert!(sparse_quadrature(&bad, &psi, &mut cache).is_err());
    }

    #[test]
    fn total_degree_two_set_integrates_product_of_squares() {
        let members = vec![
            MultiIndex::zero(),
            mi(&[(1, 1)]),
            mi(&[(2, 1)]),
            mi(&[(1, 2)]),
            mi(&[(1, 1), (2, 1)]),
            mi(&[(2, 2)]),
        ];
        let set = IndexSet::from_members(members).unwrap();
        let psi = FnIntegrand::new(2, |y: &[f64]| y[0] * y[0] * y[1] * y[1]);
        let mut cache = EvalCache::new();
        let q = sparse_quadrature(&set, &psi, &mut cache).unwrap();
        assert_abs_diff_eq!(q, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn apriori_indicator_closed_forms() {
        let field = test_field(2.0, 4);
        assert_eq!(apriori_indicator(&MultiIndex::zero(), &field), 1.0);
        for j in 1..=3u32 {
            let rho_sq = field.rho(j as usize).powi(2);
            assert_abs_diff_eq!(
                apriori_indicator(&MultiIndex::unit(j), &field),
                1.0 + rho_sq,
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                apriori_indicator(&mi(&[(j, 2)]), &field),
                1.0 + 2.0 * rho_sq + rho_sq * rho_sq,
                epsilon = 1e-12
            );
        }
        // product over the support
        let b = apriori_indicator(&mi(&[(1, 1), (2, 1)]), &field);
        let expected = (1.0 + field.rho(1).powi(2)) * (1.0 + field.rho(2).powi(2));
        assert_abs_diff_eq!(b, expected, epsilon = 1e-12);
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(0, 1), 0.0);
        assert_eq!(binomial(4, 2), 6.0);
        assert_eq!(binomial(5, 0), 1.0);
        assert_eq!(binomial(5, 5), 1.0);
    }

    #[test]
    fn aposteriori_indicator_examples() {
        let constant = FnIntegrand::new(2, |_: &[f64]| 4.2);
        let mut cache = EvalCache::new();
        for nu in [mi(&[(1, 1)]), mi(&[(2, 2)]), mi(&[(1, 1), (2, 1)])] {
            let ind = aposteriori_indicator(&nu, &constant, &mut cache).unwrap();
            assert!(ind <= 1e-14, "constant integrand gave {ind} at {nu}");
        }

        let square = FnIntegrand::new(1, |y: &[f64]| y[0] * y[0]);
        let mut cache = EvalCache::new();
        let ind = aposteriori_indicator(&MultiIndex::unit(1), &square, &mut cache).unwrap();
        assert_abs_diff_eq!(ind, 1.0, epsilon = 1e-14);

        // beyond the polynomial degree the telescoped differences vanish
        let ind = aposteriori_indicator(&mi(&[(1, 3)]), &square, &mut cache).unwrap();
        assert!(ind <= 1e-12);
    }

    #[test]
    fn adaptive_budget_of_one_never_refines() {
        let psi = FnIntegrand::new(2, |y: &[f64]| (y[0] + 0.3 * y[1]).exp());
        let field = test_field(2.0, 2);
        let mut cache = EvalCache::new();
        let run = adaptive_construct(
            &psi,
            &field,
            &AdaptiveOptions::new(IndicatorMode::Aposteriori, 1),
            &mut cache,
        )
        .unwrap();
        assert_eq!(run.index_set.len(), 1);
        assert_abs_diff_eq!(run.value, 1.0, epsilon = 1e-15);
        assert_eq!(run.history.len(), 1);
    }

    #[test]
    fn apriori_second_index_is_first_dimension() {
        let psi = FnIntegrand::new(3, |y: &[f64]| y[0]);
        let field = test_field(2.0, 3);
        let mut cache = EvalCache::new();
        let run = adaptive_construct(
            &psi,
            &field,
            &AdaptiveOptions::new(IndicatorMode::Apriori, 2),
            &mut cache,
        )
        .unwrap();
        assert_eq!(run.history[1].selected, MultiIndex::unit(1));
    }

    #[test]
    fn aposteriori_finds_active_second_dimension() {
        // psi depends only on y_2; pure dimension-1 refinement would stall.
        let psi = FnIntegrand::new(3, |y: &[f64]| y[1] * y[1]);
        let field = test_field(2.0, 3);
        let mut cache = EvalCache::new();
        let run = adaptive_construct(
            &psi,
            &field,
            &AdaptiveOptions::new(IndicatorMode::Aposteriori, 12),
            &mut cache,
        )
        .unwrap();
        let err = (run.value - 1.0).abs();
        assert!(err <= 1e-12, "error {err}");
        assert!(run.index_set.contains(&MultiIndex::unit(2)));
    }

    #[test]
    fn incremental_value_matches_recomputation() {
        let psi = FnIntegrand::new(3, |y: &[f64]| (0.8 * y[0] + 0.4 * y[1] - 0.2 * y[2]).exp());
        let field = test_field(2.0, 3);
        let mut cache = EvalCache::new();
        let run = adaptive_construct(
            &psi,
            &field,
            &AdaptiveOptions::new(IndicatorMode::Aposteriori, 40),
            &mut cache,
        )
        .unwrap();
        for step in [5, 20, run.history.len() - 1] {
            let members: Vec<MultiIndex> = run.history[..=step]
                .iter()
                .map(|rec| rec.selected.clone())
                .collect();
            let prefix = IndexSet::from_members(members).unwrap();
            let mut fresh = EvalCache::new();
            let recomputed = sparse_quadrature(&prefix, &psi, &mut fresh).unwrap();
            let got = run.history[step].value;
            assert!(
                (recomputed - got).abs() <= 1e-12 * got.abs().max(1.0),
                "step {step}: {recomputed} vs {got}"
            );
        }
    }

    #[test]
    fn incremental_front_matches_direct_neighbors() {
        let psi = FnIntegrand::new(4, |y: &[f64]| (0.9f64 + y[0] * 0.3 + y[3] * 0.1).cos());
        let field = test_field(1.0, 4);
        let mut cache = EvalCache::new();
        let run = adaptive_construct(
            &psi,
            &field,
            &AdaptiveOptions::new(IndicatorMode::Aposteriori, 60),
            &mut cache,
        )
        .unwrap();
        let direct = run.index_set.reduced_forward_neighbors(4).unwrap();
        assert_eq!(run.front, direct);
    }

    #[test]
    fn cache_counters_and_point_counts() {
        let psi = FnIntegrand::new(2, |y: &[f64]| y[0].mul_add(2.0, y[1]).exp());
        let field = test_field(2.0, 2);
        let mut cache = EvalCache::new();
        let run = adaptive_construct(
            &psi,
            &field,
            &AdaptiveOptions::new(IndicatorMode::Aposteriori, 15),
            &mut cache,
        )
        .unwrap();
        // every evaluated point is in Lambda-bar, and Lambda is a subset
        assert_eq!(cache.unique_points(), run.n_points_lambda_bar);
        assert!(run.n_points_lambda <= run.n_points_lambda_bar);
        assert!(cache.hits() > 0);
        assert_eq!(run.raw_evals, cache.raw_evals());
    }

    #[test]
    fn disabled_cache_gives_bitwise_identical_results() {
        let members = vec![
            MultiIndex::zero(),
            mi(&[(1, 1)]),
            mi(&[(1, 2)]),
            mi(&[(2, 1)]),
            mi(&[(1, 1), (2, 1)]),
        ];
        let set = IndexSet::from_members(members).unwrap();
        let psi = FnIntegrand::new(2, |y: &[f64]| (y[0] * 0.7 - y[1] * 0.2).exp());
        let mut on = EvalCache::new();
        let mut off = EvalCache::disabled();
        let q_on = sparse_quadrature(&set, &psi, &mut on).unwrap();
        let q_off = sparse_quadrature(&set, &psi, &mut off).unwrap();
        assert_eq!(q_on.to_bits(), q_off.to_bits());
        assert_eq!(off.unique_points(), 0);
        // same requests either way, but only the enabled cache avoids reevaluation
        assert_eq!(off.raw_evals(), on.raw_evals());
        assert!(off.misses() > on.misses());
    }

    #[test]
    fn tolerance_stops_early() {
        let psi = FnIntegrand::new(2, |y: &[f64]| y[0] * y[0]);
        let field = test_field(2.0, 2);
        let mut cache = EvalCache::new();
        let mut options = AdaptiveOptions::new(IndicatorMode::Aposteriori, 500);
        options.tolerance = Some(1e-10);
        let run = adaptive_construct(&psi, &field, &options, &mut cache).unwrap();
        assert!(run.index_set.len() < 500, "run did not stop early");
        assert_abs_diff_eq!(run.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn max_points_budget_stops_growth() {
        let psi = FnIntegrand::new(2, |y: &[f64]| (y[0] + y[1]).exp());
        let field = test_field(2.0, 2);
        let mut cache = EvalCache::new();
        let mut options = AdaptiveOptions::new(IndicatorMode::Apriori, 10_000);
        options.max_points = Some(25);
        let run = adaptive_construct(&psi, &field, &options, &mut cache).unwrap();
        assert!(run.n_points_lambda >= 25);
        assert!(run.index_set.len() < 100);
    }

    #[test]
    fn reference_value_extends_by_front() {
        let psi = FnIntegrand::new(2, |y: &[f64]| (0.5 * y[0] - 0.1 * y[1]).exp());
        let field = test_field(2.0, 2);
        let mut cache = EvalCache::new();
        let run = adaptive_construct(
            &psi,
            &field,
            &AdaptiveOptions::new(IndicatorMode::Aposteriori, 10),
            &mut cache,
        )
        .unwrap();
        let reference = run.reference_value(&psi, &mut cache).unwrap();

        let mut members = run.index_set.members().to_vec();
        members.extend(run.front.iter().cloned());
        let bar = IndexSet::from_members(members).unwrap();
        let mut fresh = EvalCache::new();
        let direct = sparse_quadrature(&bar, &psi, &mut fresh).unwrap();
        assert_abs_diff_eq!(reference, direct, epsilon = 1e-13 * direct.abs());
    }

    #[test]
    fn rectangle_bound_on_tensor_hermite() {
        // |Q_{Lambda cap R_nu}[H_nu]| <= prod (1 + nu_j)^3 for downward-closed
        // Lambda and small rectangles.
        let psi_for = |nu: MultiIndex| {
            FnIntegrand::new(3, move |y: &[f64]| {
                crate::quad1d::hermite_tensor(&nu, y).unwrap()
            })
        };
        let mut lambda = IndexSet::new();
        for nu in [
            mi(&[(1, 1)]),
            mi(&[(1, 2)]),
            mi(&[(2, 1)]),
            mi(&[(1, 1), (2, 1)]),
            mi(&[(3, 1)]),
            mi(&[(1, 3)]),
        ] {
            lambda.insert(nu).unwrap();
        }
        for nu in [mi(&[(1, 2)]), mi(&[(1, 1), (2, 1)]), mi(&[(1, 3), (3, 1)])] {
            let rect = crate::multiindex::rectangle(&nu, 64).unwrap();
            let members: Vec<MultiIndex> = lambda
                .iter()
                .filter(|mu| rect.contains(mu))
                .cloned()
                .collect();
            let capped = IndexSet::from_members(members).unwrap();
            let psi = psi_for(nu.clone());
            let mut cache = EvalCache::new();
            let q = sparse_quadrature(&capped, &psi, &mut cache).unwrap();
            let bound: f64 = nu
                .support()
                .map(|(_, l)| ((1 + l) as f64).powi(3))
                .product();
            assert!(q.abs() <= bound, "{nu}: |{q}| > {bound}");
        }
    }

    #[test]
    fn full_tensor_sets_reproduce_tensor_quadrature() {
        // J = 2, full grid of level L: the telescoping identity makes the
        // sparse sum equal the plain tensor rule.
        let level = 4u32;
        let mut members = Vec::new();
        for l1 in 0..=level {
            for l2 in 0..=level {
                members.push(mi(&[(1, l1), (2, l2)]));
            }
        }
        members.sort_unstable_by_key(|nu| nu.total_level());
        let set = IndexSet::from_members(members).unwrap();

        let psi = FnIntegrand::new(2, |y: &[f64]| (0.3 * y[0] - 0.45 * y[1]).exp());
        let mut cache = EvalCache::new();
        let sparse = sparse_quadrature(&set, &psi, &mut cache).unwrap();

        let rule = quad1d::rule_for_level(level).unwrap();
        let mut tensor = 0.0;
        for (n1, w1) in rule.nodes.iter().zip(&rule.weights) {
            for (n2, w2) in rule.nodes.iter().zip(&rule.weights) {
                tensor += w1 * w2 * (0.3 * n1 - 0.45 * n2).exp();
            }
        }
        assert!(
            (sparse - tensor).abs() <= 1e-12 * tensor.abs(),
            "{sparse} vs {tensor}"
        );
    }

    #[test]
    fn exactness_on_a_random_downward_closed_set() {
        let members = vec![
            MultiIndex::zero(),
            mi(&[(1, 1)]),
            mi(&[(2, 1)]),
            mi(&[(2, 2)]),
            mi(&[(1, 1), (2, 1)]),
            mi(&[(3, 1)]),
        ];
        let set = IndexSet::from_members(members).unwrap();
        for nu in set.iter() {
            let powers: Vec<(usize, i32)> = nu
                .support()
                .map(|(j, l)| (j as usize - 1, l as i32))
                .collect();
            let psi = FnIntegrand::new(3, move |y: &[f64]| {
                powers.iter().map(|&(idx, p)| y[idx].powi(p)).product()
            });
            let mut cache = EvalCache::new();
            let q = sparse_quadrature(&set, &psi, &mut cache).unwrap();
            let exact: f64 = nu.support().map(|(_, l)| gaussian_moment(l)).product();
            assert!(
                (q - exact).abs() <= 1e-11 * exact.abs().max(1.0),
                "{nu}: {q} vs {exact}"
            );
        }
    }
}
