//! Integrands wrapping the optimality solver for the three target
//! quantities of the experiments.

use std::sync::Arc;

use crate::pde::{FemSolver, StateAdjointPair};
use crate::sparse_quad::{Integrand, IntegrandError};

/// Shared data of one optimality problem: solver, source, synthetic data
/// and regularization weight.
#[derive(Clone, Debug)]
pub struct OptimalitySetup {
    pub solver: Arc<FemSolver>,
    pub f: Vec<f64>,
    pub u_d: Vec<f64>,
    pub beta: f64,
}

impl OptimalitySetup {
    fn solve(&self, y: &[f64]) -> Result<StateAdjointPair, IntegrandError> {
        self.solver
            .solve_optimality(y, &self.f, &self.u_d, self.beta)
            .map_err(|e| Box::new(e) as IntegrandError)
    }

    fn dim(&self) -> usize {
        self.solver.field().dim()
    }
}

/// Scalar target `z(x*) = -v(x*)/beta` at a fixed interior node.
pub struct ControlAtPoint {
    setup: OptimalitySetup,
    interior_index: usize,
}

impl ControlAtPoint {
    pub fn new(setup: OptimalitySetup, interior_index: usize) -> Self {
        assert!(interior_index < setup.solver.mesh().interior());
        ControlAtPoint {
            setup,
            interior_index,
        }
    }
}

impl Integrand for ControlAtPoint {
    type Value = f64;

    fn dim(&self) -> usize {
        self.setup.dim()
    }

    fn eval(&self, y: &[f64]) -> Result<f64, IntegrandError> {
        let w = self.setup.solve(y)?;
        Ok(-w.v[self.interior_index] / self.setup.beta)
    }

    fn norm(&self, value: &f64) -> f64 {
        value.abs()
    }
}

/// Full-field control target, full nodal curve with the discrete L2 norm.
pub struct ControlCurve {
    setup: OptimalitySetup,
}

impl ControlCurve {
    pub fn new(setup: OptimalitySetup) -> Self {
        ControlCurve { setup }
    }
}

impl Integrand for ControlCurve {
    type Value = Vec<f64>;

    fn dim(&self) -> usize {
        self.setup.dim()
    }

    fn eval(&self, y: &[f64]) -> Result<Vec<f64>, IntegrandError> {
        Ok(self.setup.solve(y)?.control_full(self.setup.beta))
    }

    fn norm(&self, value: &Vec<f64>) -> f64 {
        self.setup.solver.l2_norm_nodal(value)
    }
}

/// State/adjoint pair target; the value is the concatenated interior
/// coefficients [u; v] and the norm is the W-norm.
pub struct StatePairTarget {
    setup: OptimalitySetup,
}

impl StatePairTarget {
    pub fn new(setup: OptimalitySetup) -> Self {
        StatePairTarget { setup }
    }
}

impl Integrand for StatePairTarget {
    type Value = Vec<f64>;

    fn dim(&self) -> usize {
        self.setup.dim()
    }

    fn eval(&self, y: &[f64]) -> Result<Vec<f64>, IntegrandError> {
        let w = self.setup.solve(y)?;
        let mut out = w.u;
        out.extend_from_slice(&w.v);
        Ok(out)
    }

    fn norm(&self, value: &Vec<f64>) -> f64 {
        let m = self.setup.solver.mesh().interior();
        assert_eq!(value.len(), 2 * m);
        let pair = StateAdjointPair::from_interior(
            value[..m].to_vec(),
            value[m..].to_vec(),
            self.setup.solver.mesh(),
        );
        pair.w_norm(self.setup.beta)
    }
}
