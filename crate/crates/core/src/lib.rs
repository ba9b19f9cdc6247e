//! Adaptive sparse Gauss-Hermite quadrature for distributed optimal control
//! of a 1D elliptic PDE with lognormal random diffusion.
//!
//! The library is organized bottom-up:
//!
//! * [`multiindex`] — sparse multi-indices, downward-closed index sets and the
//!   reduced forward neighbor construction that drives adaptivity.
//! * [`quad1d`] — univariate Gauss-Hermite rules for the unit Gaussian
//!   measure and orthonormal Hermite polynomial evaluation.
//! * [`field`] — the lognormal diffusion parametrization `kappa(x, y)` and
//!   the weight sequence `rho` behind the a-priori error indicator.
//! * [`pde`] — piecewise-linear FEM discretization of the coupled
//!   state/adjoint optimality system on (0, 1), solved by banded LU.
//! * [`sparse_quad`] — tensorized difference quadrature, sparse quadrature
//!   over index sets and the adaptive construction with a-priori and
//!   a-posteriori error indicators.
//! * [`montecarlo`] — seeded Monte Carlo baseline for the same expectations.
//! * [`experiments`] — configuration, experiment presets and CSV/JSON
//!   emission for convergence, sample and level studies.

pub mod banded;
pub mod experiments;
pub mod field;
pub mod montecarlo;
pub mod multiindex;
pub mod pde;
pub mod quad1d;
pub mod sparse_quad;
pub mod value;

pub use field::{Field, FieldSpec};
pub use multiindex::{IndexSet, MultiIndex};
pub use pde::{FemSolver, Mesh, StateAdjointPair};
pub use quad1d::UnivariateRule;
pub use sparse_quad::{
    adaptive_construct, sparse_quadrature, AdaptiveOptions, AdaptiveRun, EvalCache, IndicatorMode,
    Integrand,
};
pub use value::QuadValue;
