//! Piecewise-linear FEM discretization of the parametrized optimality system
//! on D = (0, 1) with homogeneous Dirichlet conditions.
//!
//! The y-pointwise reduced optimality problem couples state and adjoint
//! through the block operator [beta A, M; -M, A], where A is the stiffness
//! matrix with coefficient `exp(kappa(x, y))` and M the mass matrix. The
//! block system is solved by direct banded LU with partial pivoting after
//! interleaving the unknowns node by node (bandwidth 3), which keeps solves
//! deterministic and microseconds-fast at the mesh sizes used here.
//!
//! Nodal data vectors (`f`, `u_d`, controls) are full-length (boundary
//! included); state and adjoint coefficient vectors are interior-only.

use std::f64::consts::PI;

use thiserror::Error;

use crate::banded::{BandedError, BandedMatrix};
use crate::field::Field;

/// `exp` overflows past ~709; assembly refuses coefficients this large.
const KAPPA_OVERFLOW_LIMIT: f64 = 700.0;

/// Poincare constant of the unit interval.
const POINCARE_CONSTANT: f64 = 1.0 / PI;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("mesh needs at least 3 nodes, got {0}")]
    MeshTooCoarse(usize),
    #[error("|kappa| = {max_abs} at an assembly sample point exceeds {KAPPA_OVERFLOW_LIMIT}")]
    CoefficientOverflow { max_abs: f64 },
    #[error("nodal data vector has length {got}, expected {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("linear solve failed (kappa sup {kappa_sup}): {source}")]
    SolveFailure { kappa_sup: f64, source: BandedError },
}

/// A uniform mesh on [0, 1] with `n` nodes including both boundary nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mesh {
    n: usize,
}

impl Mesh {
    pub fn new(n: usize) -> Result<Mesh, PdeError> {
        if n < 3 {
            return Err(PdeError::MeshTooCoarse(n));
        }
        Ok(Mesh { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Element width `h = 1/(n-1)`.
    pub fn h(&self) -> f64 {
        1.0 / (self.n - 1) as f64
    }

    /// Number of interior nodes.
    pub fn interior(&self) -> usize {
        self.n - 2
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.h()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.node(i))
    }
}

/// A symmetric tridiagonal matrix over the interior nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct TriDiagMatrix {
    pub diag: Vec<f64>,
    /// Off-diagonal band; `off[i]` couples interior nodes i and i+1.
    pub off: Vec<f64>,
}

impl TriDiagMatrix {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(x.len(), n);
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut sum = self.diag[i] * x[i];
            if i > 0 {
                sum += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                sum += self.off[i] * x[i + 1];
            }
            out[i] = sum;
        }
        out
    }

    fn to_banded(&self) -> BandedMatrix {
        let n = self.n();
        let mut out = BandedMatrix::zeros(n, 1, 1);
        for i in 0..n {
            out.set(i, i, self.diag[i]);
            if i + 1 < n {
                out.set(i, i + 1, self.off[i]);
                out.set(i + 1, i, self.off[i]);
            }
        }
        out
    }
}

/// FEM coefficient vectors (interior-only) of the coupled solution
/// `w(y) = (u(y), v(y))`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateAdjointPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    mesh: Mesh,
}

impl StateAdjointPair {
    pub fn from_interior(u: Vec<f64>, v: Vec<f64>, mesh: Mesh) -> Self {
        assert_eq!(u.len(), mesh.interior());
        assert_eq!(v.len(), mesh.interior());
        StateAdjointPair { u, v, mesh }
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    /// `sqrt(beta |u|_V^2 + |v|_V^2)` with the discrete H1-seminorm, exact
    /// for piecewise linears.
    pub fn w_norm(&self, beta: f64) -> f64 {
        let su = h1_seminorm_interior(self.mesh, &self.u);
        let sv = h1_seminorm_interior(self.mesh, &self.v);
        (beta * su * su + sv * sv).sqrt()
    }

    /// The optimal control `z = -v / beta` on interior nodes.
    pub fn control(&self, beta: f64) -> Vec<f64> {
        self.v.iter().map(|&vi| -vi / beta).collect()
    }

    /// The optimal control on all nodes (boundary values zero).
    pub fn control_full(&self, beta: f64) -> Vec<f64> {
        extend_with_boundary(&self.control(beta))
    }

    pub fn state_full(&self) -> Vec<f64> {
        extend_with_boundary(&self.u)
    }

    pub fn adjoint_full(&self) -> Vec<f64> {
        extend_with_boundary(&self.v)
    }
}

fn extend_with_boundary(interior: &[f64]) -> Vec<f64> {
    let mut full = Vec::with_capacity(interior.len() + 2);
    full.push(0.0);
    full.extend_from_slice(interior);
    full.push(0.0);
    full
}

/// H1-seminorm of the zero-extended interior vector:
/// `|u|_V^2 = (1/h) sum_e (u_{i+1} - u_i)^2`.
fn h1_seminorm_interior(mesh: Mesh, interior: &[f64]) -> f64 {
    assert_eq!(interior.len(), mesh.interior());
    let mut sum = 0.0;
    let mut prev = 0.0;
    for &ui in interior {
        let d = ui - prev;
        sum += d * d;
        prev = ui;
    }
    sum += prev * prev;
    (sum / mesh.h()).sqrt()
}

/// Assembly and direct solution of the parametrized problems on a fixed
/// mesh/field pair. Mode values at the element quadrature points are
/// tabulated once, so each solve costs only per-support work in y plus the
/// banded factorization.
#[derive(Clone, Debug)]
pub struct FemSolver {
    mesh: Mesh,
    field: Field,
    /// Element Gauss points, two per element.
    sample_x: Vec<f64>,
    /// Column-major mode table: `mode_table[j * samples + p] = kappa_{j+1}(x_p)`.
    mode_table: Vec<f64>,
}

impl FemSolver {
    pub fn new(mesh: Mesh, field: Field) -> FemSolver {
        let n_elem = mesh.n() - 1;
        let h = mesh.h();
        let offset = h / (2.0 * 3.0f64.sqrt());
        let mut sample_x = Vec::with_capacity(2 * n_elem);
        for e in 0..n_elem {
            let mid = (e as f64 + 0.5) * h;
            sample_x.push(mid - offset);
            sample_x.push(mid + offset);
        }
        let samples = sample_x.len();
        let dim = field.dim();
        let mut mode_table = vec![0.0; samples * dim];
        for j in 1..=dim {
            let col = &mut mode_table[(j - 1) * samples..j * samples];
            for (p, &x) in sample_x.iter().enumerate() {
                col[p] = field.mode(j, x);
            }
        }
        FemSolver {
            mesh,
            field,
            sample_x,
            mode_table,
        }
    }

    pub fn mesh(&self) -> Mesh {
        self.mesh
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    /// `kappa(x_p, y)` at every element sample point, with the overflow
    /// guard applied. Dimensions with `y_j = 0` cost nothing.
    pub fn kappa_at_samples(&self, y: &[f64]) -> Result<Vec<f64>, PdeError> {
        assert_eq!(
            y.len(),
            self.field.dim(),
            "parameter vector must have length J"
        );
        let samples = self.sample_x.len();
        let mut kappa = vec![0.0; samples];
        for (idx, &yj) in y.iter().enumerate() {
            if yj == 0.0 {
                continue;
            }
            let col = &self.mode_table[idx * samples..(idx + 1) * samples];
            for (k, &m) in kappa.iter_mut().zip(col) {
                *k += yj * m;
            }
        }
        for &k in &kappa {
            // also trips on NaN and infinities
            if k.is_nan() || k.abs() > KAPPA_OVERFLOW_LIMIT {
                return Err(PdeError::CoefficientOverflow { max_abs: k.abs() });
            }
        }
        Ok(kappa)
    }

    /// Interior stiffness matrix `A_ij = int exp(kappa) phi_i' phi_j' dx`,
    /// with the coefficient sampled at two Gauss-Legendre points per element.
    pub fn assemble_stiffness(&self, y: &[f64]) -> Result<TriDiagMatrix, PdeError> {
        let kappa = self.kappa_at_samples(y)?;
        Ok(self.stiffness_from_kappa(&kappa))
    }

    fn stiffness_from_kappa(&self, kappa: &[f64]) -> TriDiagMatrix {
        let n = self.mesh.n();
        let m = self.mesh.interior();
        let h = self.mesh.h();
        // Per-element conductance: mean of exp(kappa) over the two Gauss
        // points, times 1/h from the constant gradients.
        let mut diag = vec![0.0; m];
        let mut off = vec![0.0; m.saturating_sub(1)];
        for e in 0..n - 1 {
            let k_e = 0.5 * (kappa[2 * e].exp() + kappa[2 * e + 1].exp()) / h;
            // element nodes e, e+1 in global numbering; interior index = global - 1
            if e >= 1 {
                diag[e - 1] += k_e;
            }
            if e < m {
                diag[e] += k_e;
            }
            if e >= 1 && e < m {
                off[e - 1] -= k_e;
            }
        }
        TriDiagMatrix { diag, off }
    }

    /// Interior mass matrix `M = (h/6) tridiag(1, 4, 1)`.
    pub fn assemble_mass(&self) -> TriDiagMatrix {
        let m = self.mesh.interior();
        let h = self.mesh.h();
        TriDiagMatrix {
            diag: vec![4.0 * h / 6.0; m],
            off: vec![h / 6.0; m.saturating_sub(1)],
        }
    }

    /// Interior load vector `(g, phi_i)` for the piecewise-linear interpolant
    /// of full nodal data `g`.
    pub fn mass_apply_full(&self, g_full: &[f64]) -> Result<Vec<f64>, PdeError> {
        let n = self.mesh.n();
        if g_full.len() != n {
            return Err(PdeError::DataLength {
                expected: n,
                got: g_full.len(),
            });
        }
        let h = self.mesh.h();
        Ok((1..n - 1)
            .map(|i| h / 6.0 * (g_full[i - 1] + 4.0 * g_full[i] + g_full[i + 1]))
            .collect())
    }

    /// Discrete L2 norm of a full nodal vector (exact for its piecewise
    /// linear interpolant).
    pub fn l2_norm_nodal(&self, g_full: &[f64]) -> f64 {
        assert_eq!(g_full.len(), self.mesh.n());
        let h = self.mesh.h();
        let mut sum = 0.0;
        for e in 0..self.mesh.n() - 1 {
            let (a, b) = (g_full[e], g_full[e + 1]);
            sum += h * (a * a + a * b + b * b) / 3.0;
        }
        sum.sqrt()
    }

    /// Solves the state equation `A u = M (f + z)` for the interior state.
    pub fn solve_state(
        &self,
        y: &[f64],
        f_full: &[f64],
        z_full: &[f64],
    ) -> Result<Vec<f64>, PdeError> {
        let kappa = self.kappa_at_samples(y)?;
        let stiffness = self.stiffness_from_kappa(&kappa);
        let n = self.mesh.n();
        if z_full.len() != n {
            return Err(PdeError::DataLength {
                expected: n,
                got: z_full.len(),
            });
        }
        let source: Vec<f64> = f_full.iter().zip(z_full).map(|(f, z)| f + z).collect();
        let rhs = self.mass_apply_full(&source)?;
        let lu = stiffness
            .to_banded()
            .lu()
            .map_err(|source| PdeError::SolveFailure {
                kappa_sup: max_abs(&kappa),
                source,
            })?;
        Ok(lu.solve(&rhs))
    }

    /// The literal block operator [beta A, M; -M, A] with unknowns
    /// interleaved node by node: x = (u_1, v_1, u_2, v_2, ...).
    pub fn block_system(&self, y: &[f64], beta: f64) -> Result<BandedMatrix, PdeError> {
        let stiffness = self.assemble_stiffness(y)?;
        let mass = self.assemble_mass();
        Ok(assemble_block(&stiffness, &mass, beta, 1.0))
    }

    /// Solves the coupled optimality system for `(u, v)`.
    ///
    /// Internally the state block is scaled by `sqrt(beta)` (an exact change
    /// of variables) so the factorization stays well conditioned as
    /// `beta -> 0`; the returned pair is in the original variables.
    pub fn solve_optimality(
        &self,
        y: &[f64],
        f_full: &[f64],
        ud_full: &[f64],
        beta: f64,
    ) -> Result<StateAdjointPair, PdeError> {
        assert!(beta > 0.0, "beta must be positive");
        let kappa = self.kappa_at_samples(y)?;
        let stiffness = self.stiffness_from_kappa(&kappa);
        let mass = self.assemble_mass();
        let m = self.mesh.interior();
        let sqrt_beta = beta.sqrt();

        // Scaled variables (u~, v) = (sqrt(beta) u, v):
        //   A u~ + (1/sqrt(beta)) M v = sqrt(beta) M f
        //  -(1/sqrt(beta)) M u~ + A v = -M u_d
        let system = assemble_block(&stiffness, &mass, 1.0, 1.0 / sqrt_beta);
        let mf = self.mass_apply_full(f_full)?;
        let mud = self.mass_apply_full(ud_full)?;
        let mut rhs = vec![0.0; 2 * m];
        for i in 0..m {
            rhs[2 * i] = sqrt_beta * mf[i];
            rhs[2 * i + 1] = -mud[i];
        }
        let lu = system.lu().map_err(|source| PdeError::SolveFailure {
            kappa_sup: max_abs(&kappa),
            source,
        })?;
        lu.solve_in_place(&mut rhs);

        let mut u = vec![0.0; m];
        let mut v = vec![0.0; m];
        for i in 0..m {
            u[i] = rhs[2 * i] / sqrt_beta;
            v[i] = rhs[2 * i + 1];
        }
        Ok(StateAdjointPair {
            u,
            v,
            mesh: self.mesh,
        })
    }

    /// Diagnostic check of the a-priori bound
    /// `|w|_W <= C_P (sqrt(beta) |f| + |u_d|) exp(|kappa|_inf)`,
    /// with the sup norm estimated on the assembly sample grid.
    pub fn apriori_bound_check(
        &self,
        w: &StateAdjointPair,
        y: &[f64],
        f_full: &[f64],
        ud_full: &[f64],
        beta: f64,
    ) -> Result<bool, PdeError> {
        let kappa = self.kappa_at_samples(y)?;
        let bound = POINCARE_CONSTANT
            * (beta.sqrt() * self.l2_norm_nodal(f_full) + self.l2_norm_nodal(ud_full))
            * max_abs(&kappa).exp();
        Ok(w.w_norm(beta) <= bound)
    }
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

/// Builds [a_scale * A, m_scale * M; -m_scale * M, A] with interleaved
/// unknowns; bandwidth 3 on each side.
fn assemble_block(
    stiffness: &TriDiagMatrix,
    mass: &TriDiagMatrix,
    a_scale: f64,
    m_scale: f64,
) -> BandedMatrix {
    let m = stiffness.n();
    let mut out = BandedMatrix::zeros(2 * m, 3, 3);
    let mut couple = |i: usize, j: usize, a_ij: f64, m_ij: f64| {
        out.set(2 * i, 2 * j, a_scale * a_ij);
        out.set(2 * i, 2 * j + 1, m_scale * m_ij);
        out.set(2 * i + 1, 2 * j, -m_scale * m_ij);
        out.set(2 * i + 1, 2 * j + 1, a_ij);
    };
    for i in 0..m {
        couple(i, i, stiffness.diag[i], mass.diag[i]);
        if i + 1 < m {
            couple(i, i + 1, stiffness.off[i], mass.off[i]);
            couple(i + 1, i, stiffness.off[i], mass.off[i]);
        }
    }
    out
}

/// Nodal values of `sin(pi x)` on the mesh.
pub fn sin_pi_nodal(mesh: Mesh) -> Vec<f64> {
    mesh.nodes().map(|x| (PI * x).sin()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Field, FieldSpec, Rescale};
    use approx::assert_abs_diff_eq;

    fn solver(n: usize, dim: usize, alpha: f64) -> FemSolver {
        let spec = FieldSpec {
            rescale: Rescale::Fixed(1.0),
            ..FieldSpec::new(alpha, dim)
        };
        FemSolver::new(Mesh::new(n).unwrap(), Field::new(spec).unwrap())
    }

    fn zeros(n: usize) -> Vec<f64> {
        vec![0.0; n]
    }

    #[test]
    fn mesh_basics() {
        assert!(Mesh::new(2).is_err());
        let mesh = Mesh::new(5).unwrap();
        assert_eq!(mesh.h(), 0.25);
        assert_eq!(mesh.interior(), 3);
        assert_eq!(mesh.node(4), 1.0);
    }

    #[test]
    fn stiffness_at_zero_coefficient_is_laplacian_stencil() {
        let s = solver(9, 4, 2.0);
        let a = s.assemble_stiffness(&zeros(4)).unwrap();
        let h = s.mesh().h();
        for d in &a.diag {
            assert_abs_diff_eq!(*d, 2.0 / h, epsilon = 1e-12);
        }
        for o in &a.off {
            assert_abs_diff_eq!(*o, -1.0 / h, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_coefficient_factors_out() {
        // kappa = c constant: basis value at dimension 1 varies in x, so use
        // a custom constant mode instead.
        struct ConstMode;
        impl crate::field::KappaBasis for ConstMode {
            fn mode(&self, j: usize, _x: f64) -> f64 {
                if j == 1 {
                    1.0
                } else {
                    0.0
                }
            }
        }
        let spec = FieldSpec {
            rescale: Rescale::Fixed(1.0),
            ..FieldSpec::new(1.0, 2)
        };
        let field = Field::with_basis(spec, std::sync::Arc::new(ConstMode), 101).unwrap();
        let s = FemSolver::new(Mesh::new(7).unwrap(), field);
        let c = 0.37;
        let a = s.assemble_stiffness(&[c, 0.0]).unwrap();
        let a0 = s.assemble_stiffness(&[0.0, 0.0]).unwrap();
        for (x, y) in a.diag.iter().zip(&a0.diag) {
            assert_abs_diff_eq!(*x, c.exp() * y, epsilon = 1e-12);
        }
        for (x, y) in a.off.iter().zip(&a0.off) {
            assert_abs_diff_eq!(*x, c.exp() * y, epsilon = 1e-12);
        }
    }

    #[test]
    fn mass_matrix_values() {
        let s = solver(5, 2, 2.0);
        let m = s.assemble_mass();
        assert_abs_diff_eq!(m.diag[0], 4.0 * 0.25 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.off[0], 0.25 / 6.0, epsilon = 1e-15);
        // interior row sum = h (partition of unity against constants)
        let row_sum = m.off[0] + m.diag[1] + m.off[1];
        assert_abs_diff_eq!(row_sum, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn overflow_guard_trips() {
        let s = solver(9, 2, 1.0);
        let err = s.assemble_stiffness(&[5000.0, 0.0]);
        assert!(matches!(err, Err(PdeError::CoefficientOverflow { .. })));
        let err = s.assemble_stiffness(&[f64::NAN, 0.0]);
        assert!(matches!(err, Err(PdeError::CoefficientOverflow { .. })));
    }

    #[test]
    fn manufactured_state_solution() {
        // -u'' = pi^2 sin(pi x) with kappa = 0 has u = sin(pi x).
        let s = solver(65, 2, 2.0);
        let f: Vec<f64> = s.mesh().nodes().map(|x| PI * PI * (PI * x).sin()).collect();
        let u = s.solve_state(&zeros(2), &f, &zeros(65)).unwrap();
        let mut max_err = 0.0f64;
        for (i, ui) in u.iter().enumerate() {
            let exact = (PI * s.mesh().node(i + 1)).sin();
            max_err = max_err.max((ui - exact).abs());
        }
        assert!(max_err < 2e-3, "max nodal error {max_err}");
    }

    #[test]
    fn state_solve_order_two() {
        let l2_err = |n: usize| {
            let s = solver(n, 2, 2.0);
            let f: Vec<f64> = s.mesh().nodes().map(|x| PI * PI * (PI * x).sin()).collect();
            let u = s.solve_state(&zeros(2), &f, &zeros(n)).unwrap();
            let diff: Vec<f64> = std::iter::once(0.0)
                .chain(
                    u.iter()
                        .enumerate()
                        .map(|(i, ui)| ui - (PI * s.mesh().node(i + 1)).sin()),
                )
                .chain(std::iter::once(0.0))
                .collect();
            s.l2_norm_nodal(&diff)
        };
        let ratio = l2_err(17) / l2_err(33);
        assert!((ratio - 4.0).abs() < 0.5, "refinement ratio {ratio}");
    }

    #[test]
    fn state_solve_is_linear_in_data() {
        let s = solver(33, 3, 2.0);
        let y = [0.3, -0.2, 0.1];
        let f1: Vec<f64> = s.mesh().nodes().map(|x| x * (1.0 - x)).collect();
        let f2: Vec<f64> = s.mesh().nodes().map(|x| (2.0 * PI * x).sin()).collect();
        let sum: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        let u1 = s.solve_state(&y, &f1, &zeros(33)).unwrap();
        let u2 = s.solve_state(&y, &f2, &zeros(33)).unwrap();
        let u12 = s.solve_state(&y, &sum, &zeros(33)).unwrap();
        for i in 0..u12.len() {
            assert_abs_diff_eq!(u12[i], u1[i] + u2[i], epsilon = 1e-12);
        }
        let u0 = s.solve_state(&y, &zeros(33), &zeros(33)).unwrap();
        assert!(u0.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn attainable_data_gives_zero_adjoint() {
        let s = solver(33, 3, 2.0);
        let y = [0.5, -0.3, 0.2];
        let f: Vec<f64> = s.mesh().nodes().map(|x| PI * PI * (PI * x).sin()).collect();
        let ud = extend_with_boundary(&s.solve_state(&y, &f, &zeros(33)).unwrap());
        let w = s.solve_optimality(&y, &f, &ud, 1e-3).unwrap();
        let ud_norm = s.l2_norm_nodal(&ud);
        let v_norm = s.l2_norm_nodal(&w.adjoint_full());
        assert!(v_norm <= 1e-10 * ud_norm, "v norm {v_norm}");
        let diff: Vec<f64> = w.state_full().iter().zip(&ud).map(|(a, b)| a - b).collect();
        assert!(s.l2_norm_nodal(&diff) <= 1e-10 * ud_norm);
    }

    #[test]
    fn small_beta_recovers_generating_control() {
        // Data generated by z_d = sin(pi x) at kappa = 0 and f = 0; at small
        // beta the recovered control approaches z_d. A dense LU on the
        // unscaled block system is the independent oracle.
        let n = 65;
        let s = solver(n, 2, 2.0);
        let zd = sin_pi_nodal(s.mesh());
        let ud = extend_with_boundary(&s.solve_state(&zeros(2), &zeros(n), &zd).unwrap());
        let beta = 1e-4;
        let w = s.solve_optimality(&zeros(2), &zeros(n), &ud, beta).unwrap();

        let z = w.control_full(beta);
        let diff: Vec<f64> = z.iter().zip(&zd).map(|(a, b)| a - b).collect();
        let rel = s.l2_norm_nodal(&diff) / s.l2_norm_nodal(&zd);
        assert!(rel <= 0.05, "relative control error {rel}");

        // dense oracle on [beta A, M; -M, A]
        let m = s.mesh().interior();
        let a = s.assemble_stiffness(&zeros(2)).unwrap();
        let mm = s.assemble_mass();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(2 * m, 2 * m);
        for i in 0..m {
            for j in 0..m {
                let (a_ij, m_ij) = if i == j {
                    (a.diag[i], mm.diag[i])
                } else if j == i + 1 {
                    (a.off[i], mm.off[i])
                } else if i == j + 1 {
                    (a.off[j], mm.off[j])
                } else {
                    (0.0, 0.0)
                };
                dense[(i, j)] = beta * a_ij;
                dense[(i, j + m)] = m_ij;
                dense[(i + m, j)] = -m_ij;
                dense[(i + m, j + m)] = a_ij;
            }
        }
        let mud = s.mass_apply_full(&ud).unwrap();
        let mut rhs = nalgebra::DVector::zeros(2 * m);
        for i in 0..m {
            rhs[i + m] = -mud[i];
        }
        let x = dense.lu().solve(&rhs).expect("dense oracle solve");
        for i in 0..m {
            assert_abs_diff_eq!(w.u[i], x[i], epsilon = 1e-9);
            assert_abs_diff_eq!(w.v[i], x[i + m], epsilon = 1e-9);
        }
    }

    #[test]
    fn optimality_residual_is_small() {
        let s = solver(33, 3, 1.0);
        let y = [1.2, -0.7, 0.4];
        let f: Vec<f64> = s.mesh().nodes().map(|x| (PI * x).sin()).collect();
        let ud: Vec<f64> = s.mesh().nodes().map(|x| x * (1.0 - x)).collect();
        let beta = 1e-4;
        let w = s.solve_optimality(&y, &f, &ud, beta).unwrap();

        let block = s.block_system(&y, beta).unwrap();
        let m = s.mesh().interior();
        let mut x = vec![0.0; 2 * m];
        for i in 0..m {
            x[2 * i] = w.u[i];
            x[2 * i + 1] = w.v[i];
        }
        let mf = s.mass_apply_full(&f).unwrap();
        let mud = s.mass_apply_full(&ud).unwrap();
        let mut rhs = vec![0.0; 2 * m];
        for i in 0..m {
            rhs[2 * i] = beta * mf[i];
            rhs[2 * i + 1] = -mud[i];
        }
        let ax = block.matvec(&x);
        let rhs_norm = rhs.iter().map(|r| r * r).sum::<f64>().sqrt();
        let res_norm = ax
            .iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(res_norm <= 1e-10 * rhs_norm, "residual {res_norm}");
    }

    #[test]
    fn block_operator_quadratic_form_has_no_skew_part() {
        // p^T T p = beta u^T A u + v^T A v: the mass coupling cancels.
        let s = solver(17, 2, 2.0);
        let y = [0.4, -0.1];
        let beta = 1e-2;
        let block = s.block_system(&y, beta).unwrap();
        let a = s.assemble_stiffness(&y).unwrap();
        let m = s.mesh().interior();
        let u: Vec<f64> = (0..m).map(|i| ((i * 7 + 1) as f64).sin()).collect();
        let v: Vec<f64> = (0..m).map(|i| ((i * 3 + 2) as f64).cos()).collect();
        let mut p = vec![0.0; 2 * m];
        for i in 0..m {
            p[2 * i] = u[i];
            p[2 * i + 1] = v[i];
        }
        let tp = block.matvec(&p);
        let lhs: f64 = p.iter().zip(&tp).map(|(a, b)| a * b).sum();
        let au = a.matvec(&u);
        let av = a.matvec(&v);
        let rhs = beta * u.iter().zip(&au).map(|(a, b)| a * b).sum::<f64>()
            + v.iter().zip(&av).map(|(a, b)| a * b).sum::<f64>();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10 * rhs.abs().max(1.0));
    }

    #[test]
    fn w_norm_examples() {
        let mesh = Mesh::new(3).unwrap();
        let zero = StateAdjointPair {
            u: vec![0.0],
            v: vec![0.0],
            mesh,
        };
        assert_eq!(zero.w_norm(1.0), 0.0);

        let hat = StateAdjointPair {
            u: vec![1.0],
            v: vec![0.0],
            mesh,
        };
        assert_abs_diff_eq!(hat.w_norm(1.0), 2.0, epsilon = 1e-14);

        // homogeneity
        let scaled = StateAdjointPair {
            u: vec![-2.5],
            v: vec![0.0],
            mesh,
        };
        assert_abs_diff_eq!(scaled.w_norm(1.0), 2.5 * 2.0, epsilon = 1e-13);
    }

    #[test]
    fn apriori_bound_holds() {
        let s = solver(33, 3, 2.0);
        let beta = 1.0;
        // trivial instance
        let w0 = s
            .solve_optimality(&zeros(3), &zeros(33), &zeros(33), beta)
            .unwrap();
        assert!(s
            .apriori_bound_check(&w0, &zeros(3), &zeros(33), &zeros(33), beta)
            .unwrap());
        assert_eq!(w0.w_norm(beta), 0.0);

        // kappa = 0, f = pi^2 sin(pi x), u_d = 0: right side is pi/sqrt(2)
        let f: Vec<f64> = s.mesh().nodes().map(|x| PI * PI * (PI * x).sin()).collect();
        let w = s.solve_optimality(&zeros(3), &f, &zeros(33), beta).unwrap();
        let rhs_bound = POINCARE_CONSTANT * s.l2_norm_nodal(&f);
        assert!((rhs_bound - PI / 2.0f64.sqrt()).abs() < 0.01);
        assert!(w.w_norm(beta) <= rhs_bound);
        assert!(s
            .apriori_bound_check(&w, &zeros(3), &f, &zeros(33), beta)
            .unwrap());

        // generic solved instance
        let y = [0.8, -0.5, 0.3];
        let ud: Vec<f64> = s.mesh().nodes().map(|x| x * x * (1.0 - x)).collect();
        let beta = 1e-3;
        let w = s.solve_optimality(&y, &f, &ud, beta).unwrap();
        assert!(s.apriori_bound_check(&w, &y, &f, &ud, beta).unwrap());
    }

    #[test]
    fn control_norm_monotone_in_beta() {
        let s = solver(33, 3, 2.0);
        let y = [0.9, 0.2, -0.4];
        let ud: Vec<f64> = s.mesh().nodes().map(|x| (PI * x).sin() * 0.7).collect();
        let norms: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&beta| {
                let w = s.solve_optimality(&y, &zeros(33), &ud, beta).unwrap();
                s.l2_norm_nodal(&w.control_full(beta))
            })
            .collect();
        // beta decreasing along the list, so control norms must not decrease
        assert!(norms[0] <= norms[1] + 1e-12);
        assert!(norms[1] <= norms[2] + 1e-12);
    }

    #[test]
    fn solves_are_bitwise_deterministic() {
        let s = solver(65, 4, 2.0);
        let y = [0.3, 1.1, -0.8, 0.05];
        let f: Vec<f64> = s.mesh().nodes().map(|x| (3.0 * x).cos()).collect();
        let ud: Vec<f64> = s
            .mesh()
            .nodes()
            .map(|x| x * (1.0 - x) * (1.0 + x))
            .collect();
        let w1 = s.solve_optimality(&y, &f, &ud, 1e-4).unwrap();
        let w2 = s.solve_optimality(&y, &f, &ud, 1e-4).unwrap();
        for (a, b) in w1.u.iter().zip(&w2.u).chain(w1.v.iter().zip(&w2.v)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn synthetic_data_shape() {
        let s = solver(33, 2, 2.0);
        let zd = sin_pi_nodal(s.mesh());
        let ud = extend_with_boundary(&s.solve_state(&zeros(2), &zeros(33), &zd).unwrap());
        let n = s.mesh().n();
        assert_eq!(ud[0], 0.0);
        assert_eq!(ud[n - 1], 0.0);
        // symmetric about x = 1/2
        for i in 0..n {
            assert_abs_diff_eq!(ud[i], ud[n - 1 - i], epsilon = 1e-12);
        }
        // maximum at the midnode
        let mid = (n - 1) / 2;
        assert!(ud.iter().all(|&v| v <= ud[mid] + 1e-15));
    }
}
