//! Values living in the result space of an integrand.
//!
//! Quadrature combines integrand evaluations linearly, so the only structure
//! required of a result is scaling and scaled addition. Scalars cover
//! point functionals, `Vec<f64>` covers field-valued targets (a control
//! curve, or a concatenated state/adjoint pair).

/// A value that can be linearly combined by quadrature operators.
pub trait QuadValue: Clone {
    /// `self += coeff * other`. Both operands must have the same shape.
    fn add_scaled(&mut self, coeff: f64, other: &Self);

    /// `self *= coeff`.
    fn scale(&mut self, coeff: f64);
}

impl QuadValue for f64 {
    fn add_scaled(&mut self, coeff: f64, other: &Self) {
        *self += coeff * other;
    }

    fn scale(&mut self, coeff: f64) {
        *self *= coeff;
    }
}

impl QuadValue for Vec<f64> {
    fn add_scaled(&mut self, coeff: f64, other: &Self) {
        assert_eq!(self.len(), other.len(), "shape mismatch in add_scaled");
        for (a, b) in self.iter_mut().zip(other) {
            *a += coeff * b;
        }
    }

    fn scale(&mut self, coeff: f64) {
        for a in self.iter_mut() {
            *a *= coeff;
        }
    }
}
