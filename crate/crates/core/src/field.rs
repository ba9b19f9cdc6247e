//! Lognormal diffusion parametrization and the weight sequence behind the
//! a-priori error indicator.
//!
//! The log-diffusion is `kappa(x, y) = sum_j y_j kappa_j(x)` with the sine
//! modes `kappa_j(x) = j^{-alpha} sin(pi j x) / 2` of the experiments
//! hard-wired as the default basis; other bases plug in through
//! [`KappaBasis`]. The weight sequence is `rho_j = rescale * j^{alpha-1-eps}`,
//! optionally rescaled so that `K = sup_x sum_j rho_j |kappa_j(x)|` stays
//! below `ln 2 / sqrt(r)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::de::Visitor;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("decay exponent alpha must be >= 1, got {0}")]
    InvalidAlpha(f64),
    #[error("truncation dimension must be >= 1")]
    InvalidDimension,
    #[error("epsilon must be > 0, got {0}")]
    InvalidEpsilon(f64),
    #[error("differentiation order r must be >= 1")]
    InvalidOrder,
    #[error("rescale factor must be positive, got {0}")]
    InvalidRescale(f64),
    #[error("auto rescale needs at least 101 grid points, got {0}")]
    GridTooCoarse(usize),
    #[error("degenerate field: sup_x sum_j rho_j |kappa_j(x)| = 0")]
    DegenerateField,
}

/// Rescale policy for the weight sequence: an explicit factor, or automatic
/// calibration to the `K < ln 2 / sqrt(r)` budget.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Rescale {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for Rescale {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Rescale::Auto => serializer.serialize_str("auto"),
            Rescale::Fixed(value) => serializer.serialize_f64(*value),
        }
    }
}

impl<'de> Deserialize<'de> for Rescale {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct RescaleVisitor;

        impl Visitor<'_> for RescaleVisitor {
            type Value = Rescale;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(r#""auto" or a positive number"#)
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Rescale, E> {
                if v == "auto" {
                    Ok(Rescale::Auto)
                } else {
                    Err(E::custom(format!("unknown rescale policy {v:?}")))
                }
            }

            fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<Rescale, E> {
                Ok(Rescale::Fixed(v))
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Rescale, E> {
                Ok(Rescale::Fixed(v as f64))
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<Rescale, E> {
                Ok(Rescale::Fixed(v as f64))
            }
        }

        deserializer.deserialize_any(RescaleVisitor)
    }
}

/// Parameters of the lognormal field and its weight sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    /// Decay exponent alpha >= 1 of the sine modes.
    pub alpha: f64,
    /// Truncation dimension J.
    pub dim: usize,
    /// The eps in `rho_j = j^{alpha - 1 - eps}`.
    #[serde(default = "FieldSpec::default_epsilon")]
    pub epsilon: f64,
    /// Differentiation order r entering the indicator coefficients and the
    /// rescale budget `ln 2 / sqrt(r)`.
    #[serde(default = "FieldSpec::default_r")]
    pub r: u32,
    #[serde(default)]
    pub rescale: Rescale,
}

impl FieldSpec {
    fn default_epsilon() -> f64 {
        0.1
    }

    fn default_r() -> u32 {
        2
    }

    pub fn new(alpha: f64, dim: usize) -> Self {
        FieldSpec {
            alpha,
            dim,
            epsilon: Self::default_epsilon(),
            r: Self::default_r(),
            rescale: Rescale::Auto,
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.alpha.is_nan() || self.alpha < 1.0 {
            return Err(FieldError::InvalidAlpha(self.alpha));
        }
        if self.dim == 0 {
            return Err(FieldError::InvalidDimension);
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(FieldError::InvalidEpsilon(self.epsilon));
        }
        if self.r == 0 {
            return Err(FieldError::InvalidOrder);
        }
        if let Rescale::Fixed(value) = self.rescale {
            if !value.is_finite() || value <= 0.0 {
                return Err(FieldError::InvalidRescale(value));
            }
        }
        Ok(())
    }

    /// Default x-grid for sup estimates: fine enough to resolve the highest
    /// sine frequency, never below the 101-point floor.
    pub fn default_sup_grid(&self) -> usize {
        (10 * self.dim).max(101)
    }
}

/// The mode functions `kappa_j`.
pub trait KappaBasis: Send + Sync {
    /// `kappa_j(x)` for a 1-based dimension j.
    fn mode(&self, j: usize, x: f64) -> f64;
}

/// The sine parametrization `kappa_j(x) = j^{-alpha} sin(pi j x) / 2`.
#[derive(Clone, Debug)]
pub struct SineModes {
    pub alpha: f64,
}

impl KappaBasis for SineModes {
    fn mode(&self, j: usize, x: f64) -> f64 {
        (j as f64).powf(-self.alpha) * (PI * j as f64 * x).sin() / 2.0
    }
}

/// A field spec bound to a basis, with the rescale policy resolved to a
/// concrete factor. Immutable after construction.
#[derive(Clone)]
pub struct Field {
    spec: FieldSpec,
    rescale: f64,
    basis: Arc<dyn KappaBasis>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("spec", &self.spec)
            .field("rescale", &self.rescale)
            .finish()
    }
}

impl Field {
    /// Binds `spec` to the sine basis, resolving `rescale: auto` on the
    /// default sup grid.
    pub fn new(spec: FieldSpec) -> Result<Field, FieldError> {
        let grid = spec.default_sup_grid();
        let basis: Arc<dyn KappaBasis> = Arc::new(SineModes { alpha: spec.alpha });
        Field::with_basis(spec, basis, grid)
    }

    /// Binds `spec` to an arbitrary basis; `grid_points` is the x-grid used
    /// when the rescale policy is automatic.
    pub fn with_basis(
        spec: FieldSpec,
        basis: Arc<dyn KappaBasis>,
        grid_points: usize,
    ) -> Result<Field, FieldError> {
        spec.validate()?;
        let spec = match spec.rescale {
            Rescale::Fixed(_) => spec,
            Rescale::Auto => auto_rescale_with(&spec, basis.as_ref(), grid_points)?,
        };
        let rescale = match spec.rescale {
            Rescale::Fixed(value) => value,
            Rescale::Auto => unreachable!("auto policy resolved above"),
        };
        Ok(Field {
            spec,
            rescale,
            basis,
        })
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn rescale(&self) -> f64 {
        self.rescale
    }

    /// `kappa_j(x)`.
    pub fn mode(&self, j: usize, x: f64) -> f64 {
        self.basis.mode(j, x)
    }

    /// `kappa(x, y) = sum_{j <= J} y_j kappa_j(x)`. Zero components are
    /// skipped, so sparse quadrature nodes cost only per-support work.
    pub fn kappa(&self, x: f64, y: &[f64]) -> f64 {
        assert!(y.len() <= self.spec.dim, "parameter vector longer than J");
        y.iter()
            .enumerate()
            .filter(|(_, &yj)| yj != 0.0)
            .map(|(idx, &yj)| yj * self.basis.mode(idx + 1, x))
            .sum()
    }

    /// `rho_j = rescale * j^{alpha - 1 - eps}`.
    pub fn rho(&self, j: usize) -> f64 {
        assert!(j >= 1 && j <= self.spec.dim, "dimension out of range");
        self.rescale * unscaled_rho(&self.spec, j)
    }

    /// Grid estimate of `K = sup_x sum_{j <= J} rho_j |kappa_j(x)|` (with the
    /// resolved rescale applied).
    pub fn weighted_sup(&self, grid_points: usize) -> f64 {
        self.rescale * weighted_sup_unscaled(&self.spec, self.basis.as_ref(), grid_points)
    }

    /// Grid estimate of `sup_x |kappa(x, y)|`.
    pub fn kappa_sup(&self, y: &[f64], grid_points: usize) -> f64 {
        uniform_grid(grid_points)
            .map(|x| self.kappa(x, y).abs())
            .fold(0.0, f64::max)
    }
}

fn unscaled_rho(spec: &FieldSpec, j: usize) -> f64 {
    (j as f64).powf(spec.alpha - 1.0 - spec.epsilon)
}

fn uniform_grid(points: usize) -> impl Iterator<Item = f64> {
    let last = (points - 1).max(1) as f64;
    (0..points).map(move |i| i as f64 / last)
}

fn weighted_sup_unscaled(spec: &FieldSpec, basis: &dyn KappaBasis, grid_points: usize) -> f64 {
    uniform_grid(grid_points)
        .map(|x| {
            (1..=spec.dim)
                .map(|j| unscaled_rho(spec, j) * basis.mode(j, x).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Calibrates the rescale factor of the sine-basis field; see
/// [`auto_rescale_with`].
pub fn auto_rescale(spec: &FieldSpec, grid_points: usize) -> Result<FieldSpec, FieldError> {
    let basis = SineModes { alpha: spec.alpha };
    auto_rescale_with(spec, &basis, grid_points)
}

/// Estimates `K = sup_x sum_j rho_j |kappa_j(x)|` at `rescale = 1` on a
/// uniform x-grid and returns the spec with
/// `rescale = 0.99 * (ln 2 / sqrt(r)) / K`, so the rescaled sum satisfies
/// the strict budget `K < ln 2 / sqrt(r)`.
pub fn auto_rescale_with(
    spec: &FieldSpec,
    basis: &dyn KappaBasis,
    grid_points: usize,
) -> Result<FieldSpec, FieldError> {
    if grid_points < 101 {
        return Err(FieldError::GridTooCoarse(grid_points));
    }
    let unit_spec = FieldSpec {
        rescale: Rescale::Fixed(1.0),
        ..spec.clone()
    };
    unit_spec.validate()?;
    let k = weighted_sup_unscaled(&unit_spec, basis, grid_points);
    if k == 0.0 {
        return Err(FieldError::DegenerateField);
    }
    let budget = std::f64::consts::LN_2 / (spec.r as f64).sqrt();
    Ok(FieldSpec {
        rescale: Rescale::Fixed(0.99 * budget / k),
        ..spec.clone()
    })
}
