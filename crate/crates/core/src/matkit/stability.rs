use std::fmt;

use serde::Serialize;

use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Width of the indeterminate band above one for the spectral-radius rate.
pub const INDETERMINATE_MARGIN: f64 = 1e-6;
/// Maximum number of squarings; `2^64` steps of decay.
pub const MAX_SQUARINGS: u32 = 64;
/// Power norms beyond this are treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Stable,
    Unstable,
    /// Neither decay nor growth resolved within [`MAX_SQUARINGS`].
    Marginal,
}

/// Witness produced by repeated squaring of a square matrix `M`.
///
/// `exponent` is the `j` at which the verdict was reached and `norm` is
/// `‖M^(2^j)‖_F` there. `rho_upper` and `rho_lower` bracket the spectral
/// radius: the upper bound is the smallest `‖M^n‖_F^(1/n)` seen, the lower
/// bound the largest `(|tr M^n| / d)^(1/n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityCertificate {
    pub verdict: Stability,
    pub exponent: u32,
    pub norm: f64,
    pub rho_upper: f64,
    pub rho_lower: f64,
}

impl StabilityCertificate {
    pub fn is_stable(&self) -> bool {
        self.verdict == Stability::Stable
    }

    /// Number of steps `2^exponent` after which the witnessed norm was reached.
    pub fn horizon(&self) -> f64 {
        2f64.powi(self.exponent as i32)
    }
}

impl fmt::Display for StabilityCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} after 2^{} steps: power norm {:e}, spectral radius in [{:.6}, {:.6}]",
            self.verdict, self.exponent, self.norm, self.rho_lower, self.rho_upper
        )
    }
}

/// Running spectral-radius bounds over successive squarings.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PowerBounds {
    dim: f64,
    pub rho_upper: f64,
    pub rho_lower: f64,
}

impl PowerBounds {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim as f64, rho_upper: f64::INFINITY, rho_lower: 0.0 }
    }

    /// Folds in `M^(2^j)` with Frobenius norm `norm`; returns `Some(verdict)`
    /// once instability is certain.
    pub fn observe<T: Scalar>(&mut self, j: u32, power: &Matrix<T>, norm: f64) -> Option<Stability> {
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            self.rho_lower = self.rho_lower.max(1.0 + INDETERMINATE_MARGIN);
            return Some(Stability::Unstable);
        }
        let steps = 2f64.powi(j as i32);
        self.rho_upper = if norm == 0.0 { 0.0 } else { self.rho_upper.min((norm.ln() / steps).exp()) };
        let tr = power.trace().as_f64().abs();
        if tr > 0.0 {
            self.rho_lower = self.rho_lower.max(((tr.ln() - self.dim.ln()) / steps).exp());
        }
        (self.rho_lower >= 1.0 + INDETERMINATE_MARGIN).then_some(Stability::Unstable)
    }

    pub fn certificate(&self, verdict: Stability, exponent: u32, norm: f64) -> StabilityCertificate {
        StabilityCertificate {
            verdict,
            exponent,
            norm,
            rho_upper: self.rho_upper,
            rho_lower: self.rho_lower.min(self.rho_upper),
        }
    }
}

/// Decides whether the spectral radius of `m` is below one by repeated
/// squaring.
///
/// Stable once `‖m^(2^j)‖_F < tol` for some `j` (any power norm below one
/// bounds the spectral radius below one). Unstable once the trace lower
/// bound on the spectral radius clears `1 + INDETERMINATE_MARGIN` or the
/// power norm exceeds [`DIVERGENCE_NORM`]. Anything else after
/// [`MAX_SQUARINGS`] squarings is reported as unstable when the norm rate
/// is still at least `1 + INDETERMINATE_MARGIN`, and marginal otherwise.
pub fn is_stable<T: Scalar>(m: &Matrix<T>, tol: T) -> Result<StabilityCertificate> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!("stability of a {:?} matrix", m.shape())));
    }
    m.check_finite("stability test input")?;
    if !(tol > T::zero() && tol <= T::one()) {
        return Err(Error::InvalidInput(format!("stability tolerance must lie in (0, 1], got {tol}")));
    }
    let mut bounds = PowerBounds::new(m.rows());
    let mut power = m.clone();
    for j in 0..=MAX_SQUARINGS {
        let norm = power.frobenius_norm().as_f64();
        if let Some(verdict) = bounds.observe(j, &power, norm) {
            return Ok(bounds.certificate(verdict, j, norm));
        }
        if norm < tol.as_f64() {
            return Ok(bounds.certificate(Stability::Stable, j, norm));
        }
        if j == MAX_SQUARINGS {
            let verdict = if bounds.rho_upper >= 1.0 + INDETERMINATE_MARGIN {
                Stability::Unstable
            } else {
                Stability::Marginal
            };
            return Ok(bounds.certificate(verdict, j, norm));
        }
        power = power.matmul(&power);
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_contraction_is_stable() {
        let c = is_stable(&Matrix::from_diag(&[0.5, 0.9]), 1e-12).unwrap();
        assert!(c.is_stable());
        assert!(c.rho_upper < 1.0 && c.rho_lower <= 0.9 + 1e-12);
    }

    #[test]
    fn scalar_radius_is_bracketed_exactly() {
        let c = is_stable(&Matrix::scalar(0.5), 1e-12).unwrap();
        assert!(c.is_stable());
        assert!((c.rho_upper - 0.5).abs() < 1e-12);
        assert!((c.rho_lower - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_is_marginal() {
        let c = is_stable(&Matrix::<f64>::identity(2), 1e-12).unwrap();
        assert_eq!(c.verdict, Stability::Marginal);
    }

    #[test]
    fn expansion_is_unstable() {
        let c = is_stable(&Matrix::from_diag(&[0.5, 1.01]), 1e-12).unwrap();
        assert_eq!(c.verdict, Stability::Unstable);
        assert!(c.rho_lower > 1.0);
    }

    #[test]
    fn nilpotent_with_large_entries_is_stable() {
        let m = Matrix::from_rows(&[[0.0, 0.0, 10.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let c = is_stable(&m, 1e-12).unwrap();
        assert!(c.is_stable());
        assert_eq!(c.rho_upper, 0.0);
    }

    #[test]
    fn rotation_outside_unit_circle_is_unstable() {
        // eigenvalues 1.1·e^{±iπ/2}: traces of odd powers vanish
        let m = Matrix::from_rows(&[[0.0, -1.1], [1.1, 0.0]]).unwrap();
        assert_eq!(is_stable(&m, 1e-12).unwrap().verdict, Stability::Unstable);
    }

    #[test]
    fn bad_tolerance_is_rejected() {
        assert!(is_stable(&Matrix::scalar(0.5), 0.0).is_err());
        assert!(is_stable(&Matrix::scalar(0.5), 2.0).is_err());
    }
}
