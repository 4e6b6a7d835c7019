use super::stability::{PowerBounds, Stability, StabilityCertificate, MAX_SQUARINGS};
use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Where the transpose sits in the fixed-point map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LyapunovSide {
    /// `X = X0 + M X Mᵀ` (state covariance).
    TransposeOutside,
    /// `X = X0 + Mᵀ X M` (value matrix).
    TransposeInside,
}

/// Solves the discrete Lyapunov fixed point `X = x0 + m∘X` by doubling.
///
/// See [`solve_lyapunov_with_certificate`].
pub fn solve_lyapunov_dual<T: Scalar>(
    m: &Matrix<T>,
    x0: &Matrix<T>,
    side: LyapunovSide,
    tol: T,
) -> Result<Matrix<T>> {
    solve_lyapunov_with_certificate(m, x0, side, tol).map(|(x, _)| x)
}

/// Doubling recursion `X_{j+1} = X_j + N_j X_j N_jᵀ`, `N_{j+1} = N_j²` with
/// `N_0 = m` or `mᵀ`.
///
/// After step `j` the iterate is the partial sum over `2^(j+1)` powers and
/// the residual `‖X − x0 − m∘X‖_F` equals `‖N_{j+1} x0 N_{j+1}ᵀ‖_F ≤
/// ‖N_{j+1}‖_F² ‖X‖_F`, so the loop stops as soon as `‖N_{j+1}‖_F² ≤ tol`.
/// The squared powers double as the stability test; an unstable or
/// marginal `m` yields [`Error::UnstablePolicy`] with the certificate.
pub fn solve_lyapunov_with_certificate<T: Scalar>(
    m: &Matrix<T>,
    x0: &Matrix<T>,
    side: LyapunovSide,
    tol: T,
) -> Result<(Matrix<T>, StabilityCertificate)> {
    if !m.is_square() || x0.shape() != m.shape() {
        return Err(Error::DimensionMismatch(format!(
            "Lyapunov map {:?} with constant term {:?}",
            m.shape(),
            x0.shape()
        )));
    }
    m.check_finite("Lyapunov map")?;
    x0.check_finite("Lyapunov constant term")?;
    if !(tol > T::zero() && tol < T::one()) {
        return Err(Error::InvalidInput(format!("Lyapunov tolerance must lie in (0, 1), got {tol}")));
    }
    let sym_tol = T::lit(1e-12).max(T::epsilon() * T::lit(16.0)) * x0.frobenius_norm();
    if x0.asymmetry() > sym_tol {
        return Err(Error::InvalidInput("Lyapunov constant term is not symmetric".into()));
    }

    let mut power = match side {
        LyapunovSide::TransposeOutside => m.clone(),
        LyapunovSide::TransposeInside => m.transpose(),
    };
    let mut x = x0.clone();
    let mut bounds = PowerBounds::new(m.rows());
    let mut norm = power.frobenius_norm().as_f64();
    for j in 0..MAX_SQUARINGS {
        if let Some(verdict) = bounds.observe(j, &power, norm) {
            return Err(Error::UnstablePolicy(bounds.certificate(verdict, j, norm)));
        }
        let incr = power.matmul(&x).matmul_t(&power);
        x += &incr;
        if !x.is_finite() {
            return Err(Error::UnstablePolicy(bounds.certificate(Stability::Unstable, j, norm)));
        }
        power = power.matmul(&power);
        norm = power.frobenius_norm().as_f64();
        if norm * norm <= tol.as_f64() {
            bounds.observe(j + 1, &power, norm);
            let cert = bounds.certificate(Stability::Stable, j + 1, norm);
            return Ok((x.symmetrize(), cert));
        }
    }
    let verdict = if bounds.rho_upper >= 1.0 + super::INDETERMINATE_MARGIN {
        Stability::Unstable
    } else {
        Stability::Marginal
    };
    Err(Error::UnstablePolicy(bounds.certificate(verdict, MAX_SQUARINGS, norm)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(m: &Matrix<f64>, x0: &Matrix<f64>, x: &Matrix<f64>, side: LyapunovSide) -> f64 {
        let mapped = match side {
            LyapunovSide::TransposeOutside => m.matmul(x).matmul_t(m),
            LyapunovSide::TransposeInside => m.t_matmul(x).matmul(m),
        };
        (&(x - x0) - &mapped).frobenius_norm()
    }

    #[test]
    fn zero_map_returns_constant() {
        let q = Matrix::from_rows(&[[2.0, 0.5], [0.5, 1.0]]).unwrap();
        let x = solve_lyapunov_dual(&Matrix::zeros(2, 2), &q, LyapunovSide::TransposeInside, 1e-12).unwrap();
        assert_eq!(x, q);
    }

    #[test]
    fn scalar_geometric_series() {
        let x = solve_lyapunov_dual(&Matrix::scalar(0.5), &Matrix::scalar(1.0), LyapunovSide::TransposeInside, 1e-12)
            .unwrap();
        assert!((x[(0, 0)] - 4.0f64 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn decoupled_diagonal() {
        let m = Matrix::from_diag(&[0.5, 0.0]);
        let x = solve_lyapunov_dual(&m, &Matrix::identity(2), LyapunovSide::TransposeOutside, 1e-12).unwrap();
        let expect = Matrix::from_diag(&[4.0 / 3.0, 1.0]);
        assert!((&x - &expect).max_abs() < 1e-14);
    }

    #[test]
    fn both_sides_meet_residual_bound() {
        let m = Matrix::from_rows(&[[0.6, 0.7, 0.0], [-0.2, 0.3, 0.4], [0.1, 0.0, -0.5]]).unwrap();
        let x0 = Matrix::from_rows(&[[1.0, 0.2, 0.0], [0.2, 2.0, 0.1], [0.0, 0.1, 0.5]]).unwrap();
        for side in [LyapunovSide::TransposeOutside, LyapunovSide::TransposeInside] {
            let x = solve_lyapunov_dual(&m, &x0, side, 1e-12).unwrap();
            assert!(residual(&m, &x0, &x, side) <= 1e-12 * x.frobenius_norm());
        }
    }

    #[test]
    fn unstable_map_carries_certificate() {
        let err = solve_lyapunov_dual(&Matrix::scalar(1.5), &Matrix::scalar(1.0), LyapunovSide::TransposeInside, 1e-12)
            .unwrap_err();
        match err {
            Error::UnstablePolicy(cert) => {
                assert_eq!(cert.verdict, Stability::Unstable);
                assert!(cert.rho_lower > 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn marginal_map_is_rejected() {
        let err = solve_lyapunov_dual(&Matrix::<f64>::identity(2), &Matrix::identity(2), LyapunovSide::TransposeOutside, 1e-12)
            .unwrap_err();
        assert!(matches!(err, Error::UnstablePolicy(c) if c.verdict != Stability::Stable));
    }
}
