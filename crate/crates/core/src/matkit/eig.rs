use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues of a symmetric matrix in ascending order, by cyclic Jacobi
/// rotations.
///
/// The input must be symmetric to within `1e-12 * ‖m‖_F` (or sixteen ulps
/// for narrower scalars).
pub fn symmetric_eig<T: Scalar>(m: &Matrix<T>) -> Result<Vec<T>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!("eigenvalues of a {:?} matrix", m.shape())));
    }
    m.check_finite("symmetric eigenproblem input")?;
    let scale = m.frobenius_norm();
    let sym_tol = T::lit(1e-12).max(T::epsilon() * T::lit(16.0)) * scale;
    if m.asymmetry() > sym_tol {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (asymmetry {:e}, tolerance {:e})",
            m.asymmetry().as_f64(),
            sym_tol.as_f64()
        )));
    }
    let mut eig = jacobi_eigenvalues(m.symmetrize());
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(eig)
}

/// Smallest eigenvalue of a symmetric matrix (σ_min when PSD).
pub fn min_eig<T: Scalar>(m: &Matrix<T>) -> Result<T> {
    Ok(symmetric_eig(m)?[0])
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eig<T: Scalar>(m: &Matrix<T>) -> Result<T> {
    Ok(*symmetric_eig(m)?.last().unwrap())
}

/// Largest singular value, as the square root of the top eigenvalue of the
/// smaller Gram matrix.
pub fn spectral_norm<T: Scalar>(m: &Matrix<T>) -> Result<T> {
    if m.is_empty() {
        return Err(Error::InvalidInput("spectral norm of an empty matrix".into()));
    }
    m.check_finite("spectral norm input")?;
    let gram = if m.rows() >= m.cols() { m.t_matmul(m) } else { m.matmul_t(m) };
    let eig = jacobi_eigenvalues(gram.symmetrize());
    let top = eig.into_iter().fold(T::zero(), T::max);
    Ok(top.sqrt())
}

fn jacobi_eigenvalues<T: Scalar>(mut a: Matrix<T>) -> Vec<T> {
    let n = a.rows();
    let frob = a.frobenius_norm();
    if frob == T::zero() {
        return vec![T::zero(); n];
    }
    let stop = T::epsilon() * frob;
    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (apq + apq);
                let t = if theta.abs() > T::lit(1e150).min(T::max_value().sqrt()) {
                    T::one() / (theta + theta)
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_examples() {
        assert!((spectral_norm(&Matrix::<f64>::identity(3)).unwrap() - 1.0).abs() < 1e-14);
        assert!((spectral_norm(&Matrix::<f64>::from_diag(&[2.0, -5.0])).unwrap() - 5.0).abs() < 1e-14);
        // MᵀM = diag(0, 9) by hand.
        let m = Matrix::from_rows(&[[0.0, 3.0], [0.0, 0.0]]).unwrap();
        assert!((spectral_norm::<f64>(&m).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn spectral_norm_rejects_non_finite() {
        let m = Matrix::from_rows(&[[f64::NAN, 0.0]]).unwrap();
        assert!(matches!(spectral_norm(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn eig_examples() {
        assert_eq!(symmetric_eig(&Matrix::from_diag(&[1.0, 2.0, 3.0])).unwrap(), vec![1.0, 2.0, 3.0]);
        // det([[2-λ,1],[1,2-λ]]) = (λ-1)(λ-3)
        let e = symmetric_eig(&Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap()).unwrap();
        assert!((e[0] - 1.0f64).abs() < 1e-14 && (e[1] - 3.0f64).abs() < 1e-14);
        assert_eq!(symmetric_eig(&Matrix::<f64>::zeros(2, 2)).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(symmetric_eig(&m), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn works_in_single_precision() {
        let m = Matrix::<f32>::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let e = symmetric_eig(&m).unwrap();
        assert!((e[1] - 3.0).abs() < 1e-5);
    }
}
