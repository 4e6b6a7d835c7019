//! Ground-truth optimum from the discrete algebraic Riccati equation.

use crate::error::{Error, Result};
use crate::lqr::{LqrProblem, Policy};
use crate::matkit::{self, Matrix, DIVERGENCE_NORM};
use crate::scalar::Scalar;

pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone)]
pub struct RiccatiSolution<T> {
    pub p_star: Matrix<T>,
    /// `K* = (R + BᵀP*B)⁻¹ BᵀP*A`, so that `u = -K*x` is optimal.
    pub k_star: Policy<T>,
    /// `Tr(P* Σ0)`.
    pub opt_cost: T,
    pub iterations: usize,
    /// `‖P* - ric(P*)‖_F / ‖P*‖_F`.
    pub residual: T,
}

/// One application of the Riccati map
/// `Q + AᵀPA - AᵀPB (R + BᵀPB)⁻¹ BᵀPA`, plus the greedy gain.
fn riccati_map<T: Scalar>(problem: &LqrProblem<T>, p: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let (a, b) = (problem.a(), problem.b());
    let bp = b.t_matmul(p);
    let bpa = bp.matmul(a);
    let gain = (problem.r() + &bp.matmul(b)).inverse()?.matmul(&bpa);
    let next = &(problem.q() + &a.t_matmul(&p.matmul(a))) - &bpa.t_matmul(&gain);
    Ok((next.symmetrize(), gain))
}

/// Runs the recursion `P_{k+1} = ric(P_k)` from `P_1 = Q` until the relative
/// change drops to `tol`.
///
/// Fails with [`Error::NotConverged`] when the budget runs out or the
/// iterates blow up, which is how non-stabilizable instances show up.
pub fn solve_dare<T: Scalar>(problem: &LqrProblem<T>, tol: T, max_iter: usize) -> Result<RiccatiSolution<T>> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidInput(format!("Riccati tolerance must be positive, got {tol}")));
    }
    let mut p = problem.q().clone();
    let mut change = T::infinity();
    for it in 1..=max_iter {
        let (next, _) = riccati_map(problem, &p)?;
        let scale = next.frobenius_norm();
        if !next.is_finite() || scale.as_f64() > DIVERGENCE_NORM {
            return Err(Error::NotConverged { iterations: it, change: f64::INFINITY });
        }
        change = (&next - &p).frobenius_norm() / p.frobenius_norm();
        p = next;
        if change <= tol {
            return finish(problem, p, it);
        }
    }
    Err(Error::NotConverged { iterations: max_iter, change: change.as_f64() })
}

pub fn solve_dare_default<T: Scalar>(problem: &LqrProblem<T>) -> Result<RiccatiSolution<T>> {
    solve_dare(problem, T::default_tol(), DEFAULT_MAX_ITER)
}

fn finish<T: Scalar>(problem: &LqrProblem<T>, p_star: Matrix<T>, iterations: usize) -> Result<RiccatiSolution<T>> {
    let (image, gain) = riccati_map(problem, &p_star)?;
    let residual = (&p_star - &image).frobenius_norm() / p_star.frobenius_norm();
    let k_star = Policy::new(gain);
    let cert = matkit::is_stable(&problem.closed_loop(&k_star), T::lit(1e-12).max(T::epsilon()))?;
    if !cert.is_stable() {
        return Err(Error::UnstablePolicy(cert));
    }
    let opt_cost = p_star.frobenius_dot(problem.sigma0());
    Ok(RiccatiSolution { p_star, k_star, opt_cost, iterations, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqr::{evaluate, InitialStateModel};

    fn problem(a: Matrix<f64>, b: Matrix<f64>) -> LqrProblem<f64> {
        let d = a.rows();
        let k = b.cols();
        let init = InitialStateModel::fixed_covariance(Matrix::identity(d)).unwrap();
        LqrProblem::new(a, b, Matrix::identity(d), Matrix::identity(k), init).unwrap()
    }

    #[test]
    fn zero_dynamics() {
        let p = problem(Matrix::zeros(2, 2), Matrix::identity(2));
        let sol = solve_dare_default(&p).unwrap();
        assert_eq!(sol.p_star, Matrix::identity(2));
        assert_eq!(sol.k_star.gain().max_abs(), 0.0);
        assert!((sol.opt_cost - 2.0).abs() < 1e-14);
    }

    #[test]
    fn scalar_root_by_hand() {
        // p² - 0.25p - 1 = 0
        let sol = solve_dare_default(&problem(Matrix::scalar(0.5), Matrix::scalar(1.0))).unwrap();
        let p = (0.25 + 4.0625f64.sqrt()) / 2.0;
        assert!((sol.p_star[(0, 0)] - p).abs() < 1e-11);
        assert!((sol.k_star.gain()[(0, 0)] - 0.5 * p / (1.0 + p)).abs() < 1e-11);
        assert!((sol.k_star.gain()[(0, 0)] - 0.2655644).abs() < 1e-7);
        assert!(sol.residual <= 1e-12);
    }

    #[test]
    fn uncontrolled_stable_plant() {
        let a = Matrix::from_rows(&[[0.5, 0.2], [0.0, -0.3]]).unwrap();
        let p = problem(a.clone(), Matrix::zeros(2, 1));
        let sol = solve_dare_default(&p).unwrap();
        assert_eq!(sol.k_star.gain().max_abs(), 0.0);
        let lyap = matkit::solve_lyapunov_dual(&a, &Matrix::identity(2), matkit::LyapunovSide::TransposeInside, 1e-14)
            .unwrap();
        assert!((&sol.p_star - &lyap).max_abs() < 1e-10);
    }

    #[test]
    fn optimal_gain_zeroes_e() {
        let a = Matrix::from_rows(&[[1.1, 0.4], [-0.3, 0.9]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [0.5]]).unwrap();
        let p = problem(a, b);
        let sol = solve_dare_default(&p).unwrap();
        let eval = evaluate(&p, &sol.k_star).unwrap();
        assert!(eval.e.frobenius_norm() <= 1e-8);
        assert!((&eval.p - &sol.p_star).frobenius_norm() <= 1e-8 * sol.p_star.frobenius_norm());
        assert!((eval.cost - sol.opt_cost).abs() <= 1e-8 * sol.opt_cost);
    }

    #[test]
    fn non_stabilizable_fails() {
        let p = problem(Matrix::identity(2).scale(2.0), Matrix::zeros(2, 1));
        assert!(matches!(solve_dare_default(&p), Err(Error::NotConverged { .. })));
    }
}
