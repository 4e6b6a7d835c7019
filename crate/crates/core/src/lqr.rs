//! Problem definition and exact policy evaluation.
//!
//! For a gain `K` with stable closed loop `A - BK`:
//!
//! ```text
//! P_K = Q + KᵀRK + (A-BK)ᵀ P_K (A-BK)
//! Σ_K = Σ0 + (A-BK) Σ_K (A-BK)ᵀ
//! E_K = (R + BᵀP_K B) K - BᵀP_K A
//! ∇C(K) = 2 E_K Σ_K,   C(K) = Tr(P_K Σ0)
//! ```

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matkit::{self, spectral_norm, LyapunovSide, Matrix, StabilityCertificate};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Only the second moment is known; cannot be sampled.
    FixedCovariance,
    /// Uniform on `[-1, 1]^d`.
    Cube,
    /// Uniform on the sphere of a given radius.
    Sphere,
}

impl InitKind {
    pub fn name(self) -> &'static str {
        match self {
            InitKind::FixedCovariance => "fixed_covariance",
            InitKind::Cube => "cube",
            InitKind::Sphere => "sphere",
        }
    }
}

/// Distribution of the initial state `x0`, summarised by its second moment
/// `Σ0 = E[x0 x0ᵀ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialStateModel<T> {
    kind: InitKind,
    sigma0: Matrix<T>,
    radius: Option<T>,
    norm_bound: Option<T>,
    mu: T,
}

impl<T: Scalar> InitialStateModel<T> {
    /// Uniform on the cube `[-1, 1]^d`: `Σ0 = I/3`, `‖x0‖ ≤ √d`.
    pub fn cube(dim: usize) -> Self {
        let third = T::one() / T::lit(3.0);
        Self {
            kind: InitKind::Cube,
            sigma0: Matrix::identity(dim).scale(third),
            radius: None,
            norm_bound: Some(T::lit(dim as f64).sqrt()),
            mu: third,
        }
    }

    /// Uniform on the sphere of radius `radius`: `Σ0 = (ρ²/d) I`, `‖x0‖ = ρ`.
    pub fn sphere(dim: usize, radius: T) -> Result<Self> {
        if !(radius > T::zero() && radius.is_finite()) || dim == 0 {
            return Err(Error::InvalidInput(format!("sphere init needs dim > 0 and radius > 0, got {dim}, {radius}")));
        }
        let moment = radius * radius / T::lit(dim as f64);
        Ok(Self {
            kind: InitKind::Sphere,
            sigma0: Matrix::identity(dim).scale(moment),
            radius: Some(radius),
            norm_bound: Some(radius),
            mu: moment,
        })
    }

    /// Known second moment only; requires `sigma0` symmetric positive definite.
    pub fn fixed_covariance(sigma0: Matrix<T>) -> Result<Self> {
        sigma0.check_finite("sigma0")?;
        let mu = matkit::min_eig(&sigma0)?;
        if mu <= T::zero() {
            return Err(Error::InvalidInput(format!("sigma0 must be positive definite (sigma_min = {mu})")));
        }
        Ok(Self { kind: InitKind::FixedCovariance, sigma0: sigma0.symmetrize(), radius: None, norm_bound: None, mu })
    }

    pub fn kind(&self) -> InitKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.sigma0.rows()
    }

    /// `Σ0 = E[x0 x0ᵀ]`.
    pub fn sigma0(&self) -> &Matrix<T> {
        &self.sigma0
    }

    pub fn radius(&self) -> Option<T> {
        self.radius
    }

    /// Almost-sure bound `L` on `‖x0‖` for samplable kinds.
    pub fn norm_bound(&self) -> Option<T> {
        self.norm_bound
    }

    /// `μ = σ_min(Σ0)`.
    pub fn mu(&self) -> T {
        self.mu
    }

    /// `E‖x0‖² = Tr(Σ0)`.
    pub fn mean_sq_norm(&self) -> T {
        self.sigma0.trace()
    }
}

/// Norms and extreme eigenvalues of the problem data, computed once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants<T> {
    pub norm_a: T,
    pub norm_b: T,
    pub norm_q: T,
    pub norm_r: T,
    pub sigma_min_q: T,
    pub sigma_min_r: T,
    pub mu: T,
}

/// Plant `x_{t+1} = A x_t + B u_t`, stage cost `xᵀQx + uᵀRu`, and the
/// initial-state model.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrProblem<T> {
    a: Matrix<T>,
    b: Matrix<T>,
    q: Matrix<T>,
    r: Matrix<T>,
    init: InitialStateModel<T>,
    consts: ProblemConstants<T>,
}

impl<T: Scalar> LqrProblem<T> {
    pub fn new(a: Matrix<T>, b: Matrix<T>, q: Matrix<T>, r: Matrix<T>, init: InitialStateModel<T>) -> Result<Self> {
        let d = a.rows();
        let k = b.cols();
        if d == 0 || k == 0 {
            return Err(Error::DimensionMismatch("state and input dimensions must be positive".into()));
        }
        let expect = [("A", &a, (d, d)), ("B", &b, (d, k)), ("Q", &q, (d, d)), ("R", &r, (k, k))];
        for (name, m, shape) in expect {
            if m.shape() != shape {
                return Err(Error::DimensionMismatch(format!("{name} is {:?}, expected {shape:?}", m.shape())));
            }
            m.check_finite(name)?;
        }
        if init.dim() != d {
            return Err(Error::DimensionMismatch(format!("initial-state model has dimension {}, expected {d}", init.dim())));
        }
        let sigma_min_q = matkit::min_eig(&q)?;
        let sigma_min_r = matkit::min_eig(&r)?;
        if sigma_min_q <= T::zero() || sigma_min_r <= T::zero() {
            return Err(Error::InvalidInput(format!(
                "Q and R must be positive definite (sigma_min(Q) = {sigma_min_q}, sigma_min(R) = {sigma_min_r})"
            )));
        }
        let consts = ProblemConstants {
            norm_a: spectral_norm(&a)?,
            norm_b: spectral_norm(&b)?,
            norm_q: spectral_norm(&q)?,
            norm_r: spectral_norm(&r)?,
            sigma_min_q,
            sigma_min_r,
            mu: init.mu(),
        };
        Ok(Self { q: q.symmetrize(), r: r.symmetrize(), a, b, init, consts })
    }

    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }

    pub fn q(&self) -> &Matrix<T> {
        &self.q
    }

    pub fn r(&self) -> &Matrix<T> {
        &self.r
    }

    pub fn init(&self) -> &InitialStateModel<T> {
        &self.init
    }

    pub fn sigma0(&self) -> &Matrix<T> {
        self.init.sigma0()
    }

    pub fn constants(&self) -> &ProblemConstants<T> {
        &self.consts
    }

    pub fn mu(&self) -> T {
        self.consts.mu
    }

    /// State dimension `d`.
    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    /// Input dimension `k`.
    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    /// `A - BK`.
    pub fn closed_loop(&self, policy: &Policy<T>) -> Matrix<T> {
        &self.a - &self.b.matmul(policy.gain())
    }

    /// Stage cost weight under `K`: `Q + KᵀRK`.
    pub fn policy_cost_weight(&self, policy: &Policy<T>) -> Matrix<T> {
        let k = policy.gain();
        (&self.q + &k.t_matmul(&self.r.matmul(k))).symmetrize()
    }

    pub fn check_policy(&self, policy: &Policy<T>) -> Result<()> {
        let want = (self.input_dim(), self.state_dim());
        if policy.gain().shape() != want {
            return Err(Error::DimensionMismatch(format!("gain is {:?}, expected {want:?}", policy.gain().shape())));
        }
        policy.gain().check_finite("gain")
    }
}

/// Static linear state feedback `u = -Kx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T>(Matrix<T>);

impl<T: Scalar> Policy<T> {
    pub fn new(gain: Matrix<T>) -> Self {
        Self(gain)
    }

    /// The zero gain for a `k x d` problem.
    pub fn zeros(input_dim: usize, state_dim: usize) -> Self {
        Self(Matrix::zeros(input_dim, state_dim))
    }

    pub fn gain(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_gain(self) -> Matrix<T> {
        self.0
    }

    /// `K - step * direction`.
    pub fn step(&self, direction: &Matrix<T>, step: T) -> Self {
        Self(&self.0 - &direction.scale(step))
    }

    /// Control for state `x`.
    pub fn action(&self, x: &[T]) -> Vec<T> {
        self.0.matvec(x).into_iter().map(|v| -v).collect()
    }
}

impl<T> From<Matrix<T>> for Policy<T> {
    fn from(gain: Matrix<T>) -> Self {
        Self(gain)
    }
}

/// Everything exact evaluation yields for one stabilizing policy.
#[derive(Debug, Clone)]
pub struct PolicyEvaluation<T> {
    /// `P_K`.
    pub p: Matrix<T>,
    /// `Σ_K`.
    pub sigma: Matrix<T>,
    /// `C(K) = Tr(P_K Σ0)`.
    pub cost: T,
    /// `E_K`.
    pub e: Matrix<T>,
    /// `∇C(K) = 2 E_K Σ_K`.
    pub grad: Matrix<T>,
    /// `R + BᵀP_K B`.
    pub curvature: Matrix<T>,
    /// `A - BK`.
    pub closed_loop: Matrix<T>,
    /// Stability witness for the closed loop.
    pub certificate: StabilityCertificate,
}

/// `P_K`, `R + BᵀP_K B`, `E_K` and the closed loop, without `Σ_K`.
#[derive(Debug, Clone)]
pub struct ValueTerms<T> {
    pub p: Matrix<T>,
    pub curvature: Matrix<T>,
    pub e: Matrix<T>,
    pub closed_loop: Matrix<T>,
    pub certificate: StabilityCertificate,
}

/// Value matrix and `E_K`; fails with [`Error::UnstablePolicy`] when `A - BK`
/// is not stable.
pub fn value_terms<T: Scalar>(problem: &LqrProblem<T>, policy: &Policy<T>) -> Result<ValueTerms<T>> {
    problem.check_policy(policy)?;
    let closed_loop = problem.closed_loop(policy);
    let weight = problem.policy_cost_weight(policy);
    let (p, certificate) =
        matkit::solve_lyapunov_with_certificate(&closed_loop, &weight, LyapunovSide::TransposeInside, T::default_tol())?;
    let bp = problem.b.t_matmul(&p);
    let curvature = (&problem.r + &bp.matmul(&problem.b)).symmetrize();
    let e = &curvature.matmul(policy.gain()) - &bp.matmul(&problem.a);
    Ok(ValueTerms { p, curvature, e, closed_loop, certificate })
}

/// `C(K)` alone (one Lyapunov solve).
pub fn cost<T: Scalar>(problem: &LqrProblem<T>, policy: &Policy<T>) -> Result<T> {
    problem.check_policy(policy)?;
    let closed_loop = problem.closed_loop(policy);
    let weight = problem.policy_cost_weight(policy);
    let p = matkit::solve_lyapunov_dual(&closed_loop, &weight, LyapunovSide::TransposeInside, T::default_tol())?;
    Ok(p.frobenius_dot(problem.sigma0()))
}

/// Exact evaluation of a stabilizing policy.
pub fn evaluate<T: Scalar>(problem: &LqrProblem<T>, policy: &Policy<T>) -> Result<PolicyEvaluation<T>> {
    let ValueTerms { p, curvature, e, closed_loop, certificate } = value_terms(problem, policy)?;
    let sigma =
        matkit::solve_lyapunov_dual(&closed_loop, problem.sigma0(), LyapunovSide::TransposeOutside, T::default_tol())?;
    let grad = e.matmul(&sigma).scale(T::lit(2.0));
    let cost = p.frobenius_dot(problem.sigma0());
    Ok(PolicyEvaluation { p, sigma, cost, e, grad, curvature, closed_loop, certificate })
}

/// Advantage `A_K(x, -K'x)` of deviating once from `K` to `K'` at state `x`:
/// `2xᵀ(K'-K)ᵀE_K x + xᵀ(K'-K)ᵀ(R + BᵀP_K B)(K'-K)x`.
pub fn advantage<T: Scalar>(problem: &LqrProblem<T>, policy: &Policy<T>, other: &Policy<T>, x: &[T]) -> Result<T> {
    problem.check_policy(other)?;
    if x.len() != problem.state_dim() {
        return Err(Error::DimensionMismatch(format!("state has length {}, expected {}", x.len(), problem.state_dim())));
    }
    let terms = value_terms(problem, policy)?;
    Ok(advantage_with(&terms, policy, other, x))
}

/// Advantage from precomputed value terms of `policy`.
pub fn advantage_with<T: Scalar>(terms: &ValueTerms<T>, policy: &Policy<T>, other: &Policy<T>, x: &[T]) -> T {
    let delta = other.gain() - policy.gain();
    let v = delta.matvec(x);
    let ex = terms.e.matvec(x);
    T::lit(2.0) * matkit::dot(&v, &ex) + terms.curvature.quad_form(&v)
}

/// `∇C(K)`.
pub fn gradient_direction<T: Scalar>(eval: &PolicyEvaluation<T>) -> Matrix<T> {
    eval.grad.clone()
}

/// `∇C(K) Σ_K⁻¹ = 2 E_K`.
pub fn natural_direction<T: Scalar>(eval: &PolicyEvaluation<T>) -> Matrix<T> {
    eval.e.scale(T::lit(2.0))
}

/// `(R + BᵀP_K B)⁻¹ ∇C(K) Σ_K⁻¹ = 2 (R + BᵀP_K B)⁻¹ E_K`.
pub fn gauss_newton_direction<T: Scalar>(eval: &PolicyEvaluation<T>) -> Result<Matrix<T>> {
    Ok(eval.curvature.inverse()?.matmul(&eval.e).scale(T::lit(2.0)))
}

/// Gradient-domination sandwich for `C(K) - C(K*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapBounds<T> {
    /// `‖Σ_{K*}‖ / (μ² σ_min(R)) · ‖∇C(K)‖_F²`.
    pub upper: T,
    /// `μ / ‖R + BᵀP_K B‖ · Tr(E_Kᵀ E_K)`.
    pub lower: T,
}

pub fn optimality_gap_bounds<T: Scalar>(
    problem: &LqrProblem<T>,
    eval: &PolicyEvaluation<T>,
    sigma_kstar_norm: T,
) -> Result<GapBounds<T>> {
    let c = problem.constants();
    let grad_sq = eval.grad.frobenius_dot(&eval.grad);
    let upper = sigma_kstar_norm / (c.mu * c.mu * c.sigma_min_r) * grad_sq;
    let lower = c.mu / spectral_norm(&eval.curvature)? * eval.e.frobenius_dot(&eval.e);
    Ok(GapBounds { upper, lower })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem() -> LqrProblem<f64> {
        let init = InitialStateModel::fixed_covariance(Matrix::scalar(1.0)).unwrap();
        LqrProblem::new(Matrix::scalar(0.5), Matrix::scalar(1.0), Matrix::scalar(1.0), Matrix::scalar(1.0), init).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * (1.0 + b.abs())
    }

    #[test]
    fn zero_dynamics_make_zero_gain_optimal() {
        let d = 3;
        let init = InitialStateModel::fixed_covariance(Matrix::identity(d)).unwrap();
        let problem = LqrProblem::new(Matrix::zeros(d, d), Matrix::identity(d), Matrix::identity(d), Matrix::identity(d), init)
            .unwrap();
        let eval = evaluate(&problem, &Policy::zeros(d, d)).unwrap();
        assert_eq!(eval.p, Matrix::identity(d));
        assert_eq!(eval.sigma, Matrix::identity(d));
        assert!(close(eval.cost, 3.0));
        assert_eq!(eval.e.max_abs(), 0.0);
        assert_eq!(eval.grad.max_abs(), 0.0);
    }

    #[test]
    fn scalar_closed_form() {
        let eval = evaluate(&scalar_problem(), &Policy::zeros(1, 1)).unwrap();
        assert!(close(eval.p[(0, 0)], 4.0 / 3.0));
        assert!(close(eval.sigma[(0, 0)], 4.0 / 3.0));
        assert!(close(eval.cost, 4.0 / 3.0));
        assert!(close(eval.e[(0, 0)], -2.0 / 3.0));
        assert!(close(eval.grad[(0, 0)], -16.0 / 9.0));
    }

    #[test]
    fn nonconvex_midpoint_is_unstable() {
        let init = InitialStateModel::fixed_covariance(Matrix::identity(3)).unwrap();
        let eye = Matrix::<f64>::identity(3);
        let problem = LqrProblem::new(eye.clone(), eye.clone(), eye.clone(), eye, init).unwrap();
        let k1 = Matrix::from_rows(&[[1.0, 0.0, -10.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let k2 = Matrix::from_rows(&[[1.0, -10.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]).unwrap();
        let mid = Policy::new((&k1 + &k2).scale(0.5));
        assert!(matches!(evaluate(&problem, &mid), Err(Error::UnstablePolicy(_))));
        assert!(evaluate(&problem, &Policy::new(k1)).is_ok());
    }

    #[test]
    fn advantage_examples() {
        let problem = scalar_problem();
        let k = Policy::zeros(1, 1);
        assert_eq!(advantage(&problem, &k, &k, &[1.0]).unwrap(), 0.0);
        assert_eq!(advantage(&problem, &k, &Policy::new(Matrix::scalar(0.3)), &[0.0]).unwrap(), 0.0);
        // Gauss-Newton point K - (R + BᵀPB)⁻¹E = 0 - (3/7)(-2/3) = 2/7.
        let gn = Policy::new(Matrix::scalar(2.0 / 7.0));
        assert!(close(advantage(&problem, &k, &gn, &[1.0]).unwrap(), -4.0 / 21.0));
    }

    #[test]
    fn directions_on_scalar_problem() {
        let eval = evaluate(&scalar_problem(), &Policy::zeros(1, 1)).unwrap();
        assert!(close(gradient_direction(&eval)[(0, 0)], -16.0 / 9.0));
        assert!(close(natural_direction(&eval)[(0, 0)], -4.0 / 3.0));
        assert!(close(gauss_newton_direction(&eval).unwrap()[(0, 0)], -4.0 / 7.0));
        let via_sigma = eval.grad.matmul(&eval.sigma.inverse().unwrap());
        assert!(close(via_sigma[(0, 0)], -4.0 / 3.0));
    }

    #[test]
    fn directions_vanish_at_stationary_point() {
        let d = 2;
        let init = InitialStateModel::cube(d);
        let problem =
            LqrProblem::new(Matrix::zeros(d, d), Matrix::identity(d), Matrix::identity(d), Matrix::identity(d), init).unwrap();
        let eval = evaluate(&problem, &Policy::zeros(d, d)).unwrap();
        assert_eq!(natural_direction(&eval).max_abs(), 0.0);
        assert_eq!(gauss_newton_direction(&eval).unwrap().max_abs(), 0.0);
        let b = optimality_gap_bounds(&problem, &eval, 1.0).unwrap();
        assert_eq!((b.upper, b.lower), (0.0, 0.0));
    }

    #[test]
    fn scalar_lower_gap_bound() {
        let problem = scalar_problem();
        let eval = evaluate(&problem, &Policy::zeros(1, 1)).unwrap();
        let b = optimality_gap_bounds(&problem, &eval, 1.0).unwrap();
        assert!(close(b.lower, 4.0 / 21.0));
        assert!(close(b.upper, (16.0f64 / 9.0).powi(2)));
    }

    #[test]
    fn construction_validates_shapes_and_definiteness() {
        let init = InitialStateModel::cube(2);
        let eye = Matrix::<f64>::identity(2);
        let bad_b = LqrProblem::new(eye.clone(), Matrix::zeros(3, 1), eye.clone(), Matrix::identity(1), init.clone());
        assert!(matches!(bad_b, Err(Error::DimensionMismatch(_))));
        let singular_q = LqrProblem::new(eye.clone(), Matrix::zeros(2, 1), Matrix::zeros(2, 2), Matrix::identity(1), init);
        assert!(matches!(singular_q, Err(Error::InvalidInput(_))));
        assert!(InitialStateModel::fixed_covariance(Matrix::from_diag(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn init_models_match_their_moments() {
        let cube = InitialStateModel::<f64>::cube(4);
        assert!(close(cube.mu(), 1.0 / 3.0));
        assert!(close(cube.norm_bound().unwrap(), 2.0));
        let sphere = InitialStateModel::<f64>::sphere(4, 2.0).unwrap();
        assert!(close(sphere.mu(), 1.0));
        assert!(close(sphere.mean_sq_norm(), 4.0));
    }

    #[test]
    fn single_precision_evaluation() {
        let init = InitialStateModel::<f32>::fixed_covariance(Matrix::scalar(1.0)).unwrap();
        let problem =
            LqrProblem::new(Matrix::scalar(0.5f32), Matrix::scalar(1.0), Matrix::scalar(1.0), Matrix::scalar(1.0), init).unwrap();
        let eval = evaluate(&problem, &Policy::zeros(1, 1)).unwrap();
        assert!((eval.grad[(0, 0)] + 16.0 / 9.0).abs() < 1e-5);
    }
}
