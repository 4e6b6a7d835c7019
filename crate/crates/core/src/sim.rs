//! Black-box trajectory simulation.
//!
//! The model-free estimator only sees the plant through [`RolloutOracle`]:
//! it can draw initial states and roll a policy forward, nothing else.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lqr::{InitKind, InitialStateModel, LqrProblem, Policy};
use crate::matkit::{self, Matrix, DIVERGENCE_NORM};
use crate::scalar::Scalar;

/// `(seed, stream)` pair naming an independent, reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngHandle {
    pub seed: u64,
    pub stream: u64,
}

impl RngHandle {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Stream `lane` of outer iteration `iter`.
    pub fn for_iteration(seed: u64, iter: u64, lane: u64) -> Self {
        debug_assert!(lane < 1 << 32);
        Self { seed, stream: (iter << 32) | lane }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Draws `x0` from a samplable initial-state model.
pub fn sample_initial_state<T: Scalar, R: Rng + ?Sized>(init: &InitialStateModel<T>, rng: &mut R) -> Result<Vec<T>> {
    let d = init.dim();
    match init.kind() {
        InitKind::FixedCovariance => Err(Error::NotSamplable("a fixed-covariance initial state has no sampler")),
        InitKind::Cube => Ok((0..d).map(|_| T::lit(rng.random_range(-1.0..=1.0))).collect()),
        InitKind::Sphere => {
            let radius = init.radius().expect("sphere model stores its radius").as_f64();
            let g = gaussian_unit(d, rng);
            Ok(g.into_iter().map(|v| T::lit(v * radius)).collect())
        }
    }
}

/// Uniform point on the unit sphere in `R^n` (normalized Gaussian).
pub(crate) fn gaussian_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return g.into_iter().map(|v| v / norm).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    /// `x_0 .. x_ℓ`.
    pub states: Vec<Vec<T>>,
    /// `u_0 .. u_{ℓ-1}`.
    pub controls: Vec<Vec<T>>,
    /// `x_tᵀQx_t + u_tᵀRu_t` for `t < ℓ`.
    pub stage_costs: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// `Σ_{t<ℓ} c_t`.
    pub fn total_cost(&self) -> T {
        self.stage_costs.iter().copied().sum()
    }

    /// `Σ_{t<ℓ} x_t x_tᵀ`.
    pub fn state_second_moment(&self) -> Matrix<T> {
        let d = self.states[0].len();
        let mut acc = Matrix::zeros(d, d);
        for x in &self.states[..self.horizon()] {
            add_outer(&mut acc, x);
        }
        acc
    }
}

/// Accumulated cost and (optionally) state second moment of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSummary<T> {
    pub cost: T,
    pub sigma_hat: Option<Matrix<T>>,
}

fn add_outer<T: Scalar>(acc: &mut Matrix<T>, x: &[T]) {
    let d = x.len();
    let data = acc.as_mut_slice();
    for (i, &xi) in x.iter().enumerate() {
        if xi == T::zero() {
            continue;
        }
        for (j, &xj) in x.iter().enumerate() {
            data[i * d + j] += xi * xj;
        }
    }
}

fn check_state<T: Scalar>(x: &[T], step: usize) -> Result<()> {
    let n = matkit::vec_norm(x).as_f64();
    if n.is_finite() && n <= DIVERGENCE_NORM {
        Ok(())
    } else {
        Err(Error::DivergedTrajectory { step })
    }
}

fn check_rollout_args<T: Scalar>(problem: &LqrProblem<T>, policy: &Policy<T>, x0: &[T], horizon: usize) -> Result<()> {
    problem.check_policy(policy)?;
    if x0.len() != problem.state_dim() {
        return Err(Error::DimensionMismatch(format!("x0 has length {}, expected {}", x0.len(), problem.state_dim())));
    }
    if horizon == 0 {
        return Err(Error::InvalidInput("rollout horizon must be at least 1".into()));
    }
    Ok(())
}

/// Simulates `x_{t+1} = A x_t + B u_t`, `u_t = -K x_t` for `horizon` steps and
/// keeps every state. Unstable policies are allowed; states whose norm
/// exceeds `1e150` abort with [`Error::DivergedTrajectory`].
pub fn rollout<T: Scalar>(problem: &LqrProblem<T>, policy: &Policy<T>, x0: &[T], horizon: usize) -> Result<Trajectory<T>> {
    check_rollout_args(problem, policy, x0, horizon)?;
    check_state(x0, 0)?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    let mut stage_costs = Vec::with_capacity(horizon);
    let mut x = x0.to_vec();
    for t in 0..horizon {
        let u = policy.action(&x);
        stage_costs.push(problem.q().quad_form(&x) + problem.r().quad_form(&u));
        let mut next = problem.a().matvec(&x);
        for (n, bu) in next.iter_mut().zip(problem.b().matvec(&u)) {
            *n += bu;
        }
        check_state(&next, t + 1)?;
        states.push(std::mem::replace(&mut x, next));
        controls.push(u);
    }
    states.push(x);
    Ok(Trajectory { states, controls, stage_costs })
}

/// Same dynamics as [`rollout`] without storing the path.
///
/// Uses the closed loop `M = A - BK` and weight `Q + KᵀRK` so each step is
/// two small products; stops early once the state is exactly zero.
pub fn rollout_summary<T: Scalar>(
    problem: &LqrProblem<T>,
    policy: &Policy<T>,
    x0: &[T],
    horizon: usize,
    with_sigma: bool,
) -> Result<RolloutSummary<T>> {
    check_rollout_args(problem, policy, x0, horizon)?;
    let closed = problem.closed_loop(policy);
    let weight = problem.policy_cost_weight(policy);
    summarize(&closed, &weight, x0, horizon, with_sigma)
}

fn summarize<T: Scalar>(
    closed: &Matrix<T>,
    weight: &Matrix<T>,
    x0: &[T],
    horizon: usize,
    with_sigma: bool,
) -> Result<RolloutSummary<T>> {
    check_state(x0, 0)?;
    let d = x0.len();
    let mut sigma = with_sigma.then(|| Matrix::zeros(d, d));
    let mut x = x0.to_vec();
    let mut next = vec![T::zero(); d];
    let mut cost = T::zero();
    for t in 0..horizon {
        if x.iter().all(|v| *v == T::zero()) {
            break;
        }
        cost += weight.quad_form(&x);
        if let Some(s) = sigma.as_mut() {
            add_outer(s, &x);
        }
        closed.matvec_into(&x, &mut next);
        check_state(&next, t + 1)?;
        std::mem::swap(&mut x, &mut next);
    }
    Ok(RolloutSummary { cost, sigma_hat: sigma })
}

/// Rollout-only access to a plant.
pub trait RolloutOracle<T: Scalar>: Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Draws a fresh initial state from the plant's distribution.
    fn sample_x0(&self, rng: &mut ChaCha8Rng) -> Result<Vec<T>>;
    /// Truncated cost and, if asked, `Σ_{t<ℓ} x_t x_tᵀ` of one rollout.
    fn rollout(&self, policy: &Policy<T>, x0: &[T], horizon: usize, with_sigma: bool) -> Result<RolloutSummary<T>>;
}

/// [`RolloutOracle`] backed by a known problem.
#[derive(Debug, Clone, Copy)]
pub struct Simulator<'a, T> {
    problem: &'a LqrProblem<T>,
}

impl<'a, T: Scalar> Simulator<'a, T> {
    pub fn new(problem: &'a LqrProblem<T>) -> Self {
        Self { problem }
    }
}

impl<T: Scalar> RolloutOracle<T> for Simulator<'_, T> {
    fn state_dim(&self) -> usize {
        self.problem.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.problem.input_dim()
    }

    fn sample_x0(&self, rng: &mut ChaCha8Rng) -> Result<Vec<T>> {
        sample_initial_state(self.problem.init(), rng)
    }

    fn rollout(&self, policy: &Policy<T>, x0: &[T], horizon: usize, with_sigma: bool) -> Result<RolloutSummary<T>> {
        rollout_summary(self.problem, policy, x0, horizon, with_sigma)
    }
}

fn ceil_count<T: Scalar>(value: T) -> Result<usize> {
    let v = value.as_f64().ceil();
    if !v.is_finite() || v > usize::MAX as f64 / 2.0 {
        return Err(Error::InvalidInput(format!("horizon {v:e} is not representable")));
    }
    Ok((v as usize).max(1))
}

fn check_horizon_args<T: Scalar>(cost_bound: T, eps: T) -> Result<()> {
    if !(eps > T::zero()) || !(cost_bound >= T::zero()) || !cost_bound.is_finite() {
        return Err(Error::InvalidInput(format!("horizon needs eps > 0 and a finite cost bound, got {eps}, {cost_bound}")));
    }
    Ok(())
}

/// Rollout length `ℓ ≥ d C² (‖Q‖ + ‖R‖‖K‖²) / (ε μ σ_min(Q)²)` after which
/// the truncated cost is within `eps` of `C(K)` (given `C(K) ≤ cost_bound`).
/// Rounded up, and at least one.
pub fn horizon_for_accuracy<T: Scalar>(problem: &LqrProblem<T>, cost_bound: T, eps: T, k_norm: T) -> Result<usize> {
    check_horizon_args(cost_bound, eps)?;
    let c = problem.constants();
    let d = T::lit(problem.state_dim() as f64);
    let num = d * cost_bound * cost_bound * (c.norm_q + c.norm_r * k_norm * k_norm);
    ceil_count(num / (eps * c.mu * c.sigma_min_q * c.sigma_min_q))
}

/// Rollout length `ℓ ≥ d C² / (ε μ σ_min(Q)²)` after which the truncated
/// state covariance is within `eps` of `Σ_K`.
pub fn horizon_for_covariance<T: Scalar>(problem: &LqrProblem<T>, cost_bound: T, eps: T) -> Result<usize> {
    check_horizon_args(cost_bound, eps)?;
    let c = problem.constants();
    let d = T::lit(problem.state_dim() as f64);
    ceil_count(d * cost_bound * cost_bound / (eps * c.mu * c.sigma_min_q * c.sigma_min_q))
}

/// `Σ^(ℓ) = Σ_{t<ℓ} M^t Σ0 (M^t)ᵀ` with `M = A - BK`, in `O(log ℓ)` products.
/// No stability requirement.
pub fn truncated_covariance<T: Scalar>(problem: &LqrProblem<T>, policy: &Policy<T>, horizon: usize) -> Result<Matrix<T>> {
    problem.check_policy(policy)?;
    let d = problem.state_dim();
    let mut block_sum = problem.sigma0().clone();
    let mut block_pow = problem.closed_loop(policy);
    let mut acc = Matrix::zeros(d, d);
    let mut acc_pow = Matrix::identity(d);
    let mut n = horizon;
    // acc covers the first `done` terms; blocks of length 2^j are appended
    // after it: acc + acc_pow·block·acc_powᵀ.
    while n > 0 {
        if n & 1 == 1 {
            acc += &acc_pow.matmul(&block_sum).matmul_t(&acc_pow);
            acc_pow = acc_pow.matmul(&block_pow);
        }
        n >>= 1;
        if n > 0 {
            block_sum = &block_sum + &block_pow.matmul(&block_sum).matmul_t(&block_pow);
            block_pow = block_pow.matmul(&block_pow);
        }
        if !acc.is_finite() || !block_sum.is_finite() {
            return Err(Error::DivergedTrajectory { step: horizon });
        }
    }
    Ok(acc.symmetrize())
}

/// `C^(ℓ)(K) = Tr(Σ^(ℓ) (Q + KᵀRK))`, the exact expected truncated cost.
pub fn truncated_cost<T: Scalar>(problem: &LqrProblem<T>, policy: &Policy<T>, horizon: usize) -> Result<T> {
    let sigma = truncated_covariance(problem, policy, horizon)?;
    Ok(sigma.frobenius_dot(&problem.policy_cost_weight(policy)))
}
