//! Exact-gradient policy optimization: gradient descent, natural policy
//! gradient and Gauss-Newton.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lqr::{self, LqrProblem, Policy, PolicyEvaluation};
use crate::matkit::{spectral_norm, Matrix};
use crate::riccati::RiccatiSolution;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gd,
    Npg,
    GaussNewton,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gd => "gd",
            Method::Npg => "npg",
            Method::GaussNewton => "gauss_newton",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule<T> {
    /// Constant step from [`paper_step_size`] evaluated at `K0`.
    PaperFixed,
    /// Armijo backtracking: try `η = 1`, multiply by `shrink` until
    /// `C(K - ηΔ) ≤ C(K) - c·η·⟨∇C, Δ⟩`. Unstable trials count as rejected.
    Backtracking { shrink: T, sufficient_decrease: T, max_trials: usize },
    Constant(T),
}

impl<T: Scalar> StepRule<T> {
    pub fn backtracking() -> Self {
        StepRule::Backtracking { shrink: T::lit(0.5), sufficient_decrease: T::lit(0.01), max_trials: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule<T> {
    /// `C(K) - C(K*) ≤ ε`; needs the oracle.
    Gap(T),
    /// `‖∇C(K)‖_F ≤ ε`.
    GradNorm(T),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    pub method: Method,
    pub step_rule: StepRule<T>,
    /// Zero only evaluates `K0`.
    pub max_iters: usize,
    pub stop: StopRule<T>,
}

impl<T: Scalar> SolverConfig<T> {
    pub fn new(method: Method, step_rule: StepRule<T>, max_iters: usize, stop: StopRule<T>) -> Self {
        Self { method, step_rule, max_iters, stop }
    }

    fn validate(&self) -> Result<()> {
        let tol = match self.stop {
            StopRule::Gap(t) | StopRule::GradNorm(t) => t,
        };
        if !(tol >= T::zero()) {
            return Err(Error::InvalidInput(format!("stopping tolerance must be non-negative, got {tol}")));
        }
        match self.step_rule {
            StepRule::Constant(eta) if !(eta > T::zero() && eta.is_finite()) => {
                Err(Error::InvalidInput(format!("constant step must be positive, got {eta}")))
            }
            StepRule::Backtracking { shrink, sufficient_decrease, max_trials } => {
                let unit = |x: T| x > T::zero() && x < T::one();
                if !unit(shrink) || !unit(sufficient_decrease) || max_trials == 0 {
                    return Err(Error::InvalidInput("backtracking needs shrink, c in (0, 1) and max_trials >= 1".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    BudgetExhausted,
    /// A step left the stabilizing set (constant steps only).
    Diverged,
    /// Backtracking ran out of trials without sufficient decrease.
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord<T> {
    pub iter: usize,
    pub cost: T,
    pub gap: Option<T>,
    pub grad_fro: T,
    /// Step that produced this iterate (zero for the initial policy).
    pub step: T,
    /// Cumulative model-free samples; zero for exact methods.
    pub samples: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTrace<T> {
    pub records: Vec<IterationRecord<T>>,
    pub status: Status,
    /// Fixed step when one was used.
    pub step_size: Option<T>,
    /// Per-step NPG contraction `1 - η σ_min(R) μ / ‖Σ_{K*}‖` for the paper
    /// step, when the oracle is known.
    pub contraction_factor: Option<T>,
}

impl<T: Scalar> ConvergenceTrace<T> {
    /// Number of updates performed.
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    pub fn final_cost(&self) -> Option<T> {
        self.records.last().map(|r| r.cost)
    }

    pub fn final_gap(&self) -> Option<T> {
        self.records.last().and_then(|r| r.gap)
    }

    /// First adjacent pair with `C(K_{n+1}) > C(K_n)`.
    pub fn first_increase(&self) -> Option<usize> {
        self.records.windows(2).find(|w| w[1].cost > w[0].cost).map(|w| w[1].iter)
    }
}

/// Update direction for `method`: `E_K Σ_K`, `E_K` or `(R + BᵀP_K B)⁻¹ E_K`.
///
/// These are half of `∇C`, `∇C Σ⁻¹` and `(R + BᵀPB)⁻¹ ∇C Σ⁻¹`. Step sizes
/// are measured against the halved directions, which is the normalization
/// under which a unit Gauss-Newton step is exactly policy iteration and the
/// step sizes of [`paper_step_size`] carry their one-step guarantees.
pub fn update_direction<T: Scalar>(method: Method, eval: &PolicyEvaluation<T>) -> Result<Matrix<T>> {
    let full = match method {
        Method::Gd => lqr::gradient_direction(eval),
        Method::Npg => lqr::natural_direction(eval),
        Method::GaussNewton => lqr::gauss_newton_direction(eval)?,
    };
    Ok(full.scale(T::lit(0.5)))
}

/// Step size that the convergence analysis guarantees at `K0`.
///
/// Gauss-Newton: `1`. Natural gradient: `1 / (‖R‖ + ‖B‖² C(K0) / μ)`.
/// Gradient descent: the explicit one-step descent bound
///
/// ```text
/// (1/16) min{ (σ_min(Q) μ / C)² / (‖B‖ ‖∇C‖ (1 + ‖A-BK‖)),  σ_min(Q) / (2 C ‖R + BᵀPB‖) }
/// ```
pub fn paper_step_size<T: Scalar>(problem: &LqrProblem<T>, eval0: &PolicyEvaluation<T>, method: Method) -> Result<T> {
    let c = problem.constants();
    match method {
        Method::GaussNewton => Ok(T::one()),
        Method::Npg => Ok(T::one() / (c.norm_r + c.norm_b * c.norm_b * eval0.cost / c.mu)),
        Method::Gd => {
            let ratio = c.sigma_min_q * c.mu / eval0.cost;
            let grad_norm = spectral_norm(&eval0.grad)?;
            let denom = c.norm_b * grad_norm * (T::one() + spectral_norm(&eval0.closed_loop)?);
            // With a zero gradient or B = 0 the first branch is vacuous.
            let first = if denom > T::zero() { ratio * ratio / denom } else { T::infinity() };
            let second = c.sigma_min_q / (T::lit(2.0) * eval0.cost * spectral_norm(&eval0.curvature)?);
            Ok(first.min(second) / T::lit(16.0))
        }
    }
}

/// Runs `method` from `k0` until the stopping rule fires or `max_iters`
/// updates `K ← K - η D` (with `D` from [`update_direction`]) have been made.
///
/// Fails with [`Error::UnstablePolicy`] when `k0` is not stabilizing and
/// with [`Error::InvalidInput`] for a gap stopping rule without oracle.
pub fn optimize<T: Scalar>(
    problem: &LqrProblem<T>,
    k0: &Policy<T>,
    config: &SolverConfig<T>,
    oracle: Option<&RiccatiSolution<T>>,
) -> Result<(Policy<T>, ConvergenceTrace<T>)> {
    config.validate()?;
    if matches!(config.stop, StopRule::Gap(_)) && oracle.is_none() {
        return Err(Error::InvalidInput("gap stopping rule needs the Riccati oracle".into()));
    }
    let start = Instant::now();
    let mut policy = k0.clone();
    let mut eval = lqr::evaluate(problem, &policy)?;

    let fixed_step = match config.step_rule {
        StepRule::PaperFixed => Some(paper_step_size(problem, &eval, config.method)?),
        StepRule::Constant(eta) => Some(eta),
        StepRule::Backtracking { .. } => None,
    };
    let contraction_factor = match (config.method, config.step_rule, oracle) {
        (Method::Npg, StepRule::PaperFixed, Some(sol)) => {
            let sigma_star = spectral_norm(&lqr::evaluate(problem, &sol.k_star)?.sigma)?;
            let c = problem.constants();
            fixed_step.map(|eta| T::one() - eta * c.sigma_min_r * c.mu / sigma_star)
        }
        _ => None,
    };
    let mut trace = ConvergenceTrace { records: Vec::new(), status: Status::BudgetExhausted, step_size: fixed_step, contraction_factor };

    let mut step = T::zero();
    for iter in 0..=config.max_iters {
        let grad_fro = eval.grad.frobenius_norm();
        let gap = oracle.map(|sol| eval.cost - sol.opt_cost);
        trace.records.push(IterationRecord {
            iter,
            cost: eval.cost,
            gap,
            grad_fro,
            step,
            samples: 0,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        let done = match config.stop {
            StopRule::Gap(eps) => gap.is_some_and(|g| g <= eps),
            StopRule::GradNorm(eps) => grad_fro <= eps,
        };
        if done || grad_fro == T::zero() {
            trace.status = Status::Converged;
            break;
        }
        if iter == config.max_iters {
            break;
        }
        let dir = update_direction(config.method, &eval)?;
        let next = match (fixed_step, config.step_rule) {
            (Some(eta), _) => {
                let candidate = policy.step(&dir, eta);
                match lqr::evaluate(problem, &candidate) {
                    Ok(e) => Some((candidate, e, eta)),
                    Err(Error::UnstablePolicy(_)) => {
                        trace.status = Status::Diverged;
                        None
                    }
                    Err(other) => return Err(other),
                }
            }
            (None, StepRule::Backtracking { shrink, sufficient_decrease, max_trials }) => {
                let slope = eval.grad.frobenius_dot(&dir);
                let mut eta = T::one();
                let mut accepted = None;
                for _ in 0..max_trials {
                    let candidate = policy.step(&dir, eta);
                    match lqr::cost(problem, &candidate) {
                        Ok(c) if c <= eval.cost - sufficient_decrease * eta * slope => {
                            accepted = Some((candidate, eta));
                            break;
                        }
                        Ok(_) | Err(Error::UnstablePolicy(_)) => eta *= shrink,
                        Err(other) => return Err(other),
                    }
                }
                match accepted {
                    Some((candidate, eta)) => {
                        let e = lqr::evaluate(problem, &candidate)?;
                        Some((candidate, e, eta))
                    }
                    None => {
                        trace.status = Status::Stalled;
                        None
                    }
                }
            }
            (None, _) => unreachable!("fixed step rules always produce a step"),
        };
        match next {
            Some((candidate, e, eta)) => {
                policy = candidate;
                eval = e;
                step = eta;
            }
            None => break,
        }
    }
    Ok((policy, trace))
}
