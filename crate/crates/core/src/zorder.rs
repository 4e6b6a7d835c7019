//! Model-free gradient and covariance estimation from rollouts, and the
//! model-free gradient descent / natural gradient loops built on it.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact_opt::{paper_step_size, ConvergenceTrace, IterationRecord, Method, Status};
use crate::lqr::{self, LqrProblem, Policy};
use crate::matkit::{self, Matrix};
use crate::riccati::RiccatiSolution;
use crate::scalar::Scalar;
use crate::sim::{gaussian_unit, horizon_for_accuracy, RngHandle, RolloutOracle};

/// Lane of the `x0` stream for perturbation `i` is `X0_LANE + i`.
pub const X0_LANE: u64 = 1;
/// Lane of the `U_i` stream for perturbation `i` is `PERTURBATION_LANE + i`.
pub const PERTURBATION_LANE: u64 = 1_000_000;

/// Largest `m` whose x0 lanes stay below the perturbation lanes.
pub const MAX_M: usize = (PERTURBATION_LANE - X0_LANE) as usize;
/// Outer-iteration tag reserved for the rollouts that estimate `C(K0)`.
const COST_PROBE_ITER: u64 = u32::MAX as u64;
/// Rollouts averaged for the `C(K0)` estimate behind the default NPG step.
pub const COST_PROBE_ROLLOUTS: usize = 100;
/// Perturbations handled per parallel work item; summation order within and
/// across chunks is fixed, so results do not depend on the thread count.
const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZerothOrderConfig<T> {
    /// Perturbed rollouts per estimate.
    pub m: usize,
    /// Rollout length `ℓ`.
    pub horizon: usize,
    /// Frobenius radius `r` of the perturbations.
    pub radius: T,
    /// Dimension of the perturbation space, `k·d`.
    pub param_dim: usize,
    /// Step size; `None` picks the default for the method.
    pub step: Option<T>,
    pub max_outer_iters: usize,
    /// Stop once the (reported) optimality gap is at most this.
    pub stop_gap: Option<T>,
}

impl<T: Scalar> ZerothOrderConfig<T> {
    pub fn new(problem_dims: (usize, usize), m: usize, horizon: usize, radius: T) -> Self {
        let (k, d) = problem_dims;
        Self { m, horizon, radius, param_dim: k * d, step: None, max_outer_iters: 0, stop_gap: None }
    }

    /// Smoothing radius `0.05 (1 + ‖K0‖_F)` and the rollout length that makes
    /// the truncation error `r² stop_gap / (10 k d)`, using `C(K0)` as the
    /// cost bound.
    pub fn heuristic(problem: &LqrProblem<T>, k0: &Policy<T>, m: usize, stop_gap: T) -> Result<Self> {
        let cost0 = lqr::cost(problem, k0)?;
        let param_dim = problem.input_dim() * problem.state_dim();
        let radius = T::lit(0.05) * (T::one() + k0.gain().frobenius_norm());
        let eps = radius * radius * stop_gap / (T::lit(10.0) * T::lit(param_dim as f64));
        let k_norm = matkit::spectral_norm(k0.gain())?;
        let horizon = horizon_for_accuracy(problem, cost0, eps, k_norm)?;
        Ok(Self { m, horizon, radius, param_dim, step: None, max_outer_iters: 0, stop_gap: Some(stop_gap) })
    }

    fn validate(&self, k: usize, d: usize) -> Result<()> {
        if self.m == 0 || self.m > MAX_M {
            return Err(Error::InvalidInput(format!("m must lie in [1, {MAX_M}], got {}", self.m)));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if !(self.radius > T::zero() && self.radius.is_finite()) {
            return Err(Error::InvalidInput(format!("radius must be positive, got {}", self.radius)));
        }
        if self.param_dim != k * d {
            return Err(Error::InvalidInput(format!("param_dim is {}, expected k*d = {}", self.param_dim, k * d)));
        }
        if let Some(eta) = self.step {
            if !(eta > T::zero() && eta.is_finite()) {
                return Err(Error::InvalidInput(format!("step must be positive, got {eta}")));
            }
        }
        Ok(())
    }
}

/// Uniform draw from the sphere `‖U‖_F = r` in `rows x cols` matrix space.
pub fn sample_sphere_matrix<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, radius: T, rng: &mut R) -> Matrix<T> {
    let r = radius.as_f64();
    let unit = gaussian_unit(rows * cols, rng);
    Matrix::new(rows, cols, unit.into_iter().map(|v| T::lit(v * r)).collect()).expect("length matches shape")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientEstimate<T> {
    /// `(1/m) Σ (kd/r²) Ĉ_i U_i`.
    pub grad_hat: Matrix<T>,
    /// `(1/m) Σ Σ̂_i`.
    pub sigma_hat: Matrix<T>,
    /// Number of rollouts consumed.
    pub samples_used: u64,
}

struct Partial<T> {
    weighted_u: Matrix<T>,
    sigma: Matrix<T>,
}

/// One smoothed gradient and covariance estimate at `policy`.
///
/// Perturbation `i` of outer iteration `iter` draws `U_i` from lane
/// [`PERTURBATION_LANE`]` + i` and its `x0` from lane [`X0_LANE`]` + i` (see
/// [`RngHandle::for_iteration`]), so the estimate is a function of
/// `(policy, cfg, seed, iter)` alone. A diverged rollout
/// yields [`Error::EstimationFailed`] naming the lowest failing index.
pub fn estimate<T: Scalar, O: RolloutOracle<T>>(
    oracle: &O,
    policy: &Policy<T>,
    cfg: &ZerothOrderConfig<T>,
    seed: u64,
    iter: u64,
) -> Result<GradientEstimate<T>> {
    let (k, d) = (oracle.input_dim(), oracle.state_dim());
    cfg.validate(k, d)?;
    if policy.gain().shape() != (k, d) {
        return Err(Error::DimensionMismatch(format!("gain is {:?}, expected {:?}", policy.gain().shape(), (k, d))));
    }
    let chunks = cfg.m.div_ceil(CHUNK);
    let partials: Vec<Result<Partial<T>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut part = Partial { weighted_u: Matrix::zeros(k, d), sigma: Matrix::zeros(d, d) };
            for i in c * CHUNK..((c + 1) * CHUNK).min(cfg.m) {
                let mut urng = RngHandle::for_iteration(seed, iter, PERTURBATION_LANE + i as u64).rng();
                let mut xrng = RngHandle::for_iteration(seed, iter, X0_LANE + i as u64).rng();
                let u = sample_sphere_matrix(k, d, cfg.radius, &mut urng);
                let x0 = oracle.sample_x0(&mut xrng)?;
                let perturbed = Policy::new(policy.gain() + &u);
                let summary = oracle
                    .rollout(&perturbed, &x0, cfg.horizon, true)
                    .map_err(|e| Error::EstimationFailed { index: i, reason: e.to_string() })?;
                part.weighted_u += &u.scale(summary.cost);
                part.sigma += summary.sigma_hat.as_ref().expect("requested");
            }
            Ok(part)
        })
        .collect();

    let mut weighted_u = Matrix::zeros(k, d);
    let mut sigma = Matrix::zeros(d, d);
    for part in partials {
        let part = part?;
        weighted_u += &part.weighted_u;
        sigma += &part.sigma;
    }
    let m = T::lit(cfg.m as f64);
    let r = cfg.radius;
    let grad_hat = weighted_u.scale(T::lit(cfg.param_dim as f64) / (r * r * m));
    let sigma_hat = sigma.scale(T::one() / m).symmetrize();
    if !grad_hat.is_finite() || !sigma_hat.is_finite() {
        return Err(Error::EstimationFailed { index: cfg.m, reason: "non-finite estimate".into() });
    }
    Ok(GradientEstimate { grad_hat, sigma_hat, samples_used: cfg.m as u64 })
}

/// Monte Carlo `C(K)` from `n` unperturbed rollouts of length `horizon`.
pub fn estimate_cost<T: Scalar, O: RolloutOracle<T>>(
    oracle: &O,
    policy: &Policy<T>,
    horizon: usize,
    n: usize,
    seed: u64,
) -> Result<T> {
    if n == 0 {
        return Err(Error::InvalidInput("cost estimate needs at least one rollout".into()));
    }
    let costs: Vec<Result<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngHandle::for_iteration(seed, COST_PROBE_ITER, X0_LANE + i as u64).rng();
            let x0 = oracle.sample_x0(&mut rng)?;
            let s = oracle
                .rollout(policy, &x0, horizon, false)
                .map_err(|e| Error::EstimationFailed { index: i, reason: e.to_string() })?;
            Ok(s.cost)
        })
        .collect();
    let mut total = T::zero();
    for c in costs {
        total += c?;
    }
    Ok(total / T::lit(n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFreeMethod {
    Gd,
    Npg,
}

impl From<ModelFreeMethod> for Method {
    fn from(m: ModelFreeMethod) -> Self {
        match m {
            ModelFreeMethod::Gd => Method::Gd,
            ModelFreeMethod::Npg => Method::Npg,
        }
    }
}

/// White-box side of a model-free run: used for reporting exact costs, for
/// default step sizes and for the covariance floor `μ/2`, never for the
/// update direction.
#[derive(Debug, Clone, Copy)]
pub struct Reporter<'a, T> {
    pub problem: &'a LqrProblem<T>,
    pub solution: Option<&'a RiccatiSolution<T>>,
}

/// A model-free run that stopped on an error, with the last good state.
#[derive(Debug, Clone)]
pub struct ModelFreeFailure<T> {
    pub error: Error,
    pub policy: Policy<T>,
    pub trace: ConvergenceTrace<T>,
}

impl<T> std::fmt::Display for ModelFreeFailure<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl<T: std::fmt::Debug> std::error::Error for ModelFreeFailure<T> {}

/// Step used when `cfg.step` is unset.
///
/// NPG: `1 / (‖R‖ + ‖B‖² C(K0) / μ)` with `C(K0)` exact when the optimum is
/// known and otherwise the mean of [`COST_PROBE_ROLLOUTS`] rollouts. GD: the
/// exact-gradient descent bound at `K0`.
pub fn default_step<T: Scalar, O: RolloutOracle<T>>(
    oracle: &O,
    k0: &Policy<T>,
    cfg: &ZerothOrderConfig<T>,
    method: ModelFreeMethod,
    reporter: &Reporter<'_, T>,
    seed: u64,
) -> Result<T> {
    let problem = reporter.problem;
    match method {
        ModelFreeMethod::Gd => paper_step_size(problem, &lqr::evaluate(problem, k0)?, Method::Gd),
        ModelFreeMethod::Npg => {
            let cost0 = match reporter.solution {
                Some(_) => lqr::cost(problem, k0)?,
                None => estimate_cost(oracle, k0, cfg.horizon, COST_PROBE_ROLLOUTS, seed)?,
            };
            let c = problem.constants();
            Ok(T::one() / (c.norm_r + c.norm_b * c.norm_b * cost0 / c.mu))
        }
    }
}

/// Model-free descent `K ← K - (η/2) ĝ` (GD) or `K ← K - (η/2) ĝ Σ̂⁻¹`
/// (NPG), re-estimating at every iterate. The factor one half matches
/// [`crate::exact_opt::update_direction`].
///
/// For NPG the covariance estimate must satisfy `σ_min(Σ̂) ≥ μ/2`; a miss is
/// retried once with `2m` rollouts and otherwise aborts with
/// [`Error::IllConditionedCovariance`].
pub fn run_modelfree<T: Scalar, O: RolloutOracle<T>>(
    oracle: &O,
    k0: &Policy<T>,
    cfg: &ZerothOrderConfig<T>,
    method: ModelFreeMethod,
    seed: u64,
    reporter: &Reporter<'_, T>,
) -> std::result::Result<(Policy<T>, ConvergenceTrace<T>), ModelFreeFailure<T>> {
    let start = Instant::now();
    let mut policy = k0.clone();
    let mut trace = ConvergenceTrace { records: Vec::new(), status: Status::BudgetExhausted, step_size: None, contraction_factor: None };
    macro_rules! bail {
        ($e:expr) => {
            return Err(ModelFreeFailure { error: $e, policy, trace })
        };
    }
    if let Err(e) = cfg.validate(oracle.input_dim(), oracle.state_dim()) {
        bail!(e);
    }
    let step = match cfg.step.map(Ok).unwrap_or_else(|| default_step(oracle, k0, cfg, method, reporter, seed)) {
        Ok(s) => s,
        Err(e) => bail!(e),
    };
    trace.step_size = Some(step);
    let floor = reporter.problem.mu() / T::lit(2.0);
    let mut samples: u64 = 0;

    for iter in 0..=cfg.max_outer_iters {
        let (cost, grad_fro) = match lqr::evaluate(reporter.problem, &policy) {
            Ok(e) => (e.cost, e.grad.frobenius_norm()),
            Err(Error::UnstablePolicy(_)) => (T::infinity(), T::infinity()),
            Err(e) => bail!(e),
        };
        let gap = reporter.solution.map(|s| cost - s.opt_cost);
        trace.records.push(IterationRecord {
            iter,
            cost,
            gap,
            grad_fro,
            step: if iter == 0 { T::zero() } else { step },
            samples,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if let (Some(g), Some(target)) = (gap, cfg.stop_gap) {
            if g <= target {
                trace.status = Status::Converged;
                break;
            }
        }
        if iter == cfg.max_outer_iters {
            break;
        }
        let mut est = match estimate(oracle, &policy, cfg, seed, iter as u64) {
            Ok(e) => e,
            Err(e) => bail!(e),
        };
        samples += est.samples_used;
        let dir = match method {
            ModelFreeMethod::Gd => est.grad_hat,
            ModelFreeMethod::Npg => {
                let mut sigma_min = match matkit::min_eig(&est.sigma_hat) {
                    Ok(s) => s,
                    Err(e) => bail!(e),
                };
                if sigma_min < floor {
                    let retry = ZerothOrderConfig { m: (2 * cfg.m).min(MAX_M), ..*cfg };
                    est = match estimate(oracle, &policy, &retry, seed, iter as u64) {
                        Ok(e) => e,
                        Err(e) => bail!(e),
                    };
                    samples += est.samples_used;
                    sigma_min = match matkit::min_eig(&est.sigma_hat) {
                        Ok(s) => s,
                        Err(e) => bail!(e),
                    };
                    if sigma_min < floor {
                        trace.status = Status::Diverged;
                        bail!(Error::IllConditionedCovariance { sigma_min: sigma_min.as_f64(), floor: floor.as_f64() });
                    }
                }
                match est.sigma_hat.inverse() {
                    Ok(inv) => est.grad_hat.matmul(&inv),
                    Err(e) => bail!(e),
                }
            }
        };
        // Same half-gradient normalization as the exact methods.
        policy = policy.step(&dir, step * T::lit(0.5));
    }
    if let Some(last) = trace.records.last_mut() {
        last.samples = samples;
    }
    Ok((policy, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqr::InitialStateModel;
    use crate::sim::Simulator;

    fn scalar_sphere() -> LqrProblem<f64> {
        let init = InitialStateModel::sphere(1, 1.0).unwrap();
        LqrProblem::new(Matrix::scalar(0.5), Matrix::scalar(1.0), Matrix::scalar(1.0), Matrix::scalar(1.0), init).unwrap()
    }

    #[test]
    fn sphere_matrix_has_exact_norm() {
        let mut rng = RngHandle::new(3, 0).rng();
        for _ in 0..50 {
            let u: Matrix<f64> = sample_sphere_matrix(2, 3, 0.7, &mut rng);
            assert!((u.frobenius_norm() - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn one_dimensional_sphere_is_two_points() {
        let mut rng = RngHandle::new(5, 0).rng();
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u: Matrix<f64> = sample_sphere_matrix(1, 1, 0.3, &mut rng);
            assert!((u[(0, 0)].abs() - 0.3).abs() < 1e-15);
            sum += u[(0, 0)];
        }
        // standard error of the mean is 0.3 / sqrt(n)
        assert!((sum / n as f64).abs() <= 3.0 * 0.3 / (n as f64).sqrt());
    }

    #[test]
    fn single_sample_covariance_is_that_rollout() {
        let p = scalar_sphere();
        let sim = Simulator::new(&p);
        let mut cfg = ZerothOrderConfig::new((1, 1), 1, 5, 0.1);
        cfg.step = Some(0.1);
        let est = estimate(&sim, &Policy::zeros(1, 1), &cfg, 9, 0).unwrap();
        let u: Matrix<f64> = sample_sphere_matrix(1, 1, 0.1, &mut RngHandle::for_iteration(9, 0, PERTURBATION_LANE).rng());
        let x0 = sim.sample_x0(&mut RngHandle::for_iteration(9, 0, X0_LANE).rng()).unwrap();
        let s = sim.rollout(&Policy::new(u.clone()), &x0, 5, true).unwrap();
        assert_eq!(est.sigma_hat, s.sigma_hat.unwrap());
        assert!((est.grad_hat[(0, 0)] - s.cost * u[(0, 0)] / 0.01).abs() < 1e-12);
        assert_eq!(est.samples_used, 1);
    }

    #[test]
    fn estimate_is_deterministic_across_pools() {
        let p = scalar_sphere();
        let sim = Simulator::new(&p);
        let cfg = ZerothOrderConfig::new((1, 1), 2000, 30, 0.05);
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let wide = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = serial.install(|| estimate(&sim, &Policy::zeros(1, 1), &cfg, 1, 0).unwrap());
        let b = wide.install(|| estimate(&sim, &Policy::zeros(1, 1), &cfg, 1, 0).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn diverging_perturbation_is_reported() {
        let init = InitialStateModel::sphere(1, 1.0).unwrap();
        let p = LqrProblem::new(Matrix::scalar(3.0), Matrix::scalar(1.0), Matrix::scalar(1.0), Matrix::scalar(1.0), init)
            .unwrap();
        let sim = Simulator::new(&p);
        let cfg = ZerothOrderConfig::new((1, 1), 4, 1000, 0.01);
        let err = estimate(&sim, &Policy::zeros(1, 1), &cfg, 0, 0).unwrap_err();
        assert!(matches!(err, Error::EstimationFailed { index: 0, .. }));
    }

    #[test]
    fn zero_budget_returns_k0() {
        let p = scalar_sphere();
        let sim = Simulator::new(&p);
        let cfg = ZerothOrderConfig::new((1, 1), 10, 10, 0.05);
        let k0 = Policy::new(Matrix::scalar(0.1));
        let reporter = Reporter { problem: &p, solution: None };
        let (k, trace) = run_modelfree(&sim, &k0, &cfg, ModelFreeMethod::Npg, 0, &reporter).unwrap();
        assert_eq!(k, k0);
        assert_eq!(trace.records.len(), 1);
    }

    #[test]
    fn bad_param_dim_is_rejected() {
        let p = scalar_sphere();
        let sim = Simulator::new(&p);
        let mut cfg = ZerothOrderConfig::new((1, 1), 10, 10, 0.05);
        cfg.param_dim = 2;
        assert!(matches!(estimate(&sim, &Policy::zeros(1, 1), &cfg, 0, 0), Err(Error::InvalidInput(_))));
    }
}
