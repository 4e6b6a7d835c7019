//! Command-line front end for `lqrpg`.
//!
//! Every subcommand is an ordinary function over parsed arguments so that it
//! can be exercised without spawning a process; `main` only maps
//! [`CliError`] to an exit code.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lqrpg::exact_opt::Status;
use lqrpg::io::{load_problem, save_trace_csv, ProblemFile, TraceKind};
use lqrpg::sim::{horizon_for_accuracy, Simulator};
use lqrpg::verify::{random_instance, run_suite, InstanceSpec, SuiteReport};
use lqrpg::zorder::{ModelFreeFailure, Reporter};
use lqrpg::{
    optimize, riccati, run_modelfree, Error, Gain, Method, ModelFreeMethod, Problem, Riccati, SolverConfig, StepRule,
    StopRule, Trace, ZerothOrderConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Lib(#[from] Error),
    /// Exit code follows `source`.
    #[error("{message}")]
    Context { message: String, source: Error },
    #[error("{failed} verification check(s) failed")]
    VerifyFailed { failed: usize },
    #[error("output: {0}")]
    Output(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl CliError {
    /// 0 ok, 1 I/O or internal, 2 parse/validation, 3 Riccati
    /// non-convergence, 4 unstable initial policy, 5 estimation failure.
    pub fn exit_code(&self) -> i32 {
        let lib = match self {
            CliError::Lib(e) | CliError::Context { source: e, .. } => e,
            _ => return 1,
        };
        match lib {
            Error::InvalidInput(_) | Error::DimensionMismatch(_) => 2,
            Error::NotConverged { .. } => 3,
            Error::UnstablePolicy(_) => 4,
            Error::EstimationFailed { .. }
            | Error::DivergedTrajectory { .. }
            | Error::IllConditionedCovariance { .. }
            | Error::NotSamplable(_) => 5,
            Error::Io(_) | Error::Singular { .. } => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "lqrpg", version, about = "Policy gradient methods for linear quadratic control")]
pub struct Cli {
    /// Worker threads for Monte Carlo estimation (default: logical cores).
    #[arg(long, global = true, env = "LQRPG_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a random problem with a stable open loop.
    Generate(GenerateArgs),
    /// Solve the Riccati equation and print the optimal gain.
    Solve(SolveArgs),
    /// Exact policy optimization with known dynamics.
    Optimize(OptimizeArgs),
    /// Model-free optimization from simulated rollouts.
    Learn(LearnArgs),
    /// Check the landscape inequalities on random instances.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long = "dim")]
    pub dim: usize,
    #[arg(long = "ctrl")]
    pub ctrl: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub spectral_scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub problem: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Gd,
    Npg,
    Gn,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gd => Method::Gd,
            MethodArg::Npg => Method::Npg,
            MethodArg::Gn => Method::GaussNewton,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LearnMethodArg {
    Gd,
    Npg,
}

impl From<LearnMethodArg> for ModelFreeMethod {
    fn from(m: LearnMethodArg) -> Self {
        match m {
            LearnMethodArg::Gd => ModelFreeMethod::Gd,
            LearnMethodArg::Npg => ModelFreeMethod::Npg,
        }
    }
}

/// `paper`, `backtracking` or a positive number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepsArg {
    Paper,
    Backtracking,
    Constant(f64),
}

impl FromStr for StepsArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(StepsArg::Paper),
            "backtracking" => Ok(StepsArg::Backtracking),
            _ => positive(s).map(StepsArg::Constant),
        }
    }
}

/// `paper` or a positive number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaArg {
    Paper,
    Constant(f64),
}

impl FromStr for EtaArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(EtaArg::Paper),
            _ => positive(s).map(EtaArg::Constant),
        }
    }
}

/// `auto` or a positive integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizonArg {
    Auto,
    Fixed(usize),
}

impl FromStr for HorizonArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(HorizonArg::Auto),
            _ => match s.parse::<usize>() {
                Ok(n) if n > 0 => Ok(HorizonArg::Fixed(n)),
                _ => Err(format!("expected `auto` or a positive integer, got `{s}`")),
            },
        }
    }
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(format!("expected a keyword or a positive number, got `{s}`")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long, value_enum, default_value = "gn")]
    pub method: MethodArg,
    /// `paper`, `backtracking` or a constant step.
    #[arg(long, default_value = "paper")]
    pub steps: StepsArg,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
    /// Stop once C(K) - C(K*) <= tol * C(K*).
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub problem: PathBuf,
    #[arg(long, value_enum, default_value = "npg")]
    pub method: LearnMethodArg,
    /// Rollouts per gradient estimate.
    #[arg(long, default_value_t = 10_000)]
    pub m: usize,
    /// Rollout length, or `auto` for the truncation bound.
    #[arg(long, default_value = "auto")]
    pub horizon: HorizonArg,
    /// Smoothing radius (default 0.05 (1 + |K0|_F)).
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, default_value = "paper")]
    pub eta: EtaArg,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative gap C(K) - C(K*) <= g C(K*) used to size the `auto` horizon.
    #[arg(long, default_value_t = 0.1)]
    pub target_gap: f64,
    /// Stop as soon as the target gap is reached.
    #[arg(long)]
    pub stop_at_target: bool,
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub min_dim: usize,
    #[arg(long, default_value_t = 6)]
    pub max_dim: usize,
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidInput("--threads must be at least 1".into()).into()),
        Some(n) => {
            let pool =
                rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| CliError::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs the parsed command, writing its report to `out`. A failed
/// verification still prints every check before returning the error.
pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let (buf, result) = with_threads(cli.threads, || {
        let mut buf = Vec::new();
        let result = dispatch(&cli.command, &mut buf);
        (buf, result)
    })?;
    out.write_all(&buf)?;
    result
}

fn dispatch(command: &Command, buf: &mut Vec<u8>) -> CliResult<()> {
    match command {
        Command::Generate(a) => report_generate(&cmd_generate(a)?, a, buf),
        Command::Solve(a) => report_solve(&cmd_solve(a)?, buf),
        Command::Optimize(a) => report_optimize(&cmd_optimize(a)?, buf),
        Command::Learn(a) => report_learn(&cmd_learn(a)?, buf),
        Command::Verify(a) => {
            let report = cmd_verify(a)?;
            for r in &report.reports {
                writeln!(buf, "{}", r.to_json_line())?;
            }
            let s = &report.summary;
            writeln!(buf, "{{\"summary\":{{\"pass\":{},\"fail\":{},\"skipped\":{}}}}}", s.pass, s.fail, s.skipped)?;
            if report.success() {
                Ok(())
            } else {
                Err(CliError::VerifyFailed { failed: s.fail })
            }
        }
    }
}

fn fmt_matrix(m: &lqrpg::Mat) -> String {
    let rows: Vec<String> = m
        .to_rows()
        .iter()
        .map(|r| format!("[{}]", r.iter().map(|x| format!("{x:.10}")).collect::<Vec<_>>().join(", ")))
        .collect();
    format!("[{}]", rows.join(", "))
}

/// Generated problem file (`Q = R = I`, cube initial states).
pub fn cmd_generate(args: &GenerateArgs) -> CliResult<ProblemFile> {
    let spec = InstanceSpec { spectral_scale: args.spectral_scale, ..InstanceSpec::new(args.dim, args.ctrl) };
    let problem: Problem = random_instance(args.seed, &spec)?;
    let file = ProblemFile::from_problem(&problem, None);
    file.save(&args.out)?;
    Ok(file)
}

fn report_generate(_file: &ProblemFile, args: &GenerateArgs, out: &mut dyn Write) -> CliResult<()> {
    writeln!(out, "wrote {} (d={}, k={}, seed={})", args.out.display(), args.dim, args.ctrl, args.seed)?;
    Ok(())
}

pub fn cmd_solve(args: &SolveArgs) -> CliResult<Riccati> {
    let (problem, _) = load_problem(&args.problem)?;
    Ok(riccati::solve_dare_default(&problem)?)
}

fn report_solve(sol: &Riccati, out: &mut dyn Write) -> CliResult<()> {
    writeln!(out, "K* = {}", fmt_matrix(sol.k_star.gain()))?;
    writeln!(out, "C(K*) = {:.12}", sol.opt_cost)?;
    writeln!(out, "residual = {:e}", sol.residual)?;
    writeln!(out, "iterations = {}", sol.iterations)?;
    Ok(())
}

fn load_with_k0(path: &Path) -> CliResult<(Problem, Gain)> {
    let (problem, k0) = load_problem(path)?;
    let k0 = k0.unwrap_or_else(|| Gain::zeros(problem.input_dim(), problem.state_dim()));
    Ok((problem, k0))
}

/// Rejects a non-stabilizing `K0` with the reason spelled out.
fn require_stable(problem: &Problem, k0: &Gain) -> CliResult<()> {
    match lqrpg::lqr::cost(problem, k0) {
        Ok(_) => Ok(()),
        Err(e @ Error::UnstablePolicy(_)) => Err(CliError::Context {
            message: format!("initial policy K0 must have finite cost C(K0) (spectral radius of A - B K0 below one): {e}"),
            source: e,
        }),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeRun {
    pub policy: Gain,
    pub trace: Trace,
    pub oracle: Riccati,
}

pub fn cmd_optimize(args: &OptimizeArgs) -> CliResult<OptimizeRun> {
    if !(args.tol >= 0.0) {
        return Err(Error::InvalidInput(format!("--tol must be non-negative, got {}", args.tol)).into());
    }
    let (problem, k0) = load_with_k0(&args.problem)?;
    require_stable(&problem, &k0)?;
    let oracle = riccati::solve_dare_default(&problem)?;
    let step_rule = match args.steps {
        StepsArg::Paper => StepRule::PaperFixed,
        StepsArg::Backtracking => StepRule::backtracking(),
        StepsArg::Constant(eta) => StepRule::Constant(eta),
    };
    let config = SolverConfig::new(args.method.into(), step_rule, args.max_iters, StopRule::Gap(args.tol * oracle.opt_cost));
    let (policy, trace) = optimize(&problem, &k0, &config, Some(&oracle))?;
    if let Some(path) = &args.trace {
        save_trace_csv(path, &trace, TraceKind::Exact)?;
    }
    Ok(OptimizeRun { policy, trace, oracle })
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Converged => "converged",
        Status::BudgetExhausted => "budget exhausted",
        Status::Diverged => "diverged (step left the stabilizing set)",
        Status::Stalled => "stalled (no acceptable backtracking step)",
    }
}

fn report_optimize(run: &OptimizeRun, out: &mut dyn Write) -> CliResult<()> {
    writeln!(out, "status = {}", status_name(run.trace.status))?;
    writeln!(out, "iterations = {}", run.trace.iterations())?;
    if let Some(eta) = run.trace.step_size {
        writeln!(out, "step = {eta:e}")?;
    }
    if let Some(c) = run.trace.final_cost() {
        writeln!(out, "C(K) = {c:.12}")?;
    }
    writeln!(out, "C(K*) = {:.12}", run.oracle.opt_cost)?;
    if let Some(g) = run.trace.final_gap() {
        writeln!(out, "gap = {g:e}")?;
    }
    writeln!(out, "K = {}", fmt_matrix(run.policy.gain()))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LearnRun {
    pub policy: Gain,
    pub trace: Trace,
    pub oracle: Riccati,
    pub config: ZerothOrderConfig<f64>,
}

/// Model-free run. Exact costs and the Riccati optimum are used only for
/// the trace and the default step; updates see rollouts alone.
pub fn cmd_learn(args: &LearnArgs) -> CliResult<LearnRun> {
    if !(args.target_gap > 0.0 && args.target_gap.is_finite()) {
        return Err(Error::InvalidInput(format!("--target-gap must be positive, got {}", args.target_gap)).into());
    }
    let (problem, k0) = load_with_k0(&args.problem)?;
    require_stable(&problem, &k0)?;
    let oracle = riccati::solve_dare_default(&problem)?;
    let stop_gap = args.target_gap * oracle.opt_cost;

    let mut config = ZerothOrderConfig::heuristic(&problem, &k0, args.m, stop_gap)?;
    if let Some(r) = args.radius {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidInput(format!("--radius must be positive, got {r}")).into());
        }
        config.radius = r;
    }
    config.horizon = match args.horizon {
        HorizonArg::Fixed(l) => l,
        HorizonArg::Auto => {
            let eps = config.radius * config.radius * stop_gap / (10.0 * config.param_dim as f64);
            let cost0 = lqrpg::lqr::cost(&problem, &k0)?;
            horizon_for_accuracy(&problem, cost0, eps, lqrpg::matkit::spectral_norm(k0.gain())?)?
        }
    };
    config.step = match args.eta {
        EtaArg::Paper => None,
        EtaArg::Constant(eta) => Some(eta),
    };
    config.max_outer_iters = args.iters;
    config.stop_gap = args.stop_at_target.then_some(stop_gap);

    let sim = Simulator::new(&problem);
    let reporter = Reporter { problem: &problem, solution: Some(&oracle) };
    match run_modelfree(&sim, &k0, &config, args.method.into(), args.seed, &reporter) {
        Ok((policy, trace)) => {
            if let Some(path) = &args.trace {
                save_trace_csv(path, &trace, TraceKind::ModelFree)?;
            }
            Ok(LearnRun { policy, trace, oracle, config })
        }
        Err(ModelFreeFailure { error, policy, trace }) => {
            if let Some(path) = &args.trace {
                save_trace_csv(path, &trace, TraceKind::ModelFree)?;
            }
            let message = format!(
                "model-free run stopped after {} iteration(s): {error}; last policy K = {}",
                trace.iterations(),
                fmt_matrix(policy.gain())
            );
            Err(CliError::Context { message, source: error })
        }
    }
}

fn report_learn(run: &LearnRun, out: &mut dyn Write) -> CliResult<()> {
    let c = &run.config;
    writeln!(out, "m = {}, horizon = {}, radius = {:e}", c.m, c.horizon, c.radius)?;
    if let Some(eta) = run.trace.step_size {
        writeln!(out, "step = {eta:e}")?;
    }
    writeln!(out, "status = {}", status_name(run.trace.status))?;
    writeln!(out, "iterations = {}", run.trace.iterations())?;
    if let Some(r) = run.trace.records.last() {
        writeln!(out, "C(K) = {:.12}", r.cost)?;
        writeln!(out, "samples = {}", r.samples)?;
    }
    writeln!(out, "C(K*) = {:.12}", run.oracle.opt_cost)?;
    if let Some(g) = run.trace.final_gap() {
        writeln!(out, "gap = {g:e}")?;
    }
    writeln!(out, "K = {}", fmt_matrix(run.policy.gain()))?;
    Ok(())
}

pub fn cmd_verify(args: &VerifyArgs) -> CliResult<SuiteReport> {
    Ok(run_suite(args.seed, args.trials, args.min_dim, args.max_dim)?)
}
