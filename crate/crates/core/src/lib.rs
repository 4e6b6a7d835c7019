//! Direct policy optimization for the infinite-horizon discrete-time linear
//! quadratic regulator.
//!
//! The library evaluates static linear policies `u = -Kx` exactly (value
//! matrix, state covariance, cost and gradient), optimizes them with exact
//! gradient descent, natural policy gradient and Gauss-Newton steps, and
//! model-free with zeroth-order gradient estimates from simulated
//! rollouts. A Riccati solver provides the ground-truth optimum and the
//! [`verify`] module certifies the landscape inequalities numerically.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the double-precision types used by the command line.

pub mod error;
pub mod exact_opt;
pub mod io;
pub mod lqr;
pub mod matkit;
pub mod riccati;
pub mod scalar;
pub mod sim;
pub mod verify;
pub mod zorder;

pub use error::{Error, Result};
pub use exact_opt::{optimize, paper_step_size, ConvergenceTrace, Method, SolverConfig, StepRule, StopRule};
pub use lqr::{evaluate, InitKind, InitialStateModel, LqrProblem, Policy, PolicyEvaluation};
pub use matkit::Matrix;
pub use riccati::{solve_dare, RiccatiSolution};
pub use scalar::Scalar;
pub use sim::{RngHandle, Trajectory};
pub use zorder::{estimate, run_modelfree, GradientEstimate, ModelFreeMethod, ZerothOrderConfig};

pub type Mat = Matrix<f64>;
pub type Problem = LqrProblem<f64>;
pub type Gain = Policy<f64>;
pub type Evaluation = PolicyEvaluation<f64>;
pub type Riccati = RiccatiSolution<f64>;
pub type Trace = ConvergenceTrace<f64>;

pub type Mat32 = Matrix<f32>;
pub type Problem32 = LqrProblem<f32>;
