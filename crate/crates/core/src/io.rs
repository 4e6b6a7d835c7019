//! Problem files (JSON) and convergence traces (CSV).
//!
//! ```json
//! {
//!   "A": [[0.5]], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]],
//!   "init": {"kind": "sphere", "radius": 1.0},
//!   "K0": [[0.0]]
//! }
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact_opt::ConvergenceTrace;
use crate::lqr::{InitKind, InitialStateModel, LqrProblem, Policy};
use crate::matkit::Matrix;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Cube,
    Sphere { radius: f64 },
    FixedCovariance { sigma0: Rows },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "Q")]
    pub q: Rows,
    #[serde(rename = "R")]
    pub r: Rows,
    pub init: InitSpec,
    #[serde(rename = "K0", default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<Rows>,
}

fn matrix(name: &str, rows: &Rows) -> Result<Matrix<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("\"{name}\" is empty")));
    }
    Matrix::from_rows(rows).map_err(|e| Error::InvalidInput(format!("\"{name}\": {e}")))
}

impl ProblemFile {
    /// Parses JSON; syntax and schema errors carry line and column.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("problem file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Validated problem and optional initial policy.
    pub fn build(&self) -> Result<(LqrProblem<f64>, Option<Policy<f64>>)> {
        let a = matrix("A", &self.a)?;
        let d = a.rows();
        let init = match &self.init {
            InitSpec::Cube => InitialStateModel::cube(d),
            InitSpec::Sphere { radius } => InitialStateModel::sphere(d, *radius)?,
            InitSpec::FixedCovariance { sigma0 } => InitialStateModel::fixed_covariance(matrix("sigma0", sigma0)?)?,
        };
        let problem = LqrProblem::new(a, matrix("B", &self.b)?, matrix("Q", &self.q)?, matrix("R", &self.r)?, init)?;
        let k0 = match &self.k0 {
            Some(rows) => {
                let k = Policy::new(matrix("K0", rows)?);
                problem.check_policy(&k)?;
                Some(k)
            }
            None => None,
        };
        Ok((problem, k0))
    }

    pub fn from_problem(problem: &LqrProblem<f64>, k0: Option<&Policy<f64>>) -> Self {
        let init = match problem.init().kind() {
            InitKind::Cube => InitSpec::Cube,
            InitKind::Sphere => InitSpec::Sphere { radius: problem.init().radius().expect("sphere radius") },
            InitKind::FixedCovariance => InitSpec::FixedCovariance { sigma0: problem.sigma0().to_rows() },
        };
        Self {
            a: problem.a().to_rows(),
            b: problem.b().to_rows(),
            q: problem.q().to_rows(),
            r: problem.r().to_rows(),
            init,
            k0: k0.map(|k| k.gain().to_rows()),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("problem serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

/// Reads and validates a problem file.
pub fn load_problem(path: &Path) -> Result<(LqrProblem<f64>, Option<Policy<f64>>)> {
    ProblemFile::load(path)?.build()
}

/// Last column of a trace CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    /// `iter,cost,gap,grad_fro,step,wall_ms`
    Exact,
    /// `iter,cost,gap,grad_fro,step,samples_cum`; no timing, so identical
    /// runs give identical bytes.
    ModelFree,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes a trace as CSV with a header row. Missing gaps are empty fields.
pub fn write_trace_csv<W: Write>(out: W, trace: &ConvergenceTrace<f64>, kind: TraceKind) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let last = match kind {
        TraceKind::Exact => "wall_ms",
        TraceKind::ModelFree => "samples_cum",
    };
    w.write_record(["iter", "cost", "gap", "grad_fro", "step", last]).map_err(csv_err)?;
    for r in &trace.records {
        let last = match kind {
            TraceKind::Exact => format!("{:.3}", r.wall_ms),
            TraceKind::ModelFree => r.samples.to_string(),
        };
        w.write_record([
            r.iter.to_string(),
            r.cost.to_string(),
            r.gap.map(|g| g.to_string()).unwrap_or_default(),
            r.grad_fro.to_string(),
            r.step.to_string(),
            last,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

pub fn save_trace_csv(path: &Path, trace: &ConvergenceTrace<f64>, kind: TraceKind) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_trace_csv(std::io::BufWriter::new(file), trace, kind)
}
