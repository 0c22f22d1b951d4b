//! Conic solver interface, a Clarabel adapter and an independent
//! post-solve check of the returned point.

use std::fmt;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus as ClStatus, SupportedConeT};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CsError, Result};
use crate::linalg;
use crate::transcriber::{unsvec, Cone, ConicProgram};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub max_iter: u32,
    pub verbose: bool,
    /// Seconds; `None` for no limit.
    pub time_limit: Option<f64>,
    /// Let the solver split sparse PSD blocks into overlapping cliques.
    #[serde(default)]
    pub chordal_decomposition: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_gap: 1e-10,
            tol_feas: 1e-8,
            max_iter: 200,
            verbose: false,
            time_limit: None,
            chordal_decomposition: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    IterationLimit,
    TimeLimit,
    NumericalError,
    /// The program was not attempted because it exceeds the configured size.
    SizeLimit,
    /// The program was not attempted on request.
    Skipped,
}

impl SolveStatus {
    pub fn is_optimal(self) -> bool {
        self == SolveStatus::Optimal
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::PrimalInfeasible => "primal_infeasible",
            SolveStatus::DualInfeasible => "dual_infeasible",
            SolveStatus::IterationLimit => "iteration_limit",
            SolveStatus::TimeLimit => "time_limit",
            SolveStatus::NumericalError => "numerical_error",
            SolveStatus::SizeLimit => "size_limit",
            SolveStatus::Skipped => "skipped",
        }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Independent residuals of a returned primal point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    /// Largest `|b − Ax|` over equality rows, relative to `1 + |b|`.
    pub equality_residual: f64,
    /// Largest distance outside a nonnegative, second-order or PSD cone,
    /// relative to the row scale.
    pub cone_violation: f64,
    /// `|primal − dual| / (1 + |primal|)` as reported by the solver.
    pub relative_gap: f64,
}

impl Verification {
    pub fn passes(&self, tol: f64) -> bool {
        self.equality_residual <= tol && self.cone_violation <= tol && self.relative_gap <= tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSolution {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    /// Dual vector, one slice per cone in program order.
    pub dual: Vec<f64>,
    /// Objective including the constant offset.
    pub objective: f64,
    pub dual_objective: f64,
    pub wall_time: f64,
    pub iterations: u32,
    pub verification: Verification,
}

impl RawSolution {
    pub fn dual_blocks(&self, program: &ConicProgram) -> Vec<Vec<f64>> {
        program.cone_ranges().into_iter().map(|r| self.dual[r].to_vec()).collect()
    }
}

pub trait ConicBackend {
    fn name(&self) -> &'static str;
    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> Result<RawSolution>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

/// Tolerance for accepting a reduced-accuracy termination.
const ALMOST_TOL: f64 = 1e-5;

fn to_csc(program: &ConicProgram) -> CscMatrix<f64> {
    let (mut i, mut j, mut v) = (Vec::new(), Vec::new(), Vec::new());
    for &(r, c, x) in &program.triplets {
        i.push(r);
        j.push(c);
        v.push(x);
    }
    CscMatrix::new_from_triplets(program.num_rows(), program.num_vars, i, j, v)
}

fn to_cones(program: &ConicProgram) -> Vec<SupportedConeT<f64>> {
    program
        .cones
        .iter()
        .map(|c| match *c {
            Cone::Zero(d) => SupportedConeT::ZeroConeT(d),
            Cone::Nonnegative(d) => SupportedConeT::NonnegativeConeT(d),
            Cone::SecondOrder(d) => SupportedConeT::SecondOrderConeT(d),
            Cone::Psd(s) => SupportedConeT::PSDTriangleConeT(s),
        })
        .collect()
}

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> Result<RawSolution> {
        program.check()?;
        let start = Instant::now();
        let cl_settings = DefaultSettingsBuilder::default()
            .verbose(settings.verbose)
            .max_iter(settings.max_iter)
            .time_limit(settings.time_limit.unwrap_or(f64::INFINITY))
            .tol_gap_abs(settings.tol_gap)
            .tol_gap_rel(settings.tol_gap)
            .tol_feas(settings.tol_feas)
            .chordal_decomposition_enable(settings.chordal_decomposition)
            .build()
            .map_err(|e| CsError::MalformedProgram(format!("solver settings: {e}")))?;
        let n = program.num_vars;
        let p = CscMatrix::zeros((n, n));
        let a = to_csc(program);
        let cones = to_cones(program);
        let mut solver = DefaultSolver::new(&p, &program.objective, &a, &program.rhs, &cones, cl_settings)
            .map_err(|e| CsError::MalformedProgram(format!("solver rejected program: {e}")))?;
        solver.solve();
        let sol = &solver.solution;
        let mut raw = RawSolution {
            status: SolveStatus::NumericalError,
            primal: sol.x.clone(),
            dual: sol.z.clone(),
            objective: sol.obj_val + program.objective_offset,
            dual_objective: sol.obj_val_dual + program.objective_offset,
            wall_time: start.elapsed().as_secs_f64(),
            iterations: sol.iterations,
            verification: Verification::default(),
        };
        raw.verification = verify(program, &raw.primal, raw.objective, raw.dual_objective);
        raw.status = match sol.status {
            ClStatus::Solved => SolveStatus::Optimal,
            ClStatus::AlmostSolved if raw.verification.passes(ALMOST_TOL) => SolveStatus::Optimal,
            ClStatus::PrimalInfeasible | ClStatus::AlmostPrimalInfeasible => SolveStatus::PrimalInfeasible,
            ClStatus::DualInfeasible | ClStatus::AlmostDualInfeasible => SolveStatus::DualInfeasible,
            ClStatus::MaxIterations => SolveStatus::IterationLimit,
            ClStatus::MaxTime => SolveStatus::TimeLimit,
            _ => SolveStatus::NumericalError,
        };
        Ok(raw)
    }
}

/// Largest violation of `s ∈ K` for the slack of one cone, scaled by `scale`.
fn cone_violation(cone: &Cone, s: &[f64]) -> f64 {
    let scale = 1.0 + s.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let raw = match *cone {
        Cone::Zero(_) => 0.0,
        Cone::Nonnegative(_) => s.iter().fold(0.0f64, |m, &x| m.max(-x)),
        Cone::SecondOrder(_) => {
            let tail = s[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
            (tail - s[0]).max(0.0)
        }
        Cone::Psd(_) => {
            let m: DMatrix<f64> = unsvec(s).expect("psd slice has triangular length");
            (-linalg::min_eigenvalue(&m)).max(0.0)
        }
    };
    raw / scale
}

/// Recompute residuals of a primal point directly from the program data.
pub fn verify(program: &ConicProgram, x: &[f64], objective: f64, dual_objective: f64) -> Verification {
    let s = program.slack(x);
    let mut v = Verification {
        relative_gap: (objective - dual_objective).abs() / (1.0 + objective.abs()),
        ..Default::default()
    };
    for (cone, range) in program.cones.iter().zip(program.cone_ranges()) {
        match cone {
            Cone::Zero(_) => {
                for i in range {
                    v.equality_residual = v.equality_residual.max(s[i].abs() / (1.0 + program.rhs[i].abs()));
                }
            }
            _ => v.cone_violation = v.cone_violation.max(cone_violation(cone, &s[range])),
        }
    }
    v
}
