//! Covariance steering problem data and validation.

mod io;
mod tightening;

pub use io::{ChanceConstraintFile, CovCapFile, ProblemFile, RefsFile, WaypointFile};
pub use tightening::{
    build_linear_chance_row, linearize_sqrt, nonconvex_residual, tighten_cantelli, tighten_gaussian, LinearChanceRow,
    Tightening,
};

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CsError, Result};
use crate::linalg;
use crate::model::LtvSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminalMode {
    /// `Σ_N = Σ_f`
    #[default]
    #[serde(alias = "eq")]
    Equality,
    /// `Σ_N ⪯ Σ_f`
    #[serde(alias = "ineq")]
    Inequality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    State,
    Control,
}

/// `P(αᵀz_k ≤ β) ≥ 1 − ε` on the state (`z = x`) or input (`z = u`) at each
/// listed step.
#[derive(Debug, Clone, PartialEq)]
pub struct ChanceConstraint {
    pub kind: ConstraintKind,
    pub alpha: DVector<f64>,
    pub beta: f64,
    pub eps: f64,
    pub steps: Vec<usize>,
}

/// Mean equality `E μ_k = target`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointConstraint {
    pub step: usize,
    pub selector: DMatrix<f64>,
    pub target: DVector<f64>,
}

/// `E Σ_k Eᵀ ⪯ S` at each listed step.
#[derive(Debug, Clone, PartialEq)]
pub struct CovCapConstraint {
    pub steps: Vec<usize>,
    pub selector: DMatrix<f64>,
    pub cap: DMatrix<f64>,
}

/// Linearization points for the square-root terms of the chance rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationRefs {
    pub sigma_r: DMatrix<f64>,
    pub y_r: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsProblem {
    pub sys: LtvSystem,
    pub q_seq: Vec<DMatrix<f64>>,
    pub r_seq: Vec<DMatrix<f64>>,
    pub mu_i: DVector<f64>,
    pub sigma_i: DMatrix<f64>,
    pub mu_f: DVector<f64>,
    pub sigma_f: DMatrix<f64>,
    pub terminal_mode: TerminalMode,
    pub chance_constraints: Vec<ChanceConstraint>,
    pub waypoints: Vec<WaypointConstraint>,
    pub cov_caps: Vec<CovCapConstraint>,
    pub tightening: Tightening,
    pub refs: Option<LinearizationRefs>,
}

impl CsProblem {
    /// Unconstrained problem with time-invariant weights `Q`, `R`.
    pub fn new(
        sys: LtvSystem,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        mu_i: DVector<f64>,
        sigma_i: DMatrix<f64>,
        mu_f: DVector<f64>,
        sigma_f: DMatrix<f64>,
        terminal_mode: TerminalMode,
    ) -> Self {
        let horizon = sys.horizon();
        Self {
            sys,
            q_seq: vec![q; horizon],
            r_seq: vec![r; horizon],
            mu_i,
            sigma_i,
            mu_f,
            sigma_f,
            terminal_mode,
            chance_constraints: Vec::new(),
            waypoints: Vec::new(),
            cov_caps: Vec::new(),
            tightening: Tightening::Gaussian,
            refs: None,
        }
    }

    pub fn horizon(&self) -> usize {
        self.sys.horizon()
    }

    /// True when no constraint couples mean and covariance.
    pub fn is_unconstrained(&self) -> bool {
        self.chance_constraints.is_empty() && self.waypoints.is_empty() && self.cov_caps.is_empty()
    }

    pub fn state_constraints(&self) -> impl Iterator<Item = &ChanceConstraint> {
        self.chance_constraints.iter().filter(|c| c.kind == ConstraintKind::State)
    }

    pub fn control_constraints(&self) -> impl Iterator<Item = &ChanceConstraint> {
        self.chance_constraints.iter().filter(|c| c.kind == ConstraintKind::Control)
    }

    /// Errors with [`CsError::Validation`] if [`validate`] reports anything.
    pub fn ensure_valid(&self) -> Result<()> {
        let diags = validate(self);
        if diags.is_empty() {
            Ok(())
        } else {
            Err(CsError::Validation(diags))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

struct Diagnostics(Vec<Diagnostic>);

impl Diagnostics {
    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic { field: field.into(), message: message.into() });
    }

    fn shape(&mut self, field: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> bool {
        if m.shape() != (rows, cols) {
            self.push(field, format!("expected {rows}x{cols}, got {}x{}", m.nrows(), m.ncols()));
            false
        } else {
            true
        }
    }

    fn sym_pd(&mut self, field: &str, m: &DMatrix<f64>, n: usize) {
        if !self.shape(field, m, n, n) {
            return;
        }
        if !linalg::is_symmetric(m, 1e-10) {
            self.push(field, "not symmetric");
        } else if !linalg::is_pd(m) {
            self.push(field, "not positive definite");
        }
    }
}

/// Checks every structural invariant of `problem`. An empty list means the
/// problem is well formed.
pub fn validate(problem: &CsProblem) -> Vec<Diagnostic> {
    let mut d = Diagnostics(Vec::new());
    let (n, p, horizon) = (problem.sys.n(), problem.sys.p(), problem.horizon());

    if problem.q_seq.len() != horizon {
        d.push("Q", format!("expected {horizon} weights, got {}", problem.q_seq.len()));
    }
    for (k, q) in problem.q_seq.iter().enumerate() {
        let field = format!("Q[{k}]");
        if d.shape(&field, q, n, n) {
            if !linalg::is_symmetric(q, 1e-10) {
                d.push(field, "not symmetric");
            } else if !linalg::is_psd(q) {
                d.push(field, "not positive semidefinite");
            }
        }
    }
    if problem.r_seq.len() != horizon {
        d.push("R", format!("expected {horizon} weights, got {}", problem.r_seq.len()));
    }
    for (k, r) in problem.r_seq.iter().enumerate() {
        let field = format!("R[{k}]");
        if d.shape(&field, r, p, p) {
            if !linalg::is_symmetric(r, 1e-10) {
                d.push(field, "not symmetric");
            } else if !linalg::is_pd(r) {
                d.push(field, "R not positive definite");
            }
        }
    }
    if problem.mu_i.len() != n {
        d.push("mu_i", format!("expected length {n}, got {}", problem.mu_i.len()));
    }
    if problem.mu_f.len() != n {
        d.push("mu_f", format!("expected length {n}, got {}", problem.mu_f.len()));
    }
    d.sym_pd("Sigma_i", &problem.sigma_i, n);
    d.sym_pd("Sigma_f", &problem.sigma_f, n);

    for (i, cc) in problem.chance_constraints.iter().enumerate() {
        let field = format!("chance_constraints[{i}]");
        let dim = match cc.kind {
            ConstraintKind::State => n,
            ConstraintKind::Control => p,
        };
        if cc.alpha.len() != dim {
            d.push(&field, format!("alpha has length {}, expected {dim}", cc.alpha.len()));
        } else if cc.alpha.amax() == 0.0 {
            d.push(&field, "alpha must be nonzero");
        }
        if !(cc.eps > 0.0 && cc.eps <= 0.5) {
            d.push(&field, format!("eps = {} outside (0, 0.5]", cc.eps));
        }
        if !cc.beta.is_finite() {
            d.push(&field, "beta must be finite");
        }
        if cc.steps.is_empty() {
            d.push(&field, "no steps selected");
        }
        // states exist at 0..=N, inputs at 0..N
        let last = match cc.kind {
            ConstraintKind::State => horizon,
            ConstraintKind::Control => horizon - 1,
        };
        if let Some(&k) = cc.steps.iter().find(|&&k| k > last) {
            d.push(&field, format!("step {k} outside 0..={last}"));
        }
    }
    if !problem.chance_constraints.is_empty() {
        match &problem.refs {
            None => d.push("refs", "chance constraints need linearization references"),
            Some(refs) => {
                d.sym_pd("refs.Sigma_r", &refs.sigma_r, n);
                d.sym_pd("refs.Y_r", &refs.y_r, p);
            }
        }
    }

    for (i, wp) in problem.waypoints.iter().enumerate() {
        let field = format!("waypoints[{i}]");
        if wp.step == 0 || wp.step >= horizon {
            d.push(&field, format!("step {} must lie strictly inside 0..{horizon}", wp.step));
        }
        if wp.selector.ncols() != n || wp.selector.nrows() == 0 {
            d.push(&field, format!("selector must be m x {n} with m > 0"));
        } else if wp.target.len() != wp.selector.nrows() {
            d.push(&field, "target length differs from selector rows");
        }
    }

    for (i, cap) in problem.cov_caps.iter().enumerate() {
        let field = format!("cov_caps[{i}]");
        if cap.steps.is_empty() {
            d.push(&field, "no steps selected");
        }
        if let Some(&k) = cap.steps.iter().find(|&&k| k == 0 || k > horizon) {
            d.push(&field, format!("step {k} outside 1..={horizon}"));
        }
        if cap.selector.ncols() != n || cap.selector.nrows() == 0 {
            d.push(&field, format!("selector must be m x {n} with m > 0"));
        } else {
            d.sym_pd(&format!("{field}.S"), &cap.cap, cap.selector.nrows());
        }
    }
    d.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem() -> CsProblem {
        let one = |x: f64| DMatrix::from_element(1, 1, x);
        let sys = LtvSystem::time_invariant(one(2.0), one(1.0), one(1.0), 2).unwrap();
        CsProblem::new(
            sys,
            one(0.0),
            one(1.0),
            DVector::zeros(1),
            one(1.0),
            DVector::zeros(1),
            one(2.0),
            TerminalMode::Equality,
        )
    }

    #[test]
    fn well_formed_problem_passes() {
        assert!(validate(&scalar_problem()).is_empty());
        assert!(scalar_problem().ensure_valid().is_ok());
    }

    #[test]
    fn singular_r_is_reported() {
        let mut p = scalar_problem();
        p.r_seq[1] = DMatrix::zeros(1, 1);
        let diags = validate(&p);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].field, "R[1]");
        assert!(diags[0].message.contains("R not positive definite"));
    }

    #[test]
    fn asymmetric_initial_covariance_is_reported() {
        let sys =
            LtvSystem::time_invariant(DMatrix::identity(2, 2), DMatrix::identity(2, 1), DMatrix::identity(2, 2), 3)
                .unwrap();
        let p = CsProblem::new(
            sys,
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 1.0]),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            TerminalMode::Equality,
        );
        let diags = validate(&p);
        assert!(diags.iter().any(|d| d.field == "Sigma_i" && d.message == "not symmetric"));
    }

    #[test]
    fn constraint_diagnostics() {
        let mut p = scalar_problem();
        p.chance_constraints.push(ChanceConstraint {
            kind: ConstraintKind::State,
            alpha: DVector::zeros(1),
            beta: 1.0,
            eps: 0.7,
            steps: vec![5],
        });
        p.waypoints.push(WaypointConstraint { step: 2, selector: DMatrix::identity(1, 1), target: DVector::zeros(1) });
        p.cov_caps.push(CovCapConstraint {
            steps: vec![0],
            selector: DMatrix::identity(1, 1),
            cap: DMatrix::identity(1, 1),
        });
        let fields: Vec<String> = validate(&p).into_iter().map(|d| d.field).collect();
        assert_eq!(fields.iter().filter(|f| f.as_str() == "chance_constraints[0]").count(), 3);
        assert!(fields.contains(&"refs".to_string()));
        assert!(fields.contains(&"waypoints[0]".to_string()));
        assert!(fields.contains(&"cov_caps[0]".to_string()));
    }
}
