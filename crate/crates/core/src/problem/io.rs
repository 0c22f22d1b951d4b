//! JSON schema for problem files.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    ChanceConstraint, ConstraintKind, CovCapConstraint, CsProblem, LinearizationRefs, TerminalMode, Tightening,
    WaypointConstraint,
};
use crate::error::{CsError, Result};
use crate::linalg::{matrix_to_rows, rows_to_matrix};
use crate::model::{LtvSystem, MatrixSeq, SystemFile};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub system: SystemFile,
    #[serde(rename = "Q")]
    pub q: MatrixSeq,
    #[serde(rename = "R")]
    pub r: MatrixSeq,
    pub mu_i: Vec<f64>,
    #[serde(rename = "Sigma_i")]
    pub sigma_i: Rows,
    pub mu_f: Vec<f64>,
    #[serde(rename = "Sigma_f")]
    pub sigma_f: Rows,
    #[serde(default)]
    pub terminal_mode: TerminalMode,
    #[serde(default)]
    pub chance_constraints: Vec<ChanceConstraintFile>,
    #[serde(default)]
    pub waypoints: Vec<WaypointFile>,
    #[serde(default)]
    pub cov_caps: Vec<CovCapFile>,
    #[serde(default)]
    pub tightening: Tightening,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refs: Option<RefsFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChanceConstraintFile {
    pub kind: ConstraintKind,
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub eps: f64,
    /// Defaults to every step: `0..=N` for states, `0..N` for inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaypointFile {
    pub step: usize,
    #[serde(rename = "E")]
    pub selector: Rows,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovCapFile {
    /// Defaults to every step `1..=N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<usize>>,
    #[serde(rename = "E")]
    pub selector: Rows,
    #[serde(rename = "S")]
    pub cap: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefsFile {
    #[serde(rename = "Sigma_r")]
    pub sigma_r: Rows,
    #[serde(rename = "Y_r")]
    pub y_r: Rows,
}

fn matrix(name: &str, rows: &Rows) -> Result<DMatrix<f64>> {
    rows_to_matrix(rows).ok_or_else(|| CsError::InvalidInput(format!("{name}: ragged matrix rows")))
}

impl ProblemFile {
    pub fn into_problem(&self) -> Result<CsProblem> {
        let sys = LtvSystem::from_file(&self.system)?;
        let horizon = sys.horizon();
        let chance_constraints = self
            .chance_constraints
            .iter()
            .map(|c| ChanceConstraint {
                kind: c.kind,
                alpha: DVector::from_vec(c.alpha.clone()),
                beta: c.beta,
                eps: c.eps,
                steps: c.steps.clone().unwrap_or_else(|| match c.kind {
                    ConstraintKind::State => (0..=horizon).collect(),
                    ConstraintKind::Control => (0..horizon).collect(),
                }),
            })
            .collect();
        let waypoints = self
            .waypoints
            .iter()
            .enumerate()
            .map(|(i, w)| {
                Ok(WaypointConstraint {
                    step: w.step,
                    selector: matrix(&format!("waypoints[{i}].E"), &w.selector)?,
                    target: DVector::from_vec(w.target.clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cov_caps = self
            .cov_caps
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Ok(CovCapConstraint {
                    steps: c.steps.clone().unwrap_or_else(|| (1..=horizon).collect()),
                    selector: matrix(&format!("cov_caps[{i}].E"), &c.selector)?,
                    cap: matrix(&format!("cov_caps[{i}].S"), &c.cap)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let refs = match &self.refs {
            None => None,
            Some(r) => Some(LinearizationRefs {
                sigma_r: matrix("refs.Sigma_r", &r.sigma_r)?,
                y_r: matrix("refs.Y_r", &r.y_r)?,
            }),
        };
        Ok(CsProblem {
            q_seq: self.q.expand("Q", horizon)?,
            r_seq: self.r.expand("R", horizon)?,
            mu_i: DVector::from_vec(self.mu_i.clone()),
            sigma_i: matrix("Sigma_i", &self.sigma_i)?,
            mu_f: DVector::from_vec(self.mu_f.clone()),
            sigma_f: matrix("Sigma_f", &self.sigma_f)?,
            terminal_mode: self.terminal_mode,
            chance_constraints,
            waypoints,
            cov_caps,
            tightening: self.tightening,
            refs,
            sys,
        })
    }

    pub fn from_problem(problem: &CsProblem) -> Self {
        let seq = |ms: &[DMatrix<f64>]| {
            if ms.windows(2).all(|w| w[0] == w[1]) {
                MatrixSeq::Single(matrix_to_rows(&ms[0]))
            } else {
                MatrixSeq::Seq(ms.iter().map(matrix_to_rows).collect())
            }
        };
        ProblemFile {
            system: problem.sys.to_file(),
            q: seq(&problem.q_seq),
            r: seq(&problem.r_seq),
            mu_i: problem.mu_i.iter().copied().collect(),
            sigma_i: matrix_to_rows(&problem.sigma_i),
            mu_f: problem.mu_f.iter().copied().collect(),
            sigma_f: matrix_to_rows(&problem.sigma_f),
            terminal_mode: problem.terminal_mode,
            chance_constraints: problem
                .chance_constraints
                .iter()
                .map(|c| ChanceConstraintFile {
                    kind: c.kind,
                    alpha: c.alpha.iter().copied().collect(),
                    beta: c.beta,
                    eps: c.eps,
                    steps: Some(c.steps.clone()),
                })
                .collect(),
            waypoints: problem
                .waypoints
                .iter()
                .map(|w| WaypointFile {
                    step: w.step,
                    selector: matrix_to_rows(&w.selector),
                    target: w.target.iter().copied().collect(),
                })
                .collect(),
            cov_caps: problem
                .cov_caps
                .iter()
                .map(|c| CovCapFile {
                    steps: Some(c.steps.clone()),
                    selector: matrix_to_rows(&c.selector),
                    cap: matrix_to_rows(&c.cap),
                })
                .collect(),
            tightening: problem.tightening,
            refs: problem
                .refs
                .as_ref()
                .map(|r| RefsFile { sigma_r: matrix_to_rows(&r.sigma_r), y_r: matrix_to_rows(&r.y_r) }),
        }
    }
}

impl CsProblem {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(text)?;
        file.into_problem()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ProblemFile::from_problem(self))?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
