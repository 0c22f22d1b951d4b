//! Solution JSON and the per-step trajectory CSV.
//!
//! CSV columns: `k`, `mu_0 … mu_{n-1}`, `sigma_i_j` for `i ≤ j` in
//! row-major order, `v_0 … v_{p-1}`. The final row (`k = N`) leaves the `v`
//! columns empty. Empirical files use the same layout with an `emp_` prefix
//! on every column except `k`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{LosslessnessReport, SteeringSolution};
use crate::backend::SolveStatus;
use crate::error::{CsError, Result};
use crate::linalg::{matrix_to_rows, rows_to_matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
    #[serde(rename = "U", skip_serializing_if = "Option::is_none", default)]
    pub u: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Y", skip_serializing_if = "Option::is_none", default)]
    pub y: Option<Vec<Vec<f64>>>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none", default)]
    pub k_gain: Option<Vec<Vec<f64>>>,
    pub mu: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub v: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub cost: f64,
    pub status: SolveStatus,
    pub solve_time: f64,
    pub iterations: u32,
    pub certificate: LosslessnessReport,
    pub steps: Vec<StepRecord>,
}

impl SolutionFile {
    pub fn from_solution(sol: &SteeringSolution) -> Self {
        let horizon = sol.horizon();
        let steps = (0..=horizon)
            .map(|k| {
                let at = |seq: &[DMatrix<f64>]| (k < horizon).then(|| matrix_to_rows(&seq[k]));
                StepRecord {
                    k,
                    sigma: matrix_to_rows(&sol.sigma[k]),
                    u: at(&sol.u),
                    y: at(&sol.y),
                    k_gain: at(&sol.gains),
                    mu: sol.mu[k].iter().copied().collect(),
                    v: (k < horizon).then(|| sol.v[k].iter().copied().collect()),
                }
            })
            .collect();
        Self {
            cost: sol.cost,
            status: sol.status,
            solve_time: sol.solve_time,
            iterations: sol.iterations,
            certificate: sol.certificate.clone(),
            steps,
        }
    }

    pub fn into_solution(&self) -> Result<SteeringSolution> {
        let bad = |what: &str, k: usize| CsError::InvalidInput(format!("solution file: malformed {what} at step {k}"));
        let mat = |rows: &[Vec<f64>], what: &str, k: usize| rows_to_matrix(rows).ok_or_else(|| bad(what, k));
        let horizon = self
            .steps
            .len()
            .checked_sub(1)
            .ok_or_else(|| CsError::InvalidInput("solution file has no steps".into()))?;
        let mut sol = SteeringSolution {
            sigma: Vec::new(),
            u: Vec::new(),
            y: Vec::new(),
            mu: Vec::new(),
            v: Vec::new(),
            gains: Vec::new(),
            cost: self.cost,
            certificate: self.certificate.clone(),
            status: self.status,
            solve_time: self.solve_time,
            iterations: self.iterations,
        };
        for (k, s) in self.steps.iter().enumerate() {
            if s.k != k {
                return Err(bad("step index", k));
            }
            sol.sigma.push(mat(&s.sigma, "Sigma", k)?);
            sol.mu.push(DVector::from_vec(s.mu.clone()));
            if k < horizon {
                let need = |m: &Option<Vec<Vec<f64>>>, what: &str| -> Result<DMatrix<f64>> {
                    mat(m.as_deref().ok_or_else(|| bad(what, k))?, what, k)
                };
                sol.u.push(need(&s.u, "U")?);
                sol.y.push(need(&s.y, "Y")?);
                sol.gains.push(need(&s.k_gain, "K")?);
                sol.v.push(DVector::from_vec(s.v.clone().ok_or_else(|| bad("v", k))?));
            }
        }
        Ok(sol)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn trajectory_header(n: usize, p: usize, prefix: &str) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    h.extend((0..n).map(|i| format!("{prefix}mu_{i}")));
    for i in 0..n {
        for j in i..n {
            h.push(format!("{prefix}sigma_{i}_{j}"));
        }
    }
    h.extend((0..p).map(|i| format!("{prefix}v_{i}")));
    h
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub v: Option<DVector<f64>>,
}

pub fn write_trajectory_csv(
    path: &Path,
    prefix: &str,
    mu: &[DVector<f64>],
    sigma: &[DMatrix<f64>],
    v: &[DVector<f64>],
    p: usize,
) -> Result<()> {
    let n = mu.first().map_or(0, |m| m.len());
    if sigma.len() != mu.len() {
        return Err(CsError::dims("trajectory rows", mu.len(), sigma.len()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trajectory_header(n, p, prefix))?;
    for k in 0..mu.len() {
        let mut rec = vec![k.to_string()];
        rec.extend(mu[k].iter().map(|x| x.to_string()));
        for i in 0..n {
            for j in i..n {
                rec.push(sigma[k][(i, j)].to_string());
            }
        }
        match v.get(k) {
            Some(vk) => rec.extend(vk.iter().map(|x| x.to_string())),
            None => rec.extend(std::iter::repeat_n(String::new(), p)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a trajectory CSV with the given state/input dimensions and prefix,
/// checking the header exactly.
pub fn read_trajectory_csv(path: &Path, n: usize, p: usize, prefix: &str) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != trajectory_header(n, p, prefix) {
        return Err(CsError::InvalidInput(format!("unexpected trajectory header {header:?}")));
    }
    let parse =
        |s: &str| -> Result<f64> { s.parse().map_err(|_| CsError::InvalidInput(format!("not a number: {s:?}"))) };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let k: usize = rec[0].parse().map_err(|_| CsError::InvalidInput("bad step index".into()))?;
        let mu = DVector::from_iterator(n, (1..=n).map(|c| parse(&rec[c])).collect::<Result<Vec<_>>>()?);
        let mut sigma = DMatrix::zeros(n, n);
        let mut c = 1 + n;
        for i in 0..n {
            for j in i..n {
                sigma[(i, j)] = parse(&rec[c])?;
                sigma[(j, i)] = sigma[(i, j)];
                c += 1;
            }
        }
        let v = if p > 0 && rec[c].is_empty() {
            None
        } else {
            Some(DVector::from_iterator(p, (c..c + p).map(|i| parse(&rec[i])).collect::<Result<Vec<_>>>()?))
        };
        rows.push(TrajectoryRow { k, mu, sigma, v });
    }
    Ok(rows)
}

impl SteeringSolution {
    pub fn write_trajectory_csv(&self, path: &Path) -> Result<()> {
        let p = self.v.first().map_or(0, |v| v.len());
        write_trajectory_csv(path, "", &self.mu, &self.sigma, &self.v, p)
    }
}
