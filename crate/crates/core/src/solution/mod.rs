//! Solution extraction, feedback recovery, relaxation certificate and the
//! decoupled mean-steering problem.

mod io;
mod mean;

pub use io::{read_trajectory_csv, trajectory_header, write_trajectory_csv, SolutionFile, StepRecord, TrajectoryRow};
pub use mean::{solve_mean_steering, solve_mean_steering_with_waypoints, MeanSteering, MeanWaypoint};

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::backend::{ConicBackend, RawSolution, SolveStatus, SolverSettings};
use crate::error::{CsError, Result};
use crate::linalg;
use crate::model::LtvSystem;
use crate::problem::CsProblem;
use crate::transcriber::{transcribe, VariableIndex};

/// Relative size of a negative eigenvalue still treated as round-off when
/// recovering gains from a solved covariance.
const INDEFINITE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub atol: f64,
    pub rtol: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self { atol: 1e-7, rtol: 1e-6 }
    }
}

impl TolerancePolicy {
    pub fn for_step(&self, y: &DMatrix<f64>) -> f64 {
        self.atol + self.rtol * (1.0 + linalg::spectral_norm(y))
    }
}

/// Tightness report for `C_k = U_kΣ_k⁻¹U_kᵀ − Y_k ⪯ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosslessnessReport {
    /// `λ_max(C_k)` per step.
    pub lambda_max: Vec<f64>,
    /// `‖C_k‖₂` per step; zero exactly when the relaxation is tight.
    pub spectral_norm: Vec<f64>,
    /// Tolerance applied at each step.
    pub tolerance: Vec<f64>,
    pub global_max: f64,
    pub global_norm: f64,
    pub policy: TolerancePolicy,
    /// Diagonal shift added to `Σ_k` before inversion (zero when none).
    pub sigma_shift: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringSolution {
    /// `Σ_0 … Σ_N`, with `Σ_0 = Σ_i`.
    pub sigma: Vec<DMatrix<f64>>,
    pub u: Vec<DMatrix<f64>>,
    pub y: Vec<DMatrix<f64>>,
    /// `μ_0 … μ_N`.
    pub mu: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub gains: Vec<DMatrix<f64>>,
    pub cost: f64,
    pub certificate: LosslessnessReport,
    pub status: SolveStatus,
    pub solve_time: f64,
    pub iterations: u32,
}

impl SteeringSolution {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }
}

/// `K = UΣ⁻¹` through a Cholesky solve of `ΣKᵀ = Uᵀ`.
pub fn recover_gains(u: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma.nrows() != u.ncols() || !sigma.is_square() {
        return Err(CsError::dims(
            "recover_gains",
            format!("{}x{}", u.ncols(), u.ncols()),
            format!("{}x{}", sigma.nrows(), sigma.ncols()),
        ));
    }
    let chol = Cholesky::new(linalg::symmetrize(sigma)).ok_or(CsError::SingularCovariance { step: 0 })?;
    Ok(chol.solve(&u.transpose()).transpose())
}

/// Applies the covariance shift policy, rejecting clearly indefinite input.
fn invertible_covariance(sigma: &DMatrix<f64>, step: usize) -> Result<(DMatrix<f64>, f64)> {
    let lmin = linalg::min_eigenvalue(sigma);
    if !lmin.is_finite() || lmin < -INDEFINITE_TOL * (1.0 + linalg::spectral_norm(sigma)) {
        return Err(CsError::SingularCovariance { step });
    }
    Ok(linalg::shift_if_needed(sigma))
}

pub fn losslessness_certificate(
    sigma: &[DMatrix<f64>],
    u: &[DMatrix<f64>],
    y: &[DMatrix<f64>],
    policy: TolerancePolicy,
) -> Result<LosslessnessReport> {
    let horizon = u.len();
    if y.len() != horizon || sigma.len() < horizon {
        return Err(CsError::dims("certificate sequences", horizon, y.len().min(sigma.len())));
    }
    let mut report = LosslessnessReport {
        lambda_max: Vec::with_capacity(horizon),
        spectral_norm: Vec::with_capacity(horizon),
        tolerance: Vec::with_capacity(horizon),
        global_max: f64::NEG_INFINITY,
        global_norm: 0.0,
        policy,
        sigma_shift: Vec::with_capacity(horizon),
        pass: true,
    };
    for k in 0..horizon {
        let (s, shift) = invertible_covariance(&sigma[k], k)?;
        let chol = Cholesky::new(s).ok_or(CsError::SingularCovariance { step: k })?;
        let c = linalg::symmetrize(&(&u[k] * chol.solve(&u[k].transpose()) - &y[k]));
        let lmax = linalg::max_eigenvalue(&c);
        let norm = linalg::spectral_norm(&c);
        let tol = policy.for_step(&y[k]);
        report.pass &= lmax <= tol;
        report.global_max = report.global_max.max(lmax);
        report.global_norm = report.global_norm.max(norm);
        report.lambda_max.push(lmax);
        report.spectral_norm.push(norm);
        report.tolerance.push(tol);
        report.sigma_shift.push(shift);
    }
    if horizon == 0 {
        report.global_max = 0.0;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsResidual {
    /// Largest Frobenius norm of the covariance recursion residual.
    pub covariance: f64,
    /// Largest absolute mean recursion residual.
    pub mean: f64,
}

pub fn verify_dynamics(sol: &SteeringSolution, sys: &LtvSystem) -> DynamicsResidual {
    let mut res = DynamicsResidual { covariance: 0.0, mean: 0.0 };
    for k in 0..sol.horizon() {
        let (a, b) = (sys.a(k), sys.b(k));
        let bua = b * &sol.u[k] * a.transpose();
        let g = a * &sol.sigma[k] * a.transpose()
            + &bua
            + bua.transpose()
            + b * &sol.y[k] * b.transpose()
            + sys.noise_cov(k)
            - &sol.sigma[k + 1];
        res.covariance = res.covariance.max(g.norm());
        let m = a * &sol.mu[k] + b * &sol.v[k] - &sol.mu[k + 1];
        res.mean = res.mean.max(m.amax());
    }
    res
}

pub fn extract(raw: &RawSolution, index: &VariableIndex, problem: &CsProblem) -> Result<SteeringSolution> {
    if raw.status != SolveStatus::Optimal {
        return Err(CsError::ExtractionRefused(raw.status));
    }
    let x = &raw.primal;
    let horizon = index.horizon;
    let mut sigma = vec![problem.sigma_i.clone()];
    let mut mu = vec![problem.mu_i.clone()];
    for k in 1..=horizon {
        sigma.push(linalg::symmetrize(&index.sigma_value(x, k).expect("Σ_k is a variable for k ≥ 1")));
        mu.push(index.mu_value(x, k).unwrap_or_else(|| problem.mu_f.clone()));
    }
    let u: Vec<_> = (0..horizon).map(|k| index.u_value(x, k)).collect();
    let y: Vec<_> = (0..horizon).map(|k| linalg::symmetrize(&index.y_value(x, k))).collect();
    let v: Vec<_> = (0..horizon).map(|k| index.v_value(x, k)).collect();
    let mut gains = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let (s, _) = invertible_covariance(&sigma[k], k)?;
        gains.push(recover_gains(&u[k], &s).map_err(|_| CsError::SingularCovariance { step: k })?);
    }
    let certificate = losslessness_certificate(&sigma, &u, &y, TolerancePolicy::default())?;
    Ok(SteeringSolution {
        sigma,
        u,
        y,
        mu,
        v,
        gains,
        cost: raw.objective,
        certificate,
        status: raw.status,
        solve_time: raw.wall_time,
        iterations: raw.iterations,
    })
}

/// Transcribes, solves and extracts. Non-optimal termination is returned as
/// [`CsError::ExtractionRefused`].
pub fn solve_problem(
    problem: &CsProblem,
    backend: &dyn ConicBackend,
    settings: &SolverSettings,
) -> Result<SteeringSolution> {
    let (program, index) = transcribe(problem)?;
    let raw = backend.solve(&program, settings)?;
    extract(&raw, &index, problem)
}
