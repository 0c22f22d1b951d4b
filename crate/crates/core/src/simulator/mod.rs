//! Closed-loop Monte Carlo rollouts of a steering policy.
//!
//! Every sample draws from its own ChaCha stream keyed by `(seed, index)`.
//! Samples are processed in fixed-size chunks whose partial moments are
//! merged in chunk order, so results do not depend on the thread count.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CsError, Result};
use crate::linalg::{self, matrix_to_rows};
use crate::model::LtvSystem;
use crate::problem::{ChanceConstraint, ConstraintKind, CsProblem};
use crate::solution::{write_trajectory_csv, SteeringSolution};

const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

/// Applies `u_k = K_k(x_k − μ_k) + v_k` along one noise realization.
pub fn rollout(sys: &LtvSystem, sol: &SteeringSolution, x0: &DVector<f64>, w_seq: &[DVector<f64>]) -> Result<Rollout> {
    let horizon = sol.horizon();
    if horizon > sys.horizon() {
        return Err(CsError::dims("rollout horizon", sys.horizon(), horizon));
    }
    if w_seq.len() != horizon {
        return Err(CsError::dims("noise sequence length", horizon, w_seq.len()));
    }
    if x0.len() != sys.n() {
        return Err(CsError::dims("initial state", sys.n(), x0.len()));
    }
    let mut x = Vec::with_capacity(horizon + 1);
    let mut u = Vec::with_capacity(horizon);
    x.push(x0.clone());
    for k in 0..horizon {
        if w_seq[k].len() != sys.q() {
            return Err(CsError::dims("noise sample", sys.q(), w_seq[k].len()));
        }
        let uk = &sol.gains[k] * (&x[k] - &sol.mu[k]) + &sol.v[k];
        x.push(sys.a(k) * &x[k] + sys.b(k) * &uk + sys.d(k) * &w_seq[k]);
        u.push(uk);
    }
    Ok(Rollout { x, u })
}

/// Running mean and scatter matrix, merged pairwise.
#[derive(Debug, Clone)]
struct Moments {
    count: f64,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self { count: 0.0, mean: DVector::zeros(dim), scatter: DMatrix::zeros(dim, dim) }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.count += 1.0;
        let delta = x - &self.mean;
        self.mean += &delta / self.count;
        let delta2 = x - &self.mean;
        self.scatter.ger(1.0, &delta, &delta2, 1.0);
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        let total = self.count + other.count;
        let delta = &other.mean - &self.mean;
        self.scatter += &other.scatter;
        self.scatter.ger(self.count * other.count / total, &delta, &delta, 1.0);
        self.mean += delta * (other.count / total);
        self.count = total;
    }

    fn covariance(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.scatter / (self.count - 1.0)))
    }
}

#[derive(Debug, Clone)]
struct Accumulator {
    states: Vec<Moments>,
    inputs: Vec<Moments>,
    violations: Vec<Vec<u64>>,
    cost: Moments,
}

impl Accumulator {
    fn new(n: usize, p: usize, horizon: usize, constraints: &[ChanceConstraint]) -> Self {
        Self {
            states: vec![Moments::new(n); horizon + 1],
            inputs: vec![Moments::new(p); horizon],
            violations: constraints.iter().map(|c| vec![0; c.steps.len()]).collect(),
            cost: Moments::new(1),
        }
    }

    fn merge(&mut self, other: &Accumulator) {
        for (a, b) in self.states.iter_mut().zip(&other.states) {
            a.merge(b);
        }
        for (a, b) in self.inputs.iter_mut().zip(&other.inputs) {
            a.merge(b);
        }
        for (a, b) in self.violations.iter_mut().zip(&other.violations) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.cost.merge(&other.cost);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceAudit {
    pub constraint: usize,
    pub kind: ConstraintKind,
    pub step: usize,
    pub eps: f64,
    pub violations: u64,
    pub rate: f64,
    /// `√(rate·(1 − rate)/M)`.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub samples: usize,
    pub seed: u64,
    pub state_mean: Vec<DVector<f64>>,
    pub state_cov: Vec<DMatrix<f64>>,
    pub input_mean: Vec<DVector<f64>>,
    pub input_cov: Vec<DMatrix<f64>>,
    pub audits: Vec<ChanceAudit>,
    pub cost_mean: f64,
    pub cost_std: f64,
}

fn sample_one(
    problem: &CsProblem,
    sol: &SteeringSolution,
    chol: &DMatrix<f64>,
    seed: u64,
    index: u64,
    acc: &mut Accumulator,
) -> Result<()> {
    let sys = &problem.sys;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut normal = |len: usize| DVector::from_fn(len, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let x0 = &sol.mu[0] + chol * normal(sys.n());
    let w: Vec<DVector<f64>> = (0..sol.horizon()).map(|_| normal(sys.q())).collect();
    let traj = rollout(sys, sol, &x0, &w)?;
    let mut cost = 0.0;
    for k in 0..sol.horizon() {
        cost += traj.x[k].dot(&(&problem.q_seq[k] * &traj.x[k])) + traj.u[k].dot(&(&problem.r_seq[k] * &traj.u[k]));
        acc.inputs[k].push(&traj.u[k]);
    }
    for (k, x) in traj.x.iter().enumerate() {
        acc.states[k].push(x);
    }
    for (c, counts) in problem.chance_constraints.iter().zip(acc.violations.iter_mut()) {
        for (slot, &k) in counts.iter_mut().zip(&c.steps) {
            let z = match c.kind {
                ConstraintKind::State => &traj.x[k],
                ConstraintKind::Control => &traj.u[k],
            };
            if c.alpha.dot(z) > c.beta {
                *slot += 1;
            }
        }
    }
    acc.cost.push(&DVector::from_element(1, cost));
    Ok(())
}

/// Samples `x₀ ~ N(μ_0, Σ_0)` and `w_k ~ N(0, I)`, rolls the policy out and
/// aggregates moments, chance-constraint violations and the realized cost.
pub fn monte_carlo(problem: &CsProblem, sol: &SteeringSolution, samples: usize, seed: u64) -> Result<MonteCarloReport> {
    if samples < 2 {
        return Err(CsError::InvalidInput("at least two samples are required".into()));
    }
    let (n, p, horizon) = (problem.sys.n(), problem.sys.p(), sol.horizon());
    if horizon != problem.horizon() {
        return Err(CsError::dims("solution horizon", problem.horizon(), horizon));
    }
    let (chol, _) = linalg::cholesky_shifted(&sol.sigma[0]).ok_or(CsError::SingularCovariance { step: 0 })?;
    let chunks: Vec<(usize, usize)> = (0..samples).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(samples))).collect();
    let partial: Vec<Result<Accumulator>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = Accumulator::new(n, p, horizon, &problem.chance_constraints);
            for i in lo..hi {
                sample_one(problem, sol, &chol, seed, i as u64, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Accumulator::new(n, p, horizon, &problem.chance_constraints);
    for acc in partial {
        total.merge(&acc?);
    }
    let m = samples as f64;
    let mut audits = Vec::new();
    for (ci, (c, counts)) in problem.chance_constraints.iter().zip(&total.violations).enumerate() {
        for (&k, &count) in c.steps.iter().zip(counts) {
            let rate = count as f64 / m;
            audits.push(ChanceAudit {
                constraint: ci,
                kind: c.kind,
                step: k,
                eps: c.eps,
                violations: count,
                rate,
                std_error: (rate * (1.0 - rate) / m).sqrt(),
            });
        }
    }
    Ok(MonteCarloReport {
        samples,
        seed,
        state_mean: total.states.iter().map(|s| s.mean.clone()).collect(),
        state_cov: total.states.iter().map(Moments::covariance).collect(),
        input_mean: total.inputs.iter().map(|s| s.mean.clone()).collect(),
        input_cov: total.inputs.iter().map(Moments::covariance).collect(),
        audits,
        cost_mean: total.cost.mean[0],
        cost_std: total.cost.covariance()[(0, 0)].max(0.0).sqrt(),
    })
}

/// `3·√(ε(1 − ε)/M)`, the allowance above `ε` for an empirical rate.
pub fn binomial_margin(eps: f64, samples: usize) -> f64 {
    3.0 * (eps * (1.0 - eps) / samples as f64).sqrt()
}

pub fn rate_passes(rate: f64, eps: f64, samples: usize) -> bool {
    rate <= eps + binomial_margin(eps, samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceCheck {
    pub constraint: usize,
    pub step: usize,
    pub rate: f64,
    pub eps: f64,
    pub bound: f64,
    /// `bound − rate`; negative on failure.
    pub margin: f64,
    pub pass: bool,
}

pub fn check_chance(report: &MonteCarloReport, constraints: &[ChanceConstraint]) -> Vec<ChanceCheck> {
    report
        .audits
        .iter()
        .filter_map(|a| {
            let eps = constraints.get(a.constraint)?.eps;
            let bound = eps + binomial_margin(eps, report.samples);
            Some(ChanceCheck {
                constraint: a.constraint,
                step: a.step,
                rate: a.rate,
                eps,
                bound,
                margin: bound - a.rate,
                pass: a.rate <= bound,
            })
        })
        .collect()
}

/// Standard deviation of `‖Σ̂ − Σ‖_F` for a sample covariance of `m`
/// Gaussian draws.
pub fn wishart_frobenius_se(sigma: &DMatrix<f64>, samples: usize) -> f64 {
    let n = sigma.nrows();
    let mut var = 0.0;
    for i in 0..n {
        for j in 0..n {
            var += sigma[(i, j)].powi(2) + sigma[(i, i)] * sigma[(j, j)];
        }
    }
    (var / (samples as f64 - 1.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub samples: usize,
    pub seed: u64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub state_mean: Vec<Vec<f64>>,
    pub state_cov: Vec<Vec<Vec<f64>>>,
    pub input_mean: Vec<Vec<f64>>,
    pub input_cov: Vec<Vec<Vec<f64>>>,
    pub audits: Vec<ChanceAudit>,
    pub checks: Vec<ChanceCheck>,
}

impl MonteCarloReport {
    pub fn to_file(&self, constraints: &[ChanceConstraint]) -> ReportFile {
        let vecs = |v: &[DVector<f64>]| v.iter().map(|x| x.iter().copied().collect()).collect();
        let mats = |v: &[DMatrix<f64>]| v.iter().map(matrix_to_rows).collect();
        ReportFile {
            samples: self.samples,
            seed: self.seed,
            cost_mean: self.cost_mean,
            cost_std: self.cost_std,
            state_mean: vecs(&self.state_mean),
            state_cov: mats(&self.state_cov),
            input_mean: vecs(&self.input_mean),
            input_cov: mats(&self.input_cov),
            audits: self.audits.clone(),
            checks: check_chance(self, constraints),
        }
    }

    pub fn write_json(&self, path: &Path, constraints: &[ChanceConstraint]) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_file(constraints))?)?;
        Ok(())
    }

    /// Empirical moments in the trajectory CSV layout, `emp_` prefixed; the
    /// `emp_v` columns hold the empirical input mean.
    pub fn write_empirical_csv(&self, path: &Path) -> Result<()> {
        let p = self.input_mean.first().map_or(0, |v| v.len());
        write_trajectory_csv(path, "emp_", &self.state_mean, &self.state_cov, &self.input_mean, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ClarabelBackend, SolverSettings};
    use crate::problem::TerminalMode;
    use crate::solution::solve_problem;

    fn one(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn scalar_problem() -> CsProblem {
        let sys = LtvSystem::time_invariant(one(2.0), one(1.0), one(1.0), 1).unwrap();
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

    fn two_state_problem() -> (CsProblem, SteeringSolution) {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
        let d = DMatrix::identity(2, 2) * 0.1;
        let sys = LtvSystem::time_invariant(a, b, d, 10).unwrap();
        let mut prob = CsProblem::new(
            sys,
            DMatrix::identity(2, 2),
            one(1.0),
            DVector::from_vec(vec![1.0, 0.0]),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2) * 0.5,
            TerminalMode::Equality,
        );
        prob.chance_constraints.push(ChanceConstraint {
            kind: ConstraintKind::State,
            alpha: DVector::from_vec(vec![1.0, 0.0]),
            beta: 100.0,
            eps: 0.05,
            steps: vec![3, 5],
        });
        prob.refs = Some(crate::problem::LinearizationRefs { sigma_r: DMatrix::identity(2, 2), y_r: one(1.0) });
        let sol = solve_problem(&prob, &ClarabelBackend, &SolverSettings::default()).unwrap();
        (prob, sol)
    }

    #[test]
    fn noiseless_rollout_tracks_mean() {
        let (prob, sol) = two_state_problem();
        let w = vec![DVector::zeros(2); 10];
        // the solved means satisfy the recursion to solver accuracy
        let r = rollout(&prob.sys, &sol, &sol.mu[0], &w).unwrap();
        for k in 0..=10 {
            assert!((&r.x[k] - &sol.mu[k]).amax() < 1e-7);
        }
        let mut consistent = sol.clone();
        consistent.mu = crate::model::propagate_mean(&prob.sys, &sol.mu[0], &sol.v).unwrap();
        let r = rollout(&prob.sys, &consistent, &sol.mu[0], &w).unwrap();
        assert_eq!(r.x, consistent.mu);
        let mut open = sol.clone();
        open.gains.iter_mut().for_each(|k| k.fill(0.0));
        let x0 = DVector::from_vec(vec![3.0, -1.0]);
        let r = rollout(&prob.sys, &open, &x0, &w).unwrap();
        let mean = crate::model::propagate_mean(&prob.sys, &x0, &sol.v).unwrap();
        assert!((&r.x[10] - &mean[10]).amax() < 1e-12);
    }

    #[test]
    fn scalar_recursion() {
        let prob = scalar_problem();
        let sol = solve_problem(&prob, &ClarabelBackend, &SolverSettings::default()).unwrap();
        let x0 = DVector::from_element(1, 0.7);
        let r = rollout(&prob.sys, &sol, &x0, &[DVector::from_element(1, 1.0)]).unwrap();
        let u0 = r.u[0][0];
        assert!((r.x[1][0] - (2.0 * 0.7 + u0 + 1.0)).abs() < 1e-14);
        assert!(rollout(&prob.sys, &sol, &x0, &[]).is_err());
    }

    #[test]
    fn deterministic_and_consistent() {
        let (prob, sol) = two_state_problem();
        let a = monte_carlo(&prob, &sol, 3000, 42).unwrap();
        let b = monte_carlo(&prob, &sol, 3000, 42).unwrap();
        assert_eq!(a, b);
        let c = monte_carlo(&prob, &sol, 3000, 43).unwrap();
        assert_ne!(a.state_mean, c.state_mean);
        // same samples whatever the thread count
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| monte_carlo(&prob, &sol, 3000, 42).unwrap());
        assert_eq!(a, serial);
        let se = wishart_frobenius_se(&sol.sigma[10], 3000);
        assert!((&a.state_cov[10] - &sol.sigma[10]).norm() < 5.0 * se);
        for k in 0..=10 {
            let se_mean = (sol.sigma[k].diagonal() / 3000.0).map(f64::sqrt);
            for i in 0..2 {
                assert!((a.state_mean[k][i] - sol.mu[k][i]).abs() < 5.0 * se_mean[i]);
            }
            assert!(linalg::min_eigenvalue(&a.state_cov[k]) > -1e-12);
        }
        assert!(a.audits.iter().all(|x| (0.0..=1.0).contains(&x.rate)));
        assert_eq!(a.audits.len(), 2);
    }

    #[test]
    fn chance_rate_examples() {
        assert!(rate_passes(0.021, 0.05, 10_000));
        assert!(!rate_passes(0.10, 0.05, 10_000));
        assert!(rate_passes(0.5, 0.5, 10_000));
    }

    #[test]
    fn moment_merge_matches_single_pass() {
        let xs: Vec<DVector<f64>> =
            (0..37).map(|i| DVector::from_vec(vec![(i as f64).sin(), (i as f64 * 0.3).cos()])).collect();
        let mut whole = Moments::new(2);
        xs.iter().for_each(|x| whole.push(x));
        let mut left = Moments::new(2);
        let mut right = Moments::new(2);
        xs[..11].iter().for_each(|x| left.push(x));
        xs[11..].iter().for_each(|x| right.push(x));
        left.merge(&right);
        assert!((&left.mean - &whole.mean).amax() < 1e-14);
        assert!((left.covariance() - whole.covariance()).amax() < 1e-14);
    }
}
