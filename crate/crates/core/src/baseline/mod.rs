//! Lifted single-LMI baseline and the run-time benchmark harness.

mod lifted;

pub use lifted::{
    lifted_num_vars, lifted_psd_side, transcribe_lifted, transcribe_lifted_with, LiftedForm, LiftedIndex,
};

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backend::{ClarabelBackend, ConicBackend, SolveStatus, SolverSettings};
use crate::error::{CsError, Result};
use crate::model::{propagate_cov, random_stable_system};
use crate::problem::{CsProblem, TerminalMode};
use crate::transcriber::{count_variables, paper_problem_size, transcribe, VariableCount};

/// Run-time table over state dimension at `N = 32`.
pub const TABLE1: [(usize, usize); 4] = [(4, 32), (8, 32), (16, 32), (32, 32)];
/// Run-time table over horizon at `n = 8`.
pub const TABLE2: [(usize, usize); 6] = [(8, 8), (8, 16), (8, 32), (8, 64), (8, 128), (8, 256)];

/// Random instance with `p = max(1, n/2)` inputs and `q = n` noise channels.
/// `Σ_f` is the terminal covariance of a random small-gain policy, so both
/// terminal modes are feasible on the same data.
pub fn random_instance(n: usize, horizon: usize, seed: u64, mode: TerminalMode) -> Result<CsProblem> {
    let p = (n / 2).max(1);
    let sys = random_stable_system(n, p, n, horizon, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let scale = 0.1 / (n as f64).sqrt();
    let gains: Vec<DMatrix<f64>> = (0..horizon).map(|_| DMatrix::from_fn(p, n, |_, _| scale * normal())).collect();
    let sigma_i = DMatrix::identity(n, n);
    let sigma_f = propagate_cov(&sys, &sigma_i, &gains)?.pop().expect("horizon ≥ 0");
    let mu_i = DVector::from_fn(n, |_, _| normal());
    Ok(CsProblem::new(
        sys,
        DMatrix::identity(n, n),
        DMatrix::identity(p, p),
        mu_i,
        sigma_i,
        DVector::zeros(n),
        sigma_f,
        mode,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    PerStep,
    Lifted,
}

impl Formulation {
    pub fn as_str(self) -> &'static str {
        match self {
            Formulation::PerStep => "per_step",
            Formulation::Lifted => "lifted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub seed: u64,
    pub formulation: Formulation,
    pub psize_paper: usize,
    pub psize_internal: usize,
    pub time_s: f64,
    pub status: SolveStatus,
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSettings {
    pub solver: SolverSettings,
    pub mode: TerminalMode,
    /// Lifted programs whose large block exceeds this side are not built and
    /// are recorded with status `size_limit`.
    pub max_lifted_side: usize,
    pub run_lifted: bool,
}

/// Largest lifted block attempted by default. Side 272 (`n = 8`, `N = 32`)
/// takes about 10 s and 0.4 GB; the next doubling of `N` needs several GB.
pub const DEFAULT_MAX_LIFTED_SIDE: usize = 300;

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            solver: SolverSettings { tol_gap: 1e-8, time_limit: Some(120.0), ..Default::default() },
            mode: TerminalMode::Inequality,
            max_lifted_side: DEFAULT_MAX_LIFTED_SIDE,
            run_lifted: true,
        }
    }
}

fn timed_solve(
    backend: &dyn ConicBackend,
    settings: &SolverSettings,
    build: impl FnOnce() -> Result<crate::transcriber::ConicProgram>,
) -> Result<(SolveStatus, Option<f64>, f64)> {
    let start = Instant::now();
    let prog = build()?;
    let raw = backend.solve(&prog, settings)?;
    let elapsed = start.elapsed().as_secs_f64();
    let obj = raw.status.is_optimal().then_some(raw.objective);
    Ok((raw.status, obj, elapsed))
}

pub fn benchmark_cell(
    n: usize,
    horizon: usize,
    seed: u64,
    settings: &BenchmarkSettings,
) -> Result<Vec<BenchmarkRecord>> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(CsError::InvalidInput(format!("benchmark state dimension must be even and positive, got {n}")));
    }
    if horizon == 0 {
        return Err(CsError::InvalidInput("benchmark horizon must be positive".into()));
    }
    let problem = random_instance(n, horizon, seed, settings.mode)?;
    let (p, q) = (problem.sys.p(), problem.sys.q());
    let VariableCount { paper_convention, internal } = count_variables(&problem);
    let backend = ClarabelBackend;
    let record = |formulation, psize_internal, (status, objective, time_s)| BenchmarkRecord {
        n,
        p,
        q,
        horizon,
        seed,
        formulation,
        psize_paper: paper_convention,
        psize_internal,
        time_s,
        status,
        objective,
    };
    let mut out = vec![record(
        Formulation::PerStep,
        internal,
        timed_solve(&backend, &settings.solver, || Ok(transcribe(&problem)?.0))?,
    )];
    if settings.run_lifted {
        let form = LiftedForm::for_mode(settings.mode);
        let lifted_vars = lifted_num_vars(n, p, q, horizon, form);
        let outcome = if lifted_psd_side(n, p, q, horizon, form) > settings.max_lifted_side {
            (SolveStatus::SizeLimit, None, 0.0)
        } else {
            let solver = lifted_settings(&settings.solver);
            timed_solve(&backend, &solver, || Ok(transcribe_lifted(&problem)?.0))?
        };
        out.push(record(Formulation::Lifted, lifted_vars, outcome));
    }
    Ok(out)
}

/// Per-step size record for a cell without solving anything.
pub fn size_record(n: usize, horizon: usize, seed: u64) -> Result<BenchmarkRecord> {
    if n == 0 || !n.is_multiple_of(2) || horizon == 0 {
        return Err(CsError::InvalidInput(format!("invalid benchmark cell n = {n}, N = {horizon}")));
    }
    let problem = random_instance(n, horizon, seed, TerminalMode::Inequality)?;
    let VariableCount { paper_convention, internal } = count_variables(&problem);
    Ok(BenchmarkRecord {
        n,
        p: problem.sys.p(),
        q: problem.sys.q(),
        horizon,
        seed,
        formulation: Formulation::PerStep,
        psize_paper: paper_convention,
        psize_internal: internal,
        time_s: 0.0,
        status: SolveStatus::Skipped,
        objective: None,
    })
}

/// Cells run sequentially so that timings are not distorted.
pub fn run_benchmark(
    cells: &[(usize, usize)],
    seeds: &[u64],
    settings: &BenchmarkSettings,
    mut progress: impl FnMut(&BenchmarkRecord),
) -> Result<Vec<BenchmarkRecord>> {
    let mut out = Vec::new();
    for &(n, horizon) in cells {
        for &seed in seeds {
            for r in benchmark_cell(n, horizon, seed, settings)? {
                progress(&r);
                out.push(r);
            }
        }
    }
    Ok(out)
}

pub const BENCHMARK_HEADER: [&str; 10] =
    ["n", "p", "q", "N", "formulation", "psize_paper", "psize_internal", "time_s", "status", "objective"];

pub fn write_benchmark_csv(path: &Path, records: &[BenchmarkRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BENCHMARK_HEADER)?;
    for r in records {
        w.write_record([
            r.n.to_string(),
            r.p.to_string(),
            r.q.to_string(),
            r.horizon.to_string(),
            r.formulation.as_str().to_string(),
            r.psize_paper.to_string(),
            r.psize_internal.to_string(),
            format!("{:.6}", r.time_s),
            r.status.as_str().to_string(),
            r.objective.map(|o| o.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 { values[m] } else { 0.5 * (values[m - 1] + values[m]) })
}

/// Least-squares slope of `log(time)` against `log(N)`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|(x, _)| x.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| y.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Table with one row per `(n, N)`: problem size and median time per
/// formulation over seeds (`-` when no seed solved).
pub fn format_table(records: &[BenchmarkRecord]) -> String {
    let mut cells: Vec<(usize, usize)> = records.iter().map(|r| (r.n, r.horizon)).collect();
    cells.dedup();
    let mut s = String::new();
    let _ = writeln!(s, "{:>4} {:>5} {:>9} {:>12} {:>12}", "n", "N", "p. size", "per_step [s]", "lifted [s]");
    for (n, horizon) in cells {
        let rows: Vec<&BenchmarkRecord> = records.iter().filter(|r| r.n == n && r.horizon == horizon).collect();
        let time = |f: Formulation| {
            let mut t: Vec<f64> =
                rows.iter().filter(|r| r.formulation == f && r.status.is_optimal()).map(|r| r.time_s).collect();
            match median(&mut t) {
                Some(v) => format!("{v:.3}"),
                None => {
                    rows.iter().find(|r| r.formulation == f).map_or("-".to_string(), |r| r.status.as_str().to_string())
                }
            }
        };
        let _ = writeln!(
            s,
            "{:>4} {:>5} {:>9} {:>12} {:>12}",
            n,
            horizon,
            paper_problem_size(n, (n / 2).max(1), horizon),
            time(Formulation::PerStep),
            time(Formulation::Lifted)
        );
    }
    s
}

/// Settings for the lifted program. Its single large LMI is sparse; without
/// chordal decomposition the scaling matrix alone is dense of order s(s+1)/2.
pub fn lifted_settings(base: &SolverSettings) -> SolverSettings {
    SolverSettings { chordal_decomposition: true, ..*base }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LtvSystem;
    use crate::problem::{ChanceConstraint, ConstraintKind};
    use crate::solution::solve_problem;
    use crate::transcriber::Cone;

    fn one(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn scalar(mode: TerminalMode, sigma_f: f64) -> CsProblem {
        let sys = LtvSystem::time_invariant(one(2.0), one(1.0), one(1.0), 1).unwrap();
        CsProblem::new(sys, one(0.0), one(1.0), DVector::zeros(1), one(1.0), DVector::zeros(1), one(sigma_f), mode)
    }

    fn lifted_cost(problem: &CsProblem, form: LiftedForm) -> f64 {
        let (prog, _) = transcribe_lifted_with(problem, form).unwrap();
        let raw = ClarabelBackend.solve(&prog, &lifted_settings(&SolverSettings::default())).unwrap();
        assert_eq!(raw.status, SolveStatus::Optimal);
        raw.objective
    }

    #[test]
    fn scalar_oracle() {
        let eq = lifted_cost(&scalar(TerminalMode::Equality, 2.0), LiftedForm::JointCovariance);
        assert!((eq - 1.0).abs() < 1e-6, "{eq}");
        let ineq = scalar(TerminalMode::Inequality, 5.5);
        assert!(lifted_cost(&ineq, LiftedForm::DisturbanceFeedback).abs() < 1e-6);
        assert!(lifted_cost(&ineq, LiftedForm::JointCovariance).abs() < 1e-6);
    }

    #[test]
    fn block_side_matches_stacked_dimension() {
        let problem = random_instance(4, 8, 1, TerminalMode::Inequality).unwrap();
        let (prog, idx) = transcribe_lifted(&problem).unwrap();
        assert_eq!(idx.psd_side, 40);
        assert_eq!(prog.cones.iter().filter(|c| matches!(c, Cone::Psd(_))).count(), 1);
        assert!(prog.cones.contains(&Cone::Psd(40)));
        assert_eq!(lifted_psd_side(4, 2, 4, 8, LiftedForm::JointCovariance), 52);
    }

    #[test]
    fn formulations_agree() {
        for mode in [TerminalMode::Equality, TerminalMode::Inequality] {
            let problem = random_instance(4, 8, 7, mode).unwrap();
            let per_step = solve_problem(&problem, &ClarabelBackend, &SolverSettings::default()).unwrap().cost;
            let lifted = lifted_cost(&problem, LiftedForm::for_mode(mode));
            assert!((per_step - lifted).abs() <= 1e-5 * per_step.abs(), "{mode:?}: {per_step} vs {lifted}");
            if mode == TerminalMode::Inequality {
                let joint = lifted_cost(&problem, LiftedForm::JointCovariance);
                assert!((per_step - joint).abs() <= 1e-5 * per_step.abs());
            }
        }
    }

    #[test]
    fn constrained_problems_are_rejected() {
        let mut problem = random_instance(2, 4, 1, TerminalMode::Equality).unwrap();
        problem.chance_constraints.push(ChanceConstraint {
            kind: ConstraintKind::State,
            alpha: DVector::from_vec(vec![1.0, 0.0]),
            beta: 1.0,
            eps: 0.1,
            steps: vec![1],
        });
        assert!(matches!(transcribe_lifted(&problem), Err(CsError::UnsupportedInBaseline(_))));
        let eq = random_instance(2, 4, 1, TerminalMode::Equality).unwrap();
        assert!(matches!(
            transcribe_lifted_with(&eq, LiftedForm::DisturbanceFeedback),
            Err(CsError::UnsupportedInBaseline(_))
        ));
    }

    #[test]
    fn variable_counts_match_allocation() {
        for (mode, form) in [
            (TerminalMode::Inequality, LiftedForm::DisturbanceFeedback),
            (TerminalMode::Equality, LiftedForm::JointCovariance),
        ] {
            let problem = random_instance(4, 5, 2, mode).unwrap();
            let (prog, idx) = transcribe_lifted_with(&problem, form).unwrap();
            assert_eq!(prog.num_vars, lifted_num_vars(4, 2, 4, 5, form));
            assert_eq!(idx.num_vars, prog.num_vars);
        }
    }

    #[test]
    fn table_counts() {
        let t1: Vec<usize> = TABLE1.iter().map(|&(n, h)| paper_problem_size(n, n / 2, h)).collect();
        assert_eq!(t1, [884, 3536, 14144, 56576]);
        let t2: Vec<usize> = TABLE2.iter().map(|&(n, h)| paper_problem_size(n, n / 2, h)).collect();
        assert_eq!(t2, [848, 1744, 3536, 7120, 14288, 28624]);
    }

    #[test]
    fn benchmark_cell_and_csv() {
        let recs = benchmark_cell(4, 8, 1, &BenchmarkSettings::default()).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| r.status == SolveStatus::Optimal && r.time_s >= 0.0));
        let (a, b) = (recs[0].objective.unwrap(), recs[1].objective.unwrap());
        assert!((a - b).abs() <= 1e-5 * a.abs());
        let guarded =
            benchmark_cell(4, 8, 1, &BenchmarkSettings { max_lifted_side: 10, ..Default::default() }).unwrap();
        assert_eq!(guarded[1].status, SolveStatus::SizeLimit);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("benchmark.csv");
        write_benchmark_csv(&path, &guarded).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("n,p,q,N,formulation,psize_paper,psize_internal,time_s,status,objective\n"));
        assert!(text.lines().nth(2).unwrap().ends_with(",size_limit,"));
        assert!(benchmark_cell(3, 8, 1, &BenchmarkSettings::default()).is_err());
        assert!(format_table(&recs).contains("212"));
    }

    #[test]
    fn slope_and_median() {
        let pts: Vec<(f64, f64)> = [8.0, 16.0, 32.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(1.5))).collect();
        assert!((loglog_slope(&pts) - 1.5).abs() < 1e-12);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut []), None);
    }
}
