//! Command-line front end. Every subcommand writes its artifacts under
//! `<out>/<name>/` and reports failures through the process exit code.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::backend::{ClarabelBackend, SolveStatus, SolverSettings};
use crate::baseline::{
    format_table, run_benchmark, size_record, write_benchmark_csv, BenchmarkSettings, DEFAULT_MAX_LIFTED_SIDE, TABLE1,
    TABLE2,
};
use crate::error::{CsError, Result};
use crate::linalg;
use crate::problem::{CsProblem, TerminalMode, Tightening};
use crate::scenarios::{PlannerSpec, QuadrotorSpec, ScenarioName};
use crate::simulator::{check_chance, monte_carlo};
use crate::solution::{
    losslessness_certificate, solve_problem, verify_dynamics, DynamicsResidual, LosslessnessReport, SolutionFile,
    SteeringSolution, TolerancePolicy,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_CERTIFICATE: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

/// Horizon tried for the quadrotor when the default one does not solve.
pub const QUADROTOR_FALLBACK_HORIZON: usize = 250;

#[derive(Debug, Parser)]
#[command(name = "covsteer", version, about = "Covariance steering via a lossless convex relaxation")]
pub struct Cli {
    /// Output root; artifacts go to `<out>/<name>/`.
    #[arg(long, global = true, env = "COVSTEER_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Wall-clock limit per solve, in seconds.
    #[arg(long, global = true)]
    pub time_limit: Option<f64>,
    /// Print solver iterations.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a problem JSON file.
    Solve(SolveArgs),
    /// Build, solve and simulate one of the built-in scenarios.
    Scenario(ScenarioArgs),
    /// Monte Carlo audit of a solved problem.
    Simulate(SimulateArgs),
    /// Recompute the relaxation certificate of a solution file.
    Certify(CertifyArgs),
    /// Time the per-step and lifted formulations on random instances.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TerminalArg {
    Eq,
    Ineq,
}

impl From<TerminalArg> for TerminalMode {
    fn from(t: TerminalArg) -> Self {
        match t {
            TerminalArg::Eq => TerminalMode::Equality,
            TerminalArg::Ineq => TerminalMode::Inequality,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TighteningArg {
    Gaussian,
    Cantelli,
}

impl From<TighteningArg> for Tightening {
    fn from(t: TighteningArg) -> Self {
        match t {
            TighteningArg::Gaussian => Tightening::Gaussian,
            TighteningArg::Cantelli => Tightening::Cantelli,
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub problem: PathBuf,
    /// Subdirectory name; defaults to the problem file stem.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, value_enum)]
    pub terminal: Option<TerminalArg>,
    #[arg(long, value_enum)]
    pub tightening: Option<TighteningArg>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    pub name: ScenarioName,
    /// JSON file overriding any scenario parameters.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Number of steps. planner2d keeps its duration; quadrotor3d keeps ΔT.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, value_enum)]
    pub terminal: Option<TerminalArg>,
    #[arg(long, value_enum)]
    pub tightening: Option<TighteningArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo samples; 0 skips the simulation.
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub problem: PathBuf,
    pub solution: PathBuf,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    pub solution: PathBuf,
    /// Also check dynamics and terminal residuals against this problem.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// `table1`, `table2` or `n=<n>:N=<N>`, comma separated.
    #[arg(long, default_value = "table2")]
    pub grid: String,
    /// Number of random instances per cell.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "ineq")]
    pub terminal: TerminalArg,
    /// Also time the lifted single-LMI baseline.
    #[arg(long)]
    pub lifted: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_LIFTED_SIDE)]
    pub max_lifted_side: usize,
    /// Record problem sizes only; nothing is solved.
    #[arg(long)]
    pub sizes_only: bool,
}

pub fn exit_code(err: &CsError) -> i32 {
    match err {
        CsError::ExtractionRefused(SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible)
        | CsError::InfeasibleMean(_) => EXIT_INFEASIBLE,
        CsError::InvalidInput(_)
        | CsError::DimensionMismatch { .. }
        | CsError::Validation(_)
        | CsError::InvalidReference(_)
        | CsError::NominalInconsistency { .. }
        | CsError::KinematicSingularity { .. }
        | CsError::UnsupportedInBaseline(_)
        | CsError::Io(_)
        | CsError::Json(_)
        | CsError::Csv(_) => EXIT_INPUT,
        _ => EXIT_SOLVER,
    }
}

/// Parses a benchmark grid into `(n, N)` cells.
pub fn parse_grid(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut cells = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item {
            "table1" => cells.extend(TABLE1),
            "table2" => cells.extend(TABLE2),
            _ => {
                let bad = || CsError::InvalidInput(format!("bad grid cell {item:?}; expected n=<int>:N=<int>"));
                let (a, b) = item.split_once(':').ok_or_else(bad)?;
                let n: usize = a.strip_prefix("n=").and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                let horizon = b.strip_prefix("N=").and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                if n == 0 || !n.is_multiple_of(2) || horizon == 0 {
                    return Err(CsError::InvalidInput(format!(
                        "grid cell {item:?}: n must be even and positive, N positive"
                    )));
                }
                cells.push((n, horizon));
            }
        }
    }
    if cells.is_empty() {
        return Err(CsError::InvalidInput("empty grid".into()));
    }
    Ok(cells)
}

/// Contents of `certificate.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub pass: bool,
    pub losslessness: LosslessnessReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dynamics: Option<DynamicsResidual>,
    /// `‖Σ_N − Σ_f‖_F` (equality) or `max(0, −λ_min(Σ_f − Σ_N))` (inequality).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub terminal_residual: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub caps: Vec<CapCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapCheck {
    pub step: usize,
    /// `λ_max(EΣ_kEᵀ − S)`.
    pub excess: f64,
    pub pass: bool,
}

/// Slack allowed on terminal and cap checks.
const CHECK_TOL: f64 = 1e-5;

pub fn terminal_residual(problem: &CsProblem, sol: &SteeringSolution) -> f64 {
    let last = &sol.sigma[sol.horizon()];
    match problem.terminal_mode {
        TerminalMode::Equality => (last - &problem.sigma_f).norm(),
        TerminalMode::Inequality => (-linalg::min_eigenvalue(&(&problem.sigma_f - last))).max(0.0),
    }
}

pub fn cap_checks(problem: &CsProblem, sol: &SteeringSolution) -> Vec<CapCheck> {
    let mut out = Vec::new();
    for cap in &problem.cov_caps {
        for &k in &cap.steps {
            let m: DMatrix<f64> = &cap.selector * &sol.sigma[k] * cap.selector.transpose() - &cap.cap;
            let excess = linalg::max_eigenvalue(&linalg::symmetrize(&m));
            out.push(CapCheck { step: k, excess, pass: excess <= 1e-6 });
        }
    }
    out
}

pub fn certificate_file(problem: Option<&CsProblem>, sol: &SteeringSolution) -> CertificateFile {
    let mut file = CertificateFile {
        pass: sol.certificate.pass,
        losslessness: sol.certificate.clone(),
        dynamics: None,
        terminal_residual: None,
        caps: Vec::new(),
    };
    if let Some(p) = problem {
        let dynamics = verify_dynamics(sol, &p.sys);
        let scale = 1.0 + sol.sigma.iter().map(|s| s.amax()).fold(0.0, f64::max);
        let terminal = terminal_residual(p, sol);
        file.caps = cap_checks(p, sol);
        file.pass &=
            dynamics.covariance <= CHECK_TOL * scale && terminal <= CHECK_TOL && file.caps.iter().all(|c| c.pass);
        file.dynamics = Some(dynamics);
        file.terminal_residual = Some(terminal);
    }
    file
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn output_dir(root: &Path, name: &str) -> Result<PathBuf> {
    let dir = root.join(name);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("problem").to_string()
}

fn solver_settings(cli: &Cli) -> SolverSettings {
    SolverSettings { verbose: cli.verbose, time_limit: cli.time_limit, ..Default::default() }
}

/// Writes `problem.json`, `solution.json`, `trajectory.csv` and
/// `certificate.json`, returning the certificate.
fn write_solution(dir: &Path, problem: &CsProblem, sol: &SteeringSolution) -> Result<CertificateFile> {
    fs::write(dir.join("problem.json"), problem.to_json()?)?;
    SolutionFile::from_solution(sol).write(&dir.join("solution.json"))?;
    sol.write_trajectory_csv(&dir.join("trajectory.csv"))?;
    let cert = certificate_file(Some(problem), sol);
    write_json(&dir.join("certificate.json"), &cert)?;
    Ok(cert)
}

fn summarize(name: &str, sol: &SteeringSolution, cert: &CertificateFile) {
    println!(
        "{name}: status {} cost {:.6} time {:.3}s iterations {} certificate max {:.3e} ({})",
        sol.status,
        sol.cost,
        sol.solve_time,
        sol.iterations,
        cert.losslessness.global_max,
        if cert.pass { "pass" } else { "FAIL" }
    );
}

fn simulate_into(dir: &Path, problem: &CsProblem, sol: &SteeringSolution, samples: usize, seed: u64) -> Result<bool> {
    let report = monte_carlo(problem, sol, samples, seed)?;
    report.write_json(&dir.join("mc_report.json"), &problem.chance_constraints)?;
    report.write_empirical_csv(&dir.join("empirical.csv"))?;
    let checks = check_chance(&report, &problem.chance_constraints);
    let failed = checks.iter().filter(|c| !c.pass).count();
    let worst = checks.iter().map(|c| c.rate).fold(0.0, f64::max);
    println!(
        "monte carlo: {samples} samples, {} audited rows, worst violation rate {worst:.4}, {failed} above bound",
        checks.len()
    );
    if failed > 0 {
        eprintln!("warning: {failed} chance rows exceed eps plus the 3-sigma sampling margin");
    }
    Ok(failed == 0)
}

fn certificate_exit(cert: &CertificateFile) -> i32 {
    if cert.pass {
        EXIT_OK
    } else {
        eprintln!("certificate check failed");
        EXIT_CERTIFICATE
    }
}

fn run_solve(cli: &Cli, args: &SolveArgs) -> Result<i32> {
    let mut problem = CsProblem::load(&args.problem)?;
    if let Some(t) = args.terminal {
        problem.terminal_mode = t.into();
    }
    if let Some(t) = args.tightening {
        problem.tightening = t.into();
    }
    problem.ensure_valid()?;
    let name = args.name.clone().unwrap_or_else(|| stem(&args.problem));
    let sol = solve_problem(&problem, &ClarabelBackend, &solver_settings(cli))?;
    let dir = output_dir(&cli.out, &name)?;
    let cert = write_solution(&dir, &problem, &sol)?;
    summarize(&name, &sol, &cert);
    Ok(certificate_exit(&cert))
}

fn load_spec<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn planner_spec(args: &ScenarioArgs) -> Result<PlannerSpec> {
    let mut spec: PlannerSpec = load_spec(args.spec.as_deref())?;
    if let Some(h) = args.horizon {
        let ratio = h as f64 / spec.horizon as f64;
        for w in &mut spec.waypoints {
            w.0 = ((w.0 as f64) * ratio).round() as usize;
        }
        spec.dt /= ratio;
        spec.horizon = h;
    }
    if let Some(t) = args.terminal {
        spec.terminal_mode = t.into();
    }
    if let Some(t) = args.tightening {
        spec.tightening = t.into();
    }
    Ok(spec)
}

fn quadrotor_spec(args: &ScenarioArgs) -> Result<QuadrotorSpec> {
    let mut spec: QuadrotorSpec = load_spec(args.spec.as_deref())?;
    if let Some(h) = args.horizon {
        spec = spec.with_horizon(h);
    }
    if let Some(t) = args.terminal {
        spec.terminal_mode = t.into();
    }
    Ok(spec)
}

fn retryable(err: &CsError) -> bool {
    matches!(
        err,
        CsError::ExtractionRefused(SolveStatus::IterationLimit | SolveStatus::TimeLimit | SolveStatus::NumericalError)
            | CsError::SingularCovariance { .. }
    )
}

fn run_scenario(cli: &Cli, args: &ScenarioArgs) -> Result<i32> {
    let settings = solver_settings(cli);
    let dir = output_dir(&cli.out, args.name.as_str())?;
    let (problem, sol) = match args.name {
        ScenarioName::Planner2d => {
            let problem = planner_spec(args)?.problem()?;
            problem.ensure_valid()?;
            let sol = solve_problem(&problem, &ClarabelBackend, &settings)?;
            (problem, sol)
        }
        ScenarioName::Quadrotor3d => {
            let spec = quadrotor_spec(args)?;
            let (problem, nominal) = spec.problem()?;
            problem.ensure_valid()?;
            match solve_problem(&problem, &ClarabelBackend, &settings) {
                Ok(sol) => {
                    nominal.write_csv(&dir.join("nominal.csv"))?;
                    (problem, sol)
                }
                Err(e) if retryable(&e) && spec.horizon != QUADROTOR_FALLBACK_HORIZON => {
                    eprintln!(
                        "N = {} did not solve ({e}); retrying with N = {QUADROTOR_FALLBACK_HORIZON}",
                        spec.horizon
                    );
                    let (problem, nominal) = spec.with_horizon(QUADROTOR_FALLBACK_HORIZON).problem()?;
                    let sol = solve_problem(&problem, &ClarabelBackend, &settings)?;
                    nominal.write_csv(&dir.join("nominal.csv"))?;
                    (problem, sol)
                }
                Err(e) => return Err(e),
            }
        }
    };
    let cert = write_solution(&dir, &problem, &sol)?;
    summarize(args.name.as_str(), &sol, &cert);
    if let Some(worst) = cert.caps.iter().map(|c| c.excess).reduce(f64::max) {
        println!("covariance cap: max excess {worst:.3e} over {} steps", cert.caps.len());
    }
    if args.samples > 0 {
        simulate_into(&dir, &problem, &sol, args.samples, args.seed)?;
    }
    Ok(certificate_exit(&cert))
}

fn run_simulate(cli: &Cli, args: &SimulateArgs) -> Result<i32> {
    let problem = CsProblem::load(&args.problem)?;
    problem.ensure_valid()?;
    let sol = SolutionFile::read(&args.solution)?.into_solution()?;
    let name = args.name.clone().unwrap_or_else(|| stem(&args.problem));
    let dir = output_dir(&cli.out, &name)?;
    simulate_into(&dir, &problem, &sol, args.samples, args.seed)?;
    Ok(EXIT_OK)
}

fn run_certify(cli: &Cli, args: &CertifyArgs) -> Result<i32> {
    let mut sol = SolutionFile::read(&args.solution)?.into_solution()?;
    sol.certificate = losslessness_certificate(&sol.sigma, &sol.u, &sol.y, TolerancePolicy::default())?;
    let problem = args.problem.as_deref().map(CsProblem::load).transpose()?;
    let cert = certificate_file(problem.as_ref(), &sol);
    let name = args.name.clone().unwrap_or_else(|| {
        args.solution.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str()).unwrap_or("certify").to_string()
    });
    let dir = output_dir(&cli.out, &name)?;
    write_json(&dir.join("certificate.json"), &cert)?;
    println!(
        "certificate: max lambda {:.3e}, max norm {:.3e} over {} steps ({})",
        cert.losslessness.global_max,
        cert.losslessness.global_norm,
        cert.losslessness.lambda_max.len(),
        if cert.pass { "pass" } else { "FAIL" }
    );
    Ok(certificate_exit(&cert))
}

fn run_bench(cli: &Cli, args: &BenchmarkArgs) -> Result<i32> {
    let cells = parse_grid(&args.grid)?;
    if args.seeds == 0 {
        return Err(CsError::InvalidInput("at least one seed is required".into()));
    }
    let seeds: Vec<u64> = (args.seed..args.seed + args.seeds).collect();
    let dir = output_dir(&cli.out, "benchmark")?;
    if args.sizes_only {
        let records = cells.iter().map(|&(n, h)| size_record(n, h, args.seed)).collect::<Result<Vec<_>>>()?;
        write_benchmark_csv(&dir.join("benchmark.csv"), &records)?;
        print!("{}", format_table(&records));
        return Ok(EXIT_OK);
    }
    let mut settings = BenchmarkSettings {
        mode: args.terminal.into(),
        max_lifted_side: args.max_lifted_side,
        run_lifted: args.lifted,
        ..Default::default()
    };
    settings.solver.verbose = cli.verbose;
    if cli.time_limit.is_some() {
        settings.solver.time_limit = cli.time_limit;
    }
    let records = run_benchmark(&cells, &seeds, &settings, |r| {
        eprintln!(
            "n={} N={} seed={} {}: {} in {:.3}s",
            r.n,
            r.horizon,
            r.seed,
            r.formulation.as_str(),
            r.status,
            r.time_s
        );
    })?;
    write_benchmark_csv(&dir.join("benchmark.csv"), &records)?;
    print!("{}", format_table(&records));
    Ok(EXIT_OK)
}

/// Runs one command and maps the outcome to an exit code, printing errors to
/// standard error.
pub fn run(cli: &Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Solve(a) => run_solve(cli, a),
        Command::Scenario(a) => run_scenario(cli, a),
        Command::Simulate(a) => run_simulate(cli, a),
        Command::Certify(a) => run_certify(cli, a),
        Command::Benchmark(a) => run_bench(cli, a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
