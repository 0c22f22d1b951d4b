//! Transcription of a covariance steering problem into a linear conic
//! program with one Schur-complement PSD block per step.
//!
//! Decision variables per step `k`: `U_k`, `Y_k`, `v_k` (`k = 0..N-1`),
//! `Σ_k` (`k = 1..N`) and `μ_k` (`k = 1..N-1`). `Σ_0 = Σ_i`, `μ_0 = μ_i` and
//! `μ_N = μ_f` enter as constants. The quadratic mean costs are epigraphs
//! `t ≥ ‖Fz‖²` with `FᵀF = Q_k` (or `R_k`), written as second-order cones
//! `(t + 1, t − 1, 2Fz)`.

mod expr;
mod program;
mod svec;

pub use expr::{LinExpr, MatExpr};
pub use program::{Cone, ConicProgram, ProgramBuilder};
pub use svec::{svec, svec_index, svec_len, svec_side, svec_unchecked, unsvec};

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{CsError, Result};
use crate::linalg;
use crate::problem::{build_linear_chance_row, ConstraintKind, CsProblem, TerminalMode};

/// Where each named matrix lives in the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableIndex {
    pub n: usize,
    pub p: usize,
    pub horizon: usize,
    /// `Σ_k` svec slices, `k = 0..=N`; `None` at `k = 0`.
    pub sigma: Vec<Option<Range<usize>>>,
    /// `U_k` (column-major `p × n`), `k = 0..N-1`.
    pub u: Vec<Range<usize>>,
    /// `Y_k` svec slices, `k = 0..N-1`.
    pub y: Vec<Range<usize>>,
    /// `μ_k`, `k = 0..=N`; `None` at both ends.
    pub mu: Vec<Option<Range<usize>>>,
    /// `v_k`, `k = 0..N-1`.
    pub v: Vec<Range<usize>>,
    /// Epigraph variables of `μ_kᵀQ_kμ_k` (where `Q_k ≠ 0`).
    pub mean_epigraph: Vec<Option<usize>>,
    /// Epigraph variables of `v_kᵀR_kv_k`.
    pub input_epigraph: Vec<usize>,
    pub num_vars: usize,
}

impl VariableIndex {
    fn allocate(problem: &CsProblem) -> Self {
        let (n, p, horizon) = (problem.sys.n(), problem.sys.p(), problem.horizon());
        let mut next = 0usize;
        let mut take = |len: usize| {
            let r = next..next + len;
            next += len;
            r
        };
        let mut sigma = vec![None];
        let mut mu = vec![None];
        let (mut u, mut y, mut v) = (Vec::new(), Vec::new(), Vec::new());
        let mut mean_epigraph = vec![None];
        let mut input_epigraph = Vec::new();
        for k in 0..horizon {
            u.push(take(p * n));
            y.push(take(svec_len(p)));
            v.push(take(p));
            input_epigraph.push(take(1).start);
            sigma.push(Some(take(svec_len(n))));
            if k + 1 < horizon {
                mu.push(Some(take(n)));
                let has_cost = problem.q_seq[k + 1].amax() > 0.0;
                mean_epigraph.push(has_cost.then(|| take(1).start));
            }
        }
        mu.push(None);
        VariableIndex { n, p, horizon, sigma, u, y, mu, v, mean_epigraph, input_epigraph, num_vars: next }
    }

    pub fn sigma_expr(&self, problem: &CsProblem, k: usize) -> MatExpr {
        match &self.sigma[k] {
            Some(r) => MatExpr::sym_var(r.start, self.n),
            None => MatExpr::constant(&problem.sigma_i),
        }
    }

    pub fn mu_expr(&self, problem: &CsProblem, k: usize) -> Vec<LinExpr> {
        match &self.mu[k] {
            Some(r) => r.clone().map(|i| LinExpr::var(i, 1.0)).collect(),
            None => {
                let c = if k == 0 { &problem.mu_i } else { &problem.mu_f };
                c.iter().map(|&x| LinExpr::constant(x)).collect()
            }
        }
    }

    /// Dense value of `Σ_k` (`k ≥ 1`) from a primal vector.
    pub fn sigma_value(&self, x: &[f64], k: usize) -> Option<DMatrix<f64>> {
        self.sigma[k].as_ref().map(|r| unsvec(&x[r.clone()]).expect("svec slice"))
    }

    pub fn u_value(&self, x: &[f64], k: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.p, self.n, &x[self.u[k].clone()])
    }

    pub fn y_value(&self, x: &[f64], k: usize) -> DMatrix<f64> {
        unsvec(&x[self.y[k].clone()]).expect("svec slice")
    }

    pub fn v_value(&self, x: &[f64], k: usize) -> DVector<f64> {
        DVector::from_column_slice(&x[self.v[k].clone()])
    }

    pub fn mu_value(&self, x: &[f64], k: usize) -> Option<DVector<f64>> {
        self.mu[k].as_ref().map(|r| DVector::from_column_slice(&x[r.clone()]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VariableCount {
    /// `N·n² + (N−1)·(n·p + p²)`, the problem-size convention of the
    /// published run-time tables.
    pub paper_convention: usize,
    /// Length of the decision vector emitted by [`transcribe`].
    pub internal: usize,
}

pub fn paper_problem_size(n: usize, p: usize, horizon: usize) -> usize {
    horizon * n * n + horizon.saturating_sub(1) * (n * p + p * p)
}

pub fn count_variables(problem: &CsProblem) -> VariableCount {
    VariableCount {
        paper_convention: paper_problem_size(problem.sys.n(), problem.sys.p(), problem.horizon()),
        internal: VariableIndex::allocate(problem).num_vars,
    }
}

fn epigraph_cone(t: usize, factor: &DMatrix<f64>, z: &[LinExpr]) -> Vec<LinExpr> {
    let mut head = LinExpr::var(t, 1.0);
    head.constant = 1.0;
    let mut second = LinExpr::var(t, 1.0);
    second.constant = -1.0;
    let mut out = vec![head, second];
    for i in 0..factor.nrows() {
        let mut e = LinExpr::default();
        for (j, zj) in z.iter().enumerate() {
            e.add_scaled(zj, 2.0 * factor[(i, j)]);
        }
        e.compact();
        out.push(e);
    }
    out
}

/// `⟨M, X⟩` for a constant `M` and matrix expression `X`.
fn frobenius(m: &DMatrix<f64>, x: &MatExpr) -> LinExpr {
    let mut e = LinExpr::default();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            e.add_scaled(x.at(i, j), m[(i, j)]);
        }
    }
    e.compact();
    e
}

fn dot(a: &DVector<f64>, z: &[LinExpr]) -> LinExpr {
    let mut e = LinExpr::default();
    for (ai, zi) in a.iter().zip(z) {
        e.add_scaled(zi, *ai);
    }
    e.compact();
    e
}

/// Per-step covariance dynamics `G_k(Σ_k, U_k, Y_k) − Σ_{k+1}` as a matrix
/// expression.
pub fn covariance_dynamics(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    noise: &DMatrix<f64>,
    sigma: &MatExpr,
    u: &MatExpr,
    y: &MatExpr,
    sigma_next: &MatExpr,
) -> MatExpr {
    let at = a.transpose();
    let mut g = sigma.left_mul(a).right_mul(&at);
    let bua = u.left_mul(b).right_mul(&at);
    g.add_scaled(&bua, 1.0);
    g.add_scaled(&bua.transpose(), 1.0);
    g.add_scaled(&y.left_mul(b).right_mul(&b.transpose()), 1.0);
    g.add_constant(noise);
    g.add_scaled(sigma_next, -1.0);
    g
}

pub fn transcribe(problem: &CsProblem) -> Result<(ConicProgram, VariableIndex)> {
    if problem.horizon() == 0 {
        return Err(CsError::InvalidInput("empty horizon".into()));
    }
    problem.ensure_valid()?;
    let idx = VariableIndex::allocate(problem);
    let sys = &problem.sys;
    let (n, p, horizon) = (idx.n, idx.p, idx.horizon);
    let mut b = ProgramBuilder::new(idx.num_vars);

    // objective
    for k in 0..horizon {
        let (q, r) = (&problem.q_seq[k], &problem.r_seq[k]);
        match &idx.sigma[k] {
            None => b.add_offset((q * &problem.sigma_i).trace()),
            Some(range) => {
                for (i, c) in range.clone().zip(svec_unchecked(q).iter()) {
                    b.add_objective(i, *c);
                }
            }
        }
        for (i, c) in idx.y[k].clone().zip(svec_unchecked(r).iter()) {
            b.add_objective(i, *c);
        }
        if k == 0 {
            b.add_offset((problem.mu_i.transpose() * q * &problem.mu_i)[(0, 0)]);
        } else if let Some(t) = idx.mean_epigraph[k] {
            b.add_objective(t, 1.0);
            let cone = epigraph_cone(t, &linalg::psd_factor(q), &idx.mu_expr(problem, k));
            b.second_order(&cone);
        }
        let t = idx.input_epigraph[k];
        b.add_objective(t, 1.0);
        let v: Vec<LinExpr> = idx.v[k].clone().map(|i| LinExpr::var(i, 1.0)).collect();
        b.second_order(&epigraph_cone(t, &linalg::psd_factor(r), &v));
    }

    for k in 0..horizon {
        let sigma = idx.sigma_expr(problem, k);
        let u = MatExpr::dense_var(idx.u[k].start, p, n);
        let y = MatExpr::sym_var(idx.y[k].start, p);

        // [[Σ_k, U_kᵀ], [U_k, Y_k]] ⪰ 0
        let ut = u.transpose();
        let schur = MatExpr::from_blocks(&[vec![&sigma, &ut], vec![&u, &y]]);
        b.psd(n + p, &schur.svec());

        let sigma_next = idx.sigma_expr(problem, k + 1);
        let g = covariance_dynamics(sys.a(k), sys.b(k), &sys.noise_cov(k), &sigma, &u, &y, &sigma_next);
        b.zero(&g.svec());

        // μ_{k+1} − A_k μ_k − B_k v_k = 0
        let mu = idx.mu_expr(problem, k);
        let mu_next = idx.mu_expr(problem, k + 1);
        let rows: Vec<LinExpr> = (0..n)
            .map(|i| {
                let mut e = mu_next[i].clone();
                for j in 0..n {
                    e.add_scaled(&mu[j], -sys.a(k)[(i, j)]);
                }
                for (j, vi) in idx.v[k].clone().enumerate() {
                    e.add_term(vi, -sys.b(k)[(i, j)]);
                }
                e.compact();
                e
            })
            .collect();
        b.zero(&rows);
    }

    let sigma_n = idx.sigma_expr(problem, horizon);
    match problem.terminal_mode {
        TerminalMode::Equality => {
            let mut diff = sigma_n.clone();
            diff.add_constant(&(-&problem.sigma_f));
            b.zero(&diff.svec());
        }
        TerminalMode::Inequality => {
            let mut slack = MatExpr::constant(&problem.sigma_f);
            slack.add_scaled(&sigma_n, -1.0);
            b.psd(n, &slack.svec());
        }
    }

    if !problem.chance_constraints.is_empty() {
        let refs = problem.refs.as_ref().expect("validated");
        for cc in &problem.chance_constraints {
            let row = build_linear_chance_row(cc, refs, problem.tightening)?;
            let mut rows = Vec::with_capacity(cc.steps.len());
            for &k in &cc.steps {
                let (matrix, mean) = match cc.kind {
                    ConstraintKind::State => (idx.sigma_expr(problem, k), idx.mu_expr(problem, k)),
                    ConstraintKind::Control => {
                        (MatExpr::sym_var(idx.y[k].start, p), idx.v[k].clone().map(|i| LinExpr::var(i, 1.0)).collect())
                    }
                };
                // rhs − ⟨γααᵀ, X⟩ − αᵀm ≥ 0
                let mut e = LinExpr::constant(row.rhs);
                e.add_scaled(&frobenius(&row.matrix_coeff, &matrix), -1.0);
                e.add_scaled(&dot(&row.mean_coeff, &mean), -1.0);
                e.compact();
                rows.push(e);
            }
            b.nonnegative(&rows);
        }
    }

    for wp in &problem.waypoints {
        let mu = idx.mu_expr(problem, wp.step);
        let rows: Vec<LinExpr> = (0..wp.selector.nrows())
            .map(|i| {
                let mut e = dot(&wp.selector.row(i).transpose(), &mu);
                e.constant -= wp.target[i];
                e
            })
            .collect();
        b.zero(&rows);
    }

    for cap in &problem.cov_caps {
        let et = cap.selector.transpose();
        for &k in &cap.steps {
            let mut slack = MatExpr::constant(&cap.cap);
            slack.add_scaled(&idx.sigma_expr(problem, k).left_mul(&cap.selector).right_mul(&et), -1.0);
            b.psd(cap.cap.nrows(), &slack.svec());
        }
    }

    let prog = b.build();
    prog.check()?;
    Ok((prog, idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{propagate_cov, random_stable_system, LtvSystem};

    fn scalar(mode: TerminalMode, sigma_f: f64) -> CsProblem {
        let one = |x: f64| DMatrix::from_element(1, 1, x);
        let sys = LtvSystem::time_invariant(one(2.0), one(1.0), one(1.0), 1).unwrap();
        CsProblem::new(sys, one(0.0), one(1.0), DVector::zeros(1), one(1.0), DVector::zeros(1), one(sigma_f), mode)
    }

    fn random_problem(n: usize, horizon: usize, seed: u64) -> CsProblem {
        let p = (n / 2).max(1);
        let sys = random_stable_system(n, p, n, horizon, seed);
        CsProblem::new(
            sys,
            DMatrix::identity(n, n),
            DMatrix::identity(p, p) * 0.5,
            DVector::from_element(n, 1.0),
            DMatrix::identity(n, n),
            DVector::zeros(n),
            DMatrix::identity(n, n) * 2.0,
            TerminalMode::Equality,
        )
    }

    #[test]
    fn paper_problem_sizes() {
        assert_eq!(paper_problem_size(4, 2, 32), 884);
        assert_eq!(paper_problem_size(8, 4, 8), 848);
        assert_eq!(paper_problem_size(32, 16, 32), 56576);
    }

    #[test]
    fn block_structure_one_schur_block_per_step() {
        let problem = random_problem(8, 32, 1);
        let (prog, _) = transcribe(&problem).unwrap();
        let schur = prog.cones.iter().filter(|c| **c == Cone::Psd(12)).count();
        assert_eq!(schur, 32);
        assert!(prog.cones.iter().all(|c| !matches!(c, Cone::Psd(s) if *s > 12)));
    }

    #[test]
    fn index_slices_partition_the_vector() {
        let problem = random_problem(3, 5, 2);
        let (prog, idx) = transcribe(&problem).unwrap();
        let mut seen = vec![0u8; idx.num_vars];
        let mut mark = |r: &Range<usize>| r.clone().for_each(|i| seen[i] += 1);
        idx.sigma.iter().flatten().for_each(&mut mark);
        idx.mu.iter().flatten().for_each(&mut mark);
        idx.u.iter().chain(&idx.y).chain(&idx.v).for_each(&mut mark);
        for t in idx.mean_epigraph.iter().flatten().chain(&idx.input_epigraph) {
            seen[*t] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(prog.num_vars, idx.num_vars);
        assert!(idx.sigma[0].is_none() && idx.mu[0].is_none() && idx.mu[5].is_none());
        assert_eq!(count_variables(&problem).internal, idx.num_vars);
    }

    /// Point built from a gain sequence: `U = KΣ`, `Y = KΣKᵀ`, means from
    /// the feedforward sequence, epigraphs at their exact values.
    fn point_from_gains(
        problem: &CsProblem,
        idx: &VariableIndex,
        gains: &[DMatrix<f64>],
        v: &[DVector<f64>],
    ) -> Vec<f64> {
        let sys = &problem.sys;
        let sig = propagate_cov(sys, &problem.sigma_i, gains).unwrap();
        let mu = crate::model::propagate_mean(sys, &problem.mu_i, v).unwrap();
        let mut x = vec![0.0; idx.num_vars];
        for k in 0..problem.horizon() {
            let u = &gains[k] * &sig[k];
            x[idx.u[k].clone()].copy_from_slice(u.as_slice());
            let y = &u * gains[k].transpose();
            x[idx.y[k].clone()].copy_from_slice(svec_unchecked(&y).as_slice());
            x[idx.v[k].clone()].copy_from_slice(v[k].as_slice());
            x[idx.input_epigraph[k]] = (v[k].transpose() * &problem.r_seq[k] * &v[k])[(0, 0)];
            if let Some(r) = &idx.sigma[k + 1] {
                x[r.clone()].copy_from_slice(svec_unchecked(&sig[k + 1]).as_slice());
            }
            if let Some(r) = &idx.mu[k + 1] {
                x[r.clone()].copy_from_slice(mu[k + 1].as_slice());
            }
            if let Some(t) = idx.mean_epigraph.get(k + 1).copied().flatten() {
                x[t] = (mu[k + 1].transpose() * &problem.q_seq[k + 1] * &mu[k + 1])[(0, 0)];
            }
        }
        x
    }

    #[test]
    fn gain_points_satisfy_transcribed_rows_and_cost() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        for seed in 0..10u64 {
            let mut problem = random_problem(4, 6, seed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let gains: Vec<DMatrix<f64>> = (0..6)
                .map(|_| {
                    DMatrix::from_fn(2, 4, |_, _| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        0.3 * z
                    })
                })
                .collect();
            let v: Vec<DVector<f64>> =
                (0..6).map(|_| DVector::from_fn(2, |_, _| -> f64 { StandardNormal.sample(&mut rng) })).collect();
            // terminal data consistent with this policy
            problem.sigma_f = propagate_cov(&problem.sys, &problem.sigma_i, &gains).unwrap()[6].clone();
            problem.mu_f = crate::model::propagate_mean(&problem.sys, &problem.mu_i, &v).unwrap()[6].clone();
            let (prog, idx) = transcribe(&problem).unwrap();
            let x = point_from_gains(&problem, &idx, &gains, &v);
            let s = prog.slack(&x);
            for (cone, range) in prog.cones.iter().zip(prog.cone_ranges()) {
                if let Cone::Zero(_) = cone {
                    for i in range {
                        assert!(s[i].abs() < 1e-9 * (1.0 + prog.rhs[i].abs()), "zero row {i}: {}", s[i]);
                    }
                }
            }
            // moment-form cost
            let sig = propagate_cov(&problem.sys, &problem.sigma_i, &gains).unwrap();
            let mu = crate::model::propagate_mean(&problem.sys, &problem.mu_i, &v).unwrap();
            let mut cost = 0.0;
            for k in 0..6 {
                let (q, r) = (&problem.q_seq[k], &problem.r_seq[k]);
                cost += (q * &sig[k]).trace()
                    + (r * &gains[k] * &sig[k] * gains[k].transpose()).trace()
                    + (mu[k].transpose() * q * &mu[k])[(0, 0)]
                    + (v[k].transpose() * r * &v[k])[(0, 0)];
            }
            let obj = prog.objective_value(&x);
            assert!((obj - cost).abs() <= 1e-9 * cost.abs(), "{obj} vs {cost}");
        }
    }

    #[test]
    fn scalar_program_shape() {
        let (prog, idx) = transcribe(&scalar(TerminalMode::Equality, 2.0)).unwrap();
        // U0, Y0, v0, t0, Σ1
        assert_eq!(idx.num_vars, 5);
        assert!(prog.cones.contains(&Cone::Psd(2)));
        let (prog, _) = transcribe(&scalar(TerminalMode::Inequality, 5.5)).unwrap();
        assert_eq!(prog.cones.iter().filter(|c| **c == Cone::Psd(1)).count(), 1);
    }

    #[test]
    fn density_decays_with_horizon() {
        let d8 = transcribe(&random_problem(4, 8, 3)).unwrap().0.density();
        let d32 = transcribe(&random_problem(4, 32, 3)).unwrap().0.density();
        // O(1/N): quadrupling N should cut density by roughly four
        assert!(d32 < d8 / 3.0, "{d8} -> {d32}");
    }

    #[test]
    fn invalid_problem_is_rejected() {
        let mut p = scalar(TerminalMode::Equality, 2.0);
        p.r_seq[0] = DMatrix::zeros(1, 1);
        assert!(matches!(transcribe(&p), Err(CsError::Validation(_))));
    }
}
