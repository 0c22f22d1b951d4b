//! Lifted transcription: the whole horizon enters a single large PSD block.
//!
//! The stacked noise `ζ = [Σ_i^{-1/2}(x₀ − μ_i); w₀; …; w_{N−1}]` is standard
//! normal of size `m = n + Nq`. Causal policies are affine in `ζ`.
//!
//! * Inequality terminal: disturbance feedback `ũ_k = K_k ζ`. The state
//!   deviation factor `Z_k` (with `Cov(x_k) = Z_kZ_kᵀ`) follows the recursion
//!   `Z_{k+1} = A_kZ_k + B_kK_k + D_kE_k`, and `Σ_N ⪯ Σ_f` becomes
//!   `[[Σ_f, Z_N], [Z_Nᵀ, I_m]] ⪰ 0` of side `2n + Nq`, which is `(N+2)n`
//!   when `q = n`.
//! * Equality terminal: joint covariance `P = Cov(ũ, ζ)`, `Y = Cov(ũ)` with
//!   `[[I_m, Pᵀ], [P, Y]] ⪰ 0` of side `m + Np`; `Σ_N = Σ_f` is affine in
//!   `(P, Y)`. The factor form above would make the equality nonconvex.

use std::ops::Range;

use std::ops::AddAssign;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CsError, Result};
use crate::linalg;
use crate::problem::{CsProblem, TerminalMode};
use crate::transcriber::{svec_len, svec_unchecked, ConicProgram, LinExpr, MatExpr, ProgramBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftedForm {
    DisturbanceFeedback,
    JointCovariance,
}

impl LiftedForm {
    pub fn for_mode(mode: TerminalMode) -> Self {
        match mode {
            TerminalMode::Inequality => LiftedForm::DisturbanceFeedback,
            TerminalMode::Equality => LiftedForm::JointCovariance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedIndex {
    pub form: LiftedForm,
    /// Side of the single large PSD block.
    pub psd_side: usize,
    /// Stacked feedforward `v`.
    pub v: Range<usize>,
    pub num_vars: usize,
}

/// Width of the causal part of row block `k`: `x₀` and `w_l` for `l < k`.
fn causal_width(n: usize, q: usize, k: usize) -> usize {
    n + k * q
}

fn causal_entries(n: usize, p: usize, q: usize, horizon: usize) -> usize {
    (0..horizon).map(|k| p * causal_width(n, q, k)).sum()
}

/// Side of the large PSD block for a problem of the given shape.
pub fn lifted_psd_side(n: usize, p: usize, q: usize, horizon: usize, form: LiftedForm) -> usize {
    let m = n + horizon * q;
    match form {
        LiftedForm::DisturbanceFeedback => n + m,
        LiftedForm::JointCovariance => m + horizon * p,
    }
}

/// Decision-vector length of [`transcribe_lifted`].
pub fn lifted_num_vars(n: usize, p: usize, q: usize, horizon: usize, form: LiftedForm) -> usize {
    let mean = horizon * p + horizon.saturating_sub(1) * n + 1;
    let gains = causal_entries(n, p, q, horizon);
    match form {
        LiftedForm::DisturbanceFeedback => {
            let factors: usize = (1..=horizon).map(|k| n * causal_width(n, q, k)).sum();
            mean + gains + factors + 1
        }
        LiftedForm::JointCovariance => mean + gains + svec_len(horizon * p),
    }
}

struct Alloc(usize);

impl Alloc {
    fn take(&mut self, len: usize) -> Range<usize> {
        let r = self.0..self.0 + len;
        self.0 += len;
        r
    }
}

/// Dense `rows × cols` matrix expression over consecutive variables,
/// zero beyond column `width`.
fn causal_block(range: &Range<usize>, rows: usize, width: usize, cols: usize) -> MatExpr {
    let mut m = MatExpr::zeros(rows, cols);
    for j in 0..width {
        for i in 0..rows {
            *m.at_mut(i, j) = LinExpr::var(range.start + j * rows + i, 1.0);
        }
    }
    m
}

fn epigraph(t: usize, parts: Vec<LinExpr>) -> Vec<LinExpr> {
    let mut head = LinExpr::var(t, 1.0);
    head.constant = 1.0;
    let mut second = LinExpr::var(t, 1.0);
    second.constant = -1.0;
    let mut out = vec![head, second];
    out.extend(parts.into_iter().map(|mut e| {
        e.terms.iter_mut().for_each(|(_, c)| *c *= 2.0);
        e.constant *= 2.0;
        e
    }));
    out
}

fn factor_rows(f: &DMatrix<f64>, z: &[LinExpr]) -> Vec<LinExpr> {
    (0..f.nrows())
        .map(|i| {
            let mut e = LinExpr::default();
            for (j, zj) in z.iter().enumerate() {
                e.add_scaled(zj, f[(i, j)]);
            }
            e.compact();
            e
        })
        .collect()
}

/// Mean variables, mean dynamics rows and one epigraph for all mean costs.
fn add_mean_part(
    b: &mut ProgramBuilder,
    alloc_v: &Range<usize>,
    alloc_mu: &[Range<usize>],
    t: usize,
    problem: &CsProblem,
) {
    let sys = &problem.sys;
    let (n, p, horizon) = (sys.n(), sys.p(), problem.horizon());
    let mu = |k: usize| -> Vec<LinExpr> {
        if k == 0 {
            problem.mu_i.iter().map(|&x| LinExpr::constant(x)).collect()
        } else if k == horizon {
            problem.mu_f.iter().map(|&x| LinExpr::constant(x)).collect()
        } else {
            alloc_mu[k - 1].clone().map(|i| LinExpr::var(i, 1.0)).collect()
        }
    };
    let v = |k: usize| -> Vec<LinExpr> {
        (alloc_v.start + k * p..alloc_v.start + (k + 1) * p).map(|i| LinExpr::var(i, 1.0)).collect()
    };
    let mut parts = Vec::new();
    b.add_offset((problem.mu_i.transpose() * &problem.q_seq[0] * &problem.mu_i)[(0, 0)]);
    for k in 0..horizon {
        if k > 0 {
            parts.extend(factor_rows(&linalg::psd_factor(&problem.q_seq[k]), &mu(k)));
        }
        parts.extend(factor_rows(&linalg::psd_factor(&problem.r_seq[k]), &v(k)));
        let (muk, mun, vk) = (mu(k), mu(k + 1), v(k));
        let rows: Vec<LinExpr> = (0..n)
            .map(|i| {
                let mut e = mun[i].clone();
                for j in 0..n {
                    e.add_scaled(&muk[j], -sys.a(k)[(i, j)]);
                }
                for j in 0..p {
                    e.add_scaled(&vk[j], -sys.b(k)[(i, j)]);
                }
                e.compact();
                e
            })
            .collect();
        b.zero(&rows);
    }
    b.add_objective(t, 1.0);
    b.second_order(&epigraph(t, parts));
}

pub fn transcribe_lifted(problem: &CsProblem) -> Result<(ConicProgram, LiftedIndex)> {
    transcribe_lifted_with(problem, LiftedForm::for_mode(problem.terminal_mode))
}

/// As [`transcribe_lifted`] with an explicit form; the disturbance-feedback
/// form supports only the inequality terminal.
pub fn transcribe_lifted_with(problem: &CsProblem, form: LiftedForm) -> Result<(ConicProgram, LiftedIndex)> {
    if form == LiftedForm::DisturbanceFeedback && problem.terminal_mode == TerminalMode::Equality {
        return Err(CsError::UnsupportedInBaseline("equality terminal in the disturbance-feedback form".into()));
    }
    if !problem.chance_constraints.is_empty() || !problem.waypoints.is_empty() || !problem.cov_caps.is_empty() {
        return Err(CsError::UnsupportedInBaseline("chance, waypoint and covariance-cap constraints".into()));
    }
    if problem.horizon() == 0 {
        return Err(CsError::InvalidInput("empty horizon".into()));
    }
    problem.ensure_valid()?;
    let sys = &problem.sys;
    let (n, p, q, horizon) = (sys.n(), sys.p(), sys.q(), problem.horizon());
    let m = n + horizon * q;
    let chol_i = linalg::cholesky_shifted(&problem.sigma_i).ok_or(CsError::SingularCovariance { step: 0 })?.0;

    let mut alloc = Alloc(0);
    let v = alloc.take(horizon * p);
    let mu: Vec<Range<usize>> = (1..horizon).map(|_| alloc.take(n)).collect();
    let t_mean = alloc.take(1).start;
    let gains: Vec<Range<usize>> = (0..horizon).map(|k| alloc.take(p * causal_width(n, q, k))).collect();

    let (prog, psd_side) = match form {
        LiftedForm::DisturbanceFeedback => {
            let factors: Vec<Range<usize>> = (1..=horizon).map(|k| alloc.take(n * causal_width(n, q, k))).collect();
            let t_cov = alloc.take(1).start;
            let mut b = ProgramBuilder::new(alloc.0);
            add_mean_part(&mut b, &v, &mu, t_mean, problem);

            let mut z0 = DMatrix::zeros(n, m);
            z0.view_mut((0, 0), (n, n)).copy_from(&chol_i);
            let mut z = MatExpr::constant(&z0);
            b.add_offset((&problem.q_seq[0] * &problem.sigma_i).trace());
            let mut parts = Vec::new();
            for k in 0..horizon {
                let kk = causal_block(&gains[k], p, causal_width(n, q, k), m);
                let fr = linalg::psd_factor(&problem.r_seq[k]);
                for c in 0..causal_width(n, q, k) {
                    let col: Vec<LinExpr> = (0..p).map(|i| kk.at(i, c).clone()).collect();
                    parts.extend(factor_rows(&fr, &col));
                }
                if k > 0 {
                    let fq = linalg::psd_factor(&problem.q_seq[k]);
                    for c in 0..causal_width(n, q, k) {
                        let col: Vec<LinExpr> = (0..n).map(|i| z.at(i, c).clone()).collect();
                        parts.extend(factor_rows(&fq, &col));
                    }
                }
                // Z_{k+1} − A_kZ_k − B_kK_k − D_kE_k = 0
                let width = causal_width(n, q, k + 1);
                let mut next = z.left_mul(sys.a(k));
                next.add_scaled(&kk.left_mul(sys.b(k)), 1.0);
                let mut dk = DMatrix::zeros(n, m);
                dk.view_mut((0, causal_width(n, q, k)), (n, q)).copy_from(sys.d(k));
                next.add_constant(&dk);
                let znext = causal_block(&factors[k], n, width, m);
                let mut rows = Vec::with_capacity(n * width);
                for c in 0..width {
                    for i in 0..n {
                        let mut e = znext.at(i, c).clone();
                        e.add_scaled(next.at(i, c), -1.0);
                        e.compact();
                        rows.push(e);
                    }
                }
                b.zero(&rows);
                z = znext;
            }
            b.add_objective(t_cov, 1.0);
            b.second_order(&epigraph(t_cov, parts));

            // [[Σ_f, Z_N], [Z_Nᵀ, I]] ⪰ 0
            let sf = MatExpr::constant(&problem.sigma_f);
            let eye = MatExpr::constant(&DMatrix::identity(m, m));
            let zt = z.transpose();
            let big = MatExpr::from_blocks(&[vec![&sf, &z], vec![&zt, &eye]]);
            b.psd(n + m, &big.svec());
            (b.build(), n + m)
        }
        LiftedForm::JointCovariance => {
            let np = horizon * p;
            let y = alloc.take(svec_len(np));
            let mut b = ProgramBuilder::new(alloc.0);
            add_mean_part(&mut b, &v, &mu, t_mean, problem);

            // deterministic maps: x̃_k = F_k ζ + G_k ũ
            let mut f = DMatrix::zeros(n, m);
            f.view_mut((0, 0), (n, n)).copy_from(&chol_i);
            let mut g = DMatrix::<f64>::zeros(n, np);
            let mut c_y = DMatrix::<f64>::zeros(np, np);
            let mut c_p = DMatrix::<f64>::zeros(np, m);
            for k in 0..horizon {
                let qk = &problem.q_seq[k];
                b.add_offset((qk * &f * f.transpose()).trace());
                c_y += g.transpose() * qk * &g;
                c_p += g.transpose() * qk * &f * 2.0;
                c_y.view_mut((k * p, k * p), (p, p)).add_assign(&problem.r_seq[k]);
                let a = sys.a(k);
                let mut f_next = a * &f;
                f_next.view_mut((0, causal_width(n, q, k)), (n, q)).add_assign(sys.d(k));
                let mut g_next = a * &g;
                g_next.view_mut((0, k * p), (n, p)).add_assign(sys.b(k));
                f = f_next;
                g = g_next;
            }
            for (i, c) in y.clone().zip(svec_unchecked(&linalg::symmetrize(&c_y)).iter()) {
                b.add_objective(i, *c);
            }
            let mut pmat = MatExpr::zeros(np, m);
            for k in 0..horizon {
                let blk = causal_block(&gains[k], p, causal_width(n, q, k), m);
                for c in 0..causal_width(n, q, k) {
                    for i in 0..p {
                        *pmat.at_mut(k * p + i, c) = blk.at(i, c).clone();
                        b.add_objective(gains[k].start + c * p + i, c_p[(k * p + i, c)]);
                    }
                }
            }
            let ymat = MatExpr::sym_var(y.start, np);

            // Cov(x_N) = F Fᵀ + G P Fᵀ + F Pᵀ Gᵀ + G Y Gᵀ = Σ_f
            let gpf = pmat.right_mul(&f.transpose()).left_mul(&g);
            let mut cov = ymat.left_mul(&g).right_mul(&g.transpose());
            cov.add_scaled(&gpf, 1.0);
            cov.add_scaled(&gpf.transpose(), 1.0);
            cov.add_constant(&(&f * f.transpose()));
            match problem.terminal_mode {
                TerminalMode::Equality => {
                    cov.add_constant(&(-&problem.sigma_f));
                    b.zero(&cov.svec());
                }
                TerminalMode::Inequality => {
                    let mut slack = MatExpr::constant(&problem.sigma_f);
                    slack.add_scaled(&cov, -1.0);
                    b.psd(n, &slack.svec());
                }
            }
            let eye = MatExpr::constant(&DMatrix::identity(m, m));
            let pt = pmat.transpose();
            let big = MatExpr::from_blocks(&[vec![&eye, &pt], vec![&pmat, &ymat]]);
            b.psd(m + np, &big.svec());
            (b.build(), m + np)
        }
    };
    prog.check()?;
    debug_assert_eq!(prog.num_vars, lifted_num_vars(n, p, q, horizon, form));
    Ok((prog, LiftedIndex { form, psd_side, v, num_vars: alloc.0 }))
}
