//! Mean steering as an equality-constrained least-squares problem, solved
//! through its KKT system in condensed form.

use std::ops::AddAssign;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{CsError, Result};
use crate::linalg;
use crate::model::{propagate_mean, LtvSystem};

#[derive(Debug, Clone, PartialEq)]
pub struct MeanSteering {
    /// `μ_0 … μ_N`.
    pub mu: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    /// `Σ_{k<N} μ_kᵀQ_kμ_k + v_kᵀR_kv_k`.
    pub cost: f64,
}

/// `selector · μ_step = target`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanWaypoint {
    pub step: usize,
    pub selector: DMatrix<f64>,
    pub target: DVector<f64>,
}

pub fn solve_mean_steering(
    sys: &LtvSystem,
    q_seq: &[DMatrix<f64>],
    r_seq: &[DMatrix<f64>],
    mu_i: &DVector<f64>,
    mu_f: &DVector<f64>,
) -> Result<MeanSteering> {
    solve_mean_steering_with_waypoints(sys, q_seq, r_seq, mu_i, mu_f, &[])
}

pub fn solve_mean_steering_with_waypoints(
    sys: &LtvSystem,
    q_seq: &[DMatrix<f64>],
    r_seq: &[DMatrix<f64>],
    mu_i: &DVector<f64>,
    mu_f: &DVector<f64>,
    waypoints: &[MeanWaypoint],
) -> Result<MeanSteering> {
    let (n, p, horizon) = (sys.n(), sys.p(), sys.horizon());
    if q_seq.len() != horizon || r_seq.len() != horizon {
        return Err(CsError::dims("weight sequences", horizon, q_seq.len().min(r_seq.len())));
    }
    if mu_i.len() != n || mu_f.len() != n {
        return Err(CsError::dims("boundary means", n, mu_i.len().min(mu_f.len())));
    }
    let np = horizon * p;

    // μ_k = c_k + G_k v, with v the stacked feedforward
    let mut c = mu_i.clone();
    let mut g = DMatrix::<f64>::zeros(n, np);
    let mut hess = DMatrix::<f64>::zeros(np, np);
    let mut grad = DVector::<f64>::zeros(np);
    let mut constant = 0.0;
    let mut rows: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
    let mut add_rows = |sel: &DMatrix<f64>, target: &DVector<f64>, c: &DVector<f64>, g: &DMatrix<f64>| {
        rows.push((sel * g, target - sel * c));
    };
    for k in 0..=horizon {
        for wp in waypoints.iter().filter(|w| w.step == k) {
            if wp.selector.ncols() != n || wp.selector.nrows() != wp.target.len() {
                return Err(CsError::dims("mean waypoint selector", n, wp.selector.ncols()));
            }
            add_rows(&wp.selector, &wp.target, &c, &g);
        }
        if k == horizon {
            add_rows(&DMatrix::identity(n, n), mu_f, &c, &g);
            break;
        }
        let q = &q_seq[k];
        if q.amax() > 0.0 {
            let f = linalg::psd_factor(q);
            let m = &f * &g;
            hess += m.transpose() * &m;
            let fc = &f * &c;
            grad += m.transpose() * &fc;
            constant += fc.norm_squared();
        }
        let block = k * p..(k + 1) * p;
        hess.view_mut((block.start, block.start), (p, p)).add_assign(&r_seq[k]);
        let a = sys.a(k);
        g = a * &g;
        g.view_mut((0, block.start), (n, p)).add_assign(sys.b(k));
        c = a * &c;
    }
    for wp in waypoints {
        if wp.step > horizon {
            return Err(CsError::InvalidInput(format!("waypoint step {} beyond horizon {horizon}", wp.step)));
        }
    }

    let m: usize = rows.iter().map(|(a, _)| a.nrows()).sum();
    let mut cmat = DMatrix::<f64>::zeros(m, np);
    let mut d = DVector::<f64>::zeros(m);
    let mut r0 = 0;
    for (a, b) in &rows {
        cmat.view_mut((r0, 0), (a.nrows(), np)).copy_from(a);
        d.rows_mut(r0, b.len()).copy_from(b);
        r0 += a.nrows();
    }

    // reachability: the stacked constraint map must have full row rank
    let sv = cmat.clone().singular_values();
    let smax = sv.max();
    let rank = sv.iter().filter(|&&s| s > 1e-10 * smax.max(1e-300)).count();
    if rank < m {
        return Err(CsError::InfeasibleMean(format!(
            "constraint map has rank {rank} < {m}; the targets are not reachable over the horizon"
        )));
    }

    let chol = Cholesky::new(linalg::symmetrize(&hess))
        .ok_or_else(|| CsError::InvalidInput("R_k must be positive definite".into()))?;
    let hinv_ct = chol.solve(&cmat.transpose());
    let hinv_g = chol.solve(&grad);
    let schur = linalg::symmetrize(&(&cmat * &hinv_ct));
    let lambda = Cholesky::new(schur)
        .ok_or_else(|| CsError::InfeasibleMean("singular reduced KKT matrix".into()))?
        .solve(&(&d + &cmat * &hinv_g));
    let vstack = &hinv_ct * &lambda - hinv_g;

    let v: Vec<DVector<f64>> = (0..horizon).map(|k| vstack.rows(k * p, p).into_owned()).collect();
    let mu = propagate_mean(sys, mu_i, &v)?;
    let cost = (0..horizon)
        .map(|k| (mu[k].transpose() * &q_seq[k] * &mu[k])[(0, 0)] + (v[k].transpose() * &r_seq[k] * &v[k])[(0, 0)])
        .sum::<f64>();
    debug_assert!(
        (cost - (vstack.dot(&(&hess * &vstack)) + 2.0 * grad.dot(&vstack) + constant)).abs()
            <= 1e-6 * (1.0 + cost.abs())
    );
    Ok(MeanSteering { mu, v, cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_stable_system;

    fn one(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn two_step_least_norm_transfer() {
        let sys = LtvSystem::time_invariant(one(1.0), one(1.0), one(1.0), 2).unwrap();
        let sol = solve_mean_steering(
            &sys,
            &[one(0.0), one(0.0)],
            &[one(1.0), one(1.0)],
            &DVector::zeros(1),
            &DVector::from_element(1, 2.0),
        )
        .unwrap();
        assert!((sol.v[0][0] - 1.0).abs() < 1e-12 && (sol.v[1][0] - 1.0).abs() < 1e-12);
        assert!((sol.cost - 2.0).abs() < 1e-12);
        assert!((sol.mu[2][0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_boundaries_give_zero_input() {
        let sys = random_stable_system(4, 2, 4, 6, 3);
        let q = vec![DMatrix::identity(4, 4); 6];
        let r = vec![DMatrix::identity(2, 2); 6];
        let sol = solve_mean_steering(&sys, &q, &r, &DVector::zeros(4), &DVector::zeros(4)).unwrap();
        assert!(sol.v.iter().all(|v| v.amax() < 1e-12));
        assert!(sol.cost.abs() < 1e-20);
    }

    #[test]
    fn reaches_target_and_is_stationary() {
        let sys = random_stable_system(4, 2, 4, 8, 11);
        let q = vec![DMatrix::identity(4, 4) * 0.5; 8];
        let r = vec![DMatrix::identity(2, 2); 8];
        let mu_i = DVector::from_vec(vec![1.0, -1.0, 0.5, 2.0]);
        let mu_f = DVector::from_vec(vec![0.0, 0.3, 0.0, -0.2]);
        let sol = solve_mean_steering(&sys, &q, &r, &mu_i, &mu_f).unwrap();
        assert!((&sol.mu[8] - &mu_f).amax() < 1e-9);
        // perturbations inside the null space of the terminal map cannot lower the cost
        let mut rng_dir: Vec<DVector<f64>> =
            (0..8).map(|k| DVector::from_fn(2, |i, _| ((k * 2 + i) as f64).cos())).collect();
        let mu_dir = propagate_mean(&sys, &DVector::zeros(4), &rng_dir).unwrap();
        // project the direction onto the reachable null space by removing its terminal component
        let fix =
            solve_mean_steering(&sys, &vec![DMatrix::zeros(4, 4); 8], &r, &DVector::zeros(4), &mu_dir[8]).unwrap();
        for k in 0..8 {
            rng_dir[k] -= &fix.v[k];
        }
        for t in [1e-3, -1e-3] {
            let v: Vec<_> = (0..8).map(|k| &sol.v[k] + &rng_dir[k] * t).collect();
            let mu = propagate_mean(&sys, &mu_i, &v).unwrap();
            assert!((&mu[8] - &mu_f).amax() < 1e-9);
            let cost: f64 = (0..8).map(|k| (mu[k].transpose() * &q[k] * &mu[k])[(0, 0)] + v[k].norm_squared()).sum();
            assert!(cost >= sol.cost - 1e-12);
        }
    }

    #[test]
    fn waypoints_are_hit() {
        let sys = random_stable_system(4, 2, 4, 10, 5);
        let q = vec![DMatrix::zeros(4, 4); 10];
        let r = vec![DMatrix::identity(2, 2); 10];
        let sel = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let wp = MeanWaypoint { step: 5, selector: sel.clone(), target: DVector::from_vec(vec![3.0, -2.0]) };
        let sol =
            solve_mean_steering_with_waypoints(&sys, &q, &r, &DVector::zeros(4), &DVector::zeros(4), &[wp]).unwrap();
        assert!((&sel * &sol.mu[5] - DVector::from_vec(vec![3.0, -2.0])).amax() < 1e-9);
    }

    #[test]
    fn uncontrollable_is_rejected() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let sys = LtvSystem::time_invariant(a, b, DMatrix::identity(2, 2), 3).unwrap();
        let err = solve_mean_steering(
            &sys,
            &vec![DMatrix::zeros(2, 2); 3],
            &vec![one(1.0); 3],
            &DVector::zeros(2),
            &DVector::from_vec(vec![0.0, 1.0]),
        )
        .unwrap_err();
        assert!(matches!(err, CsError::InfeasibleMean(_)));
    }
}
