//! Tube tracking for the quadrotor around a nominal path.
//!
//! The nominal path comes from a discrete triple integrator per axis
//! (position, velocity, acceleration; jerk input) with the least-norm jerk
//! sequence through the boundary states and the position waypoints. With
//! `ψ = 0`, attitude and thrust follow from the acceleration, and body rates
//! from the Euler-step attitude increments, so the nominal satisfies the
//! discretized quadrotor dynamics exactly.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{CsError, Result};
use crate::linalg::{block_diag, scaled_identity};
use crate::model::{
    euler_rate_map, linearize_along, DisturbanceAugment, LinearizeOptions, LtvSystem, Quadrotor, QuadrotorParams,
};
use crate::problem::{CovCapConstraint, CsProblem, TerminalMode};
use crate::solution::{solve_mean_steering_with_waypoints, MeanWaypoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadrotorSpec {
    pub dt: f64,
    pub horizon: usize,
    pub start: [f64; 3],
    pub end: [f64; 3],
    /// Position waypoints at `k = N/5, 2N/5, 3N/5, 4N/5`.
    pub waypoints: Vec<[f64; 3]>,
    pub q_weight: f64,
    pub r_weight: f64,
    /// Diagonal of `Σ_i` for the position and remaining blocks.
    pub sigma_i: [f64; 2],
    pub sigma_f: [f64; 2],
    pub cap: f64,
    pub cap_from: usize,
    /// Scale of the identity columns appended to `D_k`.
    pub augment: f64,
    pub mass: f64,
    pub terminal_mode: TerminalMode,
}

impl Default for QuadrotorSpec {
    fn default() -> Self {
        Self {
            dt: 0.01,
            horizon: 500,
            start: [0.0, 0.5, 0.0],
            end: [0.0, -0.5, 0.0],
            waypoints: vec![[0.5, 0.9, 0.2], [1.0, 0.3, 0.4], [1.0, -0.3, 0.4], [0.5, -0.9, 0.2]],
            q_weight: 10.0,
            r_weight: 0.1,
            sigma_i: [1e-2, 1e-3],
            sigma_f: [5e-4, 1e-3],
            cap: 2e-3,
            cap_from: 50,
            augment: 1e-3,
            mass: 1.0,
            terminal_mode: TerminalMode::Equality,
        }
    }
}

impl QuadrotorSpec {
    /// Same sampling interval and cap start over `horizon` steps; the
    /// waypoints stay at the same fractions of the horizon.
    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self { horizon, cap_from: self.cap_from.min(horizon), ..self.clone() }
    }

    pub fn waypoint_steps(&self) -> Vec<usize> {
        let m = self.waypoints.len() + 1;
        (1..m).map(|i| i * self.horizon / m).collect()
    }

    pub fn params(&self) -> QuadrotorParams {
        QuadrotorParams { mass: self.mass, ..Default::default() }
    }

    pub fn cap_selector() -> DMatrix<f64> {
        let mut e = DMatrix::zeros(3, 9);
        e.view_mut((0, 0), (3, 3)).fill_with_identity();
        e
    }

    /// Linearized deviation system and the covariance steering problem on it.
    pub fn problem(&self) -> Result<(CsProblem, NominalPath)> {
        let nominal = nominal_path(self)?;
        let model = Quadrotor { params: self.params() };
        let opts = LinearizeOptions { augment: DisturbanceAugment::ScaledIdentity(self.augment), ..Default::default() };
        let sys = linearize_along(&model, &nominal.x, &nominal.u, self.dt, &opts)?;
        let blk = |d: [f64; 2]| block_diag(&[&scaled_identity(3, d[0]), &scaled_identity(6, d[1])]);
        let mut p = CsProblem::new(
            sys,
            scaled_identity(9, self.q_weight),
            scaled_identity(4, self.r_weight),
            DVector::zeros(9),
            blk(self.sigma_i),
            DVector::zeros(9),
            blk(self.sigma_f),
            self.terminal_mode,
        );
        p.cov_caps.push(CovCapConstraint {
            steps: (self.cap_from.max(1)..=self.horizon).collect(),
            selector: Self::cap_selector(),
            cap: scaled_identity(3, self.cap),
        });
        Ok((p, nominal))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NominalPath {
    /// `x̄_0 … x̄_N` in quadrotor coordinates `(r, v, q)`.
    pub x: Vec<DVector<f64>>,
    /// `ū_0 … ū_{N−1}` as `(τ, ω)`.
    pub u: Vec<DVector<f64>>,
    pub waypoint_steps: Vec<usize>,
}

fn triple_integrator(dt: f64, horizon: usize) -> Result<LtvSystem> {
    let i3 = DMatrix::<f64>::identity(3, 3);
    let mut a = DMatrix::identity(9, 9);
    a.view_mut((0, 3), (3, 3)).copy_from(&(&i3 * dt));
    a.view_mut((3, 6), (3, 3)).copy_from(&(&i3 * dt));
    let mut b = DMatrix::zeros(9, 3);
    b.view_mut((6, 0), (3, 3)).copy_from(&(&i3 * dt));
    LtvSystem::time_invariant(a, b, DMatrix::zeros(9, 1), horizon)
}

/// Attitude `(ψ = 0, φ, θ)` and thrust producing acceleration `a`.
fn attitude_for(accel: &Vector3<f64>, params: &QuadrotorParams) -> Result<(Vector3<f64>, f64)> {
    let force = (accel - Vector3::z() * params.gravity) * params.mass;
    let thrust = force.norm();
    if thrust <= 0.0 {
        return Err(CsError::InvalidInput("nominal path requires free fall".into()));
    }
    let zb = force / thrust;
    let phi = (-zb.y).clamp(-1.0, 1.0).asin();
    let theta = zb.x.atan2(zb.z);
    if theta.abs() >= std::f64::consts::FRAC_PI_2 - params.pitch_margin {
        return Err(CsError::KinematicSingularity { pitch: theta });
    }
    Ok((Vector3::new(0.0, phi, theta), thrust))
}

pub fn nominal_path(spec: &QuadrotorSpec) -> Result<NominalPath> {
    let horizon = spec.horizon;
    let sys = triple_integrator(spec.dt, horizon)?;
    let boundary = |r: &[f64; 3]| {
        let mut x = DVector::zeros(9);
        x.rows_mut(0, 3).copy_from_slice(r);
        x
    };
    let steps = spec.waypoint_steps();
    let selector = QuadrotorSpec::cap_selector();
    let wps: Vec<MeanWaypoint> = steps
        .iter()
        .zip(&spec.waypoints)
        .map(|(&step, r)| MeanWaypoint { step, selector: selector.clone(), target: DVector::from_row_slice(r) })
        .collect();
    let q = vec![DMatrix::zeros(9, 9); horizon];
    let r = vec![DMatrix::identity(3, 3); horizon];
    let path = solve_mean_steering_with_waypoints(&sys, &q, &r, &boundary(&spec.start), &boundary(&spec.end), &wps)?;

    let params = spec.params();
    let mut att = Vec::with_capacity(horizon + 1);
    let mut thrust = Vec::with_capacity(horizon + 1);
    for z in &path.mu {
        let (q, t) = attitude_for(&Vector3::new(z[6], z[7], z[8]), &params)?;
        att.push(q);
        thrust.push(t);
    }
    let x: Vec<DVector<f64>> = (0..=horizon)
        .map(|k| {
            let mut x = DVector::zeros(9);
            x.rows_mut(0, 6).copy_from(&path.mu[k].rows(0, 6));
            x.rows_mut(6, 3).copy_from(&att[k]);
            x
        })
        .collect();
    let mut u = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let s = euler_rate_map(att[k].y, att[k].z);
        let rates = s.try_inverse().ok_or(CsError::KinematicSingularity { pitch: att[k].z })?
            * ((att[k + 1] - att[k]) / spec.dt);
        u.push(DVector::from_vec(vec![thrust[k], rates.x, rates.y, rates.z]));
    }
    Ok(NominalPath { x, u, waypoint_steps: steps })
}

impl NominalPath {
    /// CSV with columns `k`, `x_0 … x_8`, `u_0 … u_3` (empty at `k = N`).
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.x[0].len();
        let p = self.u.first().map_or(0, |u| u.len());
        let mut header = vec!["k".to_string()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend((0..p).map(|i| format!("u_{i}")));
        w.write_record(&header)?;
        for (k, x) in self.x.iter().enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            match self.u.get(k) {
                Some(u) => rec.extend(u.iter().map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), p)),
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{quadrotor_dynamics, NonlinearModel};
    use crate::problem::validate;

    fn short() -> QuadrotorSpec {
        QuadrotorSpec::default().with_horizon(100)
    }

    #[test]
    fn defaults_are_frozen() {
        let s = QuadrotorSpec::default();
        assert_eq!((s.dt, s.horizon), (0.01, 500));
        assert_eq!((s.start, s.end), ([0.0, 0.5, 0.0], [0.0, -0.5, 0.0]));
        assert_eq!(s.waypoints.len(), 4);
        assert_eq!((s.q_weight, s.r_weight), (10.0, 0.1));
        assert_eq!((s.sigma_i, s.sigma_f), ([1e-2, 1e-3], [5e-4, 1e-3]));
        assert_eq!((s.cap, s.cap_from), (2e-3, 50));
        assert_eq!(s.waypoint_steps(), vec![100, 200, 300, 400]);
    }

    #[test]
    fn scaled_horizon() {
        let s = QuadrotorSpec::default().with_horizon(250);
        assert_eq!((s.dt, s.cap_from), (0.01, 50));
        assert_eq!(QuadrotorSpec::default().with_horizon(40).cap_from, 40);
        assert_eq!(s.waypoint_steps(), vec![50, 100, 150, 200]);
    }

    #[test]
    fn nominal_hits_boundaries_and_waypoints() {
        let spec = short();
        let nom = nominal_path(&spec).unwrap();
        assert_eq!(nom.x.len(), 101);
        assert!((nom.x[0][1] - 0.5).abs() < 1e-9 && nom.x[0].rows(3, 6).amax() < 1e-9);
        assert!((nom.x[100][1] + 0.5).abs() < 1e-9 && nom.x[100].rows(3, 6).amax() < 1e-9);
        for (&k, wp) in spec.waypoint_steps().iter().zip(&spec.waypoints) {
            for i in 0..3 {
                assert!((nom.x[k][i] - wp[i]).abs() < 1e-9);
            }
        }
        // hover thrust at rest
        assert!((nom.u[0][0] - 9.81).abs() < 1e-6);
    }

    #[test]
    fn nominal_is_consistent_with_euler_step() {
        let spec = short();
        let nom = nominal_path(&spec).unwrap();
        let model = Quadrotor { params: spec.params() };
        assert_eq!(model.state_dim(), 9);
        for k in 0..spec.horizon {
            let f = quadrotor_dynamics(&nom.x[k], &nom.u[k], &DVector::zeros(6), &spec.params()).unwrap();
            let next = &nom.x[k] + f * spec.dt;
            assert!((next - &nom.x[k + 1]).amax() < 1e-10, "step {k}");
        }
    }

    #[test]
    fn problem_shape() {
        let (p, _) = short().problem().unwrap();
        assert_eq!((p.sys.n(), p.sys.p(), p.sys.q()), (9, 4, 15));
        assert!(validate(&p).is_empty());
        assert_eq!(p.cov_caps[0].steps.first(), Some(&50));
        assert_eq!(p.cov_caps[0].steps.last(), Some(&100));
    }
}
