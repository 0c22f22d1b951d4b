//! Planar quadrotor planner: triple integrator in `(x, y)` with box chance
//! constraints on position and jerk, and two position waypoints.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{scaled_identity, unit_vector};
use crate::model::LtvSystem;
use crate::problem::{
    ChanceConstraint, ConstraintKind, CsProblem, LinearizationRefs, TerminalMode, Tightening, WaypointConstraint,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerSpec {
    pub dt: f64,
    pub horizon: usize,
    pub sigma_i: f64,
    pub sigma_f: f64,
    pub mu_i: Vec<f64>,
    pub mu_f: Vec<f64>,
    pub noise: f64,
    /// Upper bounds on `x`, `−x`, `y`, `−y`.
    pub beta_x: [f64; 4],
    /// Bound on `|u_1|` and `|u_2|`.
    pub beta_u: f64,
    pub eps_x: f64,
    pub eps_u: f64,
    /// `(step, [x, y])`.
    pub waypoints: Vec<(usize, [f64; 2])>,
    pub sigma_r: f64,
    pub y_r: f64,
    pub q_weight: f64,
    pub r_weight: f64,
    pub terminal_mode: TerminalMode,
    pub tightening: Tightening,
}

impl Default for PlannerSpec {
    fn default() -> Self {
        Self {
            dt: 0.1,
            horizon: 60,
            sigma_i: 1.0,
            sigma_f: 0.1,
            mu_i: vec![20.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            mu_f: vec![0.0; 6],
            noise: 0.1,
            beta_x: [22.0, 3.0, 7.0, 7.0],
            beta_u: 25.0,
            eps_x: 0.05,
            eps_u: 0.05,
            waypoints: vec![(20, [14.0, 4.0]), (40, [6.0, -4.0])],
            sigma_r: 1.2,
            y_r: 15.0,
            q_weight: 1.0,
            r_weight: 1.0,
            terminal_mode: TerminalMode::Equality,
            tightening: Tightening::Gaussian,
        }
    }
}

impl PlannerSpec {
    /// `A = [[I, ΔT·I, 0], [0, I, ΔT·I], [0, 0, I]]`, `B = [0; 0; ΔT·I]`,
    /// `D = noise·I₆`.
    pub fn system(&self) -> Result<LtvSystem> {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let mut a = DMatrix::identity(6, 6);
        a.view_mut((0, 2), (2, 2)).copy_from(&(&i2 * self.dt));
        a.view_mut((2, 4), (2, 2)).copy_from(&(&i2 * self.dt));
        let mut b = DMatrix::zeros(6, 2);
        b.view_mut((4, 0), (2, 2)).copy_from(&(&i2 * self.dt));
        LtvSystem::time_invariant(a, b, scaled_identity(6, self.noise), self.horizon)
    }

    pub fn problem(&self) -> Result<CsProblem> {
        let mut p = CsProblem::new(
            self.system()?,
            scaled_identity(6, self.q_weight),
            scaled_identity(2, self.r_weight),
            DVector::from_vec(self.mu_i.clone()),
            scaled_identity(6, self.sigma_i),
            DVector::from_vec(self.mu_f.clone()),
            scaled_identity(6, self.sigma_f),
            self.terminal_mode,
        );
        let state_steps: Vec<usize> = (0..=self.horizon).collect();
        let control_steps: Vec<usize> = (0..self.horizon).collect();
        let signs = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)];
        for (&(axis, sign), &beta) in signs.iter().zip(&self.beta_x) {
            p.chance_constraints.push(ChanceConstraint {
                kind: ConstraintKind::State,
                alpha: unit_vector(6, axis) * sign,
                beta,
                eps: self.eps_x,
                steps: state_steps.clone(),
            });
        }
        for (axis, sign) in [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)] {
            p.chance_constraints.push(ChanceConstraint {
                kind: ConstraintKind::Control,
                alpha: unit_vector(2, axis) * sign,
                beta: self.beta_u,
                eps: self.eps_u,
                steps: control_steps.clone(),
            });
        }
        let mut selector = DMatrix::zeros(2, 6);
        selector[(0, 0)] = 1.0;
        selector[(1, 1)] = 1.0;
        for &(step, target) in &self.waypoints {
            p.waypoints.push(WaypointConstraint {
                step,
                selector: selector.clone(),
                target: DVector::from_row_slice(&target),
            });
        }
        p.refs =
            Some(LinearizationRefs { sigma_r: scaled_identity(6, self.sigma_r), y_r: scaled_identity(2, self.y_r) });
        p.tightening = self.tightening;
        Ok(p)
    }
}
