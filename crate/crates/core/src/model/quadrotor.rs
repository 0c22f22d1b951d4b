//! Rigid quadrotor with thrust and body-rate inputs.
//!
//! State `x = (r, v, q)` with position `r`, inertial velocity `v` and ZYX
//! Euler angles `q = (ψ, φ, θ)` (yaw, roll, pitch). Input `u = (τ, ω)` with
//! total thrust `τ` and body rates `ω = (ω_x, ω_y, ω_z)`. Noise
//! `w = (w_f, w_m)` enters as a force on `v̇` and as a rate on `q̇`.
//!
//! Gravity enters unscaled: `v̇ = g·e3 + (R(q)ê3 τ + w_f)/m`.

use nalgebra::{DVector, Matrix3, Vector3};

use super::NonlinearModel;
use crate::error::{CsError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorParams {
    /// kg
    pub mass: f64,
    /// m/s², signed along `e3`
    pub gravity: f64,
    /// Minimum distance of `|θ|` from `π/2`.
    pub pitch_margin: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self { mass: 1.0, gravity: -9.81, pitch_margin: 1e-2 }
    }
}

/// `R(q) = R_z(ψ) R_y(θ) R_x(φ)`.
pub fn rotation_zyx(psi: f64, phi: f64, theta: f64) -> Matrix3<f64> {
    let (sp, cp) = psi.sin_cos();
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let rz = Matrix3::new(cp, -sp, 0.0, sp, cp, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(ct, 0.0, st, 0.0, 1.0, 0.0, -st, 0.0, ct);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cf, -sf, 0.0, sf, cf);
    rz * ry * rx
}

/// Body rates to `(ψ̇, φ̇, θ̇)`. Singular at `|θ| = π/2`.
pub fn euler_rate_map(phi: f64, theta: f64) -> Matrix3<f64> {
    let (sf, cf) = phi.sin_cos();
    let (ct, tt) = (theta.cos(), theta.tan());
    Matrix3::new(
        0.0,
        sf / ct,
        cf / ct, //
        1.0,
        sf * tt,
        cf * tt, //
        0.0,
        cf,
        -sf,
    )
}

pub fn quadrotor_dynamics(
    x: &DVector<f64>,
    u: &DVector<f64>,
    w: &DVector<f64>,
    params: &QuadrotorParams,
) -> Result<DVector<f64>> {
    if x.len() != 9 || u.len() != 4 || w.len() != 6 {
        return Err(CsError::dims(
            "quadrotor_dynamics",
            "x: 9, u: 4, w: 6",
            format!("x: {}, u: {}, w: {}", x.len(), u.len(), w.len()),
        ));
    }
    let (psi, phi, theta) = (x[6], x[7], x[8]);
    if theta.abs() >= std::f64::consts::FRAC_PI_2 - params.pitch_margin {
        return Err(CsError::KinematicSingularity { pitch: theta });
    }
    let thrust_dir = rotation_zyx(psi, phi, theta) * Vector3::z();
    let force = Vector3::new(w[0], w[1], w[2]);
    let accel = Vector3::z() * params.gravity + (thrust_dir * u[0] + force) / params.mass;
    let rates = Vector3::new(u[1] + w[3], u[2] + w[4], u[3] + w[5]);
    let qdot = euler_rate_map(phi, theta) * rates;

    let mut xdot = DVector::zeros(9);
    xdot.rows_mut(0, 3).copy_from(&x.rows(3, 3));
    xdot.rows_mut(3, 3).copy_from(&accel);
    xdot.rows_mut(6, 3).copy_from(&qdot);
    Ok(xdot)
}

#[derive(Debug, Clone, Default)]
pub struct Quadrotor {
    pub params: QuadrotorParams,
}

impl NonlinearModel for Quadrotor {
    fn state_dim(&self) -> usize {
        9
    }
    fn input_dim(&self) -> usize {
        4
    }
    fn noise_dim(&self) -> usize {
        6
    }
    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        quadrotor_dynamics(x, u, w, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{linearize_along, LinearizeOptions};
    use nalgebra::DMatrix;

    fn jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, at: &DVector<f64>, h: f64) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(f(at).len(), at.len());
        for j in 0..at.len() {
            let mut zp = at.clone();
            let mut zm = at.clone();
            zp[j] += h;
            zm[j] -= h;
            jac.set_column(j, &((f(&zp) - f(&zm)) / (2.0 * h)));
        }
        jac
    }

    fn params() -> QuadrotorParams {
        QuadrotorParams::default()
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = QuadrotorParams { mass: 1.7, ..params() };
        let u = DVector::from_vec(vec![9.81 * 1.7, 0.0, 0.0, 0.0]);
        let xdot = quadrotor_dynamics(&DVector::zeros(9), &u, &DVector::zeros(6), &p).unwrap();
        assert!(xdot.amax() < 1e-12);
    }

    #[test]
    fn free_fall() {
        let xdot = quadrotor_dynamics(&DVector::zeros(9), &DVector::zeros(4), &DVector::zeros(6), &params()).unwrap();
        assert_eq!(xdot.rows(3, 3).clone_owned(), DVector::from_vec(vec![0.0, 0.0, -9.81]));
    }

    #[test]
    fn zero_attitude_rate_map_reorders_body_rates() {
        // (ψ̇, φ̇, θ̇) = (ω_z, ω_x, ω_y) at zero attitude
        let u = DVector::from_vec(vec![0.0, 1.0, 2.0, 3.0]);
        let xdot = quadrotor_dynamics(&DVector::zeros(9), &u, &DVector::zeros(6), &params()).unwrap();
        assert_eq!(xdot.rows(6, 3).clone_owned(), DVector::from_vec(vec![3.0, 1.0, 2.0]));
    }

    #[test]
    fn hover_linearization_thrust_column() {
        let m = 2.0;
        let model = Quadrotor { params: QuadrotorParams { mass: m, ..params() } };
        let dt = 0.01;
        let x = DVector::zeros(9);
        let u = DVector::from_vec(vec![9.81 * m, 0.0, 0.0, 0.0]);
        let sys = linearize_along(&model, &[x.clone(), x], &[u], dt, &LinearizeOptions::default()).unwrap();
        let b = sys.b(0);
        for i in 0..9 {
            let expected = if i == 5 { dt / m } else { 0.0 };
            assert!((b[(i, 0)] - expected).abs() < 1e-9, "row {i}");
        }
        // pitch rate follows ω_y one to one at zero attitude
        assert!((b[(8, 2)] - dt).abs() < 1e-9);
        assert!(b[(8, 1)].abs() < 1e-9 && b[(8, 3)].abs() < 1e-9);
    }

    #[test]
    fn jacobian_agrees_with_half_step_stencil() {
        let p = params();
        let x = DVector::from_vec(vec![0.1, -0.4, 1.0, 0.3, 0.2, -0.1, 0.05, 0.3, -0.4]);
        let u = DVector::from_vec(vec![10.5, 0.2, -0.3, 0.1]);
        let f = |z: &DVector<f64>| quadrotor_dynamics(z, &u, &DVector::zeros(6), &p).unwrap();
        let coarse = jacobian(f, &x, 1e-5);
        let fine = jacobian(f, &x, 0.5e-5);
        assert!((&coarse - &fine).amax() <= 1e-5 * (1.0 + fine.amax()));
    }

    #[test]
    fn pitch_singularity_is_rejected() {
        let mut x = DVector::zeros(9);
        x[8] = std::f64::consts::FRAC_PI_2 - 1e-4;
        let err = quadrotor_dynamics(&x, &DVector::zeros(4), &DVector::zeros(6), &params()).unwrap_err();
        assert!(matches!(err, CsError::KinematicSingularity { .. }));
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = rotation_zyx(0.3, -0.7, 1.1);
        assert!((r.transpose() * r - Matrix3::identity()).amax() < 1e-14);
        assert!((r.determinant() - 1.0).abs() < 1e-14);
    }
}
