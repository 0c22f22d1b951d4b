use nalgebra::{DMatrix, DVector};

use super::LtvSystem;
use crate::error::{CsError, Result};

/// Continuous-time dynamics `ẋ = f(x, u, w)`.
pub trait NonlinearModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>>;
}

/// Extra disturbance columns appended to every linearized `D_k`, standing in
/// for discretization and linearization error.
#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceAugment {
    None,
    ScaledIdentity(f64),
    Matrix(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizeOptions {
    /// Base finite-difference step; the step for entry `z` is `h·(1 + |z|)`.
    pub fd_step: f64,
    /// Allowed defect per step, relative to `1 + ‖x̄_k‖`.
    pub defect_tol: f64,
    pub augment: DisturbanceAugment,
}

impl Default for LinearizeOptions {
    fn default() -> Self {
        Self { fd_step: 1e-5, defect_tol: 1e-6, augment: DisturbanceAugment::ScaledIdentity(1e-3) }
    }
}

fn central_jacobian<F>(at: &DVector<f64>, rows: usize, h0: f64, mut f: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut jac = DMatrix::zeros(rows, at.len());
    let mut z = at.clone();
    for j in 0..at.len() {
        let h = h0 * (1.0 + at[j].abs());
        z[j] = at[j] + h;
        let plus = f(&z)?;
        z[j] = at[j] - h;
        let minus = f(&z)?;
        z[j] = at[j];
        jac.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    Ok(jac)
}

/// Linearizes the forward-Euler discretization `x_{k+1} = x_k + Δt·f(x_k, u_k, w_k)`
/// about a nominal trajectory, giving the deviation dynamics
/// `A_k = I + Δt ∂f/∂x`, `B_k = Δt ∂f/∂u`, `D_k = [Δt ∂f/∂w, D̃]`.
pub fn linearize_along(
    model: &dyn NonlinearModel,
    xbar: &[DVector<f64>],
    ubar: &[DVector<f64>],
    dt: f64,
    opts: &LinearizeOptions,
) -> Result<LtvSystem> {
    let (n, p, q) = (model.state_dim(), model.input_dim(), model.noise_dim());
    let horizon = ubar.len();
    if horizon == 0 || xbar.len() != horizon + 1 {
        return Err(CsError::dims("nominal trajectory", format!("{} states", horizon + 1), xbar.len()));
    }
    if !(dt > 0.0) || !(opts.fd_step > 0.0) {
        return Err(CsError::InvalidInput("dt and finite-difference step must be positive".into()));
    }
    let augment = match &opts.augment {
        DisturbanceAugment::None => None,
        DisturbanceAugment::ScaledIdentity(s) => Some(DMatrix::identity(n, n) * *s),
        DisturbanceAugment::Matrix(m) => {
            if m.nrows() != n {
                return Err(CsError::dims("disturbance augment rows", n, m.nrows()));
            }
            Some(m.clone())
        }
    };
    let w0 = DVector::zeros(q);
    let eye = DMatrix::<f64>::identity(n, n);

    let mut a_seq = Vec::with_capacity(horizon);
    let mut b_seq = Vec::with_capacity(horizon);
    let mut d_seq = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let (x, u) = (&xbar[k], &ubar[k]);
        if x.len() != n || u.len() != p {
            return Err(CsError::dims(
                &format!("nominal step {k}"),
                format!("x: {n}, u: {p}"),
                format!("x: {}, u: {}", x.len(), u.len()),
            ));
        }
        let fx = model.derivative(x, u, &w0)?;
        let defect = (&xbar[k + 1] - x - &fx * dt).amax();
        let tolerance = opts.defect_tol * (1.0 + x.norm());
        if defect > tolerance {
            return Err(CsError::NominalInconsistency { step: k, defect, tolerance });
        }
        let jx = central_jacobian(x, n, opts.fd_step, |z| model.derivative(z, u, &w0))?;
        let ju = central_jacobian(u, n, opts.fd_step, |z| model.derivative(x, z, &w0))?;
        let jw = central_jacobian(&w0, n, opts.fd_step, |z| model.derivative(x, u, z))?;
        a_seq.push(&eye + jx * dt);
        b_seq.push(ju * dt);
        let d = jw * dt;
        d_seq.push(match &augment {
            None => d,
            Some(extra) => {
                let mut both = DMatrix::zeros(n, q + extra.ncols());
                both.columns_mut(0, q).copy_from(&d);
                both.columns_mut(q, extra.ncols()).copy_from(extra);
                both
            }
        });
    }
    LtvSystem::new(a_seq, b_seq, d_seq)
}
