//! Chance-constraint tightening and the tangent-line overestimator of `√x`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{ChanceConstraint, ConstraintKind, LinearizationRefs};
use crate::error::{CsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tightening {
    #[default]
    Gaussian,
    Cantelli,
}

impl Tightening {
    /// Multiplier `q(1−ε)` on the standard deviation.
    pub fn quantile(self, eps: f64) -> Result<f64> {
        match self {
            Tightening::Gaussian => tighten_gaussian(eps),
            Tightening::Cantelli => tighten_cantelli(eps),
        }
    }
}

fn check_probability(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(CsError::InvalidInput(format!("violation probability {eps} outside (0, 1)")))
    }
}

fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// `Φ⁻¹(1 − ε)`: safeguarded Newton iteration on the upper tail
/// `½·erfc(z/√2) = ε`, falling back to bisection whenever a step leaves the
/// bracket.
pub fn tighten_gaussian(eps: f64) -> Result<f64> {
    check_probability(eps)?;
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    let mut z = 0.0_f64;
    for _ in 0..200 {
        let resid = upper_tail(z) - eps;
        // upper tail is decreasing in z
        if resid > 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut next = if density > 0.0 { z + resid / density } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - z).abs();
        z = next;
        if step < 1e-14 * (1.0 + z.abs()) || hi - lo < 1e-14 {
            break;
        }
    }
    Ok(z)
}

/// One-sided Cantelli multiplier `λ` with `1/(1 + λ²) = ε`, i.e.
/// `√((1 − ε)/ε)`.
pub fn tighten_cantelli(eps: f64) -> Result<f64> {
    check_probability(eps)?;
    Ok(((1.0 - eps) / eps).sqrt())
}

/// Tangent of `√x` at `x0`: returns `(slope, intercept)` with
/// `slope·x + intercept ≥ √x` for all `x ≥ 0`, equality at `x0`.
pub fn linearize_sqrt(x0: f64) -> Result<(f64, f64)> {
    if !(x0 > 0.0) || !x0.is_finite() {
        return Err(CsError::InvalidInput(format!("linearization point {x0} must be positive")));
    }
    let r = x0.sqrt();
    Ok((0.5 / r, 0.5 * r))
}

/// Affine inequality `⟨matrix_coeff, X⟩ + mean_coeffᵀ m ≤ rhs` where `X` is
/// `Σ_k` (state) or `Y_k` (control) and `m` is `μ_k` or `v_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearChanceRow {
    pub kind: ConstraintKind,
    pub quantile: f64,
    pub gamma: f64,
    pub matrix_coeff: DMatrix<f64>,
    pub mean_coeff: DVector<f64>,
    pub rhs: f64,
}

impl LinearChanceRow {
    /// Left-hand side minus right-hand side; `≤ 0` when satisfied.
    pub fn residual(&self, matrix: &DMatrix<f64>, mean: &DVector<f64>) -> f64 {
        self.matrix_coeff.dot(matrix) + self.mean_coeff.dot(mean) - self.rhs
    }
}

pub fn build_linear_chance_row(
    cc: &ChanceConstraint,
    refs: &LinearizationRefs,
    tightening: Tightening,
) -> Result<LinearChanceRow> {
    let reference = match cc.kind {
        ConstraintKind::State => &refs.sigma_r,
        ConstraintKind::Control => &refs.y_r,
    };
    if reference.nrows() != cc.alpha.len() {
        return Err(CsError::dims("linearization reference", cc.alpha.len(), reference.nrows()));
    }
    let spread = (cc.alpha.transpose() * reference * &cc.alpha)[(0, 0)];
    if !(spread > 0.0) {
        return Err(CsError::InvalidReference(format!("αᵀ·ref·α = {spread:.3e} must be positive")));
    }
    let quantile = tightening.quantile(cc.eps)?;
    let (slope, intercept) = linearize_sqrt(spread)?;
    let gamma = quantile * slope;
    Ok(LinearChanceRow {
        kind: cc.kind,
        quantile,
        gamma,
        matrix_coeff: &cc.alpha * cc.alpha.transpose() * gamma,
        mean_coeff: cc.alpha.clone(),
        rhs: cc.beta - quantile * intercept,
    })
}

/// `q·√(αᵀXα) + αᵀm − β`, the exact (nonconvex) tightened constraint.
pub fn nonconvex_residual(cc: &ChanceConstraint, quantile: f64, matrix: &DMatrix<f64>, mean: &DVector<f64>) -> f64 {
    let spread = (cc.alpha.transpose() * matrix * &cc.alpha)[(0, 0)].max(0.0);
    quantile * spread.sqrt() + cc.alpha.dot(mean) - cc.beta
}
