//! Linear time-varying stochastic systems, moment propagation, nonlinear
//! models and their linearization.

mod nonlinear;
mod quadrotor;
mod random;

pub use nonlinear::{linearize_along, DisturbanceAugment, LinearizeOptions, NonlinearModel};
pub use quadrotor::{euler_rate_map, quadrotor_dynamics, rotation_zyx, Quadrotor, QuadrotorParams};
pub use random::random_stable_system;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CsError, Result};
use crate::linalg;

/// Largest admissible condition number for a state transition matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// `x_{k+1} = A_k x_k + B_k u_k + D_k w_k`, `k = 0..N-1`, with unit-covariance
/// zero-mean noise `w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtvSystem {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    d: Vec<DMatrix<f64>>,
    n: usize,
    p: usize,
    q: usize,
}

impl LtvSystem {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>, d: Vec<DMatrix<f64>>) -> Result<Self> {
        let horizon = a.len();
        if horizon == 0 {
            return Err(CsError::InvalidInput("horizon must be at least one step".into()));
        }
        if b.len() != horizon || d.len() != horizon {
            return Err(CsError::dims(
                "system sequences",
                format!("{horizon} entries each"),
                format!("A: {}, B: {}, D: {}", horizon, b.len(), d.len()),
            ));
        }
        let n = a[0].nrows();
        let p = b[0].ncols();
        let q = d[0].ncols();
        if n == 0 || p == 0 || q == 0 {
            return Err(CsError::InvalidInput("n, p and q must be positive".into()));
        }
        for k in 0..horizon {
            if a[k].shape() != (n, n) {
                return Err(CsError::dims(&format!("A_{k}"), format!("{n}x{n}"), shape(&a[k])));
            }
            if b[k].shape() != (n, p) {
                return Err(CsError::dims(&format!("B_{k}"), format!("{n}x{p}"), shape(&b[k])));
            }
            if d[k].shape() != (n, q) {
                return Err(CsError::dims(&format!("D_{k}"), format!("{n}x{q}"), shape(&d[k])));
            }
            let all_finite = a[k].iter().chain(b[k].iter()).chain(d[k].iter()).all(|x| x.is_finite());
            if !all_finite {
                return Err(CsError::InvalidInput(format!("non-finite entry in step {k}")));
            }
            let condition = linalg::condition_number(&a[k]);
            if condition > MAX_CONDITION {
                return Err(CsError::SingularDynamics { step: k, condition });
            }
        }
        Ok(Self { a, b, d, n, p, q })
    }

    pub fn time_invariant(a: DMatrix<f64>, b: DMatrix<f64>, d: DMatrix<f64>, horizon: usize) -> Result<Self> {
        Self::new(vec![a; horizon], vec![b; horizon], vec![d; horizon])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Number of transitions `N`.
    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self, k: usize) -> &DMatrix<f64> {
        &self.a[k]
    }

    pub fn b(&self, k: usize) -> &DMatrix<f64> {
        &self.b[k]
    }

    pub fn d(&self, k: usize) -> &DMatrix<f64> {
        &self.d[k]
    }

    /// `D_k D_kᵀ`, the per-step noise injection.
    pub fn noise_cov(&self, k: usize) -> DMatrix<f64> {
        &self.d[k] * self.d[k].transpose()
    }

    /// State transition `Φ(to, from) = A_{to-1} ⋯ A_{from}`, identity when equal.
    pub fn transition(&self, to: usize, from: usize) -> DMatrix<f64> {
        assert!(from <= to && to <= self.horizon());
        let mut phi = DMatrix::identity(self.n, self.n);
        for k in from..to {
            phi = &self.a[k] * phi;
        }
        phi
    }

    pub fn to_file(&self) -> SystemFile {
        SystemFile {
            n: Some(self.n),
            p: Some(self.p),
            q: Some(self.q),
            horizon: Some(self.horizon()),
            a: MatrixSeq::Seq(self.a.iter().map(linalg::matrix_to_rows).collect()),
            b: MatrixSeq::Seq(self.b.iter().map(linalg::matrix_to_rows).collect()),
            d: MatrixSeq::Seq(self.d.iter().map(linalg::matrix_to_rows).collect()),
        }
    }

    pub fn from_file(file: &SystemFile) -> Result<Self> {
        let horizon = match (&file.a, file.horizon) {
            (MatrixSeq::Seq(s), _) => s.len(),
            (MatrixSeq::Single(_), Some(h)) => h,
            (MatrixSeq::Single(_), None) => {
                return Err(CsError::InvalidInput("time-invariant system needs the horizon field N".into()))
            }
        };
        if let Some(h) = file.horizon {
            if h != horizon {
                return Err(CsError::dims("system horizon N", h, horizon));
            }
        }
        let sys = Self::new(file.a.expand("A", horizon)?, file.b.expand("B", horizon)?, file.d.expand("D", horizon)?)?;
        for (name, declared, actual) in [("n", file.n, sys.n), ("p", file.p, sys.p), ("q", file.q, sys.q)] {
            if let Some(v) = declared {
                if v != actual {
                    return Err(CsError::dims(&format!("system field {name}"), v, actual));
                }
            }
        }
        Ok(sys)
    }
}

fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

/// JSON form of an [`LtvSystem`]. Matrices are arrays of rows. A single
/// matrix (instead of a list of matrices) is broadcast over the horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(rename = "A")]
    pub a: MatrixSeq,
    #[serde(rename = "B")]
    pub b: MatrixSeq,
    #[serde(rename = "D")]
    pub d: MatrixSeq,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSeq {
    Single(Vec<Vec<f64>>),
    Seq(Vec<Vec<Vec<f64>>>),
}

impl MatrixSeq {
    pub fn expand(&self, name: &str, horizon: usize) -> Result<Vec<DMatrix<f64>>> {
        let parse = |rows: &Vec<Vec<f64>>| {
            linalg::rows_to_matrix(rows).ok_or_else(|| CsError::InvalidInput(format!("{name}: ragged matrix rows")))
        };
        match self {
            MatrixSeq::Single(rows) => Ok(vec![parse(rows)?; horizon]),
            MatrixSeq::Seq(seq) => {
                if seq.len() != horizon {
                    return Err(CsError::dims(&format!("{name} sequence"), horizon, seq.len()));
                }
                seq.iter().map(parse).collect()
            }
        }
    }
}

/// Mean recursion `μ_{k+1} = A_k μ_k + B_k v_k`.
pub fn propagate_mean(sys: &LtvSystem, mu0: &DVector<f64>, v_seq: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    if mu0.len() != sys.n() {
        return Err(CsError::dims("mu0", sys.n(), mu0.len()));
    }
    if v_seq.len() != sys.horizon() {
        return Err(CsError::dims("feedforward sequence length", sys.horizon(), v_seq.len()));
    }
    let mut out = Vec::with_capacity(sys.horizon() + 1);
    out.push(mu0.clone());
    for (k, v) in v_seq.iter().enumerate() {
        if v.len() != sys.p() {
            return Err(CsError::dims(&format!("v_{k}"), sys.p(), v.len()));
        }
        let next = sys.a(k) * &out[k] + sys.b(k) * v;
        out.push(next);
    }
    Ok(out)
}

/// Closed-loop covariance recursion
/// `Σ_{k+1} = (A_k + B_k K_k) Σ_k (A_k + B_k K_k)ᵀ + D_k D_kᵀ`.
pub fn propagate_cov(sys: &LtvSystem, sigma0: &DMatrix<f64>, k_seq: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    let n = sys.n();
    if sigma0.shape() != (n, n) {
        return Err(CsError::dims("Sigma0", format!("{n}x{n}"), shape(sigma0)));
    }
    if !linalg::is_psd(sigma0) {
        return Err(CsError::InvalidInput("Sigma0 must be symmetric positive semidefinite".into()));
    }
    if k_seq.len() != sys.horizon() {
        return Err(CsError::dims("gain sequence length", sys.horizon(), k_seq.len()));
    }
    let mut out = Vec::with_capacity(sys.horizon() + 1);
    out.push(linalg::symmetrize(sigma0));
    for (k, gain) in k_seq.iter().enumerate() {
        if gain.shape() != (sys.p(), n) {
            return Err(CsError::dims(&format!("K_{k}"), format!("{}x{n}", sys.p()), shape(gain)));
        }
        let closed = sys.a(k) + sys.b(k) * gain;
        let next = &closed * &out[k] * closed.transpose() + sys.noise_cov(k);
        out.push(linalg::symmetrize(&next));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(a: f64, b: f64, d: f64, horizon: usize) -> LtvSystem {
        LtvSystem::time_invariant(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, d),
            horizon,
        )
        .unwrap()
    }

    fn s(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn mean_is_cumulative_sum_for_unit_integrator() {
        let sys = scalar(1.0, 1.0, 1.0, 2);
        let v = vec![DVector::from_element(1, 1.0); 2];
        let mu = propagate_mean(&sys, &DVector::zeros(1), &v).unwrap();
        let got: Vec<f64> = mu.iter().map(|m| m[0]).collect();
        assert_eq!(got, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn zero_input_zero_mean() {
        let sys = random_stable_system(4, 2, 4, 6, 3);
        let v = vec![DVector::zeros(2); 6];
        let mu = propagate_mean(&sys, &DVector::zeros(4), &v).unwrap();
        assert!(mu.iter().all(|m| m.amax() == 0.0));
    }

    #[test]
    fn mean_rejects_wrong_lengths() {
        let sys = scalar(1.0, 1.0, 1.0, 2);
        assert!(matches!(
            propagate_mean(&sys, &DVector::zeros(1), &[DVector::zeros(1)]),
            Err(CsError::DimensionMismatch { .. })
        ));
        assert!(propagate_mean(&sys, &DVector::zeros(2), &[DVector::zeros(1), DVector::zeros(1)]).is_err());
    }

    #[test]
    fn covariance_one_step_examples() {
        let sys = scalar(1.0, 1.0, 1.0, 1);
        let sig = propagate_cov(&sys, &s(1.0), &[s(-0.5)]).unwrap();
        assert!((sig[1][(0, 0)] - 1.25).abs() < 1e-15);

        let sys = scalar(2.0, 1.0, 1.0, 1);
        let sig = propagate_cov(&sys, &s(1.0), &[s(-1.0)]).unwrap();
        assert!((sig[1][(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn open_loop_covariance_matches_transition_product() {
        let base = random_stable_system(3, 1, 3, 5, 11);
        let zeros_d: Vec<_> = (0..5).map(|_| DMatrix::zeros(3, 3)).collect();
        let sys = LtvSystem::new(
            (0..5).map(|k| base.a(k).clone()).collect(),
            (0..5).map(|k| base.b(k).clone()).collect(),
            zeros_d,
        )
        .unwrap();
        let sigma0 = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.1, 0.0, 0.1, 1.5]);
        let gains = vec![DMatrix::zeros(1, 3); 5];
        let sig = propagate_cov(&sys, &sigma0, &gains).unwrap();
        for k in 0..=5 {
            let phi = sys.transition(k, 0);
            let expected = &phi * &sigma0 * phi.transpose();
            assert!((&sig[k] - expected).amax() < 1e-12);
        }
    }

    #[test]
    fn covariance_rejects_non_psd_start() {
        let sys = scalar(1.0, 1.0, 1.0, 1);
        assert!(matches!(propagate_cov(&sys, &s(-1.0), &[s(0.0)]), Err(CsError::InvalidInput(_))));
    }

    #[test]
    fn singular_a_is_rejected() {
        let err = LtvSystem::time_invariant(s(0.0), s(1.0), s(1.0), 3).unwrap_err();
        assert!(matches!(err, CsError::SingularDynamics { step: 0, .. }));
    }

    #[test]
    fn time_invariant_file_broadcasts() {
        let json = r#"{"N": 3, "A": [[1.0, 0.1],[0.0, 1.0]], "B": [[0.0],[0.1]], "D": [[0.1, 0.0],[0.0, 0.1]]}"#;
        let file: SystemFile = serde_json::from_str(json).unwrap();
        let sys = LtvSystem::from_file(&file).unwrap();
        assert_eq!((sys.n(), sys.p(), sys.q(), sys.horizon()), (2, 1, 2, 3));
        let back = LtvSystem::from_file(&sys.to_file()).unwrap();
        assert_eq!(back, sys);
    }

    #[test]
    fn file_without_horizon_is_rejected() {
        let json = r#"{"A": [[1.0]], "B": [[1.0]], "D": [[1.0]]}"#;
        let file: SystemFile = serde_json::from_str(json).unwrap();
        assert!(LtvSystem::from_file(&file).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn closed_loop_covariance_stays_psd(seed in 0u64..10_000, scale in 0.0f64..3.0) {
            use rand::SeedableRng;
            use rand_distr::{Distribution, StandardNormal};
            let sys = random_stable_system(4, 2, 4, 6, seed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
            let gains: Vec<DMatrix<f64>> = (0..6)
                .map(|_| DMatrix::from_fn(2, 4, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); scale * z }))
                .collect();
            let sig = propagate_cov(&sys, &DMatrix::identity(4, 4), &gains).unwrap();
            for m in &sig {
                prop_assert!(linalg::asymmetry(m) == 0.0);
                prop_assert!(linalg::min_eigenvalue(m) >= -1e-9 * (1.0 + m.amax()));
            }
        }
    }
}
