//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues below this are treated as zero when checking definiteness of
/// user inputs.
pub const PSD_SLACK: f64 = 1e-10;

/// Diagonal shift applied to nearly singular covariances before inversion or
/// factorization.
pub const COVARIANCE_SHIFT: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let mut worst = 0.0_f64;
    for j in 0..m.ncols() {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && asymmetry(m) <= tol * (1.0 + m.amax())
}

/// Sorted (ascending) eigenvalues of the symmetric part of `m`.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn is_psd(m: &DMatrix<f64>) -> bool {
    is_symmetric(m, 1e-9) && min_eigenvalue(m) >= -PSD_SLACK * (1.0 + m.amax())
}

pub fn is_pd(m: &DMatrix<f64>) -> bool {
    is_symmetric(m, 1e-9) && nalgebra::Cholesky::new(symmetrize(m)).is_some()
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Returns `(m + shift·I, shift)` where `shift` is zero unless the smallest
/// eigenvalue of `m` is below [`COVARIANCE_SHIFT`].
pub fn shift_if_needed(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = symmetrize(m);
    let lmin = min_eigenvalue(&sym);
    if lmin < COVARIANCE_SHIFT {
        let shift = COVARIANCE_SHIFT - lmin.min(0.0);
        let n = sym.nrows();
        (sym + DMatrix::identity(n, n) * shift, shift)
    } else {
        (sym, 0.0)
    }
}

/// Factor `F` with `FᵀF = M` for symmetric PSD `M`, dropping the null space.
/// The result has `rank(M)` rows.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig.eigenvalues.amax().max(1.0);
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 1e-14 * scale).collect();
    let mut f = DMatrix::zeros(keep.len(), n);
    for (r, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for c in 0..n {
            f[(r, c)] = s * eig.eigenvectors[(c, i)];
        }
    }
    f
}

/// Lower Cholesky factor with the covariance shift policy applied.
pub fn cholesky_shifted(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let (shifted, shift) = shift_if_needed(m);
    nalgebra::Cholesky::new(shifted).map(|c| (c.l(), shift))
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn scaled_identity(n: usize, s: f64) -> DMatrix<f64> {
    DMatrix::identity(n, n) * s
}

pub fn unit_vector(n: usize, i: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[i] = 1.0;
    v
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return None;
    }
    Some(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}
