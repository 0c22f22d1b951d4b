//! Scaled symmetric vectorization: upper triangle stacked column by column,
//! off-diagonal entries multiplied by `√2` so that `⟨svec A, svec B⟩ = tr(AB)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{CsError, Result};
use crate::linalg;

pub fn svec_len(side: usize) -> usize {
    side * (side + 1) / 2
}

/// Position of entry `(i, j)` (either order) in the svec of a `side × side`
/// matrix.
pub fn svec_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

/// Side `s` with `s(s+1)/2 = len`, if any.
pub fn svec_side(len: usize) -> Option<usize> {
    let s = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    (s..=s + 1).find(|&s| svec_len(s) == len)
}

pub fn svec(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !m.is_square() || !linalg::is_symmetric(m, 1e-10) {
        return Err(CsError::InvalidInput("svec needs a symmetric matrix".into()));
    }
    Ok(svec_unchecked(m))
}

/// svec of the symmetric part of `m`.
pub fn svec_unchecked(m: &DMatrix<f64>) -> DVector<f64> {
    let s = m.nrows();
    let mut out = DVector::zeros(svec_len(s));
    for j in 0..s {
        for i in 0..=j {
            out[svec_index(i, j)] =
                if i == j { m[(i, i)] } else { std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)]) };
        }
    }
    out
}

pub fn unsvec(v: &[f64]) -> Result<DMatrix<f64>> {
    let s =
        svec_side(v.len()).ok_or_else(|| CsError::InvalidInput(format!("{} is not a triangular number", v.len())))?;
    let mut m = DMatrix::zeros(s, s);
    for j in 0..s {
        for i in 0..=j {
            let x = v[svec_index(i, j)];
            if i == j {
                m[(i, i)] = x;
            } else {
                m[(i, j)] = x / std::f64::consts::SQRT_2;
                m[(j, i)] = m[(i, j)];
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_small_example() {
        assert_eq!(svec(&DMatrix::identity(2, 2)).unwrap().as_slice(), &[1.0, 0.0, 1.0]);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]);
        let v = svec(&m).unwrap();
        assert_eq!(v[0], 1.0);
        assert!((v[1] - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(v[2], 3.0);
        assert_eq!(unsvec(v.as_slice()).unwrap(), m);
    }

    #[test]
    fn rejects_asymmetric_and_bad_lengths() {
        assert!(svec(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
        assert!(svec(&DMatrix::zeros(2, 3)).is_err());
        assert!(unsvec(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn side_inverse() {
        for s in 0..50 {
            assert_eq!(svec_side(svec_len(s)), Some(s));
        }
        assert_eq!(svec_side(4), None);
    }

    fn sym(side: usize, vals: &[f64]) -> DMatrix<f64> {
        let m = DMatrix::from_fn(side, side, |i, j| vals[i * side + j]);
        linalg::symmetrize(&m)
    }

    proptest! {
        #[test]
        fn inner_product_is_trace(side in 1usize..6, a in proptest::collection::vec(-5.0f64..5.0, 36),
                                  b in proptest::collection::vec(-5.0f64..5.0, 36)) {
            let (a, b) = (sym(side, &a), sym(side, &b));
            let lhs = svec(&a).unwrap().dot(&svec(&b).unwrap());
            let rhs = (&a * &b).trace();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
            let back = unsvec(svec(&a).unwrap().as_slice()).unwrap();
            prop_assert!((back - a).amax() <= 1e-14);
        }
    }
}
