//! Affine expressions in the decision vector, scalar and matrix valued.

use nalgebra::DMatrix;

use super::svec::{svec_index, svec_len};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(index: usize, coef: f64) -> Self {
        Self { terms: vec![(index, coef)], constant: 0.0 }
    }

    pub fn add_scaled(&mut self, other: &LinExpr, s: f64) {
        if s == 0.0 {
            return;
        }
        self.terms.extend(other.terms.iter().map(|&(i, c)| (i, c * s)));
        self.constant += other.constant * s;
    }

    pub fn add_term(&mut self, index: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((index, coef));
        }
    }

    /// Merges duplicate indices and drops exact zeros.
    pub fn compact(&mut self) {
        if self.terms.len() < 2 {
            self.terms.retain(|&(_, c)| c != 0.0);
            return;
        }
        self.terms.sort_unstable_by_key(|&(i, _)| i);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(i, c) in &self.terms {
            match out.last_mut() {
                Some((j, acc)) if *j == i => *acc += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|&(_, c)| c != 0.0);
        self.terms = out;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Dense matrix of affine expressions, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MatExpr {
    rows: usize,
    cols: usize,
    data: Vec<LinExpr>,
}

impl MatExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![LinExpr::default(); rows * cols] }
    }

    pub fn constant(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                out.at_mut(i, j).constant = m[(i, j)];
            }
        }
        out
    }

    /// Symmetric matrix whose svec occupies variables `offset..offset + s(s+1)/2`.
    pub fn sym_var(offset: usize, side: usize) -> Self {
        let mut out = Self::zeros(side, side);
        for j in 0..side {
            for i in 0..side {
                let coef = if i == j { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 };
                *out.at_mut(i, j) = LinExpr::var(offset + svec_index(i, j), coef);
            }
        }
        out
    }

    /// General matrix stored column-major at `offset`.
    pub fn dense_var(offset: usize, rows: usize, cols: usize) -> Self {
        let mut out = Self::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                *out.at_mut(i, j) = LinExpr::var(offset + j * rows + i, 1.0);
            }
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> &LinExpr {
        &self.data[j * self.rows + i]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut LinExpr {
        &mut self.data[j * self.rows + i]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                *out.at_mut(j, i) = self.at(i, j).clone();
            }
        }
        out
    }

    /// `a · self`
    pub fn left_mul(&self, a: &DMatrix<f64>) -> Self {
        assert_eq!(a.ncols(), self.rows);
        let mut out = Self::zeros(a.nrows(), self.cols);
        for j in 0..self.cols {
            for i in 0..a.nrows() {
                let e = out.at_mut(i, j);
                for l in 0..self.rows {
                    e.add_scaled(&self.data[j * self.rows + l], a[(i, l)]);
                }
                e.compact();
            }
        }
        out
    }

    /// `self · b`
    pub fn right_mul(&self, b: &DMatrix<f64>) -> Self {
        assert_eq!(b.nrows(), self.cols);
        let mut out = Self::zeros(self.rows, b.ncols());
        for j in 0..b.ncols() {
            for i in 0..self.rows {
                let e = out.at_mut(i, j);
                for l in 0..self.cols {
                    e.add_scaled(&self.data[l * self.rows + i], b[(l, j)]);
                }
                e.compact();
            }
        }
        out
    }

    pub fn add_scaled(&mut self, other: &MatExpr, s: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (e, o) in self.data.iter_mut().zip(&other.data) {
            e.add_scaled(o, s);
            e.compact();
        }
    }

    pub fn add_constant(&mut self, m: &DMatrix<f64>) {
        assert_eq!((self.rows, self.cols), m.shape());
        for j in 0..self.cols {
            for i in 0..self.rows {
                self.at_mut(i, j).constant += m[(i, j)];
            }
        }
    }

    /// Block matrix from a grid of equally shaped rows/columns of blocks.
    pub fn from_blocks(grid: &[Vec<&MatExpr>]) -> Self {
        let heights: Vec<usize> = grid.iter().map(|row| row[0].rows).collect();
        let widths: Vec<usize> = grid[0].iter().map(|b| b.cols).collect();
        let mut out = Self::zeros(heights.iter().sum(), widths.iter().sum());
        let mut r0 = 0;
        for (bi, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (bj, block) in row.iter().enumerate() {
                assert_eq!((block.rows, block.cols), (heights[bi], widths[bj]));
                for j in 0..block.cols {
                    for i in 0..block.rows {
                        *out.at_mut(r0 + i, c0 + j) = block.at(i, j).clone();
                    }
                }
                c0 += widths[bj];
            }
            r0 += heights[bi];
        }
        out
    }

    /// svec of the symmetric part, in the same layout as
    /// [`svec`](super::svec::svec).
    pub fn svec(&self) -> Vec<LinExpr> {
        assert_eq!(self.rows, self.cols);
        let s = self.rows;
        let mut out = vec![LinExpr::default(); svec_len(s)];
        for j in 0..s {
            for i in 0..=j {
                let e = &mut out[svec_index(i, j)];
                if i == j {
                    *e = self.at(i, i).clone();
                } else {
                    let half = std::f64::consts::FRAC_1_SQRT_2;
                    e.add_scaled(self.at(i, j), half);
                    e.add_scaled(self.at(j, i), half);
                    e.compact();
                }
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.at(i, j).eval(x))
    }
}
