//! Standard-form conic program `min cᵀx + c₀  s.t.  s = b − A x ∈ K`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::expr::LinExpr;
use super::svec::svec_len;
use crate::error::{CsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    /// `s = 0`
    Zero(usize),
    /// `s ≥ 0`
    Nonnegative(usize),
    /// `s_0 ≥ ‖s_{1..}‖`, total dimension
    SecondOrder(usize),
    /// `unsvec(s) ⪰ 0`, matrix side
    Psd(usize),
}

impl Cone {
    /// Number of rows the cone occupies.
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Zero(d) | Cone::Nonnegative(d) | Cone::SecondOrder(d) => d,
            Cone::Psd(s) => svec_len(s),
        }
    }

    fn tag(&self) -> char {
        match self {
            Cone::Zero(_) => 'Z',
            Cone::Nonnegative(_) => 'L',
            Cone::SecondOrder(_) => 'Q',
            Cone::Psd(_) => 'S',
        }
    }

    fn size(&self) -> usize {
        match *self {
            Cone::Zero(d) | Cone::Nonnegative(d) | Cone::SecondOrder(d) | Cone::Psd(d) => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub objective_offset: f64,
    /// `(row, col, value)` entries of `A`.
    pub triplets: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProgram {
    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    /// Row ranges of each cone block, in order.
    pub fn cone_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.cones
            .iter()
            .map(|c| {
                let r = start..start + c.dim();
                start += c.dim();
                r
            })
            .collect()
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(CsError::MalformedProgram(m));
        if self.objective.len() != self.num_vars {
            return bad(format!("objective has {} entries for {} variables", self.objective.len(), self.num_vars));
        }
        let cone_rows: usize = self.cones.iter().map(Cone::dim).sum();
        if cone_rows != self.rhs.len() {
            return bad(format!("cones cover {cone_rows} rows, rhs has {}", self.rhs.len()));
        }
        if self.cones.iter().any(|c| c.size() == 0) {
            return bad("empty cone block".into());
        }
        if let Some(&(r, c, _)) = self.triplets.iter().find(|&&(r, c, _)| r >= self.rhs.len() || c >= self.num_vars) {
            return bad(format!("entry ({r}, {c}) out of range"));
        }
        let finite = self.objective.iter().chain(&self.rhs).all(|x| x.is_finite())
            && self.triplets.iter().all(|t| t.2.is_finite());
        if !finite {
            return bad("non-finite data".into());
        }
        Ok(())
    }

    /// `A x` as a dense vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_rows()];
        for &(r, c, v) in &self.triplets {
            out[r] += v * x[c];
        }
        out
    }

    /// `b − A x`.
    pub fn slack(&self, x: &[f64]) -> Vec<f64> {
        let ax = self.apply(x);
        self.rhs.iter().zip(ax).map(|(b, a)| b - a).collect()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_offset + self.objective.iter().zip(x).map(|(c, x)| c * x).sum::<f64>()
    }

    pub fn nnz(&self) -> usize {
        self.triplets.len()
    }

    /// Fraction of nonzero entries in `A`.
    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.num_rows() as f64 * self.num_vars as f64).max(1.0)
    }

    /// Sparse-triplet text dump: a header with dimensions and cones, then
    /// `c`, `A` and `b` sections of COO entries.
    pub fn to_triplet_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# covsteer conic program: min c'x + offset s.t. b - Ax in K");
        let _ = writeln!(s, "vars {}", self.num_vars);
        let _ = writeln!(s, "rows {}", self.num_rows());
        let _ = writeln!(s, "offset {:?}", self.objective_offset);
        let _ = writeln!(s, "cones {}", self.cones.len());
        for c in &self.cones {
            let _ = writeln!(s, "{} {}", c.tag(), c.size());
        }
        let c_nz: Vec<_> = self.objective.iter().enumerate().filter(|(_, v)| **v != 0.0).collect();
        let _ = writeln!(s, "c {}", c_nz.len());
        for (j, v) in c_nz {
            let _ = writeln!(s, "{j} {v:?}");
        }
        let _ = writeln!(s, "A {}", self.triplets.len());
        for (r, c, v) in &self.triplets {
            let _ = writeln!(s, "{r} {c} {v:?}");
        }
        let b_nz: Vec<_> = self.rhs.iter().enumerate().filter(|(_, v)| **v != 0.0).collect();
        let _ = writeln!(s, "b {}", b_nz.len());
        for (i, v) in b_nz {
            let _ = writeln!(s, "{i} {v:?}");
        }
        s
    }

    pub fn from_triplet_text(text: &str) -> Result<Self> {
        let bad = |m: &str| CsError::MalformedProgram(format!("triplet text: {m}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(&format!("missing {what}")));
        fn field<T: std::str::FromStr>(line: &str, key: &str) -> Option<T> {
            let mut it = line.split_whitespace();
            (it.next()? == key).then_some(())?;
            it.next()?.parse().ok()
        }
        let num_vars: usize = field(next("vars")?, "vars").ok_or_else(|| bad("vars"))?;
        let num_rows: usize = field(next("rows")?, "rows").ok_or_else(|| bad("rows"))?;
        let offset: f64 = field(next("offset")?, "offset").ok_or_else(|| bad("offset"))?;
        let ncones: usize = field(next("cones")?, "cones").ok_or_else(|| bad("cones"))?;
        let mut cones = Vec::with_capacity(ncones);
        for _ in 0..ncones {
            let line = next("cone")?;
            let mut it = line.split_whitespace();
            let tag = it.next().ok_or_else(|| bad("cone tag"))?;
            let size: usize = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("cone size"))?;
            cones.push(match tag {
                "Z" => Cone::Zero(size),
                "L" => Cone::Nonnegative(size),
                "Q" => Cone::SecondOrder(size),
                "S" => Cone::Psd(size),
                _ => return Err(bad(&format!("unknown cone {tag}"))),
            });
        }
        let parse_f = |t: Option<&str>| t.and_then(|t| t.parse::<f64>().ok());
        let parse_u = |t: Option<&str>| t.and_then(|t| t.parse::<usize>().ok());

        let nc: usize = field(next("c")?, "c").ok_or_else(|| bad("c"))?;
        let mut objective = vec![0.0; num_vars];
        for _ in 0..nc {
            let mut it = next("c entry")?.split_whitespace();
            let (j, v) = (parse_u(it.next()), parse_f(it.next()));
            match (j, v) {
                (Some(j), Some(v)) if j < num_vars => objective[j] = v,
                _ => return Err(bad("c entry")),
            }
        }
        let na: usize = field(next("A")?, "A").ok_or_else(|| bad("A"))?;
        let mut triplets = Vec::with_capacity(na);
        for _ in 0..na {
            let mut it = next("A entry")?.split_whitespace();
            match (parse_u(it.next()), parse_u(it.next()), parse_f(it.next())) {
                (Some(r), Some(c), Some(v)) => triplets.push((r, c, v)),
                _ => return Err(bad("A entry")),
            }
        }
        let nb: usize = field(next("b")?, "b").ok_or_else(|| bad("b"))?;
        let mut rhs = vec![0.0; num_rows];
        for _ in 0..nb {
            let mut it = next("b entry")?.split_whitespace();
            match (parse_u(it.next()), parse_f(it.next())) {
                (Some(i), Some(v)) if i < num_rows => rhs[i] = v,
                _ => return Err(bad("b entry")),
            }
        }
        let prog = ConicProgram { num_vars, objective, objective_offset: offset, triplets, rhs, cones };
        prog.check()?;
        Ok(prog)
    }
}

/// Accumulates cone blocks given as affine expressions that must lie in the
/// cone.
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    num_vars: usize,
    objective: Vec<f64>,
    offset: f64,
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    cones: Vec<Cone>,
}

impl ProgramBuilder {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, objective: vec![0.0; num_vars], ..Default::default() }
    }

    pub fn add_objective(&mut self, index: usize, coef: f64) {
        self.objective[index] += coef;
    }

    pub fn add_offset(&mut self, c: f64) {
        self.offset += c;
    }

    fn push_row(&mut self, e: &LinExpr, scale: f64) {
        let row = self.rhs.len();
        self.rhs.push(e.constant * scale);
        for &(j, c) in &e.terms {
            self.triplets.push((row, j, -c * scale));
        }
    }

    fn row_scale(e: &LinExpr) -> f64 {
        let m = e.terms.iter().fold(0.0_f64, |m, &(_, c)| m.max(c.abs()));
        if m > 0.0 {
            1.0 / m
        } else {
            1.0
        }
    }

    /// `e = 0` for every expression. Rows are normalized by their largest
    /// coefficient; constant rows that already hold are dropped.
    pub fn zero(&mut self, exprs: &[LinExpr]) {
        let keep: Vec<&LinExpr> = exprs.iter().filter(|e| !(e.is_constant() && e.constant.abs() <= 1e-12)).collect();
        if keep.is_empty() {
            return;
        }
        for e in &keep {
            self.push_row(e, Self::row_scale(e));
        }
        self.cones.push(Cone::Zero(keep.len()));
    }

    /// `e ≥ 0` for every expression, normalized like [`zero`](Self::zero).
    pub fn nonnegative(&mut self, exprs: &[LinExpr]) {
        let keep: Vec<&LinExpr> = exprs.iter().filter(|e| !(e.is_constant() && e.constant >= 0.0)).collect();
        if keep.is_empty() {
            return;
        }
        for e in &keep {
            self.push_row(e, Self::row_scale(e));
        }
        self.cones.push(Cone::Nonnegative(keep.len()));
    }

    pub fn second_order(&mut self, exprs: &[LinExpr]) {
        for e in exprs {
            self.push_row(e, 1.0);
        }
        self.cones.push(Cone::SecondOrder(exprs.len()));
    }

    /// `unsvec(exprs) ⪰ 0`; `exprs` must be an svec of a `side × side` matrix.
    pub fn psd(&mut self, side: usize, exprs: &[LinExpr]) {
        assert_eq!(exprs.len(), svec_len(side));
        for e in exprs {
            self.push_row(e, 1.0);
        }
        self.cones.push(Cone::Psd(side));
    }

    pub fn build(self) -> ConicProgram {
        ConicProgram {
            num_vars: self.num_vars,
            objective: self.objective,
            objective_offset: self.offset,
            triplets: self.triplets,
            rhs: self.rhs,
            cones: self.cones,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ConicProgram {
        let mut b = ProgramBuilder::new(3);
        b.add_objective(0, 1.5);
        b.add_offset(0.25);
        let mut e = LinExpr::var(0, 2.0);
        e.add_term(1, -4.0);
        e.constant = 1.0;
        b.zero(&[e]);
        b.nonnegative(&[LinExpr::var(2, 1.0)]);
        b.psd(2, &[LinExpr::var(0, 1.0), LinExpr::constant(0.3), LinExpr::var(1, 1.0)]);
        b.build()
    }

    #[test]
    fn builder_normalizes_and_checks() {
        let p = sample();
        p.check().unwrap();
        assert_eq!(p.cones, vec![Cone::Zero(1), Cone::Nonnegative(1), Cone::Psd(2)]);
        // row 0: 2x0 - 4x1 + 1 scaled by 1/4
        assert_eq!(p.rhs[0], 0.25);
        assert!(p.triplets.contains(&(0, 1, 1.0)));
        assert!(p.triplets.contains(&(0, 0, -0.5)));
    }

    #[test]
    fn satisfied_constant_rows_are_dropped() {
        let mut b = ProgramBuilder::new(1);
        b.zero(&[LinExpr::constant(0.0)]);
        b.nonnegative(&[LinExpr::constant(1.0), LinExpr::constant(-1.0)]);
        let p = b.build();
        assert_eq!(p.cones, vec![Cone::Nonnegative(1)]);
        assert_eq!(p.rhs, vec![-1.0]);
    }

    #[test]
    fn triplet_text_round_trip() {
        let p = sample();
        let text = p.to_triplet_text();
        assert!(text.contains("vars 3") && text.contains("S 2"));
        assert_eq!(ConicProgram::from_triplet_text(&text).unwrap(), p);
    }

    #[test]
    fn malformed_programs_are_detected() {
        let mut p = sample();
        p.cones.push(Cone::Zero(2));
        assert!(p.check().is_err());
        let mut p = sample();
        p.triplets.push((0, 9, 1.0));
        assert!(p.check().is_err());
        assert!(ConicProgram::from_triplet_text("vars x").is_err());
    }
}
