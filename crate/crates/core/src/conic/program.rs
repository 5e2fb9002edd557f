//! Cone program data and a small modeling layer for Hermitian variables.
//!
//! Programs are stored in the form
//!
//! ```text
//! minimize    c'x + offset
//! subject to  G x + s = h,   s ∈ K
//!             A x = b
//! ```
//!
//! where `K` is a product of nonnegative orthants and real symmetric PSD
//! cones. A PSD cone of order `k` occupies `k*k` consecutive entries of `s`
//! (full matrix, column-major). Hermitian constraints enter through the real
//! embedding `[[R, −S], [S, R]]`.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{real_embed_adjoint, Hermitian};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConicError {
    #[error("equality constraints in block `{block}` are rank deficient (row {row} depends on earlier rows)")]
    RankDeficient { block: String, row: usize },
    #[error("inconsistent dimensions in {what}: expected {expected}, got {got}")]
    Dimension { what: String, expected: usize, got: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    NonNeg(usize),
    Psd(usize),
}

impl Cone {
    /// Number of entries this cone occupies in the slack vector.
    pub fn size(&self) -> usize {
        match *self {
            Cone::NonNeg(l) => l,
            Cone::Psd(k) => k * k,
        }
    }

    pub fn degree(&self) -> usize {
        match *self {
            Cone::NonNeg(l) => l,
            Cone::Psd(k) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub cone: Cone,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub row: usize,
    pub col: usize,
    pub val: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqBlock {
    pub label: String,
    pub rows: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub c: Vec<f64>,
    pub offset: f64,
    pub cones: Vec<ConeSpec>,
    pub g: Vec<Triplet>,
    pub h: Vec<f64>,
    pub a: Vec<Triplet>,
    pub b: Vec<f64>,
    pub eq_blocks: Vec<EqBlock>,
}

impl ConicProgram {
    pub fn num_cone_rows(&self) -> usize {
        self.cones.iter().map(|c| c.cone.size()).sum()
    }

    pub fn num_eq_rows(&self) -> usize {
        self.b.len()
    }

    pub fn degree(&self) -> usize {
        self.cones.iter().map(|c| c.cone.degree()).sum()
    }

    /// Row offset of each cone in the slack vector.
    pub fn cone_offsets(&self) -> Vec<usize> {
        self.cones
            .iter()
            .scan(0, |acc, c| {
                let o = *acc;
                *acc += c.cone.size();
                Some(o)
            })
            .collect()
    }

    /// Checks that every index and length is consistent.
    pub fn validate(&self) -> Result<(), ConicError> {
        let dim = |what: &str, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(ConicError::Dimension { what: what.into(), expected, got })
            }
        };
        dim("objective", self.num_vars, self.c.len())?;
        dim("cone right-hand side", self.num_cone_rows(), self.h.len())?;
        let rows = self.num_cone_rows();
        let eqs = self.b.len();
        for t in &self.g {
            if t.row >= rows || t.col >= self.num_vars {
                return Err(ConicError::Dimension { what: "G triplet".into(), expected: rows, got: t.row });
            }
        }
        for t in &self.a {
            if t.row >= eqs || t.col >= self.num_vars {
                return Err(ConicError::Dimension { what: "A triplet".into(), expected: eqs, got: t.row });
            }
        }
        fn finite(what: &str, mut v: impl Iterator<Item = f64>) -> Result<(), ConicError> {
            if v.all(f64::is_finite) {
                Ok(())
            } else {
                Err(ConicError::NonFinite(what.into()))
            }
        }
        finite("c", self.c.iter().copied().chain(std::iter::once(self.offset)))?;
        finite("h", self.h.iter().copied())?;
        finite("b", self.b.iter().copied())?;
        finite("G", self.g.iter().map(|t| t.val))?;
        finite("A", self.a.iter().map(|t| t.val))?;
        Ok(())
    }

    /// Label of the equality block containing `row`.
    pub fn eq_block_label(&self, row: usize) -> String {
        self.eq_blocks
            .iter()
            .find(|blk| blk.rows.contains(&row))
            .map(|blk| blk.label.clone())
            .unwrap_or_else(|| format!("row {row}"))
    }

    /// Dense copy of `A` (rows × vars).
    pub fn dense_a(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.b.len(), self.num_vars);
        for t in &self.a {
            a[(t.row, t.col)] += t.val;
        }
        a
    }

    /// `c'x + offset`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() + self.offset
    }
}

/// Scalar decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var(pub usize);

/// Hermitian decision variable occupying `dim²` consecutive scalar variables
/// in the coordinate order of [`Hermitian::coords`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HermVar {
    pub dim: usize,
    pub start: usize,
}

impl HermVar {
    pub fn vars(&self) -> Range<usize> {
        self.start..self.start + self.dim * self.dim
    }
}

/// Handle to a Hermitian PSD constraint; recovers its dual variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsdHandle {
    pub cone: usize,
    pub offset: usize,
    pub dim: usize,
}

/// Handle to a Hermitian equality constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermEqHandle {
    pub dim: usize,
    /// Equality row for each coordinate, `None` when the coordinate was
    /// identically zero and dropped.
    pub rows: Vec<Option<usize>>,
}

/// Affine real expression `Σ coef·x + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: BTreeMap<usize, f64>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(v: f64) -> Self {
        Self { terms: BTreeMap::new(), constant: v }
    }

    pub fn var(v: Var) -> Self {
        let mut e = Self::default();
        e.add_var(v, 1.0);
        e
    }

    pub fn add_var(&mut self, v: Var, coef: f64) -> &mut Self {
        *self.terms.entry(v.0).or_insert(0.0) += coef;
        self
    }

    pub fn add_expr(&mut self, other: &LinExpr, scale: f64) -> &mut Self {
        for (&k, &v) in &other.terms {
            *self.terms.entry(k).or_insert(0.0) += scale * v;
        }
        self.constant += scale * other.constant;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(&k, &v)| v * x[k]).sum::<f64>()
    }
}

/// Weights `w` with `Re Tr[K H] = w · coords(H)`.
pub fn inner_weights(k: &Hermitian) -> Vec<f64> {
    let n = k.dim();
    let m = k.matrix();
    let mut w = Vec::with_capacity(n * n);
    for i in 0..n {
        w.push(m[(i, i)].re);
    }
    for j in 0..n {
        for i in 0..j {
            w.push(2.0 * m[(i, j)].re);
            w.push(2.0 * m[(i, j)].im);
        }
    }
    w
}

/// Affine Hermitian expression in coordinate form: `constant + Σ_v x_v · terms[v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermExpr {
    pub dim: usize,
    pub constant: Vec<f64>,
    pub terms: BTreeMap<usize, Vec<f64>>,
}

impl HermExpr {
    pub fn zero(dim: usize) -> Self {
        Self { dim, constant: vec![0.0; dim * dim], terms: BTreeMap::new() }
    }

    pub fn constant(h: &Hermitian) -> Self {
        Self { dim: h.dim(), constant: h.coords(), terms: BTreeMap::new() }
    }

    pub fn var(v: HermVar) -> Self {
        let mut e = Self::zero(v.dim);
        e.add_var(v, 1.0);
        e
    }

    pub fn add_var(&mut self, v: HermVar, coef: f64) -> &mut Self {
        assert_eq!(v.dim, self.dim, "Hermitian variable dimension mismatch");
        let n2 = self.dim * self.dim;
        for k in 0..n2 {
            let t = self.terms.entry(v.start + k).or_insert_with(|| vec![0.0; n2]);
            t[k] += coef;
        }
        self
    }

    /// Adds `x · h` for scalar variable `x`.
    pub fn add_scalar(&mut self, x: Var, h: &Hermitian) -> &mut Self {
        assert_eq!(h.dim(), self.dim, "operator dimension mismatch");
        let n2 = self.dim * self.dim;
        let t = self.terms.entry(x.0).or_insert_with(|| vec![0.0; n2]);
        for (ti, ci) in t.iter_mut().zip(h.coords()) {
            *ti += ci;
        }
        self
    }

    pub fn add_const(&mut self, h: &Hermitian, scale: f64) -> &mut Self {
        assert_eq!(h.dim(), self.dim, "operator dimension mismatch");
        for (ti, ci) in self.constant.iter_mut().zip(h.coords()) {
            *ti += scale * ci;
        }
        self
    }

    pub fn add_expr(&mut self, other: &HermExpr, scale: f64) -> &mut Self {
        assert_eq!(other.dim, self.dim, "expression dimension mismatch");
        let n2 = self.dim * self.dim;
        for (&k, v) in &other.terms {
            let t = self.terms.entry(k).or_insert_with(|| vec![0.0; n2]);
            for (ti, vi) in t.iter_mut().zip(v) {
                *ti += scale * vi;
            }
        }
        for (ti, ci) in self.constant.iter_mut().zip(&other.constant) {
            *ti += scale * ci;
        }
        self
    }

    /// Applies a real-linear, Hermiticity-preserving map to every term.
    pub fn map(&self, dim_out: usize, f: impl Fn(&Hermitian) -> Hermitian) -> HermExpr {
        let apply = |coords: &[f64]| {
            let out = f(&Hermitian::from_coords(self.dim, coords));
            assert_eq!(out.dim(), dim_out, "mapped operator has wrong dimension");
            out.coords()
        };
        HermExpr {
            dim: dim_out,
            constant: apply(&self.constant),
            terms: self.terms.iter().map(|(&k, v)| (k, apply(v))).collect(),
        }
    }

    /// `Re Tr[K · expr]`.
    pub fn inner(&self, k: &Hermitian) -> LinExpr {
        let w = inner_weights(k);
        let dot = |v: &[f64]| v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        LinExpr {
            terms: self.terms.iter().map(|(&j, v)| (j, dot(v))).filter(|(_, v)| *v != 0.0).collect(),
            constant: dot(&self.constant),
        }
    }

    pub fn trace(&self) -> LinExpr {
        self.inner(&Hermitian::identity(self.dim))
    }

    pub fn eval(&self, x: &[f64]) -> Hermitian {
        let mut coords = self.constant.clone();
        for (&k, v) in &self.terms {
            for (c, vi) in coords.iter_mut().zip(v) {
                *c += x[k] * vi;
            }
        }
        Hermitian::from_coords(self.dim, &coords)
    }
}

/// Entries `(row, col, sign)` of the `2n×2n` real embedding of each
/// coordinate basis element.
fn embedding_pattern(n: usize) -> Vec<Vec<(usize, usize, f64)>> {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        out.push(vec![(i, i, 1.0), (i + n, i + n, 1.0)]);
    }
    for j in 0..n {
        for i in 0..j {
            out.push(vec![(i, j, 1.0), (j, i, 1.0), (i + n, j + n, 1.0), (j + n, i + n, 1.0)]);
            out.push(vec![(i + n, j, 1.0), (j + n, i, -1.0), (i, j + n, -1.0), (j, i + n, 1.0)]);
        }
    }
    out
}

/// Incrementally assembles a [`ConicProgram`].
#[derive(Debug, Default)]
pub struct ProgramBuilder {
    num_vars: usize,
    c: Vec<f64>,
    offset: f64,
    cones: Vec<ConeSpec>,
    g: Vec<Triplet>,
    h: Vec<f64>,
    a: Vec<Triplet>,
    b: Vec<f64>,
    eq_blocks: Vec<EqBlock>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn var(&mut self) -> Var {
        self.num_vars += 1;
        self.c.push(0.0);
        Var(self.num_vars - 1)
    }

    /// Free Hermitian variable.
    pub fn herm(&mut self, dim: usize) -> HermVar {
        let start = self.num_vars;
        self.num_vars += dim * dim;
        self.c.resize(self.num_vars, 0.0);
        HermVar { dim, start }
    }

    /// Hermitian variable constrained to be PSD.
    pub fn psd_var(&mut self, dim: usize, label: &str) -> (HermVar, PsdHandle) {
        let v = self.herm(dim);
        let h = self.add_psd(&HermExpr::var(v), label);
        (v, h)
    }

    /// Scalar variable constrained to be nonnegative.
    pub fn nonneg_var(&mut self, label: &str) -> Var {
        let v = self.var();
        self.add_nonneg(&[LinExpr::var(v)], label);
        v
    }

    pub fn minimize(&mut self, obj: &LinExpr) {
        for (&k, &v) in &obj.terms {
            self.c[k] += v;
        }
        self.offset += obj.constant;
    }

    /// `expr ⪰ 0`.
    pub fn add_psd(&mut self, expr: &HermExpr, label: &str) -> PsdHandle {
        let n = expr.dim;
        let k = 2 * n;
        let offset = self.h.len();
        let pattern = embedding_pattern(n);
        let mut h = vec![0.0; k * k];
        for (coord, entries) in pattern.iter().enumerate() {
            let v = expr.constant[coord];
            if v != 0.0 {
                for &(r, c, sgn) in entries {
                    h[r + c * k] += sgn * v;
                }
            }
        }
        self.h.extend(h);
        for (&var, coefs) in &expr.terms {
            for (coord, entries) in pattern.iter().enumerate() {
                let v = coefs[coord];
                if v != 0.0 {
                    for &(r, c, sgn) in entries {
                        self.g.push(Triplet { row: offset + r + c * k, col: var, val: -sgn * v });
                    }
                }
            }
        }
        self.cones.push(ConeSpec { cone: Cone::Psd(k), label: label.into() });
        PsdHandle { cone: self.cones.len() - 1, offset, dim: n }
    }

    /// Each expression `≥ 0`; returns the cone index.
    pub fn add_nonneg(&mut self, exprs: &[LinExpr], label: &str) -> usize {
        let offset = self.h.len();
        for (i, e) in exprs.iter().enumerate() {
            self.h.push(e.constant);
            for (&var, &v) in &e.terms {
                if v != 0.0 {
                    self.g.push(Triplet { row: offset + i, col: var, val: -v });
                }
            }
        }
        self.cones.push(ConeSpec { cone: Cone::NonNeg(exprs.len()), label: label.into() });
        self.cones.len() - 1
    }

    /// Scalar equalities `expr = 0`; returns the row range.
    pub fn add_eq(&mut self, exprs: &[LinExpr], label: &str) -> Range<usize> {
        let start = self.b.len();
        for e in exprs {
            let row = self.b.len();
            self.b.push(-e.constant);
            for (&var, &v) in &e.terms {
                if v != 0.0 {
                    self.a.push(Triplet { row, col: var, val: v });
                }
            }
        }
        let rows = start..self.b.len();
        self.eq_blocks.push(EqBlock { label: label.into(), rows: rows.clone() });
        rows
    }

    /// Hermitian equality `expr = 0`, one real row per coordinate.
    /// Coordinates with no variable dependence and zero constant are dropped.
    pub fn add_eq_herm(&mut self, expr: &HermExpr, label: &str) -> HermEqHandle {
        let n2 = expr.dim * expr.dim;
        let start = self.b.len();
        let mut rows = Vec::with_capacity(n2);
        for coord in 0..n2 {
            let has_terms = expr.terms.values().any(|v| v[coord] != 0.0);
            if !has_terms && expr.constant[coord] == 0.0 {
                rows.push(None);
                continue;
            }
            let row = self.b.len();
            self.b.push(-expr.constant[coord]);
            for (&var, v) in &expr.terms {
                if v[coord] != 0.0 {
                    self.a.push(Triplet { row, col: var, val: v[coord] });
                }
            }
            rows.push(Some(row));
        }
        self.eq_blocks.push(EqBlock { label: label.into(), rows: start..self.b.len() });
        HermEqHandle { dim: expr.dim, rows }
    }

    pub fn build(self) -> ConicProgram {
        ConicProgram {
            num_vars: self.num_vars,
            c: self.c,
            offset: self.offset,
            cones: self.cones,
            g: merge_triplets(self.g),
            h: self.h,
            a: merge_triplets(self.a),
            b: self.b,
            eq_blocks: self.eq_blocks,
        }
    }
}

/// Sums duplicate entries and drops exact zeros; output sorted by (col, row).
pub(crate) fn merge_triplets(mut t: Vec<Triplet>) -> Vec<Triplet> {
    t.sort_by(|x, y| (x.col, x.row).cmp(&(y.col, y.row)));
    let mut out: Vec<Triplet> = Vec::with_capacity(t.len());
    for e in t {
        match out.last_mut() {
            Some(last) if last.row == e.row && last.col == e.col => last.val += e.val,
            _ => out.push(e),
        }
    }
    out.retain(|e| e.val != 0.0);
    out
}

/// Primal/dual values of a solved program, with accessors for the modeling
/// handles.
pub trait SolutionView {
    fn x(&self) -> &[f64];
    fn y(&self) -> &[f64];
    fn z(&self) -> &[f64];

    fn value(&self, v: Var) -> f64 {
        self.x()[v.0]
    }

    fn herm_value(&self, v: HermVar) -> Hermitian {
        Hermitian::from_coords(v.dim, &self.x()[v.vars()])
    }

    fn expr_value(&self, e: &HermExpr) -> Hermitian {
        e.eval(self.x())
    }

    fn lin_value(&self, e: &LinExpr) -> f64 {
        e.eval(self.x())
    }

    /// Hermitian multiplier `K ⪰ 0` of a PSD constraint, entering the
    /// Lagrangian as `−Re Tr[K · expr]`.
    fn psd_dual(&self, h: PsdHandle) -> Hermitian {
        let k = 2 * h.dim;
        let z = &self.z()[h.offset..h.offset + k * k];
        real_embed_adjoint(&DMatrix::from_column_slice(k, k, z))
    }

    /// Hermitian multiplier `L` of an equality constraint, entering the
    /// Lagrangian as `+Re Tr[L · expr]`.
    fn eq_dual(&self, h: &HermEqHandle) -> Hermitian {
        let y = self.y();
        let n = h.dim;
        let mut coords = vec![0.0; n * n];
        for (k, r) in h.rows.iter().enumerate() {
            if let Some(r) = r {
                coords[k] = if k < n { y[*r] } else { 0.5 * y[*r] };
            }
        }
        Hermitian::from_coords(n, &coords)
    }
}
