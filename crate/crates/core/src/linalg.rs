//! Dense complex linear algebra on Hermitian operators.
//!
//! Every effect, state, parent POVM element and dual certificate in this crate
//! is a [`Hermitian`]. The type symmetrizes its input on construction so that
//! downstream SDP data is exactly Hermitian, and offers the handful of spectral
//! quantities the quantifiers need (operator norm, trace norm, partial trace,
//! real embedding for the conic solver).

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense complex matrix, column-major.
pub type ComplexMatrix = DMatrix<Complex64>;
/// Dense complex column vector.
pub type ComplexVector = DVector<Complex64>;

/// Deviation from Hermiticity above which construction logs a warning.
pub const HERMITICITY_WARN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("dimension {dim} is not divisible by subsystem dimension {factor}")]
    NotDivisible { dim: usize, factor: usize },
    #[error("ragged or empty matrix rows")]
    Ragged,
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPsd { min_eig: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// A complex Hermitian operator on a `dim`-dimensional space.
#[derive(Clone, PartialEq)]
pub struct Hermitian {
    m: ComplexMatrix,
}

/// Eigendecomposition `H = V diag(values) V†`, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

impl Hermitian {
    /// Builds a Hermitian operator from an arbitrary square matrix by taking
    /// `(A + A†)/2`.
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let dev = hermiticity_deviation(&m);
        if dev > HERMITICITY_WARN_TOL {
            log::warn!("symmetrizing operator with Hermiticity deviation {dev:.3e}");
        }
        Ok(Self::symmetrized(m))
    }

    fn symmetrized(m: ComplexMatrix) -> Self {
        let n = m.nrows();
        let mut out = ComplexMatrix::zeros(n, n);
        for j in 0..n {
            out[(j, j)] = c64(m[(j, j)].re, 0.0);
            for i in (j + 1)..n {
                let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
                out[(i, j)] = v;
                out[(j, i)] = v.conj();
            }
        }
        Self { m: out }
    }

    /// Wraps a matrix already known to be Hermitian up to rounding. Used on hot
    /// paths where the input is produced by Hermitian-preserving arithmetic.
    pub(crate) fn from_hermitian_unchecked(m: ComplexMatrix) -> Self {
        Self::symmetrized(m)
    }

    pub fn from_real(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(m.map(|x| c64(x, 0.0)))
    }

    /// Row-major nested slices of real and imaginary parts.
    pub fn from_parts(re: &[Vec<f64>], im: &[Vec<f64>]) -> Result<Self> {
        let n = re.len();
        if n == 0 || im.len() != n || re.iter().chain(im.iter()).any(|r| r.len() != n) {
            return Err(LinalgError::Ragged);
        }
        Self::new(ComplexMatrix::from_fn(n, n, |i, j| c64(re[i][j], im[i][j])))
    }

    pub fn zeros(dim: usize) -> Self {
        Self { m: ComplexMatrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { m: ComplexMatrix::identity(dim, dim) }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = ComplexMatrix::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = c64(v, 0.0);
        }
        Self { m }
    }

    /// Rank-one operator `|v⟩⟨v|` (not normalized).
    pub fn outer(v: &ComplexVector) -> Self {
        Self::from_hermitian_unchecked(v * v.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.m
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.m[(i, i)].re).sum()
    }

    /// `Re Tr[A B]`, the real inner product on Hermitian operators.
    pub fn inner(&self, other: &Hermitian) -> f64 {
        self.m.iter().zip(other.m.transpose().iter()).map(|(a, b)| (a * b).re).sum()
    }

    /// Entrywise complex conjugate, which for Hermitian operators equals the
    /// transpose.
    pub fn transpose(&self) -> Hermitian {
        Self { m: self.m.map(|z| z.conj()) }
    }

    pub fn scale(&self, s: f64) -> Hermitian {
        Self { m: self.m.map(|z| z * s) }
    }

    /// `U H U†`.
    pub fn conjugate_by(&self, u: &ComplexMatrix) -> Hermitian {
        Self::from_hermitian_unchecked(u * &self.m * u.adjoint())
    }

    /// `K H K` for Hermitian `K`.
    pub fn sandwich(&self, k: &Hermitian) -> Hermitian {
        Self::from_hermitian_unchecked(&k.m * &self.m * &k.m)
    }

    pub fn kron(&self, other: &Hermitian) -> Hermitian {
        Self::from_hermitian_unchecked(self.m.kronecker(&other.m))
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.m.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_distance(&self, other: &Hermitian) -> f64 {
        (&self.m - &other.m).norm()
    }

    pub fn eigh(&self) -> Eigh {
        let n = self.dim();
        if n == 0 {
            return Eigh { values: vec![], vectors: ComplexMatrix::zeros(0, 0) };
        }
        let se = SymmetricEigen::new(self.m.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
        let values = order.iter().map(|&i| se.eigenvalues[i]).collect();
        let vectors = ComplexMatrix::from_fn(n, n, |r, c| se.eigenvectors[(r, order[c])]);
        Eigh { values, vectors }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigh().values
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0)
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }

    /// Applies `f` to the spectrum.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Hermitian {
        let e = self.eigh();
        let n = self.dim();
        let mut scaled = e.vectors.clone();
        for (c, &v) in e.values.iter().enumerate() {
            let fv = f(v);
            for r in 0..n {
                scaled[(r, c)] *= fv;
            }
        }
        Self::from_hermitian_unchecked(scaled * e.vectors.adjoint())
    }

    /// Projection onto the PSD cone (negative eigenvalues clipped).
    pub fn psd_part(&self) -> Hermitian {
        self.map_spectrum(|v| v.max(0.0))
    }

    pub fn real_part(&self) -> DMatrix<f64> {
        self.m.map(|z| z.re)
    }

    pub fn imag_part(&self) -> DMatrix<f64> {
        self.m.map(|z| z.im)
    }

    /// Real coordinates: diagonal entries, then `Re`/`Im` of each strictly
    /// upper entry in column-major order. Inverse of [`Hermitian::from_coords`].
    pub fn coords(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            out.push(self.m[(i, i)].re);
        }
        for j in 0..n {
            for i in 0..j {
                out.push(self.m[(i, j)].re);
                out.push(self.m[(i, j)].im);
            }
        }
        out
    }

    pub fn from_coords(dim: usize, coords: &[f64]) -> Hermitian {
        assert_eq!(coords.len(), dim * dim, "coordinate count must be dim^2");
        let mut m = ComplexMatrix::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = c64(coords[i], 0.0);
        }
        let mut k = dim;
        for j in 0..dim {
            for i in 0..j {
                let z = c64(coords[k], coords[k + 1]);
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
                k += 2;
            }
        }
        Self { m }
    }
}

impl fmt::Debug for Hermitian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hermitian{:?}", self.m)
    }
}

impl Add for &Hermitian {
    type Output = Hermitian;
    fn add(self, rhs: &Hermitian) -> Hermitian {
        Hermitian { m: &self.m + &rhs.m }
    }
}

impl Sub for &Hermitian {
    type Output = Hermitian;
    fn sub(self, rhs: &Hermitian) -> Hermitian {
        Hermitian { m: &self.m - &rhs.m }
    }
}

impl Neg for &Hermitian {
    type Output = Hermitian;
    fn neg(self) -> Hermitian {
        Hermitian { m: -&self.m }
    }
}

impl Mul<f64> for &Hermitian {
    type Output = Hermitian;
    fn mul(self, s: f64) -> Hermitian {
        self.scale(s)
    }
}

/// Sum of a sequence of operators of dimension `dim`.
pub fn sum<'a>(dim: usize, ops: impl IntoIterator<Item = &'a Hermitian>) -> Hermitian {
    let mut m = ComplexMatrix::zeros(dim, dim);
    for op in ops {
        m += &op.m;
    }
    Hermitian { m }
}

/// Largest absolute entry of `A − A†`.
pub fn hermiticity_deviation(m: &ComplexMatrix) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Largest absolute eigenvalue.
pub fn spectral_norm(op: &Hermitian) -> f64 {
    let v = op.eigenvalues();
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Sum of absolute eigenvalues.
pub fn trace_norm(op: &Hermitian) -> f64 {
    op.eigenvalues().iter().map(|x| x.abs()).sum()
}

/// `Tr₁` of a (not necessarily Hermitian) operator on `C^{dim_first} ⊗ C^{k}`.
pub fn partial_trace_first_general(m: &ComplexMatrix, dim_first: usize) -> Result<ComplexMatrix> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    let n = m.nrows();
    if dim_first == 0 || n % dim_first != 0 {
        return Err(LinalgError::NotDivisible { dim: n, factor: dim_first });
    }
    let k = n / dim_first;
    let mut out = ComplexMatrix::zeros(k, k);
    for a in 0..dim_first {
        out += m.view((a * k, a * k), (k, k));
    }
    Ok(out)
}

/// `Tr₂` of an operator on `C^{k} ⊗ C^{dim_second}`.
pub fn partial_trace_second_general(m: &ComplexMatrix, dim_second: usize) -> Result<ComplexMatrix> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    let n = m.nrows();
    if dim_second == 0 || n % dim_second != 0 {
        return Err(LinalgError::NotDivisible { dim: n, factor: dim_second });
    }
    let k = n / dim_second;
    Ok(ComplexMatrix::from_fn(k, k, |i, j| {
        (0..dim_second).map(|b| m[(i * dim_second + b, j * dim_second + b)]).sum()
    }))
}

/// Traces out the first tensor factor of dimension `dim_first`.
pub fn partial_trace_first(op: &Hermitian, dim_first: usize) -> Result<Hermitian> {
    partial_trace_first_general(&op.m, dim_first).map(Hermitian::from_hermitian_unchecked)
}

/// Traces out the second tensor factor of dimension `dim_second`.
pub fn partial_trace_second(op: &Hermitian, dim_second: usize) -> Result<Hermitian> {
    partial_trace_second_general(&op.m, dim_second).map(Hermitian::from_hermitian_unchecked)
}

/// Real symmetric embedding `[[R, −S], [S, R]]` of `H = R + iS`.
///
/// The embedding is PSD iff `H` is, and its spectrum is that of `H` with
/// every multiplicity doubled.
pub fn real_embed_psd(op: &Hermitian) -> DMatrix<f64> {
    let n = op.dim();
    let mut out = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for j in 0..n {
        for i in 0..n {
            let z = op.m[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i + n, j)] = z.im;
            out[(i, j + n)] = -z.im;
        }
    }
    out
}

/// Adjoint of [`real_embed_psd`]: the Hermitian `K` with
/// `⟨X, embed(H)⟩ = Re Tr[K H]` for all Hermitian `H`.
pub fn real_embed_adjoint(x: &DMatrix<f64>) -> Hermitian {
    let n = x.nrows() / 2;
    let m = ComplexMatrix::from_fn(n, n, |i, j| {
        c64(
            x[(i, j)] + x[(i + n, j + n)],
            x[(i + n, j)] - x[(i, j + n)],
        )
    });
    Hermitian::symmetrized(m)
}

/// Kronecker product of two complex matrices.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Pauli matrices `(X, Y, Z)`.
pub fn paulis() -> [Hermitian; 3] {
    let x = ComplexMatrix::from_row_slice(2, 2, &[c64(0., 0.), c64(1., 0.), c64(1., 0.), c64(0., 0.)]);
    let y = ComplexMatrix::from_row_slice(2, 2, &[c64(0., 0.), c64(0., -1.), c64(0., 1.), c64(0., 0.)]);
    let z = ComplexMatrix::from_row_slice(2, 2, &[c64(1., 0.), c64(0., 0.), c64(0., 0.), c64(-1., 0.)]);
    [Hermitian { m: x }, Hermitian { m: y }, Hermitian { m: z }]
}

/// Qubit operator `c·𝟙 + v·σ`.
pub fn bloch_operator(c: f64, v: [f64; 3]) -> Hermitian {
    let [x, y, z] = paulis();
    let mut out = Hermitian::identity(2).scale(c);
    out = &out + &x.scale(v[0]);
    out = &out + &y.scale(v[1]);
    &out + &z.scale(v[2])
}

/// Wire format: row-major real and imaginary parts.
#[derive(Serialize, Deserialize)]
struct HermitianRepr {
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for Hermitian {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.dim();
        let re = (0..n).map(|i| (0..n).map(|j| self.m[(i, j)].re).collect()).collect();
        let im = (0..n).map(|i| (0..n).map(|j| self.m[(i, j)].im).collect()).collect();
        HermitianRepr { re, im }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Hermitian {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = HermitianRepr::deserialize(d)?;
        Hermitian::from_parts(&r.re, &r.im).map_err(serde::de::Error::custom)
    }
}
