//! Dense complex matrices sized for small open-system problems.
//!
//! Storage is row-major. Every operator in the crate (measurement
//! operators, effects, Hamiltonians, density matrices) is a [`CMatrix`]
//! underneath; [`HermitianMatrix`] and [`DensityMatrix`] are validated
//! wrappers. Unitary evolution goes through a one-off Hermitian
//! eigendecomposition held by [`UnitaryPropagator`], so a whole time grid
//! reuses a single diagonalization.

use num_traits::Float;
use alloc::{format, vec, vec::Vec};
use core::ops::{Add, Deref, Index, IndexMut, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest Hilbert-space dimension any dense operation will build.
pub const DEFAULT_MAX_DIM: usize = 4096;

/// Relative anti-Hermitian residual tolerated before symmetrization.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Allowed deviation of a density matrix trace from one.
pub const TRACE_TOL: f64 = 1e-10;
/// Most negative eigenvalue tolerated in a density matrix.
pub const PSD_TOL: f64 = 1e-10;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting wrong lengths and
    /// non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("empty {rows}x{cols} matrix")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Shape("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Row-major real entries.
    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::from_vec(rows, cols, data.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diag(diag: &[C64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let d: Vec<C64> = diag.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::from_diag(&d)
    }

    /// The rank-one operator `|u><v|`.
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Largest entrywise modulus of `self - other`; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    /// Shape-checked product.
    pub fn matmul(&self, rhs: &CMatrix) -> Result<CMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let (n, m, p) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![ZERO; n * p];
        for i in 0..n {
            let row = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let a = self.data[i * m + k];
                if a == ZERO {
                    continue;
                }
                let rk = &rhs.data[k * p..(k + 1) * p];
                for (o, b) in row.iter_mut().zip(rk) {
                    *o += a * b;
                }
            }
        }
        Ok(CMatrix { rows: n, cols: p, data: out })
    }

    /// `u · self · u†`.
    pub fn conjugated_by(&self, u: &CMatrix) -> Result<CMatrix> {
        u.matmul(self)?.matmul(&u.adjoint())
    }

    /// `Tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &CMatrix) -> Result<C64> {
        if self.cols != other.rows || self.rows != other.cols {
            return Err(Error::Shape(format!(
                "trace of {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut acc = ZERO;
        for i in 0..self.rows {
            for k in 0..self.cols {
                acc += self.data[i * self.cols + k] * other.data[k * other.cols + i];
            }
        }
        Ok(acc)
    }

    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.cols {
            return Err(Error::Shape(format!("vector of length {} for {} columns", v.len(), self.cols)));
        }
        Ok((0..self.rows)
            .map(|i| self.data[i * self.cols..(i + 1) * self.cols].iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// True when every off-diagonal entry is exactly zero.
    pub fn is_diagonal(&self) -> bool {
        (0..self.rows).all(|i| (0..self.cols).all(|j| i == j || self[(i, j)] == ZERO))
    }

    fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)])
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    /// Panics on a shape mismatch; use [`CMatrix::matmul`] for a checked product.
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        self.matmul(rhs).expect("matrix product shape mismatch")
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "matrix sum shape mismatch");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "matrix difference shape mismatch");
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Kronecker product capped at [`DEFAULT_MAX_DIM`].
pub fn kron(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    kron_with_cap(a, b, DEFAULT_MAX_DIM)
}

pub fn kron_with_cap(a: &CMatrix, b: &CMatrix, max_dim: usize) -> Result<CMatrix> {
    let rows = a.rows.checked_mul(b.rows).unwrap_or(usize::MAX);
    let cols = a.cols.checked_mul(b.cols).unwrap_or(usize::MAX);
    if rows.max(cols) > max_dim {
        return Err(Error::Capacity { requested: rows.max(cols), max: max_dim });
    }
    let mut out = CMatrix::zeros(rows, cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let s = a[(i, j)];
            if s == ZERO {
                continue;
            }
            for k in 0..b.rows {
                for l in 0..b.cols {
                    out[(i * b.rows + k, j * b.cols + l)] = s * b[(k, l)];
                }
            }
        }
    }
    Ok(out)
}

/// Which factor of a bipartite space survives a partial trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    System,
    Environment,
}

/// Partial trace of an arbitrary operator on `d_s ⊗ d_e` (system index major).
pub fn partial_trace_op(m: &CMatrix, dims: (usize, usize), keep: Subsystem) -> Result<CMatrix> {
    let (ds, de) = dims;
    if !m.is_square() || m.rows != ds * de {
        return Err(Error::Shape(format!(
            "{}x{} operator is not on a {ds}x{de} bipartite space",
            m.rows, m.cols
        )));
    }
    Ok(match keep {
        Subsystem::System => CMatrix::from_fn(ds, ds, |i, j| (0..de).map(|k| m[(i * de + k, j * de + k)]).sum()),
        Subsystem::Environment => {
            CMatrix::from_fn(de, de, |a, b| (0..ds).map(|i| m[(i * de + a, i * de + b)]).sum())
        }
    })
}

/// Reduced state of the kept subsystem.
pub fn partial_trace(rho: &DensityMatrix, dims: (usize, usize), keep: Subsystem) -> Result<DensityMatrix> {
    DensityMatrix::from_trusted(partial_trace_op(rho, dims, keep)?)
}

/// A square matrix equal to its adjoint up to [`HERMITIAN_TOL`], stored
/// exactly symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape(format!("{}x{} matrix is not square", m.rows, m.cols)));
        }
        if !m.is_finite() {
            return Err(Error::Shape("matrix entries must be finite".into()));
        }
        let scale = m.max_abs();
        let asym = m.max_abs_diff(&m.adjoint());
        if asym > HERMITIAN_TOL * scale {
            return Err(Error::Shape(format!("matrix is not Hermitian (residual {asym:.3e})")));
        }
        Ok(Self::symmetrize(m))
    }

    /// `(m + m†)/2` with no tolerance check.
    pub(crate) fn symmetrize(m: CMatrix) -> Self {
        let adj = m.adjoint();
        let sym = CMatrix::from_fn(m.rows, m.cols, |i, j| (m[(i, j)] + adj[(i, j)]) * 0.5);
        Self(sym)
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        Self(CMatrix::from_real_diag(diag))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        eig_hermitian(self).map(|(vals, _)| vals)
    }
}

impl Deref for HermitianMatrix {
    type Target = CMatrix;
    fn deref(&self) -> &CMatrix {
        &self.0
    }
}

/// Eigen-decomposition of a Hermitian matrix with ascending eigenvalues.
///
/// Exactly diagonal inputs are returned without iteration, with `V` a
/// permutation of the identity.
pub fn eig_hermitian(h: &HermitianMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let n = h.dim();
    let (vals, vecs): (Vec<f64>, CMatrix) = if h.is_diagonal() {
        ((0..n).map(|i| h[(i, i)].re).collect(), CMatrix::identity(n))
    } else {
        let eig = SymmetricEigen::try_new(h.to_nalgebra(), f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerics("Hermitian eigensolver did not converge".into()))?;
        let vecs = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, j)]);
        (eig.eigenvalues.iter().copied().collect(), vecs)
    };
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerics("non-finite eigenvalue".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let sorted_vals = order.iter().map(|&k| vals[k]).collect();
    let sorted_vecs = CMatrix::from_fn(n, n, |i, j| vecs[(i, order[j])]);
    Ok((sorted_vals, sorted_vecs))
}

/// Unit-trace positive semidefinite Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(HermitianMatrix);

impl DensityMatrix {
    /// Validates trace and positivity. Negativity below [`PSD_TOL`] is an
    /// error, never clipped.
    pub fn new(m: CMatrix) -> Result<Self> {
        let h = HermitianMatrix::new(m)?;
        check_trace(&h)?;
        if !is_positive_definite_shifted(&h, PSD_TOL) {
            let min = h.eigenvalues()?.first().copied().unwrap_or(0.0);
            return Err(Error::InvalidState(format!("density matrix has eigenvalue {min:.3e}")));
        }
        Ok(Self(h))
    }

    /// Normalizes a positive operator by its trace.
    pub fn from_unnormalized(m: CMatrix) -> Result<Self> {
        let tr = m.trace().re;
        if !(tr > 0.0) {
            return Err(Error::InvalidState(format!("cannot normalize operator with trace {tr:.3e}")));
        }
        Self::new(m.scale(C64::new(1.0 / tr, 0.0)))
    }

    /// For outputs of trace- and positivity-preserving maps: symmetrizes
    /// and checks the trace only.
    pub(crate) fn from_trusted(m: CMatrix) -> Result<Self> {
        let h = HermitianMatrix::symmetrize(m);
        check_trace(&h)?;
        Ok(Self(h))
    }

    /// `|ψ><ψ|` for a nonzero vector, normalized.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let v = normalized(psi)?;
        Self::from_trusted(CMatrix::outer(&v, &v))
    }

    /// `I/d`.
    pub fn maximally_mixed(d: usize) -> Self {
        Self(HermitianMatrix(CMatrix::identity(d).scale(C64::new(1.0 / d as f64, 0.0))))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn purity(&self) -> f64 {
        self.trace_product(self).map(|z| z.re).unwrap_or(f64::NAN)
    }

    pub fn as_hermitian(&self) -> &HermitianMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0.into_inner()
    }
}

impl Deref for DensityMatrix {
    type Target = CMatrix;
    fn deref(&self) -> &CMatrix {
        &self.0
    }
}

/// Cholesky factorization of `h + shift·I`; succeeds iff every pivot stays
/// positive, i.e. the smallest eigenvalue of `h` exceeds `-shift`.
fn is_positive_definite_shifted(h: &HermitianMatrix, shift: f64) -> bool {
    let n = h.dim();
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = h[(j, j)].re + shift;
        for k in 0..j {
            pivot -= l[(j, k)].norm_sqr();
        }
        if !(pivot > 0.0) {
            return false;
        }
        let d = Float::sqrt(pivot);
        l[(j, j)] = C64::new(d, 0.0);
        for i in j + 1..n {
            let mut acc = h[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = acc / d;
        }
    }
    true
}

fn check_trace(h: &HermitianMatrix) -> Result<()> {
    let tr = h.trace().re;
    if (tr - 1.0).abs() > TRACE_TOL {
        return Err(Error::InvalidState(format!("trace {tr} differs from one")));
    }
    Ok(())
}

/// Unit vector along `v`.
pub fn normalized(v: &[C64]) -> Result<Vec<C64>> {
    let norm = Float::sqrt(v.iter().map(|z| z.norm_sqr()).sum::<f64>());
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidState("cannot normalize a zero or non-finite vector".into()));
    }
    Ok(v.iter().map(|z| z / norm).collect())
}

/// `exp(-i H t)` through a cached eigendecomposition of `H`.
#[derive(Debug, Clone)]
pub struct UnitaryPropagator {
    eigenvalues: Vec<f64>,
    eigenvectors: CMatrix,
    eigenvectors_adj: CMatrix,
}

impl UnitaryPropagator {
    pub fn new(generator: &HermitianMatrix) -> Result<Self> {
        let (eigenvalues, eigenvectors) = eig_hermitian(generator)?;
        let eigenvectors_adj = eigenvectors.adjoint();
        let n = eigenvalues.len();
        let residual = (&eigenvectors * &eigenvectors_adj).max_abs_diff(&CMatrix::identity(n));
        if residual > 1e-10 {
            return Err(Error::Numerics(format!("eigenbasis is not unitary (residual {residual:.3e})")));
        }
        Ok(Self { eigenvalues, eigenvectors, eigenvectors_adj })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    /// `U(t) = V diag(e^{-iλt}) V†`. `t` may be any real number, so the same
    /// decomposition also serves stochastic phases `Φ` in place of time.
    pub fn unitary(&self, t: f64) -> CMatrix {
        if t == 0.0 {
            return CMatrix::identity(self.dim());
        }
        let n = self.dim();
        let phases: Vec<C64> = self.eigenvalues.iter().map(|&l| C64::from_polar(1.0, -l * t)).collect();
        let scaled = CMatrix::from_fn(n, n, |i, j| self.eigenvectors[(i, j)] * phases[j]);
        &scaled * &self.eigenvectors_adj
    }

    /// `U(t) ρ U†(t)` for an arbitrary operator.
    pub fn evolve_op(&self, t: f64, op: &CMatrix) -> Result<CMatrix> {
        if op.rows() != self.dim() || !op.is_square() {
            return Err(Error::Shape(format!("{}x{} operator for a {}-level propagator", op.rows(), op.cols(), self.dim())));
        }
        if t == 0.0 {
            return Ok(op.clone());
        }
        op.conjugated_by(&self.unitary(t))
    }

    /// Heisenberg picture `U†(t) A U(t)`.
    pub fn heisenberg(&self, t: f64, op: &CMatrix) -> Result<CMatrix> {
        self.evolve_op(-t, op)
    }
}

/// `ρ(t) = U(t) ρ U†(t)`.
pub fn evolve(u: &UnitaryPropagator, t: f64, rho: &DensityMatrix) -> Result<DensityMatrix> {
    DensityMatrix::from_trusted(u.evolve_op(t, rho)?)
}

/// Pauli matrices and the `x̂`-basis states used throughout the qubit models.
///
/// Basis ordering is `(|+>, |->)`, the eigenvectors of `σ_z` with
/// eigenvalues `+1` and `-1`.
pub mod pauli {
    use super::{CMatrix, C64};
    use alloc::{vec, vec::Vec};
    use core::f64::consts::FRAC_1_SQRT_2;

    pub fn sigma_x() -> CMatrix {
        CMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]).expect("static shape")
    }

    pub fn sigma_y() -> CMatrix {
        let i = C64::new(0.0, 1.0);
        CMatrix::from_vec(2, 2, vec![C64::new(0.0, 0.0), -i, i, C64::new(0.0, 0.0)]).expect("static shape")
    }

    pub fn sigma_z() -> CMatrix {
        CMatrix::from_real_diag(&[1.0, -1.0])
    }

    /// `(|+> ± |->)/√2`.
    pub fn x_state(sign: i32) -> Vec<C64> {
        let s = if sign >= 0 { 1.0 } else { -1.0 };
        vec![C64::new(FRAC_1_SQRT_2, 0.0), C64::new(s * FRAC_1_SQRT_2, 0.0)]
    }

    /// `(|+> ± i|->)/√2`.
    pub fn y_state(sign: i32) -> Vec<C64> {
        let s = if sign >= 0 { 1.0 } else { -1.0 };
        vec![C64::new(FRAC_1_SQRT_2, 0.0), C64::new(0.0, s * FRAC_1_SQRT_2)]
    }

    /// `|+>` or `|->`.
    pub fn z_state(sign: i32) -> Vec<C64> {
        if sign >= 0 {
            vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
        } else {
            vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::pauli::*;
    use super::*;
    use alloc::vec;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn kron_identities() {
        let i2 = CMatrix::identity(2);
        assert_eq!(kron(&i2, &i2).unwrap(), CMatrix::identity(4));
        assert_eq!(kron(&sigma_z(), &i2).unwrap(), CMatrix::from_real_diag(&[1.0, 1.0, -1.0, -1.0]));
    }

    #[test]
    fn kron_shape_and_capacity() {
        let a = CMatrix::from_fn(2, 3, |i, j| c((i + j) as f64, 0.0));
        let b = CMatrix::from_fn(5, 7, |i, j| c(i as f64, j as f64));
        let k = kron(&a, &b).unwrap();
        assert_eq!((k.rows(), k.cols()), (10, 21));
        assert_eq!(k[(5 + 2, 7 * 2 + 3)], a[(1, 2)] * b[(2, 3)]);

        let big = CMatrix::identity(64);
        assert!(matches!(kron(&big, &CMatrix::identity(65)), Err(Error::Capacity { requested: 4160, max: 4096 })));
        assert!(kron_with_cap(&sigma_x(), &sigma_x(), 4).is_ok());
        assert!(matches!(kron_with_cap(&sigma_x(), &sigma_x(), 3), Err(Error::Capacity { .. })));
    }

    #[test]
    fn kron_associative_on_integer_entries() {
        let a = CMatrix::from_fn(2, 2, |i, j| c((i * 2 + j) as f64, 1.0));
        let b = CMatrix::from_fn(2, 3, |i, j| c(i as f64 - j as f64, 2.0));
        let d = CMatrix::from_fn(3, 2, |i, j| c(1.0, (i * j) as f64));
        let left = kron(&kron(&a, &b).unwrap(), &d).unwrap();
        let right = kron(&a, &kron(&b, &d).unwrap()).unwrap();
        assert_eq!(left, right);
    }

    #[test]
    fn partial_trace_of_product_and_bell_states() {
        let rho = DensityMatrix::pure(&[c(0.6, 0.0), c(0.0, 0.8)]).unwrap();
        let sigma = DensityMatrix::new(CMatrix::from_vec(2, 2, vec![c(0.7, 0.0), c(0.1, -0.2), c(0.1, 0.2), c(0.3, 0.0)]).unwrap()).unwrap();
        let joint = DensityMatrix::new(kron(&rho, &sigma).unwrap()).unwrap();
        let rs = partial_trace(&joint, (2, 2), Subsystem::System).unwrap();
        let re = partial_trace(&joint, (2, 2), Subsystem::Environment).unwrap();
        assert!(rs.max_abs_diff(&rho) <= 1e-12);
        assert!(re.max_abs_diff(&sigma) <= 1e-12);

        let h = core::f64::consts::FRAC_1_SQRT_2;
        let bell = DensityMatrix::pure(&[c(h, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(h, 0.0)]).unwrap();
        let reduced = partial_trace(&bell, (2, 2), Subsystem::Environment).unwrap();
        assert!(reduced.max_abs_diff(&DensityMatrix::maximally_mixed(2)) <= 1e-15);
    }

    #[test]
    fn partial_trace_rejects_wrong_dims() {
        let rho = DensityMatrix::maximally_mixed(4);
        assert!(matches!(partial_trace(&rho, (2, 3), Subsystem::System), Err(Error::Shape(_))));
    }

    #[test]
    fn eig_of_pauli_x_and_diagonal() {
        let (vals, vecs) = eig_hermitian(&HermitianMatrix::new(sigma_x()).unwrap()).unwrap();
        assert!((vals[0] + 1.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
        let h = sigma_x();
        let res = (&h * &vecs).max_abs_diff(&(&vecs * &CMatrix::from_real_diag(&vals)));
        assert!(res < 1e-14);

        let d = HermitianMatrix::from_real_diag(&[3.0, -1.0, 2.0]);
        let (vals, vecs) = eig_hermitian(&d).unwrap();
        assert_eq!(vals, vec![-1.0, 2.0, 3.0]);
        for j in 0..3 {
            let col = vecs.column(j);
            assert_eq!(col.iter().filter(|z| **z == c(1.0, 0.0)).count(), 1);
            assert_eq!(col.iter().filter(|z| **z == c(0.0, 0.0)).count(), 2);
        }
    }

    #[test]
    fn hermitian_construction() {
        let bad = CMatrix::from_vec(2, 2, vec![c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert!(HermitianMatrix::new(bad).is_err());
        assert!(HermitianMatrix::new(CMatrix::zeros(2, 3)).is_err());
        let almost = CMatrix::from_vec(2, 2, vec![c(1.0, 0.0), c(0.5, 1e-14), c(0.5, 0.0), c(1.0, 0.0)]).unwrap();
        let h = HermitianMatrix::new(almost).unwrap();
        assert_eq!(h[(0, 1)], h[(1, 0)].conj());
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(CMatrix::from_real_diag(&[0.5, 0.6])).is_err());
        assert!(DensityMatrix::new(CMatrix::from_real_diag(&[1.1, -0.1])).is_err());
        assert!(DensityMatrix::new(CMatrix::from_real_diag(&[1.0 + 5e-11, -5e-11])).is_ok());
        assert!(DensityMatrix::new(CMatrix::from_real_diag(&[1.0, 0.0])).is_ok());
    }

    #[test]
    fn evolve_cases() {
        let h = HermitianMatrix::new(sigma_z()).unwrap();
        let u = UnitaryPropagator::new(&h).unwrap();
        assert_eq!(u.unitary(0.0), CMatrix::identity(2));

        let rho = DensityMatrix::pure(&x_state(1)).unwrap();
        assert_eq!(evolve(&u, 0.0, &rho).unwrap(), rho);

        let g = 0.7;
        let t = 1.3;
        let hg = HermitianMatrix::new(sigma_z().scale(c(g, 0.0))).unwrap();
        let ug = UnitaryPropagator::new(&hg).unwrap();
        let out = evolve(&ug, t, &rho).unwrap();
        // <+|ρ(t)|-> = e^{-igt} (1/2) e^{-igt}
        let expected = C64::from_polar(0.5, -2.0 * g * t);
        assert!((out[(0, 1)] - expected).norm() < 1e-14);

        let commuting = DensityMatrix::new(CMatrix::from_real_diag(&[0.3, 0.7])).unwrap();
        for &t in &[0.1, 1.0, 17.0] {
            assert!(evolve(&ug, t, &commuting).unwrap().max_abs_diff(&commuting) < 1e-15);
        }
    }
}
