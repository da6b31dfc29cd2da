//! Sparse storage, direct factorizations and a smallest generalized singular
//! value estimator.
//!
//! Matrices are kept in row-compressed form. Factorizations are delegated to
//! `faer`: a supernodal LU with partial pivoting for general systems, and an
//! intranodal Bunch-Kaufman `LBL^T` of the real-equivalent form for complex
//! symmetric (`A^T = A`) systems, which is where the large fine-scale solves
//! and the saddle-point corrector problems live.

use std::ops::{Add, Mul};

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::solvers::SolveCore;
use faer::perm::PermRef;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, IntranodeLbltRef, SymbolicCholesky,
    SymmetricOrdering,
};
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::linalg::{amd, SupernodalThreshold};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{Conj, Mat, Par, Side, Spec};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is singular (pivot {pivot})")]
    Singular { pivot: usize },
    #[error("solve produced non-finite values or residual {residual:.3e} above tolerance")]
    Inaccurate { residual: f64 },
    #[error("inverse iteration did not converge after {iterations} iterations (last Rayleigh quotient {rayleigh:.6e})")]
    NoConvergence { iterations: usize, rayleigh: f64 },
    #[error("factorization backend failed: {0}")]
    Backend(String),
}

/// Scalars stored in [`CsrMatrix`].
pub trait Scalar:
    Copy + Send + Sync + Default + PartialEq + Add<Output = Self> + Mul<Output = Self> + std::fmt::Debug
{
    fn conj(self) -> Self;
    fn abs(self) -> f64;
    fn from_real(x: f64) -> Self;
    fn to_complex(self) -> C64;
}

impl Scalar for f64 {
    fn conj(self) -> Self {
        self
    }
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn to_complex(self) -> C64 {
        C64::new(self, 0.0)
    }
}

impl Scalar for C64 {
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn abs(self) -> f64 {
        self.norm()
    }
    fn from_real(x: f64) -> Self {
        C64::new(x, 0.0)
    }
    fn to_complex(self) -> C64 {
        self
    }
}

/// Row-compressed sparse matrix with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

pub type SparseComplexMatrix = CsrMatrix<C64>;

impl<T: Scalar> CsrMatrix<T> {
    /// Builds from raw parts; panics if the invariants do not hold.
    pub fn from_parts(
        nrows: usize,
        ncols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<T>,
    ) -> Self {
        assert_eq!(row_ptr.len(), nrows + 1);
        assert_eq!(col_idx.len(), values.len());
        assert_eq!(row_ptr[nrows], col_idx.len());
        for r in 0..nrows {
            let cols = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            assert!(cols.windows(2).all(|w| w[0] < w[1]), "row {r} not sorted");
            assert!(cols.iter().all(|&c| c < ncols));
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: vec![], values: vec![] }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![T::from_real(1.0); n],
        }
    }

    /// Sums duplicates in input order, so the result is independent of how
    /// the triplets were produced as long as their order is fixed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&i| (triplets[i].0, triplets[i].1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &i in &order {
            let (r, c, v) = triplets[i];
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                let n = values.len();
                values[n - 1] = values[n - 1] + v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn from_dense(rows: &[Vec<T>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut trip = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v != T::default() {
                    trip.push((r, c, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &trip)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn ncols(&self) -> usize {
        self.ncols
    }
    pub fn nnz(&self) -> usize {
        self.values.len()
    }
    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }
    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }
    pub fn values(&self) -> &[T] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let s = self.row_ptr[r];
        let e = self.row_ptr[r + 1];
        (&self.col_idx[s..e], &self.values[s..e])
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(p) => vals[p],
            Err(_) => T::default(),
        }
    }

    /// Position of `(r, c)` in the value array.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let (cols, _) = self.row(r);
        cols.binary_search(&c).ok().map(|p| self.row_ptr[r] + p)
    }

    pub fn mul_vec<S: Scalar>(&self, x: &[S]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| {
                let (cols, vals) = self.row(r);
                cols.iter()
                    .zip(vals)
                    .fold(C64::default(), |acc, (&c, &v)| acc + v.to_complex() * x[c].to_complex())
            })
            .collect()
    }

    /// `A^H x`.
    pub fn mul_adjoint_vec<S: Scalar>(&self, x: &[S]) -> Vec<C64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![C64::default(); self.ncols];
        for (r, xr) in x.iter().enumerate() {
            let xr = xr.to_complex();
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v.to_complex().conj() * xr;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.ncols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![T::default(); self.nnz()];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let p = next[c];
                col_idx[p] = r;
                values[p] = v;
                next[c] += 1;
            }
        }
        Self { nrows: self.ncols, ncols: self.nrows, row_ptr: counts, col_idx, values }
    }

    pub fn adjoint(&self) -> Self {
        let mut t = self.transpose();
        for v in &mut t.values {
            *v = v.conj();
        }
        t
    }

    /// Sparse product `self * other`.
    pub fn matmul<S: Scalar>(&self, other: &CsrMatrix<S>) -> CsrMatrix<C64> {
        assert_eq!(self.ncols, other.nrows);
        let mut acc = vec![C64::default(); other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut touched = Vec::new();
        for r in 0..self.nrows {
            touched.clear();
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (ocols, ovals) = other.row(k);
                for (&c, &b) in ocols.iter().zip(ovals) {
                    if mark[c] != r {
                        mark[c] = r;
                        acc[c] = C64::default();
                        touched.push(c);
                    }
                    acc[c] += a.to_complex() * b.to_complex();
                }
            }
            touched.sort_unstable();
            for &c in &touched {
                col_idx.push(c);
                values.push(acc[c]);
            }
            row_ptr[r + 1] = col_idx.len();
        }
        CsrMatrix { nrows: self.nrows, ncols: other.ncols, row_ptr, col_idx, values }
    }

    /// Submatrix on sorted index lists `rows` x `cols`.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for &r in rows {
            let (rc, rv) = self.row(r);
            for (&c, &v) in rc.iter().zip(rv) {
                if let Ok(p) = cols.binary_search(&c) {
                    col_idx.push(p);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { nrows: rows.len(), ncols: cols.len(), row_ptr, col_idx, values }
    }

    pub fn to_complex(&self) -> CsrMatrix<C64> {
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|v| v.to_complex()).collect(),
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::default(); self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c] = v;
            }
        }
        d
    }

    /// Writes the matrix in 0-based coordinate text format (`row col re im`).
    pub fn write_coordinate<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let z = v.to_complex();
                writeln!(w, "{r} {c} {:.17e} {:.17e}", z.re, z.im)?;
            }
        }
        Ok(())
    }
}

impl CsrMatrix<C64> {
    /// Entrywise `self + alpha * other` on the union pattern.
    pub fn add_scaled<S: Scalar>(&self, alpha: C64, other: &CsrMatrix<S>) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(col_idx.capacity());
        for r in 0..self.nrows {
            let (ac, av) = self.row(r);
            let (bc, bv) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ac.len() || j < bc.len() {
                if j == bc.len() || (i < ac.len() && ac[i] < bc[j]) {
                    col_idx.push(ac[i]);
                    values.push(av[i]);
                    i += 1;
                } else if i == ac.len() || bc[j] < ac[i] {
                    col_idx.push(bc[j]);
                    values.push(alpha * bv[j].to_complex());
                    j += 1;
                } else {
                    col_idx.push(ac[i]);
                    values.push(av[i] + alpha * bv[j].to_complex());
                    i += 1;
                    j += 1;
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        Self { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values }
    }

    /// Largest entrywise deviation from complex symmetry, relative to the
    /// largest entry.
    pub fn symmetry_defect(&self) -> f64 {
        let t = self.transpose();
        let scale = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let d = self.add_scaled(C64::new(-1.0, 0.0), &t);
        d.values.iter().map(|v| v.norm()).fold(0.0, f64::max) / scale
    }
}

/// Sparse vector with sorted unique indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<C64>,
}

impl SparseVector {
    pub fn new(indices: Vec<usize>, values: Vec<C64>) -> Self {
        assert_eq!(indices.len(), values.len());
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self { indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// `self + alpha * other` on the union of supports.
    pub fn add_scaled(&self, alpha: C64, other: &SparseVector) -> SparseVector {
        let (a, b) = (self, other);
        let mut indices = Vec::with_capacity(a.nnz() + b.nnz());
        let mut values = Vec::with_capacity(a.nnz() + b.nnz());
        let (mut i, mut j) = (0, 0);
        while i < a.nnz() || j < b.nnz() {
            if j == b.nnz() || (i < a.nnz() && a.indices[i] < b.indices[j]) {
                indices.push(a.indices[i]);
                values.push(a.values[i]);
                i += 1;
            } else if i == a.nnz() || b.indices[j] < a.indices[i] {
                indices.push(b.indices[j]);
                values.push(alpha * b.values[j]);
                j += 1;
            } else {
                indices.push(a.indices[i]);
                values.push(a.values[i] + alpha * b.values[j]);
                i += 1;
                j += 1;
            }
        }
        SparseVector { indices, values }
    }

    /// `self^H y` for a dense `y`.
    pub fn dot_dense(&self, y: &[C64]) -> C64 {
        self.indices.iter().zip(&self.values).map(|(&i, v)| v.conj() * y[i]).sum()
    }

    pub fn to_dense(&self, n: usize) -> Vec<C64> {
        let mut out = vec![C64::default(); n];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }

    /// `x^H A x` using a zeroed scratch vector of length `A.ncols()`, which is
    /// left zeroed on return.
    pub fn quadratic_form(&self, a: &SparseComplexMatrix, scratch: &mut [C64]) -> C64 {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            scratch[i] = v;
        }
        let mut acc = C64::default();
        for (&r, &xr) in self.indices.iter().zip(&self.values) {
            let (cols, vals) = a.row(r);
            let ax: C64 = cols.iter().zip(vals).map(|(&c, &v)| v * scratch[c]).sum();
            acc += xr.conj() * ax;
        }
        for &i in &self.indices {
            scratch[i] = C64::default();
        }
        acc
    }
}

/// Conjugated dot product `x^H y`.
pub fn dot_c(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm2(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

enum Backend {
    Lu(Box<Lu<usize, C64>>),
    Symmetric(Box<SymmetricFactor>),
}

struct SymmetricFactor {
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
    subdiag: Vec<f64>,
    perm_fwd: Vec<usize>,
    perm_inv: Vec<usize>,
}

impl SymmetricFactor {
    /// Solves the real-equivalent system for `A x = b` with `A` complex
    /// symmetric: `[[Ar, Ai], [Ai, -Ar]] [xr; -xi] = [br; bi]`, unknowns
    /// interleaved per complex entry.
    fn solve(&self, rhs: &mut [C64], ncols: usize) {
        let n = rhs.len() / ncols.max(1);
        let mut x = Mat::<f64>::zeros(2 * n, ncols);
        for j in 0..ncols {
            for i in 0..n {
                let b = rhs[j * n + i];
                x[(2 * i, j)] = b.re;
                x[(2 * i + 1, j)] = b.im;
            }
        }
        let perm = PermRef::new_checked(&self.perm_fwd, &self.perm_inv, 2 * n);
        let lblt = IntranodeLbltRef::new(&self.symbolic, &self.values, &self.subdiag, perm);
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(ncols, Par::Seq));
        lblt.solve_in_place_with_conj(Conj::No, x.as_mut(), Par::Seq, MemStack::new(&mut mem));
        for j in 0..ncols {
            for i in 0..n {
                rhs[j * n + i] = C64::new(x[(2 * i, j)], -x[(2 * i + 1, j)]);
            }
        }
    }
}

/// A factorized square matrix supporting solves with `A` and `A^H`.
///
/// Every solve performs one step of iterative refinement against the stored
/// matrix and rejects results whose relative residual exceeds `1e-8`.
pub struct Factorization {
    matrix: SparseComplexMatrix,
    backend: Backend,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.backend {
            Backend::Lu(_) => "lu",
            Backend::Symmetric(_) => "symmetric-indefinite",
        };
        f.debug_struct("Factorization").field("n", &self.matrix.nrows).field("kind", &kind).finish()
    }
}

const ACCEPT_RESIDUAL: f64 = 1e-8;

fn faer_transpose_view(a: &SparseComplexMatrix) -> SparseColMat<usize, C64> {
    // CSR arrays of A are the CSC arrays of A^T.
    let sym = SymbolicSparseColMat::new_checked(
        a.ncols,
        a.nrows,
        a.row_ptr.clone(),
        None,
        a.col_idx.clone(),
    );
    SparseColMat::new(sym, a.values.clone())
}

/// General sparse LU with partial pivoting.
pub fn factorize(a: &SparseComplexMatrix) -> Result<Factorization, LinalgError> {
    if a.nrows != a.ncols {
        return Err(LinalgError::NotSquare(a.nrows, a.ncols));
    }
    faer::set_global_parallelism(Par::Seq);
    if a.nrows == 0 {
        return Ok(Factorization { matrix: a.clone(), backend: Backend::Lu(Box::new(empty_lu())) });
    }
    let at = faer_transpose_view(a);
    let lu = at.sp_lu().map_err(|e| match e {
        faer::sparse::linalg::LuError::SymbolicSingular { index } => LinalgError::Singular { pivot: index },
        other => LinalgError::Backend(format!("{other:?}")),
    })?;
    Ok(Factorization { matrix: a.clone(), backend: Backend::Lu(Box::new(lu)) })
}

fn empty_lu() -> Lu<usize, C64> {
    let one = SparseColMat::<usize, C64>::try_new_from_triplets(
        1,
        1,
        &[faer::sparse::Triplet::new(0, 0, C64::new(1.0, 0.0))],
    )
    .expect("1x1");
    one.sp_lu().expect("1x1 lu")
}

/// Factorization of a complex symmetric matrix (`A^T = A`, not Hermitian).
///
/// The last `trailing` unknowns are eliminated last; saddle-point systems
/// pass their multiplier count here so that the zero block is only reached
/// once its Schur complement has been formed.
pub fn factorize_symmetric(
    a: &SparseComplexMatrix,
    trailing: usize,
) -> Result<Factorization, LinalgError> {
    let n = a.nrows;
    if n != a.ncols {
        return Err(LinalgError::NotSquare(n, a.ncols));
    }
    assert!(trailing <= n);
    faer::set_global_parallelism(Par::Seq);
    if n == 0 {
        return Ok(Factorization { matrix: a.clone(), backend: Backend::Lu(Box::new(empty_lu())) });
    }
    // Lower triangle of the real-equivalent matrix, column-compressed.
    let mut col_ptr = vec![0usize; 2 * n + 1];
    let mut row_idx = Vec::with_capacity(4 * a.nnz());
    let mut vals = Vec::with_capacity(4 * a.nnz());
    // Row r of the CSR lower part equals column r of the upper part; since A is
    // symmetric we read column c of lower(A) as row c of A restricted to r >= c.
    for c in 0..n {
        let (cols, v) = a.row(c);
        let start = cols.partition_point(|&r| r < c);
        // real column 2c: rows (2r, 2r+1) -> (ar, ai)
        for (&r, &z) in cols[start..].iter().zip(&v[start..]) {
            row_idx.push(2 * r);
            vals.push(z.re);
            row_idx.push(2 * r + 1);
            vals.push(z.im);
        }
        col_ptr[2 * c + 1] = row_idx.len();
        // real column 2c+1: rows (2r, 2r+1) -> (ai, -ar), skipping the upper
        // entry (2c, 2c+1).
        for (&r, &z) in cols[start..].iter().zip(&v[start..]) {
            if r != c {
                row_idx.push(2 * r);
                vals.push(z.im);
            }
            row_idx.push(2 * r + 1);
            vals.push(-z.re);
        }
        col_ptr[2 * c + 2] = row_idx.len();
    }
    let sym = SymbolicSparseColMat::new_checked(2 * n, 2 * n, col_ptr, None, row_idx);
    let real = SparseColMat::new(sym, vals);

    let ordering = symmetric_ordering(a, trailing)?;
    let mut fwd = vec![0usize; 2 * n];
    let mut inv = vec![0usize; 2 * n];
    for (p, &v) in ordering.iter().enumerate() {
        fwd[2 * p] = 2 * v;
        fwd[2 * p + 1] = 2 * v + 1;
        inv[2 * v] = 2 * p;
        inv[2 * v + 1] = 2 * p + 1;
    }
    let perm = PermRef::new_checked(&fwd, &inv, 2 * n);
    let params = CholeskySymbolicParams {
        supernodal_flop_ratio_threshold: SupernodalThreshold::FORCE_SUPERNODAL,
        ..Default::default()
    };
    let symbolic =
        factorize_symbolic_cholesky(real.symbolic(), Side::Lower, SymmetricOrdering::Custom(perm), params)
            .map_err(|e| LinalgError::Backend(format!("{e:?}")))?;
    let mut values = vec![0.0f64; symbolic.len_val()];
    let mut subdiag = vec![0.0f64; 2 * n];
    let mut perm_fwd = vec![0usize; 2 * n];
    let mut perm_inv = vec![0usize; 2 * n];
    {
        let mut mem = MemBuffer::new(
            symbolic.factorize_numeric_intranode_lblt_scratch::<f64>(Par::Seq, Spec::default()),
        );
        symbolic.factorize_numeric_intranode_lblt(
            &mut values,
            &mut subdiag,
            &mut perm_fwd,
            &mut perm_inv,
            real.as_ref(),
            Side::Lower,
            Par::Seq,
            MemStack::new(&mut mem),
            Spec::default(),
        );
    }
    drop(real);
    if let Some(p) = values.iter().position(|v| !v.is_finite()) {
        return Err(LinalgError::Singular { pivot: p });
    }
    Ok(Factorization {
        matrix: a.clone(),
        backend: Backend::Symmetric(Box::new(SymmetricFactor {
            symbolic,
            values,
            subdiag,
            perm_fwd,
            perm_inv,
        })),
    })
}

/// AMD on the leading block, trailing unknowns appended in their given order.
fn symmetric_ordering(a: &SparseComplexMatrix, trailing: usize) -> Result<Vec<usize>, LinalgError> {
    let n = a.nrows;
    let lead = n - trailing;
    let mut col_ptr = vec![0usize; lead + 1];
    let mut row_idx = Vec::with_capacity(a.nnz());
    for r in 0..lead {
        let (cols, _) = a.row(r);
        row_idx.extend(cols.iter().copied().filter(|&c| c < lead && c != r));
        col_ptr[r + 1] = row_idx.len();
    }
    let mut order: Vec<usize> = vec![0; lead];
    if lead > 0 {
        let nnz = row_idx.len();
        let sym = SymbolicSparseColMat::new_checked(lead, lead, col_ptr, None, row_idx);
        let mut inv = vec![0usize; lead];
        let mut mem = MemBuffer::new(amd::order_scratch::<usize>(lead, nnz));
        amd::order(&mut order, &mut inv, sym.as_ref(), amd::Control::default(), MemStack::new(&mut mem))
            .map_err(|e| LinalgError::Backend(format!("{e:?}")))?;
    }
    order.extend(lead..n);
    Ok(order)
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.matrix.nrows
    }

    pub fn matrix(&self) -> &SparseComplexMatrix {
        &self.matrix
    }

    /// Raw backend solve of `A x = b` for column-major `rhs` (n x ncols).
    fn raw_solve(&self, rhs: &mut [C64], ncols: usize, adjoint: bool) {
        let n = self.dim();
        match &self.backend {
            Backend::Lu(lu) => {
                let mut m = mat_from(rhs, n, ncols);
                // backend holds LU of A^T.
                if adjoint {
                    lu.solve_in_place_with_conj(Conj::Yes, m.as_mut());
                } else {
                    lu.solve_transpose_in_place_with_conj(Conj::No, m.as_mut());
                }
                mat_into(&m, rhs);
            }
            Backend::Symmetric(f) => {
                if adjoint {
                    // A^H = conj(A) for complex symmetric A.
                    rhs.iter_mut().for_each(|v| *v = v.conj());
                    f.solve(rhs, ncols);
                    rhs.iter_mut().for_each(|v| *v = v.conj());
                } else {
                    f.solve(rhs, ncols);
                }
            }
        }
    }

    fn refined_solve(&self, b: &[C64], ncols: usize, adjoint: bool) -> Result<Vec<C64>, LinalgError> {
        let n = self.dim();
        if b.len() != n * ncols {
            return Err(LinalgError::DimensionMismatch { expected: n * ncols, got: b.len() });
        }
        if n == 0 {
            return Ok(vec![]);
        }
        let mut x = b.to_vec();
        self.raw_solve(&mut x, ncols, adjoint);
        let mut r = self.residuals(&x, b, ncols, adjoint);
        self.raw_solve(&mut r, ncols, adjoint);
        for (xi, ri) in x.iter_mut().zip(&r) {
            *xi += ri;
        }
        let res = self.residuals(&x, b, ncols, adjoint);
        let mut worst = 0.0f64;
        for j in 0..ncols {
            let bn = norm2(&b[j * n..(j + 1) * n]);
            let rn = norm2(&res[j * n..(j + 1) * n]);
            let rel = if bn > 0.0 { rn / bn } else { rn };
            if !rel.is_finite() {
                worst = f64::INFINITY;
            } else {
                worst = worst.max(rel);
            }
        }
        if !(worst <= ACCEPT_RESIDUAL) {
            return Err(LinalgError::Inaccurate { residual: worst });
        }
        Ok(x)
    }

    fn residuals(&self, x: &[C64], b: &[C64], ncols: usize, adjoint: bool) -> Vec<C64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * ncols);
        for j in 0..ncols {
            let xj = &x[j * n..(j + 1) * n];
            let ax = if adjoint { self.matrix.mul_adjoint_vec(xj) } else { self.matrix.mul_vec(xj) };
            out.extend(b[j * n..(j + 1) * n].iter().zip(ax).map(|(bi, ai)| bi - ai));
        }
        out
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[C64]) -> Result<Vec<C64>, LinalgError> {
        self.refined_solve(b, 1, false)
    }

    /// Solves `A X = B` for column-major `B` with `ncols` columns.
    pub fn solve_many(&self, b: &[C64], ncols: usize) -> Result<Vec<C64>, LinalgError> {
        self.refined_solve(b, ncols, false)
    }

    /// Solves `A^H x = b`.
    pub fn solve_adjoint(&self, b: &[C64]) -> Result<Vec<C64>, LinalgError> {
        self.refined_solve(b, 1, true)
    }

    pub fn solve_adjoint_many(&self, b: &[C64], ncols: usize) -> Result<Vec<C64>, LinalgError> {
        self.refined_solve(b, ncols, true)
    }
}

fn mat_from(data: &[C64], n: usize, ncols: usize) -> Mat<C64> {
    Mat::from_fn(n, ncols, |i, j| data[j * n + i])
}

fn mat_into(m: &Mat<C64>, out: &mut [C64]) {
    let n = m.nrows();
    for j in 0..m.ncols() {
        for i in 0..n {
            out[j * n + i] = m[(i, j)];
        }
    }
}

/// Outcome of [`min_generalized_singular`].
#[derive(Clone, Copy, Debug)]
pub struct SingularEstimate {
    pub sigma_min: f64,
    pub iterations: usize,
    pub rayleigh: f64,
}

pub const LANCZOS_MAX_STEPS: usize = 400;
pub const LANCZOS_TOL: f64 = 1e-10;

/// Smallest singular value of `N^{-1/2} A N^{-1/2}`, i.e. the discrete
/// inf-sup constant `inf_x sup_y |y^H A x| / (|x|_N |y|_N)`.
///
/// Lanczos with full reorthogonalisation in the `N` inner product on
/// `B = A^{-1} N A^{-H} N`, whose largest eigenvalue is `sigma_min^{-2}`.
pub fn min_generalized_singular(
    a: &SparseComplexMatrix,
    n: &SparseComplexMatrix,
) -> Result<SingularEstimate, LinalgError> {
    let fa = factorize(a)?;
    min_generalized_singular_factored(a, &fa, n)
}

/// As [`min_generalized_singular`] with a caller-provided factorization of `A`.
pub fn min_generalized_singular_factored(
    a: &SparseComplexMatrix,
    fa: &Factorization,
    n: &SparseComplexMatrix,
) -> Result<SingularEstimate, LinalgError> {
    let dim = a.nrows();
    if dim != a.ncols() {
        return Err(LinalgError::NotSquare(dim, a.ncols()));
    }
    if n.nrows() != dim || fa.dim() != dim {
        return Err(LinalgError::DimensionMismatch { expected: dim, got: n.nrows() });
    }
    let inner = |x: &[C64], nx: &[C64]| dot_c(x, nx);
    // generic start: no symmetry of the mesh leaves it invariant
    let mut q: Vec<C64> = (0..dim)
        .map(|i| C64::new((1.0 + i as f64 * 0.618_033_988_75).sin(), (2.0 + i as f64 * 0.414_213_562_37).cos()))
        .collect();
    let mut nq = n.mul_vec(&q);
    let s = inner(&q, &nq).re.sqrt();
    q.iter_mut().for_each(|v| *v /= s);
    nq.iter_mut().for_each(|v| *v /= s);

    let mut basis: Vec<Vec<C64>> = Vec::new();
    let mut nbasis: Vec<Vec<C64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut theta = 0.0;
    let steps = LANCZOS_MAX_STEPS.min(dim);
    for step in 1..=steps {
        let z = fa.solve_adjoint(&nq)?;
        let nz = n.mul_vec(&z);
        let mut w = fa.solve(&nz)?;
        basis.push(q);
        nbasis.push(nq);
        let j = basis.len() - 1;
        let mut nw = n.mul_vec(&w);
        alpha.push(inner(&basis[j], &nw).re);
        // two passes of Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for (b, nb) in basis.iter().zip(&nbasis) {
                let c = inner(nb, &w);
                if c != C64::new(0.0, 0.0) {
                    for ((wi, bi), (nwi, nbi)) in w.iter_mut().zip(b).zip(nw.iter_mut().zip(nb)) {
                        *wi -= c * bi;
                        *nwi -= c * nbi;
                    }
                }
            }
        }
        let b_next = inner(&w, &nw).re.max(0.0).sqrt();
        let (top, last) = tridiagonal_top(&alpha, &beta)?;
        theta = top;
        let converged = b_next * last.abs() <= LANCZOS_TOL * theta || b_next <= LANCZOS_TOL * theta || step == dim;
        if converged {
            return Ok(SingularEstimate { sigma_min: 1.0 / theta.sqrt(), iterations: step, rayleigh: 1.0 / theta });
        }
        beta.push(b_next);
        w.iter_mut().for_each(|v| *v /= b_next);
        nw.iter_mut().for_each(|v| *v /= b_next);
        q = w;
        nq = nw;
    }
    Err(LinalgError::NoConvergence { iterations: steps, rayleigh: 1.0 / theta })
}

/// Largest eigenvalue of the symmetric tridiagonal `(alpha, beta)` and the last
/// component of its unit eigenvector.
fn tridiagonal_top(alpha: &[f64], beta: &[f64]) -> Result<(f64, f64), LinalgError> {
    let m = alpha.len();
    let t = Mat::<f64>::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    let evd = t.self_adjoint_eigen(Side::Lower).map_err(|e| LinalgError::Backend(format!("{e:?}")))?;
    let top = evd.S().column_vector()[m - 1];
    Ok((top, evd.U()[(m - 1, m - 1)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let a = SparseComplexMatrix::identity(5);
        let b: Vec<C64> = (0..5).map(|i| c(i as f64, -1.0)).collect();
        let f = factorize(&a).unwrap();
        let x = f.solve(&b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn diagonal_two_by_two() {
        let a = SparseComplexMatrix::from_triplets(2, 2, &[(0, 0, c(2.0, 0.0)), (1, 1, c(0.0, 1.0))]);
        let b = vec![c(2.0, 0.0), c(0.0, 1.0)];
        for f in [factorize(&a).unwrap(), factorize_symmetric(&a, 0).unwrap()] {
            let x = f.solve(&b).unwrap();
            assert!((x[0] - c(1.0, 0.0)).norm() < 1e-15);
            assert!((x[1] - c(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let a = CsrMatrix::from_triplets(2, 3, &[(1, 2, 1.0), (0, 1, 2.0), (1, 2, 0.5), (1, 0, 3.0)]);
        assert_eq!(a.row_ptr(), &[0, 1, 3]);
        assert_eq!(a.col_idx(), &[1, 0, 2]);
        assert_eq!(a.values(), &[2.0, 3.0, 1.5]);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = SparseComplexMatrix::from_triplets(2, 2, &[(0, 0, c(1.0, 0.0)), (0, 1, c(1.0, 0.0))]);
        assert!(factorize(&a).is_err());
    }

    #[test]
    fn min_singular_trivial_cases() {
        let nrm = SparseComplexMatrix::from_triplets(
            3,
            3,
            &[(0, 0, c(2.0, 0.0)), (1, 1, c(3.0, 0.0)), (2, 2, c(1.5, 0.0)), (0, 1, c(0.5, 0.0)), (1, 0, c(0.5, 0.0))],
        );
        let s = min_generalized_singular(&nrm, &nrm).unwrap();
        assert!((s.sigma_min - 1.0).abs() < 1e-6, "{s:?}");

        let a = SparseComplexMatrix::from_triplets(3, 3, &[(0, 0, c(3.0, 0.0)), (1, 1, c(2.0, 0.0)), (2, 2, c(1.0, 0.0))]);
        let s = min_generalized_singular(&a, &SparseComplexMatrix::identity(3)).unwrap();
        assert!((s.sigma_min - 1.0).abs() < 1e-6, "{s:?}");
    }

    #[test]
    fn matmul_and_adjoint_agree_with_dense() {
        let a = SparseComplexMatrix::from_triplets(2, 3, &[(0, 0, c(1.0, 1.0)), (0, 2, c(2.0, 0.0)), (1, 1, c(0.0, -1.0))]);
        let b = CsrMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (1, 1, 2.0), (2, 0, -1.0)]);
        let p = a.matmul(&b);
        assert_eq!(p.get(0, 0), c(-1.0, 1.0));
        assert_eq!(p.get(1, 1), c(0.0, -2.0));
        let ah = a.adjoint();
        assert_eq!(ah.get(0, 0), c(1.0, -1.0));
        assert_eq!(ah.get(1, 1), c(0.0, 1.0));
        let x = vec![c(1.0, 0.0), c(0.0, 1.0)];
        assert_eq!(a.mul_adjoint_vec(&x), ah.mul_vec(&x));
    }
}
