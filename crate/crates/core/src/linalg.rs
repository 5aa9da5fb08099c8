//! Dense real linear algebra for small systems.
//!
//! Everything here works on row-major [`DenseMatrix`] values of at most a few
//! hundred rows. The routines favour determinism and simple error reporting
//! over raw speed: spectral norms come from power iteration, spectral radii
//! from Gelfand's formula with repeated squaring, ranks from column-pivoted
//! Householder QR and symmetric eigenproblems from cyclic Jacobi rotations.

use std::fmt;
use std::ops::{Deref, DerefMut, Index, IndexMut};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Default relative tolerance for numerical rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("spectral radius estimate did not converge (last estimate {last_estimate})")]
    NotConverged { last_estimate: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Real dense vector.
#[derive(Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(entries: Vec<f64>) -> Self {
        DenseVector(entries)
    }

    pub fn zeros(dim: usize) -> Self {
        DenseVector(vec![0.0; dim])
    }

    /// Canonical basis vector `e_index`.
    pub fn unit(dim: usize, index: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        DenseVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &[f64]) {
        for (s, v) in self.0.iter_mut().zip(x) {
            *s += alpha * v;
        }
    }

    pub fn scaled(&self, alpha: f64) -> DenseVector {
        DenseVector(self.0.iter().map(|v| alpha * v).collect())
    }

    pub fn sub(&self, other: &[f64]) -> DenseVector {
        DenseVector(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for DenseVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        DenseVector(v)
    }
}

impl fmt::Debug for DenseVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    // scaled accumulation so that very large or tiny vectors do not overflow
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let s: f64 = v.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * s.sqrt()
}

/// Real dense matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        if r == 0 {
            return Err(LinalgError::Empty("matrix has no rows"));
        }
        let c = rows[0].len();
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::DimensionMismatch("ragged rows".into()));
        }
        Ok(DenseMatrix {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[DenseVector]) -> Result<Self> {
        let c = columns.len();
        if c == 0 {
            return Err(LinalgError::Empty("no columns"));
        }
        let r = columns[0].dim();
        if columns.iter().any(|col| col.dim() != r) {
            return Err(LinalgError::DimensionMismatch("columns differ in length".into()));
        }
        Ok(Self::from_fn(r, c, |i, j| columns[j][i]))
    }

    pub fn diag(entries: &[f64]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in entries.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// N×N lower shift: ones on the subdiagonal.
    pub fn lower_shift(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j + 1 { 1.0 } else { 0.0 })
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> DenseVector {
        DenseVector((0..self.rows).map(|i| self[(i, j)]).collect())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<DenseVector> {
        if self.cols != x.len() {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} matrix times vector of dim {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        Ok(DenseVector(out))
    }

    /// `out = self * x` without dimension checks.
    pub(crate) fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `out = selfᵀ * x` without dimension checks.
    pub(crate) fn tmatvec_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
    }

    pub fn scaled(&self, alpha: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch("matrix difference".into()));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Integer matrix power by binary exponentiation.
    pub fn pow(&self, k: usize) -> Result<DenseMatrix> {
        ensure_square(self)?;
        let mut out = DenseMatrix::identity(self.rows);
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                out = out.matmul(&base)?;
            }
            k >>= 1;
            if k > 0 {
                base = base.matmul(&base)?;
            }
        }
        Ok(out)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

// Persisted as a row-major array of rows.
impl Serialize for DenseMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DenseMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        DenseMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

fn ensure_square(a: &DenseMatrix) -> Result<()> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if a.rows == 0 {
        return Err(LinalgError::Empty("zero-sized matrix"));
    }
    Ok(())
}

/// Spectral norm `‖A‖₂ = sqrt(λ_max(AᵀA))` by power iteration on `AᵀA`.
pub fn operator_norm(a: &DenseMatrix) -> Result<f64> {
    ensure_square(a)?;
    Ok(spectral_norm_unchecked(a))
}

fn spectral_norm_unchecked(a: &DenseMatrix) -> f64 {
    let n = a.cols;
    let scale = a.max_abs();
    if scale == 0.0 {
        return 0.0;
    }
    // Start from the column of AᵀA with the largest norm: it has a nonzero
    // component along the dominant eigenvector unless AᵀA = 0.
    let mut v = vec![0.0; n];
    let mut w = vec![0.0; a.rows];
    let mut best = (0.0, 0);
    for j in 0..n {
        let col: Vec<f64> = (0..a.rows).map(|i| a[(i, j)] / scale).collect();
        let mut g = vec![0.0; n];
        a.tmatvec_into(&col, &mut g);
        let nrm = norm2(&g);
        if nrm > best.0 {
            best = (nrm, j);
            v = g;
        }
    }
    if best.0 == 0.0 {
        return 0.0;
    }
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let max_iter = (10 * n * n).max(100);
    let mut lambda = 0.0;
    let mut next = vec![0.0; n];
    for _ in 0..max_iter {
        a.matvec_into(&v, &mut w);
        a.tmatvec_into(&w, &mut next);
        let new_lambda: f64 = v.iter().zip(&next).map(|(x, y)| x * y).sum();
        let nn = norm2(&next);
        if nn == 0.0 {
            return 0.0;
        }
        v.iter_mut().zip(&next).for_each(|(x, y)| *x = y / nn);
        let converged = (new_lambda - lambda).abs() <= 1e-15 * new_lambda.abs();
        lambda = new_lambda;
        if converged {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

/// Spectral radius estimate from Gelfand's formula `ρ(A) = lim ‖A^k‖^{1/k}`.
///
/// Uses repeated squaring, `ρ_k = ‖A^{2^k}‖₂^{1/2^k}`, renormalising the
/// power after every squaring and carrying the accumulated scale as a
/// logarithm. Iterates until two successive estimates differ by less than
/// `tol`. The returned value never underestimates ρ(A) by more than the
/// last increment since every Gelfand term is an upper bound.
pub fn spectral_radius(a: &DenseMatrix, tol: f64) -> Result<f64> {
    ensure_square(a)?;
    if !(tol > 0.0) {
        return Err(LinalgError::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    const MAX_SQUARINGS: u32 = 60;

    // invariant: A^{2^k} = power * exp(log_scale)
    let mut power = a.clone();
    let mut log_scale = 0.0f64;
    let mut previous: Option<f64> = None;
    for k in 0..=MAX_SQUARINGS {
        let nrm = spectral_norm_unchecked(&power);
        if nrm == 0.0 {
            return Ok(0.0);
        }
        let exponent = 2f64.powi(k as i32);
        let estimate = ((nrm.ln() + log_scale) / exponent).exp();
        // A nilpotent matrix keeps ‖A^{2^k}‖ constant until 2^k reaches its
        // index, so no early exit before 2^k >= N.
        if let Some(prev) = previous {
            if (1usize << k) >= a.rows && (prev - estimate).abs() < tol {
                return Ok(estimate);
            }
        }
        previous = Some(estimate);
        if k == MAX_SQUARINGS {
            break;
        }
        let fro = power.frobenius_norm();
        let normalised = power.scaled(1.0 / fro);
        log_scale = 2.0 * (log_scale + fro.ln());
        power = normalised.matmul(&normalised)?;
    }
    Err(LinalgError::NotConverged {
        last_estimate: previous.unwrap_or(f64::NAN),
    })
}

/// Householder QR of a general `m×n` matrix. Returns `(Q, R)` with `Q` of
/// size `m×m` and `R` of size `m×n`.
pub fn householder_qr(a: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (m, n) = (a.rows, a.cols);
    let mut r = a.clone();
    let mut q = DenseMatrix::identity(m);
    for k in 0..n.min(m.saturating_sub(1)) {
        let x: Vec<f64> = (k..m).map(|i| r[(i, k)]).collect();
        let alpha = norm2(&x);
        if alpha == 0.0 {
            continue;
        }
        let alpha = if x[0] > 0.0 { -alpha } else { alpha };
        let mut v = x;
        v[0] -= alpha;
        let vn = norm2(&v);
        if vn == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vn);
        apply_reflector_left(&mut r, &v, k);
        apply_reflector_right(&mut q, &v, k);
    }
    (q, r)
}

// rows k.. of M  <-  (I - 2 v vᵀ) M
fn apply_reflector_left(m: &mut DenseMatrix, v: &[f64], k: usize) {
    for j in 0..m.cols {
        let dot: f64 = v.iter().enumerate().map(|(i, vi)| vi * m[(k + i, j)]).sum();
        for (i, vi) in v.iter().enumerate() {
            m[(k + i, j)] -= 2.0 * vi * dot;
        }
    }
}

// columns k.. of M  <-  M (I - 2 v vᵀ)
fn apply_reflector_right(m: &mut DenseMatrix, v: &[f64], k: usize) {
    for i in 0..m.rows {
        let dot: f64 = v.iter().enumerate().map(|(j, vj)| vj * m[(i, k + j)]).sum();
        for (j, vj) in v.iter().enumerate() {
            m[(i, k + j)] -= 2.0 * vj * dot;
        }
    }
}

/// Haar-distributed orthogonal matrix in O(n).
///
/// Gaussian matrix → QR → `Q · diag(sign(R_ii))`, which removes the sign
/// ambiguity of the factorisation and makes the law invariant.
pub fn haar_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<DenseMatrix> {
    if n == 0 {
        return Err(LinalgError::Empty("Haar sample of dimension 0"));
    }
    let g = DenseMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (mut q, r) = householder_qr(&g);
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(q)
}

/// Krylov (reachability) matrix with columns `C, AC, …, A^{N-1}C`.
pub fn krylov_matrix(a: &DenseMatrix, c: &[f64]) -> Result<DenseMatrix> {
    ensure_square(a)?;
    let n = a.rows;
    if c.len() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "A is {n}x{n} but C has dim {}",
            c.len()
        )));
    }
    let mut out = DenseMatrix::zeros(n, n);
    let mut col = c.to_vec();
    let mut next = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            out[(i, j)] = col[i];
        }
        a.matvec_into(&col, &mut next);
        std::mem::swap(&mut col, &mut next);
    }
    Ok(out)
}

/// Absolute diagonal of `R` from column-pivoted Householder QR, in pivot
/// order (non-increasing up to rounding).
pub fn pivoted_qr_diagonal(m: &DenseMatrix) -> Result<Vec<f64>> {
    if m.rows == 0 || m.cols == 0 {
        return Err(LinalgError::Empty("rank of an empty matrix"));
    }
    let (rows, cols) = (m.rows, m.cols);
    let mut r = m.clone();
    let mut col_norms: Vec<f64> = (0..cols).map(|j| norm2(&r.column(j))).collect();
    let mut perm: Vec<usize> = (0..cols).collect();
    let steps = rows.min(cols);
    let mut diag = Vec::with_capacity(steps);
    for k in 0..steps {
        // pick remaining column with the largest norm (recomputed, not downdated)
        for &pj in &perm[k..cols] {
            col_norms[pj] = norm2(&(k..rows).map(|i| r[(i, pj)]).collect::<Vec<_>>());
        }
        let (best, _) = (k..cols)
            .map(|j| (j, col_norms[perm[j]]))
            .fold((k, -1.0), |acc, (j, v)| if v > acc.1 { (j, v) } else { acc });
        perm.swap(k, best);
        let pk = perm[k];
        let x: Vec<f64> = (k..rows).map(|i| r[(i, pk)]).collect();
        let alpha = norm2(&x);
        diag.push(alpha);
        if alpha == 0.0 || k + 1 == rows {
            continue;
        }
        let alpha_signed = if x[0] > 0.0 { -alpha } else { alpha };
        let mut v = x;
        v[0] -= alpha_signed;
        let vn = norm2(&v);
        if vn == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vn);
        for &pj in &perm[k..] {
            let dot: f64 = v.iter().enumerate().map(|(i, vi)| vi * r[(k + i, pj)]).sum();
            for (i, vi) in v.iter().enumerate() {
                r[(k + i, pj)] -= 2.0 * vi * dot;
            }
        }
    }
    Ok(diag)
}

/// Numerical rank: number of pivoted-QR diagonal magnitudes above
/// `tol · max_diagonal`.
pub fn numerical_rank(m: &DenseMatrix, tol: f64) -> Result<usize> {
    let diag = pivoted_qr_diagonal(m)?;
    Ok(rank_from_diagonal(&diag, tol))
}

pub(crate) fn rank_from_diagonal(diag: &[f64], tol: f64) -> usize {
    let max = diag.iter().fold(0.0f64, |m, v| m.max(*v));
    if max == 0.0 {
        return 0;
    }
    diag.iter().filter(|d| **d > tol * max).count()
}

/// Solves `A x = b` by LU with partial pivoting.
pub fn solve(a: &DenseMatrix, b: &[f64]) -> Result<DenseVector> {
    ensure_square(a)?;
    let n = a.rows;
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch("right-hand side length".into()));
    }
    let mut lu = a.clone();
    let mut x = b.to_vec();
    let scale = a.max_abs();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| lu[(i, k)].abs().total_cmp(&lu[(j, k)].abs()))
            .unwrap_or(k);
        if lu[(p, k)].abs() <= f64::EPSILON * scale * n as f64 {
            return Err(LinalgError::Singular);
        }
        if p != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = tmp;
            }
            x.swap(k, p);
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let f = lu[(i, k)] / pivot;
            if f == 0.0 {
                continue;
            }
            lu[(i, k)] = 0.0;
            for j in k + 1..n {
                lu[(i, j)] -= f * lu[(k, j)];
            }
            x[i] -= f * x[k];
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| lu[(k, j)] * x[j]).sum();
        x[k] = (x[k] - s) / lu[(k, k)];
    }
    Ok(DenseVector(x))
}

/// Solves a symmetric positive definite system with Cholesky.
pub fn cholesky_solve(a: &DenseMatrix, b: &[f64]) -> Result<DenseVector> {
    ensure_square(a)?;
    let n = a.rows;
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch("right-hand side length".into()));
    }
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(LinalgError::NotPositiveDefinite);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
        y[i] = (y[i] - s) / l[(i, i)];
    }
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[(k, i)] * y[k]).sum();
        y[i] = (y[i] - s) / l[(i, i)];
    }
    Ok(DenseVector(y))
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns. Sweeps stop once the off-diagonal Frobenius norm falls below
/// `1e-12` times its initial value.
pub fn symmetric_eigen(s: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    ensure_square(s)?;
    let n = s.rows;
    let mut a = s.clone();
    let mut v = DenseMatrix::identity(n);
    let off = |a: &DenseMatrix| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += a[(i, j)] * a[(i, j)];
                }
            }
        }
        acc.sqrt()
    };
    let initial = off(&a);
    let target = 1e-12 * initial;
    const MAX_SWEEPS: usize = 100;
    for _ in 0..MAX_SWEEPS {
        if off(&a) <= target {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok((values, vectors))
}

/// Output of [`pca_project`].
#[derive(Debug, Clone)]
pub struct Pca {
    /// Centred data projected on the leading `k` components.
    pub projections: Vec<DenseVector>,
    /// `N×k`, orthonormal columns.
    pub components: DenseMatrix,
    /// Leading `k` eigenvalues of the sample covariance.
    pub explained_variance: Vec<f64>,
    /// Full covariance spectrum in descending order.
    pub spectrum: Vec<f64>,
    pub mean: DenseVector,
}

impl Pca {
    pub fn total_variance(&self) -> f64 {
        self.spectrum.iter().sum()
    }

    /// Fraction of total variance captured by the retained components.
    pub fn explained_ratio(&self) -> f64 {
        let total = self.total_variance();
        if total <= 0.0 {
            return 0.0;
        }
        self.explained_variance.iter().sum::<f64>() / total
    }
}

/// Principal component analysis through the Jacobi eigensolver.
///
/// Each component's sign is fixed so that its largest-magnitude entry is
/// positive.
pub fn pca_project(data: &[DenseVector], k: usize) -> Result<Pca> {
    if data.len() < 2 {
        return Err(LinalgError::InvalidArgument(
            "PCA needs at least two data points".into(),
        ));
    }
    let n = data[0].dim();
    if n == 0 || data.iter().any(|d| d.dim() != n) {
        return Err(LinalgError::DimensionMismatch("PCA data of unequal dims".into()));
    }
    if k == 0 || k > n {
        return Err(LinalgError::InvalidArgument(format!(
            "component count {k} outside 1..={n}"
        )));
    }
    let count = data.len() as f64;
    let mut mean = vec![0.0; n];
    for d in data {
        for (m, v) in mean.iter_mut().zip(d.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);

    let mut cov = DenseMatrix::zeros(n, n);
    let mut centred = vec![0.0; n];
    for d in data {
        for i in 0..n {
            centred[i] = d[i] - mean[i];
        }
        for i in 0..n {
            for j in i..n {
                cov[(i, j)] += centred[i] * centred[j];
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let v = cov[(i, j)] / (count - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let (values, vectors) = symmetric_eigen(&cov)?;
    let mut components = DenseMatrix::from_fn(n, k, |i, j| vectors[(i, j)]);
    for j in 0..k {
        let (imax, _) = (0..n).fold((0, -1.0), |acc, i| {
            let a = components[(i, j)].abs();
            if a > acc.1 {
                (i, a)
            } else {
                acc
            }
        });
        if components[(imax, j)] < 0.0 {
            for i in 0..n {
                components[(i, j)] = -components[(i, j)];
            }
        }
    }
    let projections = data
        .iter()
        .map(|d| {
            DenseVector(
                (0..k)
                    .map(|j| (0..n).map(|i| (d[i] - mean[i]) * components[(i, j)]).sum())
                    .collect(),
            )
        })
        .collect();
    Ok(Pca {
        projections,
        components,
        explained_variance: values[..k].to_vec(),
        spectrum: values,
        mean: DenseVector(mean),
    })
}
