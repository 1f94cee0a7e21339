//! Dense symmetric linear algebra.
//!
//! [`SymMat`] is the storage type for every n×n symmetric matrix in the crate
//! (ground truths, SDP iterates, certificates, Hessians). It is symmetrized on
//! construction so `m[(i, j)] == m[(j, i)]` holds bit-for-bit.
//!
//! Eigendecompositions go through nalgebra's symmetric solver (Householder
//! tridiagonalization followed by implicit QR sweeps). The ordering layer on top
//! is ours: ties are broken deterministically and eigenvector signs are fixed so
//! that block decompositions built from them are reproducible.

use std::ops::{Index, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default relative tolerance for `‖QΛQᵀ − M‖_F`.
pub const RECONSTRUCTION_TOL: f64 = 1e-10;
/// Default tolerance for [`psd_check`].
pub const PSD_TOL: f64 = 1e-9;
/// Largest asymmetry accepted when loading a matrix file.
pub const FILE_SYMMETRY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct SymMat {
    m: DMatrix<f64>,
}

impl SymMat {
    /// Builds a symmetric matrix from a square one by averaging with its transpose.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return invalid(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            ));
        }
        let n = m.nrows();
        let sym = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                m[(i, i)]
            } else {
                // a + b == b + a in IEEE arithmetic, so both halves agree exactly.
                0.5 * (m[(i, j)] + m[(j, i)])
            }
        });
        Ok(Self { m: sym })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return invalid("rows must form a non-empty square array");
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        assert!(n >= 1);
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1);
        Self {
            m: DMatrix::zeros(n, n),
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        assert!(!d.is_empty());
        let n = d.len();
        Self {
            m: DMatrix::from_fn(n, n, |i, j| if i == j { d[i] } else { 0.0 }),
        }
    }

    /// `X Xᵀ` for an n×r factor.
    pub fn gram(x: &DMatrix<f64>) -> Self {
        let g = x * x.transpose();
        Self::from_matrix(g).expect("gram matrix of a non-empty factor is square")
    }

    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|v| v.is_finite())
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| (0..self.n()).map(|j| self.m[(i, j)]).collect())
            .collect()
    }

    /// Smallest eigenvalue; `-inf` for matrices with non-finite entries.
    pub fn min_eigenvalue(&self) -> f64 {
        if !self.is_finite() {
            return f64::NEG_INFINITY;
        }
        SymmetricEigen::new(self.m.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Serialized as a list of rows.
impl Serialize for SymMat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl Index<(usize, usize)> for SymMat {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.m[idx]
    }
}

impl Sub for &SymMat {
    type Output = SymMat;

    fn sub(self, rhs: &SymMat) -> SymMat {
        assert_eq!(self.n(), rhs.n(), "dimension mismatch");
        SymMat {
            m: &self.m - &rhs.m,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    /// `|λ_1| ≥ |λ_2| ≥ …`; ties by signed value descending, then by index.
    DescendingAbsolute,
    /// `λ_1 ≥ λ_2 ≥ …`; ties by index.
    DescendingSigned,
}

#[derive(Clone, Debug)]
pub struct EigenDecomp {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, in the same order as `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    pub order: OrderMode,
}

impl EigenDecomp {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let n = self.eigenvalues.len();
        let mut out = DMatrix::zeros(n, n);
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            let u = self.eigenvectors.column(k);
            out += lam * &u * u.transpose();
        }
        out
    }

    /// `‖QΛQᵀ − M‖_F / max(1, ‖M‖_F)`.
    pub fn reconstruction_error(&self, m: &SymMat) -> f64 {
        (self.reconstruct() - m.as_matrix()).norm() / m.frobenius_norm().max(1.0)
    }

    /// Largest deviation of `QᵀQ` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let q = &self.eigenvectors;
        let n = q.ncols();
        (q.transpose() * q - DMatrix::<f64>::identity(n, n)).amax()
    }
}

pub fn sym_eig(m: &SymMat, mode: OrderMode) -> Result<EigenDecomp> {
    if !m.is_finite() {
        return invalid("matrix has non-finite entries");
    }
    let n = m.n();
    let raw = SymmetricEigen::new(m.as_matrix().clone());
    let mut idx: Vec<usize> = (0..n).collect();
    let lam = &raw.eigenvalues;
    match mode {
        OrderMode::DescendingAbsolute => idx.sort_by(|&a, &b| {
            lam[b]
                .abs()
                .total_cmp(&lam[a].abs())
                .then(lam[b].total_cmp(&lam[a]))
                .then(a.cmp(&b))
        }),
        OrderMode::DescendingSigned => {
            idx.sort_by(|&a, &b| lam[b].total_cmp(&lam[a]).then(a.cmp(&b)))
        }
    }

    let mut eigenvectors = DMatrix::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (k, &src) in idx.iter().enumerate() {
        eigenvalues.push(lam[src]);
        let mut col = raw.eigenvectors.column(src).into_owned();
        // Sign convention: the first entry of largest magnitude is positive.
        let pivot = col
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (i, v)| {
                if v.abs() > best.1 + 1e-12 {
                    (i, v.abs())
                } else {
                    best
                }
            })
            .0;
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(k, &col);
    }
    Ok(EigenDecomp {
        eigenvalues,
        eigenvectors,
        order: mode,
    })
}

/// True iff `λ_min(m) ≥ −tol`.
pub fn psd_check(m: &SymMat, tol: f64) -> bool {
    m.min_eigenvalue() >= -tol
}

/// PSD test by symmetric pivoted Cholesky. Used as a second opinion next to
/// the eigenvalue test; `tol` is relative to the largest diagonal entry.
pub fn pivoted_cholesky_psd(m: &SymMat, tol: f64) -> bool {
    if !m.is_finite() {
        return false;
    }
    let n = m.n();
    let mut a = m.as_matrix().clone();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(1.0f64, f64::max);
    let thresh = tol * scale;
    let mut active: Vec<usize> = (0..n).collect();
    while !active.is_empty() {
        let (pos, &p) = active
            .iter()
            .enumerate()
            .max_by(|(_, &i), (_, &j)| a[(i, i)].total_cmp(&a[(j, j)]))
            .unwrap();
        let d = a[(p, p)];
        if d <= thresh {
            // Remaining Schur complement must vanish for a semidefinite matrix.
            return active
                .iter()
                .all(|&i| active.iter().all(|&j| a[(i, j)].abs() <= thresh.sqrt().max(thresh)))
                && d >= -thresh;
        }
        active.swap_remove(pos);
        for &i in &active {
            for &j in &active {
                a[(i, j)] -= a[(i, p)] * a[(p, j)] / d;
            }
        }
    }
    true
}

/// Column-stacking vectorization.
pub fn vec(m: &DMatrix<f64>) -> Vec<f64> {
    m.as_slice().to_vec()
}

/// `(X + Xᵀ)/2` where `x = vec(X)`.
pub fn mat_s(x: &[f64]) -> Result<SymMat> {
    let n = (x.len() as f64).sqrt().round() as usize;
    if n == 0 || n * n != x.len() {
        return invalid(format!("length {} is not a positive perfect square", x.len()));
    }
    SymMat::from_matrix(DMatrix::from_column_slice(n, n, x))
}

/// Symmetric PSD square root; negative eigenvalues are clipped to zero.
pub fn psd_sqrt(m: &SymMat) -> Result<DMatrix<f64>> {
    let eig = sym_eig(m, OrderMode::DescendingSigned)?;
    let n = m.n();
    let mut out = DMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let u = eig.eigenvectors.column(k);
        out += lam.max(0.0).sqrt() * &u * u.transpose();
    }
    Ok(out)
}

/// Singular values of an arbitrary matrix, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().cloned().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    n: usize,
    entries: Vec<Vec<f64>>,
}

/// Parses `{"n": int, "entries": [[...]]}`, rejecting asymmetry beyond [`FILE_SYMMETRY_TOL`].
pub fn matrix_from_json(text: &str) -> Result<SymMat> {
    let file: MatrixFile = serde_json::from_str(text)?;
    if file.entries.len() != file.n || file.entries.iter().any(|r| r.len() != file.n) {
        return invalid(format!("entries are not {0}x{0}", file.n));
    }
    for i in 0..file.n {
        for j in 0..i {
            let gap = (file.entries[i][j] - file.entries[j][i]).abs();
            if !(gap <= FILE_SYMMETRY_TOL) {
                return Err(Error::InvalidInput(format!(
                    "asymmetry {gap:e} at ({i},{j}) exceeds {FILE_SYMMETRY_TOL:e}"
                )));
            }
        }
    }
    SymMat::from_rows(&file.entries)
}

pub fn matrix_to_json(m: &SymMat) -> String {
    serde_json::to_string(&MatrixFile {
        n: m.n(),
        entries: m.rows(),
    })
    .expect("matrix serialization cannot fail")
}
