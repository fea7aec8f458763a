//! Dense row-major matrices and a one-sided Jacobi SVD.
//!
//! The matrices handled here are small (per-layer transfer maps, weight
//! blocks), so everything is plain `Vec<f64>` storage and straightforward
//! loops. Every fallible operation checks that its result stays finite.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("{op}: dimension mismatch, left is {left:?}, right is {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },
    #[error("{op}: matrix must have at least one row and one column, got {rows}x{cols}")]
    Empty {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
}

type Result<T> = std::result::Result<T, LinalgError>;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite { op })
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        check_finite("from_vec", &data)?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(LinalgError::DimensionMismatch {
                    op: "from_rows",
                    left: (r, c),
                    right: (1, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(r, c, data)
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        check_finite("diag", &m.data)?;
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw storage. Callers are responsible for
    /// keeping entries finite.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        check_finite("matmul", &out.data)?;
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(LinalgError::DimensionMismatch {
                op: "matvec",
                left: self.shape(),
                right: (v.len(), 1),
            });
        }
        let out: Vec<f64> = (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect();
        check_finite("matvec", &out)?;
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Result<Matrix> {
        let data: Vec<f64> = self.data.iter().map(|v| v * k).collect();
        check_finite("scale", &data)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    fn zip_with(
        &self,
        op: &'static str,
        other: &Matrix,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| f(*a, *b))
            .collect();
        check_finite(op, &data)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Frobenius inner product `tr(selfᵀ other)`.
    pub fn dot(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch {
                op: "dot",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `u vᵀ` as a `len(u) x len(v)` matrix.
pub fn outer(u: &[f64], v: &[f64]) -> Result<Matrix> {
    let mut m = Matrix::zeros(u.len(), v.len());
    for (i, a) in u.iter().enumerate() {
        let row = &mut m.data[i * v.len()..(i + 1) * v.len()];
        for (o, b) in row.iter_mut().zip(v) {
            *o = a * b;
        }
    }
    check_finite("outer", &m.data)?;
    Ok(m)
}

/// Thin singular value decomposition `m = u · diag(sigma) · vt`.
///
/// With `k = min(rows, cols)`, `u` is `rows x k`, `sigma` has `k`
/// non-increasing entries and `vt` is `k x cols`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.sigma.len();
        let mut us = self.u.clone();
        for r in 0..us.rows {
            for c in 0..k {
                let v = us.get(r, c) * self.sigma[c];
                us.set(r, c, v);
            }
        }
        us.matmul(&self.vt).expect("svd factors conform")
    }

    /// `u · vt`, the orthogonal polar factor used to shift singular values.
    pub fn polar(&self) -> Matrix {
        self.u.matmul(&self.vt).expect("svd factors conform")
    }
}

const JACOBI_TOL: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if m.rows == 0 || m.cols == 0 {
        return Err(LinalgError::Empty {
            op: "svd",
            rows: m.rows,
            cols: m.cols,
        });
    }
    check_finite("svd", &m.data)?;
    if m.rows >= m.cols {
        svd_tall(m)
    } else {
        // m = (mᵀ)ᵀ = (U' Σ V'ᵀ)ᵀ = V' Σ U'ᵀ
        let t = svd_tall(&m.transpose())?;
        let mut out = SvdResult {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        };
        fix_signs(&mut out);
        Ok(out)
    }
}

fn svd_tall(m: &Matrix) -> Result<SvdResult> {
    let (rows, n) = m.shape();
    // Work column-major: cols[j] is column j of the evolving A·V.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| m.column(j)).collect();
    let mut v = Matrix::identity(n);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut a = 0.0;
                    let mut b = 0.0;
                    let mut g = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        a += x * x;
                        b += y * y;
                        g += x * y;
                    }
                    (a, b, g)
                };
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
                for r in 0..n {
                    let (vp, vq) = (v.get(r, p), v.get(r, q));
                    v.set(r, p, c * vp - s * vq);
                    v.set(r, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let smax = sigma[0];
    let tiny = smax * (rows.max(n) as f64) * f64::EPSILON;

    let mut u = Matrix::zeros(rows, n);
    let mut vt = Matrix::zeros(n, n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        for c in 0..n {
            vt.set(k, c, v.get(c, j));
        }
        if sigma[k] > tiny && sigma[k] > f64::MIN_POSITIVE {
            let col: Vec<f64> = cols[j].iter().map(|x| x / sigma[k]).collect();
            basis.push(col);
        } else {
            basis.push(Vec::new());
            missing.push(k);
        }
    }
    for k in missing {
        basis[k] = complete_basis(&basis, rows);
    }
    for (k, col) in basis.iter().enumerate() {
        for (r, &v) in col.iter().enumerate().take(rows) {
            u.set(r, k, v);
        }
    }

    let mut out = SvdResult { u, sigma, vt };
    fix_signs(&mut out);
    check_finite("svd", &out.u.data)?;
    check_finite("svd", &out.vt.data)?;
    Ok(out)
}

/// Unit vector orthogonal to every non-empty column in `basis`.
fn complete_basis(basis: &[Vec<f64>], rows: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for e in 0..rows {
        let mut cand = vec![0.0; rows];
        cand[e] = 1.0;
        // two Gram-Schmidt passes
        for _ in 0..2 {
            for b in basis.iter().filter(|b| !b.is_empty()) {
                let proj: f64 = cand.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in cand.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if best.as_ref().is_none_or(|(n, _)| norm > *n) {
            best = Some((norm, cand));
        }
    }
    let (norm, mut cand) = best.expect("rows >= 1");
    for x in cand.iter_mut() {
        *x /= norm;
    }
    cand
}

/// First nonzero entry of each left singular vector is made non-negative.
fn fix_signs(out: &mut SvdResult) {
    let (rows, k) = out.u.shape();
    for c in 0..k {
        let first = (0..rows).map(|r| out.u.get(r, c)).find(|x| x.abs() > 1e-14);
        if matches!(first, Some(x) if x < 0.0) {
            for r in 0..rows {
                let v = out.u.get(r, c);
                out.u.set(r, c, -v);
            }
            for cc in 0..out.vt.cols {
                let v = out.vt.get(c, cc);
                out.vt.set(c, cc, -v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_svd() {
        let s = svd(&Matrix::identity(2)).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0]);
        assert!(max_abs_diff(&s.reconstruct(), &Matrix::identity(2)) < 1e-15);
    }

    #[test]
    fn diagonal_svd_is_signed_permutation() {
        let m = Matrix::diag(&[3.0, 2.0]).unwrap();
        let s = svd(&m).unwrap();
        assert!((s.sigma[0] - 3.0).abs() < 1e-14);
        assert!((s.sigma[1] - 2.0).abs() < 1e-14);
        for f in [&s.u, &s.vt] {
            for v in f.as_slice() {
                assert!(v.abs() < 1e-14 || (v.abs() - 1.0).abs() < 1e-14);
            }
        }
        // sign convention
        for c in 0..2 {
            let first = s.u.column(c).into_iter().find(|x| x.abs() > 1e-14).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn wide_matrix_factors_have_thin_shapes() {
        let m = lcg_matrix(2, 5, 3);
        let s = svd(&m).unwrap();
        assert_eq!(s.u.shape(), (2, 2));
        assert_eq!(s.vt.shape(), (2, 5));
        assert!(max_abs_diff(&s.reconstruct(), &m) < 1e-12);
    }

    #[test]
    fn zero_matrix_gets_orthonormal_completion() {
        let s = svd(&Matrix::zeros(4, 2)).unwrap();
        assert_eq!(s.sigma, vec![0.0, 0.0]);
        let utu = s.u.transpose().matmul(&s.u).unwrap();
        assert!(max_abs_diff(&utu, &Matrix::identity(2)) < 1e-14);
    }

    #[test]
    fn rank_deficient_columns() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]).unwrap();
        let s = svd(&m).unwrap();
        assert!(s.sigma[1].abs() < 1e-12);
        let utu = s.u.transpose().matmul(&s.u).unwrap();
        assert!(max_abs_diff(&utu, &Matrix::identity(2)) < 1e-12);
        assert!(max_abs_diff(&s.reconstruct(), &m) < 1e-12);
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        let m = Matrix {
            rows: 1,
            cols: 2,
            data: vec![1.0, f64::NAN],
        };
        assert!(matches!(svd(&m), Err(LinalgError::NonFinite { .. })));
        assert!(matches!(
            svd(&Matrix::zeros(0, 3)),
            Err(LinalgError::Empty { .. })
        ));
    }

    #[test]
    fn dense_ops_basics() {
        let a = lcg_matrix(2, 2, 9);
        assert_eq!(Matrix::identity(2).matmul(&a).unwrap(), a);
        let o = outer(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(o, Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]).unwrap());
        let err = a.matmul(&Matrix::zeros(3, 1)).unwrap_err();
        assert_eq!(
            err,
            LinalgError::DimensionMismatch {
                op: "matmul",
                left: (2, 2),
                right: (3, 1)
            }
        );
        assert!(err.to_string().contains("(2, 2)") && err.to_string().contains("(3, 1)"));
    }

    #[test]
    fn frobenius_matches_scalar_loop() {
        let m = lcg_matrix(4, 4, 42);
        let mut acc = 0.0;
        for r in 0..4 {
            for c in 0..4 {
                acc += m.get(r, c) * m.get(r, c);
            }
        }
        assert!((m.frobenius() - acc.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn scale_overflow_is_rejected() {
        let m = Matrix::from_rows(&[&[1e300]]).unwrap();
        assert!(matches!(m.scale(1e10), Err(LinalgError::NonFinite { .. })));
    }
}
