//! Dense row-major matrices and the handful of decompositions the rest of the
//! crate needs.
//!
//! Covariances use the population divisor `n`, not `n - 1`. This shifts every
//! eigenvalue by a factor `(n - 1) / n` relative to the sample estimator, and
//! it is what PCA variances and whitening are calibrated against.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::subspace::{Method, SubspaceProjection};

/// Eigenvalues at or below this are treated as zero when counting rank.
pub const RANK_EPS: f64 = 1e-10;

/// Maximum absolute asymmetry accepted by [`sym_eig`].
pub const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (row, col) = if cols == 0 { (0, 0) } else { (pos / cols, pos % cols) };
            return Err(Error::NonFinite { row, col });
        }
        Ok(Self { rows, cols, data })
    }

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

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Internal constructor for data produced by arithmetic on finite inputs.
    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.row_iter().map(|r| r[j]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`; both operands are walked row-wise.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: other.cols,
            });
        }
        let mut data = Vec::with_capacity(self.rows * other.rows);
        for a in self.row_iter() {
            for b in other.row_iter() {
                data.push(dot(a, b));
            }
        }
        Ok(Matrix::from_vec_unchecked(self.rows, other.rows, data))
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows == 0 {
            return Ok(other.clone());
        }
        if other.rows == 0 {
            return Ok(self.clone());
        }
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: other.cols,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix::from_vec_unchecked(self.rows + other.rows, self.cols, data))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_vec_unchecked(idx.len(), self.cols, data)
    }

    /// Subtracts `v` from every row.
    pub fn sub_row_vector(&self, v: &[f64]) -> Result<Matrix> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: v.len(),
            });
        }
        let mut out = self.clone();
        for i in 0..out.rows {
            for (x, c) in out.row_mut(i).iter_mut().zip(v) {
                *x -= c;
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix::from_vec_unchecked(self.rows, self.cols, self.data.iter().map(|v| v * c).collect())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared Euclidean distances between every row of `a` and every row of `b`.
pub fn pairwise_sq_distances(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::DimensionMismatch {
            expected: b.cols,
            actual: a.cols,
        });
    }
    let mut data = Vec::with_capacity(a.rows * b.rows);
    for x in a.row_iter() {
        for y in b.row_iter() {
            data.push(squared_distance(x, y));
        }
    }
    Ok(Matrix::from_vec_unchecked(a.rows, b.rows, data))
}

pub fn column_mean(x: &Matrix) -> Result<Vec<f64>> {
    if x.rows == 0 || x.cols == 0 {
        return Err(Error::EmptyInput);
    }
    let mut mean = vec![0.0; x.cols];
    for r in x.row_iter() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    let n = x.rows as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Population covariance `(1/n) Xcᵀ Xc` of the rows of `x`.
pub fn covariance(x: &Matrix) -> Result<Matrix> {
    if x.rows < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: x.rows,
        });
    }
    let mean = column_mean(x)?;
    let xc = x.sub_row_vector(&mean)?;
    let m = x.cols;
    let mut c = Matrix::zeros(m, m);
    for r in xc.row_iter() {
        for i in 0..m {
            let ri = r[i];
            if ri == 0.0 {
                continue;
            }
            let row = &mut c.data[i * m..(i + 1) * m];
            for j in i..m {
                row[j] += ri * r[j];
            }
        }
    }
    let n = x.rows as f64;
    for i in 0..m {
        for j in i..m {
            let v = c.data[i * m + j] / n;
            c.data[i * m + j] = v;
            c.data[j * m + i] = v;
        }
    }
    Ok(c)
}

/// Eigenpairs of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Sorted descending.
    pub values: Vec<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Matrix,
}

/// Symmetric eigendecomposition with a deterministic sign convention: every
/// eigenvector is flipped so that its largest-magnitude entry is positive.
pub fn sym_eig(c: &Matrix) -> Result<SymEig> {
    let n = c.rows;
    if n != c.cols {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: c.cols,
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((c.get(i, j) - c.get(j, i)).abs());
        }
    }
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let mut sym = c.to_nalgebra();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            sym[(i, j)] = v;
            sym[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col: Vec<f64> = eig.eigenvectors.column(src).iter().copied().collect();
        let sign = sign_of_dominant(&col);
        for (i, v) in col.iter().enumerate() {
            vectors.set(i, dst, sign * v);
        }
    }
    Ok(SymEig { values, vectors })
}

fn sign_of_dominant(v: &[f64]) -> f64 {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v {
        if x.abs() > best {
            best = x.abs();
            sign = if x < 0.0 { -1.0 } else { 1.0 };
        }
    }
    sign
}

/// Leading principal axes of a point cloud.
#[derive(Debug, Clone)]
pub(crate) struct PrincipalAxes {
    pub center: Vec<f64>,
    /// Top eigenvalues of the covariance, descending.
    pub values: Vec<f64>,
    /// `r × m`, rows orthonormal, matching `values`.
    pub axes: Matrix,
}

/// Top-`r` eigenpairs of `covariance(x)`.
///
/// When there are fewer rows than columns the `n × n` Gram matrix is
/// decomposed instead and its eigenvectors are lifted back into feature
/// space; the non-zero spectrum is the same.
pub(crate) fn principal_axes(x: &Matrix, r: usize) -> Result<PrincipalAxes> {
    if x.rows < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: x.rows,
        });
    }
    let center = column_mean(x)?;
    let m = x.cols;
    let (values, axes) = if x.rows >= m {
        let eig = sym_eig(&covariance(x)?)?;
        let available = eig.values.iter().filter(|&&v| v > RANK_EPS).count();
        if r > available {
            return Err(Error::RankDeficient {
                requested: r,
                available,
            });
        }
        let mut axes = Matrix::zeros(r, m);
        for k in 0..r {
            for j in 0..m {
                axes.set(k, j, eig.vectors.get(j, k));
            }
        }
        (eig.values[..r].to_vec(), axes)
    } else {
        let n = x.rows;
        let xc = x.sub_row_vector(&center)?;
        let gram = xc.matmul_t(&xc)?.scale(1.0 / n as f64);
        let eig = sym_eig(&gram)?;
        let available = eig.values.iter().filter(|&&v| v > RANK_EPS).count();
        if r > available {
            return Err(Error::RankDeficient {
                requested: r,
                available,
            });
        }
        let mut axes = Matrix::zeros(r, m);
        for k in 0..r {
            let norm = (n as f64 * eig.values[k]).sqrt();
            let row = axes.row_mut(k);
            for (i, xr) in xc.row_iter().enumerate() {
                let u = eig.vectors.get(i, k) / norm;
                for (a, v) in row.iter_mut().zip(xr) {
                    *a += u * v;
                }
            }
            // Re-normalise to absorb rounding, then apply the sign convention.
            let len = dot(row, row).sqrt();
            let sign = sign_of_dominant(row);
            row.iter_mut().for_each(|a| *a *= sign / len);
        }
        (eig.values[..r].to_vec(), axes)
    };
    Ok(PrincipalAxes {
        center,
        values,
        axes,
    })
}

/// Whitens `x` onto its top-`r` principal directions.
///
/// The returned projection maps any vector `v` to
/// `diag(λ)^{-1/2} · V · (v − mean)`, so the fitted rows come out with zero
/// mean and identity covariance.
pub fn whiten(x: &Matrix, r: usize) -> Result<(Matrix, SubspaceProjection)> {
    if r == 0 {
        return Err(Error::InvalidArgument("whitening dimension must be >= 1".into()));
    }
    let pa = principal_axes(x, r)?;
    let mut w = pa.axes;
    for (k, lambda) in pa.values.iter().enumerate() {
        let s = 1.0 / lambda.sqrt();
        w.row_mut(k).iter_mut().for_each(|a| *a *= s);
    }
    let proj = SubspaceProjection::from_parts(w, pa.center, Method::Whiten)?;
    let xw = proj.apply(x)?;
    Ok((xw, proj))
}
