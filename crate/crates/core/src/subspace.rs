//! Task-adaptive linear projections fitted on the pooled samples of one task.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

pub const DEFAULT_PCA_DIM: usize = 4;
pub const DEFAULT_ICA_DIM: usize = 10;

pub const ICA_MAX_ITER: usize = 200;
pub const ICA_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pca,
    Ica,
    Whiten,
}

/// What happened while fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct FitInfo {
    pub requested_dim: usize,
    pub dim: usize,
    /// `None` for closed-form fits.
    pub converged: Option<bool>,
    pub iterations: usize,
    /// ICA only: the orthogonal rotation applied in whitened coordinates.
    pub unmixing: Option<Matrix>,
}

impl FitInfo {
    fn closed_form(requested_dim: usize, dim: usize) -> Self {
        Self {
            requested_dim,
            dim,
            converged: None,
            iterations: 0,
            unmixing: None,
        }
    }

    pub fn dim_reduced(&self) -> bool {
        self.dim < self.requested_dim
    }
}

/// A linear map `x ↦ W·(x − center)` from `m` to `r` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceProjection {
    weights: Matrix,
    center: Vec<f64>,
    method: Method,
    info: FitInfo,
}

impl SubspaceProjection {
    pub fn from_parts(weights: Matrix, center: Vec<f64>, method: Method) -> Result<Self> {
        if weights.cols() != center.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.cols(),
                actual: center.len(),
            });
        }
        if weights.rows() > weights.cols() {
            return Err(Error::InvalidArgument(format!(
                "projection rank {} exceeds input dimension {}",
                weights.rows(),
                weights.cols()
            )));
        }
        if let Some(j) = center.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: 0, col: j });
        }
        let r = weights.rows();
        Ok(Self {
            weights,
            center,
            method,
            info: FitInfo::closed_form(r, r),
        })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn info(&self) -> &FitInfo {
        &self.info
    }

    /// Output dimension `r`.
    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    /// Input dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.cols(),
            });
        }
        if x.is_empty() {
            return Ok(Matrix::zeros(0, self.dim()));
        }
        x.sub_row_vector(&self.center)?.matmul_t(&self.weights)
    }
}

/// Caps `r` at `samples - 1`, the most directions a centred pool can span.
fn effective_dim(samples: usize, r: usize) -> Result<usize> {
    if r == 0 {
        return Err(Error::InvalidArgument("subspace dimension must be >= 1".into()));
    }
    if samples < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: samples,
        });
    }
    Ok(r.min(samples - 1))
}

/// Projects onto the top-`r` principal directions of the pooled samples.
pub fn fit_pca(x: &Matrix, r: usize) -> Result<SubspaceProjection> {
    let dim = effective_dim(x.rows(), r)?;
    let pa = linalg::principal_axes(x, dim)?;
    let mut proj = SubspaceProjection::from_parts(pa.axes, pa.center, Method::Pca)?;
    proj.info = FitInfo::closed_form(r, dim);
    Ok(proj)
}

/// Symmetric FastICA with `g = tanh` on the pool whitened down to `r`
/// dimensions. Components come out ordered by descending excess kurtosis.
///
/// On non-convergence the iterate with the smallest update is kept and
/// `info().converged` is `Some(false)`.
pub fn fit_ica(x: &Matrix, r: usize, seed: u64) -> Result<SubspaceProjection> {
    let dim = effective_dim(x.rows(), r)?;
    let (z, white) = linalg::whiten(x, dim)?;
    let n = z.rows() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init: Vec<f64> = (0..dim * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut w = symmetric_decorrelation(&Matrix::from_vec_unchecked(dim, dim, init))?;

    let mut best = (f64::INFINITY, w.clone());
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=ICA_MAX_ITER {
        iterations = it;
        let y = z.matmul_t(&w)?;
        let mut next = Matrix::zeros(dim, dim);
        for i in 0..dim {
            let mut mean_dg = 0.0;
            let row = next.row_mut(i);
            for (t, zt) in z.row_iter().enumerate() {
                let g = y.get(t, i).tanh();
                mean_dg += 1.0 - g * g;
                for (a, zv) in row.iter_mut().zip(zt) {
                    *a += g * zv;
                }
            }
            mean_dg /= n;
            for (a, wv) in row.iter_mut().zip(w.row(i)) {
                *a = *a / n - mean_dg * wv;
            }
        }
        let next = symmetric_decorrelation(&next)?;
        let lim = (0..dim)
            .map(|i| (linalg::dot(next.row(i), w.row(i)).abs() - 1.0).abs())
            .fold(0.0, f64::max);
        w = next;
        if lim < best.0 {
            best = (lim, w.clone());
        }
        if lim < ICA_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        w = best.1;
    }

    // Order components by excess kurtosis of the fitted data.
    let y = z.matmul_t(&w)?;
    let kurt: Vec<f64> = (0..dim)
        .map(|i| {
            let col = y.column(i);
            let m2 = col.iter().map(|v| v * v).sum::<f64>() / n;
            let m4 = col.iter().map(|v| v.powi(4)).sum::<f64>() / n;
            m4 / (m2 * m2) - 3.0
        })
        .collect();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| kurt[b].total_cmp(&kurt[a]));
    let unmixing = w.select_rows(&order);

    let weights = unmixing.matmul(white.weights())?;
    let mut proj = SubspaceProjection::from_parts(weights, white.center().to_vec(), Method::Ica)?;
    proj.info = FitInfo {
        requested_dim: r,
        dim,
        converged: Some(converged),
        iterations,
        unmixing: Some(unmixing),
    };
    Ok(proj)
}

/// `(W Wᵀ)^{-1/2} W`.
fn symmetric_decorrelation(w: &Matrix) -> Result<Matrix> {
    let eig = linalg::sym_eig(&w.matmul_t(w)?)?;
    let n = w.rows();
    let mut inv_sqrt = Matrix::zeros(n, n);
    for k in 0..n {
        let lambda = eig.values[k].max(f64::MIN_POSITIVE);
        let s = 1.0 / lambda.sqrt();
        for i in 0..n {
            let vik = eig.vectors.get(i, k) * s;
            for j in 0..n {
                let cur = inv_sqrt.get(i, j);
                inv_sqrt.set(i, j, cur + vik * eig.vectors.get(j, k));
            }
        }
    }
    inv_sqrt.matmul(w)
}
