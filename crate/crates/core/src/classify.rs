//! Class prototypes, nearest-prototype classification and the mean-subtraction
//! baselines.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// One mean vector per task class, in ascending class order.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    vectors: Matrix,
}

impl Prototypes {
    pub fn new(vectors: Matrix) -> Self {
        Self { vectors }
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn n_way(&self) -> usize {
        self.vectors.rows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// Row-stochastic matrix of class probabilities, one row per query.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPosterior {
    probs: Matrix,
}

impl ClassPosterior {
    pub(crate) fn from_matrix(probs: Matrix) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn n_way(&self) -> usize {
        self.probs.cols()
    }

    /// Row-wise argmax, ties to the lowest class index.
    pub fn predictions(&self) -> Vec<usize> {
        self.probs.row_iter().map(argmax).collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v < row[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of `logits` written into `out`.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Averages the support rows of each class. `labels` are task-local class
/// indices in `0..n_way`.
pub fn build_prototypes(support: &Matrix, labels: &[usize], n_way: usize) -> Result<Prototypes> {
    if labels.len() != support.rows() {
        return Err(Error::DimensionMismatch {
            expected: support.rows(),
            actual: labels.len(),
        });
    }
    let d = support.cols();
    let mut sums = Matrix::zeros(n_way, d);
    let mut counts = vec![0usize; n_way];
    for (row, &l) in support.row_iter().zip(labels) {
        if l >= n_way {
            return Err(Error::InvalidArgument(format!(
                "support label {l} outside 0..{n_way}"
            )));
        }
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(row) {
            *s += v;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("class {empty} has no support samples")));
    }
    for (i, &c) in counts.iter().enumerate() {
        let inv = 1.0 / c as f64;
        sums.row_mut(i).iter_mut().for_each(|s| *s *= inv);
    }
    Ok(Prototypes::new(sums))
}

/// Nearest-prototype decisions under squared Euclidean distance, plus the
/// softmax posterior `softmax(−τ·d²)`.
pub fn nn_classify(
    queries: &Matrix,
    prototypes: &Prototypes,
    temperature: f64,
) -> Result<(Vec<usize>, ClassPosterior)> {
    if queries.cols() != prototypes.dim() {
        return Err(Error::DimensionMismatch {
            expected: prototypes.dim(),
            actual: queries.cols(),
        });
    }
    let d2 = linalg::pairwise_sq_distances(queries, prototypes.vectors())?;
    let n = prototypes.n_way();
    let mut probs = Matrix::zeros(queries.rows(), n);
    let mut preds = Vec::with_capacity(queries.rows());
    let mut logits = vec![0.0; n];
    for q in 0..queries.rows() {
        let row = d2.row(q);
        preds.push(argmin(row));
        for (l, &d) in logits.iter_mut().zip(row) {
            *l = -temperature * d;
        }
        softmax_into(&logits, probs.row_mut(q));
    }
    Ok((preds, ClassPosterior::from_matrix(probs)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterMode {
    /// Subtract the mean of the union of both sets.
    Joint,
    /// Subtract each set's own mean.
    Separate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Centered {
    pub support: Matrix,
    pub query: Matrix,
    /// Rows that were all-zero after centering and were left unnormalised.
    pub zero_rows: usize,
}

/// Mean subtraction only, without the normalisation step.
pub fn center_sets(s: &Matrix, q: &Matrix, mode: CenterMode) -> Result<(Matrix, Matrix)> {
    if s.cols() != q.cols() {
        return Err(Error::DimensionMismatch {
            expected: s.cols(),
            actual: q.cols(),
        });
    }
    let (ms, mq) = match mode {
        CenterMode::Joint => {
            let m = linalg::column_mean(&s.vstack(q)?)?;
            (m.clone(), m)
        }
        CenterMode::Separate => {
            let ms = linalg::column_mean(s)?;
            let mq = if q.is_empty() { ms.clone() } else { linalg::column_mean(q)? };
            (ms, mq)
        }
    };
    Ok((s.sub_row_vector(&ms)?, q.sub_row_vector(&mq)?))
}

/// Mean subtraction followed by per-row L2 normalisation.
pub fn center_and_normalize(s: &Matrix, q: &Matrix, mode: CenterMode) -> Result<Centered> {
    let (mut support, mut query) = center_sets(s, q, mode)?;
    let zero_rows = l2_normalize_rows(&mut support) + l2_normalize_rows(&mut query);
    Ok(Centered {
        support,
        query,
        zero_rows,
    })
}

/// Scales each row to unit norm in place and returns how many rows were zero.
pub fn l2_normalize_rows(x: &mut Matrix) -> usize {
    let mut zeros = 0;
    for i in 0..x.rows() {
        let row = x.row_mut(i);
        let norm = linalg::dot(row, row).sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        } else {
            zeros += 1;
        }
    }
    zeros
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn one_shot_prototypes_are_supports() {
        let s = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let p = build_prototypes(&s, &[1, 0], 2).unwrap();
        assert_eq!(p.vectors().row(0), &[3.0, 4.0]);
        assert_eq!(p.vectors().row(1), &[1.0, 2.0]);
    }

    #[test]
    fn prototype_is_mean() {
        let s = Matrix::from_rows(&[[0.0, 0.0], [2.0, 2.0], [5.0, 5.0]]).unwrap();
        let p = build_prototypes(&s, &[0, 0, 1], 2).unwrap();
        assert_eq!(p.vectors().row(0), &[1.0, 1.0]);
    }

    #[test]
    fn missing_class_is_an_error() {
        let s = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(build_prototypes(&s, &[0, 0], 2).is_err());
        assert!(build_prototypes(&s, &[0, 2], 2).is_err());
    }

    #[test]
    fn five_shot_prototypes_near_class_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let d = 16;
        let means: Vec<Vec<f64>> = (0..5).map(|c| (0..d).map(|j| (c * 10 + j) as f64).collect()).collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, m) in means.iter().enumerate() {
            for _ in 0..5 {
                rows.push(m.iter().map(|v| v + noise.sample(&mut rng)).collect::<Vec<_>>());
                labels.push(c);
            }
        }
        let p = build_prototypes(&Matrix::from_rows(&rows).unwrap(), &labels, 5).unwrap();
        // Expected squared error is d/5; allow 4x slack.
        for (c, m) in means.iter().enumerate() {
            let err = linalg::squared_distance(p.vectors().row(c), m);
            assert!(err < 4.0 * d as f64 / 5.0, "class {c}: {err}");
        }
    }

    #[test]
    fn equidistant_gives_uniform_posterior() {
        let protos = Prototypes::new(Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]).unwrap());
        let q = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        let (pred, post) = nn_classify(&q, &protos, 1.0).unwrap();
        assert_eq!(pred, vec![0]);
        for &p in post.probs().row(0) {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn query_on_prototype_is_confident() {
        let rows: Vec<[f64; 2]> = (0..5).map(|i| [10.0 * i as f64, 0.0]).collect();
        let protos = Prototypes::new(Matrix::from_rows(&rows).unwrap());
        let q = Matrix::from_rows(&[[30.0, 0.0]]).unwrap();
        let (pred, post) = nn_classify(&q, &protos, DEFAULT_TEMPERATURE).unwrap();
        assert_eq!(pred, vec![3]);
        assert!(post.probs().get(0, 3) > 0.99);
        assert_eq!(post.predictions(), pred);
    }

    #[test]
    fn far_queries_do_not_underflow() {
        let protos = Prototypes::new(Matrix::from_rows(&[[0.0], [1.0]]).unwrap());
        let q = Matrix::from_rows(&[[1e6]]).unwrap();
        let (pred, post) = nn_classify(&q, &protos, 1.0).unwrap();
        assert_eq!(pred, vec![1]);
        let row = post.probs().row(0);
        assert!(row.iter().all(|v| v.is_finite()));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn centering_modes_agree_when_sets_equal() {
        let s = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]]).unwrap();
        let a = center_and_normalize(&s, &s, CenterMode::Joint).unwrap();
        let b = center_and_normalize(&s, &s, CenterMode::Separate).unwrap();
        assert!(a.support.max_abs_diff(&b.support) < 1e-15);
        assert!(a.query.max_abs_diff(&b.query) < 1e-15);
        for r in a.support.row_iter() {
            assert!((linalg::dot(r, r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rows_pass_through() {
        let s = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let q = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let c = center_and_normalize(&s, &q, CenterMode::Joint).unwrap();
        assert_eq!(c.zero_rows, 2);
        assert!(c.support.as_slice().iter().all(|&v| v == 0.0));
    }
}
