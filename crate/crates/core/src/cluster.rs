//! Clustering-based inference over a task's pooled samples: k-means, Bayesian
//! K-Means (BKM) and Mean-Shift Propagation (MSP).
//!
//! k-means runs hard Lloyd iterations until the assignment stops changing or
//! [`KMEANS_MAX_ITER`] is hit; soft memberships are then read off as
//! `softmax(−‖x − c‖²)` over the centroids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classify::{self, ClassPosterior, Prototypes};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

pub const DEFAULT_CLUSTERS: usize = 5;
pub const KMEANS_MAX_ITER: usize = 100;
pub const DEFAULT_MSP_THRESHOLD: f64 = 0.3;
pub const DEFAULT_MSP_ITERATIONS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Matrix,
    /// `pool × k`, rows sum to one.
    pub assign_probs: Matrix,
    pub requested_k: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }
}

fn nearest(x: &[f64], centroids: &Matrix) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.row_iter().enumerate() {
        let d = linalg::squared_distance(x, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, the rest drawn with probability
/// proportional to squared distance from the nearest chosen centre.
fn seed_centroids(pool: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = pool.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = pool
        .row_iter()
        .map(|x| linalg::squared_distance(x, pool.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, x) in pool.row_iter().enumerate() {
            d2[i] = d2[i].min(linalg::squared_distance(x, pool.row(next)));
        }
    }
    pool.select_rows(&chosen)
}

/// Soft memberships `softmax(−‖x − c_j‖²)` of every row of `x`.
pub fn soft_assign(x: &Matrix, centroids: &Matrix) -> Result<Matrix> {
    let d2 = linalg::pairwise_sq_distances(x, centroids)?;
    let k = centroids.rows();
    let mut probs = Matrix::zeros(x.rows(), k);
    let mut logits = vec![0.0; k];
    for i in 0..x.rows() {
        for (l, &d) in logits.iter_mut().zip(d2.row(i)) {
            *l = -d;
        }
        classify::softmax_into(&logits, probs.row_mut(i));
    }
    Ok(probs)
}

/// Clusters `pool` into `k` groups. If the pool has fewer than `k` rows, `k`
/// drops to the row count; the original request is kept in `requested_k`.
pub fn kmeans(pool: &Matrix, k: usize, seed: u64) -> Result<Clustering> {
    if pool.is_empty() {
        return Err(Error::EmptyInput);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let requested_k = k;
    let k = k.min(pool.rows());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(pool, k, &mut rng);
    let mut assign: Vec<usize> = pool.row_iter().map(|x| nearest(x, &centroids)).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut sums = Matrix::zeros(k, pool.cols());
        let mut counts = vec![0usize; k];
        for (x, &a) in pool.row_iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums.row_mut(a).iter_mut().zip(x) {
                *s += v;
            }
        }
        for j in 0..k {
            // Empty clusters keep their previous centre.
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                for (c, s) in centroids.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *c = s * inv;
                }
            }
        }
        let next: Vec<usize> = pool.row_iter().map(|x| nearest(x, &centroids)).collect();
        if next == assign {
            converged = true;
            break;
        }
        assign = next;
    }
    let assign_probs = soft_assign(pool, &centroids)?;
    Ok(Clustering {
        centroids,
        assign_probs,
        requested_k,
        iterations,
        converged,
    })
}

fn log_softmax_rows(neg_d2: &Matrix) -> Matrix {
    let mut out = neg_d2.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone)]
pub struct BkmOutput {
    pub posterior: ClassPosterior,
    pub clustering: Clustering,
    /// Query rows that degenerated and were replaced by a uniform row.
    pub fallbacks: usize,
}

/// Bayesian K-Means: clusters `pool`, then marginalises per-cluster
/// support-weighted class posteriors over each query's cluster membership.
#[allow(clippy::too_many_arguments)]
pub fn bkm(
    support: &Matrix,
    labels: &[usize],
    n_way: usize,
    queries: &Matrix,
    pool: &Matrix,
    k: usize,
    seed: u64,
) -> Result<BkmOutput> {
    let clustering = kmeans(pool, k, seed)?;
    let (posterior, fallbacks) = bkm_with_centroids(support, labels, n_way, queries, &clustering.centroids)?;
    Ok(BkmOutput {
        posterior,
        clustering,
        fallbacks,
    })
}

/// The inference half of BKM for fixed centroids.
///
/// Per query `q` and cluster `k`,
/// `P(L(q)=i | k) ∝ Σ_{L(s)=i} exp(−‖q−s‖²)·P(cluster(s)=k)`, and the result
/// is `Σ_k P(L(q)=i | k)·P(cluster(q)=k)`. Everything is evaluated in log
/// space so distant points do not underflow the per-cluster normaliser.
pub fn bkm_with_centroids(
    support: &Matrix,
    labels: &[usize],
    n_way: usize,
    queries: &Matrix,
    centroids: &Matrix,
) -> Result<(ClassPosterior, usize)> {
    if labels.len() != support.rows() {
        return Err(Error::DimensionMismatch {
            expected: support.rows(),
            actual: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_way) {
        return Err(Error::InvalidArgument(format!("support label {bad} outside 0..{n_way}")));
    }
    if queries.cols() != support.cols() {
        return Err(Error::DimensionMismatch {
            expected: support.cols(),
            actual: queries.cols(),
        });
    }
    let k = centroids.rows();
    let log_ps = log_softmax_rows(&linalg::pairwise_sq_distances(support, centroids)?.scale(-1.0));
    let log_pq = log_softmax_rows(&linalg::pairwise_sq_distances(queries, centroids)?.scale(-1.0));
    let dqs = linalg::pairwise_sq_distances(queries, support)?;

    let mut probs = Matrix::zeros(queries.rows(), n_way);
    let mut fallbacks = 0;
    let mut terms = vec![0.0; support.rows()];
    for q in 0..queries.rows() {
        let out = probs.row_mut(q);
        for c in 0..k {
            for (t, term) in terms.iter_mut().enumerate() {
                *term = -dqs.get(q, t) + log_ps.get(t, c);
            }
            let lse = log_sum_exp(&terms);
            let weight = log_pq.get(q, c).exp();
            for (t, &term) in terms.iter().enumerate() {
                out[labels[t]] += (term - lse).exp() * weight;
            }
        }
        let sum: f64 = out.iter().sum();
        if !sum.is_finite() || sum <= 0.0 || out.iter().any(|v| !v.is_finite()) {
            out.iter_mut().for_each(|v| *v = 1.0 / n_way as f64);
            fallbacks += 1;
        } else {
            out.iter_mut().for_each(|v| *v /= sum);
        }
    }
    Ok((ClassPosterior::from_matrix(probs), fallbacks))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MspParams {
    /// Confidence threshold `T`.
    pub threshold: f64,
    /// Refinement rounds `N`.
    pub iterations: usize,
    pub temperature: f64,
}

impl Default for MspParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_MSP_THRESHOLD,
            iterations: DEFAULT_MSP_ITERATIONS,
            temperature: classify::DEFAULT_TEMPERATURE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MspOutput {
    pub prototypes: Prototypes,
    pub predictions: Vec<usize>,
    pub posterior: ClassPosterior,
    /// Balanced count `K` used in each round; 0 means the round kept the
    /// previous prototypes.
    pub k_history: Vec<usize>,
}

/// Mean-Shift Propagation. `pool` should contain the supports themselves as
/// well as the unlabeled rows (queries or the extra unlabeled set).
pub fn msp(
    support: &Matrix,
    labels: &[usize],
    n_way: usize,
    queries: &Matrix,
    pool: &Matrix,
    params: MspParams,
) -> Result<MspOutput> {
    let mut protos = classify::build_prototypes(support, labels, n_way)?;
    if pool.cols() != support.cols() {
        return Err(Error::DimensionMismatch {
            expected: support.cols(),
            actual: pool.cols(),
        });
    }
    let mut k_history = Vec::with_capacity(params.iterations);
    for _ in 0..params.iterations {
        let (assign, post) = classify::nn_classify(pool, &protos, params.temperature)?;
        let probs = post.probs();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_way];
        for (x, &c) in assign.iter().enumerate() {
            members[c].push(x);
        }
        let balanced = members
            .iter()
            .enumerate()
            .map(|(i, m)| m.iter().filter(|&&x| probs.get(x, i) > params.threshold).count())
            .min()
            .unwrap_or(0);
        k_history.push(balanced);
        if balanced == 0 {
            continue;
        }
        let mut next = Matrix::zeros(n_way, pool.cols());
        for (i, m) in members.iter_mut().enumerate() {
            // Stable sort keeps pool order among equal confidences.
            m.sort_by(|&a, &b| probs.get(b, i).total_cmp(&probs.get(a, i)));
            let row = next.row_mut(i);
            for &x in &m[..balanced] {
                for (p, v) in row.iter_mut().zip(pool.row(x)) {
                    *p += v;
                }
            }
            let inv = 1.0 / balanced as f64;
            row.iter_mut().for_each(|p| *p *= inv);
        }
        protos = Prototypes::new(next);
    }
    let (predictions, posterior) = classify::nn_classify(queries, &protos, params.temperature)?;
    Ok(MspOutput {
        prototypes: protos,
        predictions,
        posterior,
        k_history,
    })
}
