use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tafssl::classify::{self, CenterMode};
use tafssl::cluster::{self, MspParams};
use tafssl::episodes::{self, EpisodeSpec, MogSpec, NoiseParams};
use tafssl::linalg::{self, Matrix};
use tafssl::subspace;

fn matrix(rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
    })
}

fn labelled(n_way: usize, shots: usize, dim: usize, seed: u64) -> (Matrix, Vec<usize>, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Vec::new();
    let mut labels = Vec::new();
    for c in 0..n_way {
        for _ in 0..shots {
            s.extend((0..dim).map(|_| rng.random_range(-3.0..3.0)));
            labels.push(c);
        }
    }
    let q: Vec<f64> = (0..8 * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
    (
        Matrix::new(n_way * shots, dim, s).unwrap(),
        labels,
        Matrix::new(8, dim, q).unwrap(),
    )
}

fn assert_rows_sum_to_one(p: &Matrix) {
    for row in p.row_iter() {
        assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_ignores_row_order(x in matrix(2..12, 1..6), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..x.rows()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let a = linalg::covariance(&x).unwrap();
        let b = linalg::covariance(&x.select_rows(&idx)).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-9);
    }

    #[test]
    fn sym_eig_reconstructs(x in matrix(3..10, 1..7)) {
        let c = linalg::covariance(&x).unwrap();
        let e = linalg::sym_eig(&c).unwrap();
        let n = c.rows();
        let mut recon = Matrix::zeros(n, n);
        let mut data = recon.as_slice().to_vec();
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    data[i * n + j] += e.values[k] * e.vectors.get(i, k) * e.vectors.get(j, k);
                }
            }
        }
        recon = Matrix::new(n, n, data).unwrap();
        let scale = c.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(recon.max_abs_diff(&c) / scale <= 1e-8);
        prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn nn_posterior_is_a_distribution(seed in any::<u64>(), tau in 0.01f64..50.0) {
        let (s, labels, q) = labelled(4, 2, 5, seed);
        let protos = classify::build_prototypes(&s, &labels, 4).unwrap();
        let (pred, post) = classify::nn_classify(&q, &protos, tau).unwrap();
        assert_rows_sum_to_one(post.probs());
        prop_assert_eq!(pred, post.predictions());
    }

    #[test]
    fn nn_decisions_invariant_to_translation_and_scale(seed in any::<u64>(), shift in -50.0f64..50.0, c in 0.1f64..20.0) {
        let (s, labels, q) = labelled(3, 3, 4, seed);
        let t = vec![shift; 4];
        let moved = |m: &Matrix| m.sub_row_vector(&t).unwrap().scale(c);
        let base = classify::nn_classify(&q, &classify::build_prototypes(&s, &labels, 3).unwrap(), 1.0).unwrap().0;
        let protos = classify::build_prototypes(&moved(&s), &labels, 3).unwrap();
        let other = classify::nn_classify(&moved(&q), &protos, 1.0).unwrap().0;
        prop_assert_eq!(base, other);
    }

    #[test]
    fn sub_star_ignores_per_set_shift(seed in any::<u64>(), a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let (s, _, q) = labelled(3, 2, 4, seed);
        let base = classify::center_and_normalize(&s, &q, CenterMode::Separate).unwrap();
        let shifted = classify::center_and_normalize(
            &s.sub_row_vector(&[a; 4]).unwrap(),
            &q.sub_row_vector(&[b; 4]).unwrap(),
            CenterMode::Separate,
        ).unwrap();
        prop_assert!(base.support.max_abs_diff(&shifted.support) <= 1e-9);
        prop_assert!(base.query.max_abs_diff(&shifted.query) <= 1e-9);
    }

    #[test]
    fn msp_prototypes_stay_in_pool_hull(seed in any::<u64>(), t in 0.0f64..0.9, n in 0usize..6) {
        let (s, labels, q) = labelled(3, 2, 3, seed);
        let pool = s.vstack(&q).unwrap();
        let params = MspParams { threshold: t, iterations: n, temperature: 1.0 };
        let out = cluster::msp(&s, &labels, 3, &q, &pool, params).unwrap();
        assert_rows_sum_to_one(out.posterior.probs());
        for j in 0..3 {
            let col = pool.column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for p in out.prototypes.vectors().row_iter() {
                prop_assert!(p[j] >= lo - 1e-9 && p[j] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn bkm_single_cluster_matches_closed_form(seed in any::<u64>()) {
        let (s, labels, q) = labelled(3, 2, 4, seed);
        let pool = s.vstack(&q).unwrap();
        let out = cluster::bkm(&s, &labels, 3, &q, &pool, 1, seed).unwrap();
        let d = linalg::pairwise_sq_distances(&q, &s).unwrap();
        for i in 0..q.rows() {
            let m = d.row(i).iter().copied().fold(f64::INFINITY, f64::min);
            let w: Vec<f64> = d.row(i).iter().map(|v| (m - v).exp()).collect();
            let z: f64 = w.iter().sum();
            for c in 0..3 {
                let p: f64 = w.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(v, _)| v).sum::<f64>() / z;
                prop_assert!((out.posterior.probs().get(i, c) - p).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pca_projection_is_orthonormal(x in matrix(6..20, 3..8), r in 1usize..4) {
        let p = subspace::fit_pca(&x, r).unwrap();
        let w = p.weights();
        let g = w.matmul_t(w).unwrap();
        prop_assert!(g.max_abs_diff(&Matrix::identity(w.rows())) <= 1e-8);
    }
}

#[test]
fn unbalanced_query_counts_average_out() {
    let store = episodes::reference_store();
    let spec = EpisodeSpec {
        queries_per_class: 15,
        unbalance: 10,
        ..EpisodeSpec::default()
    };
    let draws = 10_000;
    let mut total = 0usize;
    for i in 0..draws {
        let mut rng = episodes::episode_rng(7, i);
        let ep = episodes::sample_episode(&store, &spec, &mut rng).unwrap();
        total += ep.query.rows();
    }
    let mean_per_class = total as f64 / (draws as f64 * spec.n_way as f64);
    let expected = 15.0 + 10.0 / 2.0;
    assert!((mean_per_class - expected).abs() / expected <= 0.02, "{mean_per_class}");
}

#[test]
fn mog_noise_variance_matches() {
    let spec = MogSpec::uniform_noise(6, 0, NoiseParams { mean: 1.5, std: 2.0 }, 1.0, 1.0, 0.5);
    let store = episodes::generate_mog_store(&spec, 4, 2500, 3).unwrap();
    let (x, _) = store.flatten();
    let c = linalg::covariance(&x).unwrap();
    let mean = linalg::column_mean(&x).unwrap();
    for j in 0..6 {
        assert!((c.get(j, j) - 4.0).abs() / 4.0 <= 0.05, "var {}", c.get(j, j));
        assert!((mean[j] - 1.5).abs() < 0.1);
    }
}

#[test]
fn episodes_keep_support_and_query_disjoint() {
    let store = episodes::reference_store();
    let spec = EpisodeSpec { k_shot: 5, ..EpisodeSpec::default() };
    let mut rng = episodes::episode_rng(11, 0);
    let ep = episodes::sample_episode(&store, &spec, &mut rng).unwrap();
    for s in ep.support.row_iter() {
        assert!(ep.query.row_iter().all(|q| q != s));
    }
    assert_eq!(ep.support.rows(), 25);
    assert_eq!(ep.query_labels().len(), 75);
}
