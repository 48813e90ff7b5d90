//! Feature stores, episode sampling and the synthetic mixture-of-Gaussians
//! feature generator.
//!
//! The generator gives every class its own mean on each signal dimension,
//! drawn from `N(0, σ_between²)`. A signal entry fires with probability `ρs`
//! (drawn around that class mean with std `σs`) and otherwise looks like noise,
//! `N(μn, σn²)`. Noise dimensions ignore the class entirely. The per-class
//! means are a modelling choice: without some class-conditional structure the
//! signal dimensions would carry no label information.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Label used for unlabeled rows drawn from distractor classes.
pub const DISTRACTOR_LABEL: i64 = -1;

pub const DEFAULT_MI_BINS: usize = 32;

/// Labeled pool of feature vectors, grouped by class id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    classes: BTreeMap<u32, Matrix>,
}

impl FeatureStore {
    pub fn new(dim: usize, classes: BTreeMap<u32, Matrix>) -> Result<Self> {
        for (&id, m) in &classes {
            if m.cols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: m.cols(),
                });
            }
            if m.rows() == 0 {
                return Err(Error::InvalidArgument(format!("class {id} has no samples")));
            }
        }
        Ok(Self { dim, classes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &BTreeMap<u32, Matrix> {
        &self.classes
    }

    pub fn class(&self, id: u32) -> Option<&Matrix> {
        self.classes.get(&id)
    }

    pub fn n_samples(&self) -> usize {
        self.classes.values().map(Matrix::rows).sum()
    }

    /// All samples stacked in class order, with their class ids.
    pub fn flatten(&self) -> (Matrix, Vec<u32>) {
        let mut data = Vec::with_capacity(self.n_samples() * self.dim);
        let mut labels = Vec::with_capacity(self.n_samples());
        for (&id, m) in &self.classes {
            data.extend_from_slice(m.as_slice());
            labels.extend(std::iter::repeat_n(id, m.rows()));
        }
        (Matrix::from_vec_unchecked(labels.len(), self.dim, data), labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Queries double as the unlabeled pool.
    Transductive,
    /// A separate unlabeled set accompanies the task.
    Semi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub queries_per_class: usize,
    pub unlabeled_per_class: usize,
    pub distractor_classes: usize,
    /// Each class gets `queries_per_class + uniform{0..=unbalance}` queries.
    pub unbalance: usize,
    pub mode: Mode,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            queries_per_class: 15,
            unlabeled_per_class: 0,
            distractor_classes: 0,
            unbalance: 0,
            mode: Mode::Transductive,
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::InvalidArgument("n_way must be >= 2".into()));
        }
        if self.k_shot < 1 {
            return Err(Error::InvalidArgument("k_shot must be >= 1".into()));
        }
        if self.mode == Mode::Transductive {
            if self.unlabeled_per_class != 0 {
                return Err(Error::InvalidArgument(
                    "transductive mode uses the queries as the unlabeled set; unlabeled must be 0".into(),
                ));
            }
            if self.distractor_classes != 0 {
                return Err(Error::InvalidArgument("distractor classes require semi mode".into()));
            }
        }
        Ok(())
    }
}

/// One few-shot task. Query labels are kept private and are only reachable
/// through [`Episode::query_labels`], which the harness uses for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: Matrix,
    /// Task-local class index of each support row.
    pub support_labels: Vec<usize>,
    pub query: Matrix,
    pub unlabeled: Matrix,
    /// Task-local class index per unlabeled row, or [`DISTRACTOR_LABEL`].
    pub unlabeled_labels: Vec<i64>,
    /// Store class id behind each task-local index.
    pub class_ids: Vec<u32>,
    query_labels: Vec<usize>,
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.class_ids.len()
    }

    pub fn query_labels(&self) -> &[usize] {
        &self.query_labels
    }
}

/// Stream for episode `index` under `seed`, independent of other episodes.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn sample_episode(store: &FeatureStore, spec: &EpisodeSpec, rng: &mut ChaCha8Rng) -> Result<Episode> {
    spec.validate()?;
    let needed_classes = spec.n_way + spec.distractor_classes;
    if store.n_classes() < needed_classes {
        return Err(Error::InvalidArgument(format!(
            "store has {} classes, episode needs {needed_classes}",
            store.n_classes()
        )));
    }
    let ids: Vec<u32> = store.classes.keys().copied().collect();
    let picked: Vec<u32> = index::sample(rng, ids.len(), needed_classes)
        .into_iter()
        .map(|i| ids[i])
        .collect();
    let (task, distract) = picked.split_at(spec.n_way);
    let unlabeled = if spec.mode == Mode::Semi { spec.unlabeled_per_class } else { 0 };

    let dim = store.dim;
    let mut support = Vec::new();
    let mut support_labels = Vec::new();
    let mut query = Vec::new();
    let mut query_labels = Vec::new();
    let mut unl = Vec::new();
    let mut unl_labels = Vec::new();

    for (label, &id) in task.iter().enumerate() {
        let n_query = spec.queries_per_class + rng.random_range(0..=spec.unbalance);
        let needed = spec.k_shot + n_query + unlabeled;
        let rows = &store.classes[&id];
        if rows.rows() < needed {
            return Err(Error::ClassTooSmall {
                class: id,
                needed,
                available: rows.rows(),
            });
        }
        let idx = index::sample(rng, rows.rows(), needed).into_vec();
        let (s, rest) = idx.split_at(spec.k_shot);
        let (q, u) = rest.split_at(n_query);
        for &i in s {
            support.extend_from_slice(rows.row(i));
            support_labels.push(label);
        }
        for &i in q {
            query.extend_from_slice(rows.row(i));
            query_labels.push(label);
        }
        for &i in u {
            unl.extend_from_slice(rows.row(i));
            unl_labels.push(label as i64);
        }
    }
    for &id in distract {
        let rows = &store.classes[&id];
        if rows.rows() < unlabeled {
            return Err(Error::ClassTooSmall {
                class: id,
                needed: unlabeled,
                available: rows.rows(),
            });
        }
        for i in index::sample(rng, rows.rows(), unlabeled) {
            unl.extend_from_slice(rows.row(i));
            unl_labels.push(DISTRACTOR_LABEL);
        }
    }

    Ok(Episode {
        support: Matrix::from_vec_unchecked(support_labels.len(), dim, support),
        support_labels,
        query: Matrix::from_vec_unchecked(query_labels.len(), dim, query),
        unlabeled: Matrix::from_vec_unchecked(unl_labels.len(), dim, unl),
        unlabeled_labels: unl_labels,
        class_ids: task.to_vec(),
        query_labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub mean: f64,
    pub std: f64,
}

/// Parameters of the synthetic mixture-of-Gaussians features.
#[derive(Debug, Clone, PartialEq)]
pub struct MogSpec {
    pub dim: usize,
    /// The first `signal_dims` dimensions carry class information.
    pub signal_dims: usize,
    /// Per-dimension noise component `(μn, σn)`.
    pub noise: Vec<NoiseParams>,
    /// Spread of class means on signal dimensions.
    pub between_std: f64,
    /// Within-class std `σs` of the signal component.
    pub signal_std: f64,
    /// Activation prior `ρs`, shared by all classes and signal dimensions.
    pub signal_prior: f64,
}

pub const REFERENCE_CLASSES: usize = 20;
pub const REFERENCE_PER_CLASS: usize = 100;
pub const REFERENCE_SEED: u64 = 2020;

impl MogSpec {
    pub fn uniform_noise(
        dim: usize,
        signal_dims: usize,
        noise: NoiseParams,
        between_std: f64,
        signal_std: f64,
        signal_prior: f64,
    ) -> Self {
        Self {
            dim,
            signal_dims,
            noise: vec![noise; dim],
            between_std,
            signal_std,
            signal_prior,
        }
    }

    /// 64 dimensions, 8 of them informative.
    pub fn reference() -> Self {
        Self::uniform_noise(64, 8, NoiseParams { mean: 0.0, std: 1.0 }, 3.0, 1.0, 0.8)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("mog spec: {msg}")));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.signal_dims > self.dim {
            return bad("signal_dims exceeds dim");
        }
        if self.noise.len() != self.dim {
            return bad("need one noise entry per dimension");
        }
        if self.noise.iter().any(|n| !(n.std > 0.0) || !n.mean.is_finite() || !n.std.is_finite()) {
            return bad("noise std must be positive and finite");
        }
        if !(self.between_std > 0.0 && self.between_std.is_finite()) {
            return bad("between_std must be positive");
        }
        if !(self.signal_std > 0.0 && self.signal_std.is_finite()) {
            return bad("signal_std must be positive");
        }
        if !(0.0..=1.0).contains(&self.signal_prior) {
            return bad("signal_prior must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Store with the class means used to generate it.
#[derive(Debug, Clone)]
pub struct MogStore {
    pub store: FeatureStore,
    /// `n_classes × signal_dims`; row `c` belongs to class id `c`.
    pub signal_means: Matrix,
}

pub fn generate_mog_store(spec: &MogSpec, n_classes: usize, per_class: usize, seed: u64) -> Result<FeatureStore> {
    generate_mog_store_detailed(spec, n_classes, per_class, seed).map(|s| s.store)
}

pub fn generate_mog_store_detailed(
    spec: &MogSpec,
    n_classes: usize,
    per_class: usize,
    seed: u64,
) -> Result<MogStore> {
    spec.validate()?;
    if n_classes == 0 || per_class == 0 {
        return Err(Error::InvalidArgument("class and sample counts must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut means = Matrix::zeros(n_classes, spec.signal_dims);
    for c in 0..n_classes {
        for d in 0..spec.signal_dims {
            means.set(c, d, spec.between_std * std_normal.sample(&mut rng));
        }
    }
    let mut classes = BTreeMap::new();
    for c in 0..n_classes {
        let mut data = Vec::with_capacity(per_class * spec.dim);
        for _ in 0..per_class {
            for d in 0..spec.dim {
                let z = std_normal.sample(&mut rng);
                let noise = spec.noise[d];
                let v = if d < spec.signal_dims && rng.random::<f64>() < spec.signal_prior {
                    means.get(c, d) + spec.signal_std * z
                } else {
                    noise.mean + noise.std * z
                };
                data.push(v);
            }
        }
        classes.insert(c as u32, Matrix::from_vec_unchecked(per_class, spec.dim, data));
    }
    Ok(MogStore {
        store: FeatureStore::new(spec.dim, classes)?,
        signal_means: means,
    })
}

/// The reference desk-scale store: [`MogSpec::reference`], 20 classes of 100.
pub fn reference_store() -> FeatureStore {
    generate_mog_store(&MogSpec::reference(), REFERENCE_CLASSES, REFERENCE_PER_CLASS, REFERENCE_SEED)
        .expect("reference spec is valid")
}

fn entropy(counts: &[usize], total: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Per-dimension mutual information between class label and the feature
/// discretised into `bins` equal-width bins, normalised by the smaller of the
/// two marginal entropies. Constant dimensions score 0.
pub fn mutual_information(features: &Matrix, labels: &[u32], bins: usize) -> Result<Vec<f64>> {
    if bins < 2 {
        return Err(Error::InvalidArgument("need at least 2 bins".into()));
    }
    if labels.len() != features.rows() {
        return Err(Error::DimensionMismatch {
            expected: features.rows(),
            actual: labels.len(),
        });
    }
    if features.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut label_ids: Vec<u32> = labels.to_vec();
    label_ids.sort_unstable();
    label_ids.dedup();
    let label_idx: Vec<usize> = labels
        .iter()
        .map(|l| label_ids.binary_search(l).expect("present"))
        .collect();
    let n_labels = label_ids.len();
    let total = features.rows() as f64;
    let mut label_counts = vec![0usize; n_labels];
    for &l in &label_idx {
        label_counts[l] += 1;
    }
    let h_label = entropy(&label_counts, total);

    let mut out = Vec::with_capacity(features.cols());
    for j in 0..features.cols() {
        let col = features.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            out.push(0.0);
            continue;
        }
        let width = (hi - lo) / bins as f64;
        let mut joint = vec![0usize; n_labels * bins];
        let mut bin_counts = vec![0usize; bins];
        for (&v, &l) in col.iter().zip(&label_idx) {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            joint[l * bins + b] += 1;
            bin_counts[b] += 1;
        }
        let h_bin = entropy(&bin_counts, total);
        let denom = h_label.min(h_bin);
        if denom <= 0.0 {
            out.push(0.0);
            continue;
        }
        let mut mi = 0.0;
        for l in 0..n_labels {
            for b in 0..bins {
                let c = joint[l * bins + b];
                if c == 0 {
                    continue;
                }
                let pj = c as f64 / total;
                mi += pj * (pj * total * total / (label_counts[l] as f64 * bin_counts[b] as f64)).ln();
            }
        }
        out.push((mi / denom).clamp(0.0, 1.0));
    }
    Ok(out)
}

/// [`mutual_information`] over every sample of a store.
pub fn store_mutual_information(store: &FeatureStore, bins: usize) -> Result<Vec<f64>> {
    let (x, labels) = store.flatten();
    mutual_information(&x, &labels, bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn indexed_store(n_classes: u32, per_class: usize) -> FeatureStore {
        // Each row encodes (class, row index) so disjointness is checkable.
        let mut classes = BTreeMap::new();
        for c in 0..n_classes {
            let data = (0..per_class).flat_map(|i| [c as f64, i as f64]).collect();
            classes.insert(c, Matrix::new(per_class, 2, data).unwrap());
        }
        FeatureStore::new(2, classes).unwrap()
    }

    #[test]
    fn balanced_episode_shape() {
        let store = indexed_store(10, 40);
        let spec = EpisodeSpec::default();
        let ep = sample_episode(&store, &spec, &mut episode_rng(1, 0)).unwrap();
        assert_eq!(ep.query.rows(), 75);
        assert_eq!(ep.support.rows(), 5);
        assert_eq!(ep.unlabeled.rows(), 0);
        let mut seen: Vec<usize> = ep.support_labels.clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn same_seed_same_episode() {
        let store = indexed_store(10, 40);
        let spec = EpisodeSpec {
            unbalance: 5,
            ..EpisodeSpec::default()
        };
        let a = sample_episode(&store, &spec, &mut episode_rng(9, 3)).unwrap();
        let b = sample_episode(&store, &spec, &mut episode_rng(9, 3)).unwrap();
        assert_eq!(a, b);
        let c = sample_episode(&store, &spec, &mut episode_rng(9, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn semi_sets_are_disjoint_and_distractors_flagged() {
        let store = indexed_store(12, 40);
        let spec = EpisodeSpec {
            mode: Mode::Semi,
            unlabeled_per_class: 5,
            distractor_classes: 3,
            ..EpisodeSpec::default()
        };
        let ep = sample_episode(&store, &spec, &mut episode_rng(2, 0)).unwrap();
        assert_eq!(ep.unlabeled.rows(), 5 * 5 + 3 * 5);
        assert_eq!(ep.unlabeled_labels.iter().filter(|&&l| l == DISTRACTOR_LABEL).count(), 15);
        let key = |r: &[f64]| (r[0] as u32, r[1] as u32);
        let mut seen = HashSet::new();
        for m in [&ep.support, &ep.query, &ep.unlabeled] {
            for r in m.row_iter() {
                assert!(seen.insert(key(r)), "row {r:?} drawn twice");
            }
        }
        let task: HashSet<u32> = ep.class_ids.iter().copied().collect();
        for (r, &l) in ep.unlabeled.row_iter().zip(&ep.unlabeled_labels) {
            assert_eq!(l == DISTRACTOR_LABEL, !task.contains(&(r[0] as u32)));
        }
    }

    #[test]
    fn no_distractors_means_task_classes_only() {
        let store = indexed_store(8, 40);
        let spec = EpisodeSpec {
            mode: Mode::Semi,
            unlabeled_per_class: 4,
            ..EpisodeSpec::default()
        };
        let ep = sample_episode(&store, &spec, &mut episode_rng(3, 0)).unwrap();
        assert!(ep.unlabeled_labels.iter().all(|&l| l >= 0));
    }

    #[test]
    fn undersized_class_is_named() {
        let mut classes = BTreeMap::new();
        for c in 0..5u32 {
            let n = if c == 3 { 4 } else { 40 };
            classes.insert(c, Matrix::zeros(n, 2));
        }
        let store = FeatureStore::new(2, classes).unwrap();
        let err = sample_episode(&store, &EpisodeSpec::default(), &mut episode_rng(0, 0)).unwrap_err();
        assert!(matches!(err, Error::ClassTooSmall { class: 3, .. }), "{err}");
    }

    #[test]
    fn transductive_rejects_unlabeled() {
        let spec = EpisodeSpec {
            unlabeled_per_class: 3,
            ..EpisodeSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn mog_generation_is_seeded() {
        let spec = MogSpec::reference();
        let a = generate_mog_store(&spec, 5, 10, 1).unwrap();
        let b = generate_mog_store(&spec, 5, 10, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_mog_store(&spec, 5, 10, 2).unwrap());
    }

    #[test]
    fn mog_rejects_bad_spec() {
        let mut spec = MogSpec::reference();
        spec.signal_prior = 1.5;
        assert!(generate_mog_store(&spec, 2, 2, 0).is_err());
        let mut spec = MogSpec::reference();
        spec.signal_dims = 65;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn mi_label_copy_is_one() {
        let labels: Vec<u32> = (0..500).map(|i| (i % 5) as u32).collect();
        let x = Matrix::new(500, 1, labels.iter().map(|&l| l as f64).collect()).unwrap();
        let mi = mutual_information(&x, &labels, 10).unwrap();
        assert!((mi[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mi_constant_is_zero() {
        let labels: Vec<u32> = (0..20).map(|i| (i % 2) as u32).collect();
        let x = Matrix::new(20, 1, vec![3.0; 20]).unwrap();
        assert_eq!(mutual_information(&x, &labels, 8).unwrap(), vec![0.0]);
        assert!(mutual_information(&x, &labels, 1).is_err());
    }
}
