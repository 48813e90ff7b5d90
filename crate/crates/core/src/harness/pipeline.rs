use std::fmt;
use std::ops::AddAssign;
use std::str::FromStr;

use crate::classify::{self, CenterMode};
use crate::cluster::{self, MspParams};
use crate::episodes::{Episode, Mode};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::subspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    None,
    Pca,
    Ica,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preproc {
    None,
    /// Subtract the joint mean of S ∪ Q, then L2-normalise.
    Sub,
    /// Subtract the means of S and Q separately, then L2-normalise.
    SubStar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inference {
    Nn,
    Bkm,
    Msp,
}

/// Named method presets accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodName {
    Nn,
    Sub,
    SubStar,
    PcaNn,
    IcaNn,
    PcaBkm,
    IcaBkm,
    PcaMsp,
    IcaMsp,
    Bkm,
    Msp,
}

impl MethodName {
    pub const ALL: [MethodName; 11] = [
        MethodName::Nn,
        MethodName::Sub,
        MethodName::SubStar,
        MethodName::PcaNn,
        MethodName::IcaNn,
        MethodName::PcaBkm,
        MethodName::IcaBkm,
        MethodName::PcaMsp,
        MethodName::IcaMsp,
        MethodName::Bkm,
        MethodName::Msp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Nn => "nn",
            MethodName::Sub => "sub",
            MethodName::SubStar => "sub-star",
            MethodName::PcaNn => "pca-nn",
            MethodName::IcaNn => "ica-nn",
            MethodName::PcaBkm => "pca-bkm",
            MethodName::IcaBkm => "ica-bkm",
            MethodName::PcaMsp => "pca-msp",
            MethodName::IcaMsp => "ica-msp",
            MethodName::Bkm => "bkm",
            MethodName::Msp => "msp",
        }
    }

    fn stages(self) -> (Projection, Preproc, Inference) {
        use Inference as I;
        use Preproc as P;
        use Projection as J;
        match self {
            MethodName::Nn => (J::None, P::None, I::Nn),
            MethodName::Sub => (J::None, P::Sub, I::Nn),
            MethodName::SubStar => (J::None, P::SubStar, I::Nn),
            MethodName::PcaNn => (J::Pca, P::None, I::Nn),
            MethodName::IcaNn => (J::Ica, P::None, I::Nn),
            MethodName::PcaBkm => (J::Pca, P::None, I::Bkm),
            MethodName::IcaBkm => (J::Ica, P::None, I::Bkm),
            MethodName::PcaMsp => (J::Pca, P::None, I::Msp),
            MethodName::IcaMsp => (J::Ica, P::None, I::Msp),
            MethodName::Bkm => (J::None, P::None, I::Bkm),
            MethodName::Msp => (J::None, P::None, I::Msp),
        }
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let alias = match s {
            "sub_star" | "sub*" => "sub-star",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == alias)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Tunables shared by every pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub temperature: f64,
    pub msp_threshold: f64,
    pub msp_iterations: usize,
    pub clusters: usize,
    pub pca_dim: usize,
    pub ica_dim: usize,
    /// For the mean-subtraction baselines: L2-normalise supports before
    /// averaging them into prototypes (otherwise the prototypes are
    /// normalised after averaging).
    pub normalize_before_averaging: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            temperature: classify::DEFAULT_TEMPERATURE,
            msp_threshold: cluster::DEFAULT_MSP_THRESHOLD,
            msp_iterations: cluster::DEFAULT_MSP_ITERATIONS,
            clusters: cluster::DEFAULT_CLUSTERS,
            pca_dim: subspace::DEFAULT_PCA_DIM,
            ica_dim: subspace::DEFAULT_ICA_DIM,
            normalize_before_averaging: true,
        }
    }
}

/// Warning counters accumulated across episodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub ica_not_converged: usize,
    pub dim_reduced: usize,
    pub clusters_reduced: usize,
    pub bkm_fallback_rows: usize,
    pub msp_skipped_rounds: usize,
    pub zero_norm_rows: usize,
}

impl AddAssign for Diagnostics {
    fn add_assign(&mut self, o: Self) {
        self.ica_not_converged += o.ica_not_converged;
        self.dim_reduced += o.dim_reduced;
        self.clusters_reduced += o.clusters_reduced;
        self.bkm_fallback_rows += o.bkm_fallback_rows;
        self.msp_skipped_rounds += o.msp_skipped_rounds;
        self.zero_norm_rows += o.zero_norm_rows;
    }
}

impl Diagnostics {
    pub fn is_clean(&self) -> bool {
        *self == Self::default()
    }

    /// `key=count` pairs for the non-zero counters.
    pub fn summary(&self) -> Vec<String> {
        [
            ("ica_not_converged", self.ica_not_converged),
            ("dim_reduced", self.dim_reduced),
            ("clusters_reduced", self.clusters_reduced),
            ("bkm_fallback_rows", self.bkm_fallback_rows),
            ("msp_skipped_rounds", self.msp_skipped_rounds),
            ("zero_norm_rows", self.zero_norm_rows),
        ]
        .into_iter()
        .filter(|(_, v)| *v > 0)
        .map(|(k, v)| format!("{k}={v}"))
        .collect()
    }
}

/// Projection → preprocessing → inference, applied to one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodPipeline {
    pub name: MethodName,
    pub projection: Projection,
    pub preproc: Preproc,
    pub inference: Inference,
    pub hyper: Hyperparams,
}

/// Episode sets after the projection stage. `extra` is the unlabeled part of
/// the pool: the queries in transductive mode, U in semi mode.
#[derive(Debug, Clone)]
pub struct ProjectedTask {
    pub support: Matrix,
    pub query: Matrix,
    pub extra: Matrix,
    pub diagnostics: Diagnostics,
    /// Seed the projection was fitted with; inference reuses it.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub labels: Vec<usize>,
    pub posterior: classify::ClassPosterior,
    pub diagnostics: Diagnostics,
}

impl MethodPipeline {
    pub fn new(name: MethodName, hyper: Hyperparams) -> Self {
        let (projection, preproc, inference) = name.stages();
        Self {
            name,
            projection,
            preproc,
            inference,
            hyper,
        }
    }

    pub fn projection_dim(&self) -> Option<usize> {
        match self.projection {
            Projection::None => None,
            Projection::Pca => Some(self.hyper.pca_dim),
            Projection::Ica => Some(self.hyper.ica_dim),
        }
    }

    /// Checks the pipeline against the episode mode before anything runs.
    /// `unlabeled_per_class` is only consulted in semi mode.
    pub fn validate(&self, mode: Mode, unlabeled_per_class: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidPipeline(format!("{}: {msg}", self.name)));
        if self.preproc != Preproc::None && mode != Mode::Transductive {
            return bad("mean subtraction baselines require transductive mode".into());
        }
        let needs_pool = self.projection != Projection::None || self.inference != Inference::Nn;
        if needs_pool && mode == Mode::Semi && unlabeled_per_class == 0 {
            return bad("semi mode needs unlabeled samples (--unlabeled) to form a pool".into());
        }
        if self.projection_dim() == Some(0) {
            return bad("projection dimension must be >= 1".into());
        }
        if self.inference == Inference::Bkm && self.hyper.clusters == 0 {
            return bad("bkm needs at least one cluster".into());
        }
        if !(self.hyper.temperature > 0.0 && self.hyper.temperature.is_finite()) {
            return bad("temperature must be positive".into());
        }
        Ok(())
    }

    /// Identifies the projection stage; pipelines with equal keys produce
    /// identical [`ProjectedTask`]s for the same episode and seed.
    pub fn projection_key(&self) -> (Projection, Option<usize>) {
        (self.projection, self.projection_dim())
    }

    /// Fits the projection on the task pool (S ∪ Q or S ∪ U) and maps every
    /// set through it.
    pub fn project(&self, ep: &Episode, mode: Mode, seed: u64) -> Result<ProjectedTask> {
        let mut diag = Diagnostics::default();
        let extra = match mode {
            Mode::Transductive => &ep.query,
            Mode::Semi => &ep.unlabeled,
        };
        let (support, query, extra) = match self.projection {
            Projection::None => (ep.support.clone(), ep.query.clone(), extra.clone()),
            Projection::Pca | Projection::Ica => {
                let pool = ep.support.vstack(extra)?;
                let proj = if self.projection == Projection::Pca {
                    subspace::fit_pca(&pool, self.hyper.pca_dim)?
                } else {
                    subspace::fit_ica(&pool, self.hyper.ica_dim, seed)?
                };
                if proj.info().dim_reduced() {
                    diag.dim_reduced += 1;
                }
                if proj.info().converged == Some(false) {
                    diag.ica_not_converged += 1;
                }
                (proj.apply(&ep.support)?, proj.apply(&ep.query)?, proj.apply(extra)?)
            }
        };
        Ok(ProjectedTask {
            support,
            query,
            extra,
            diagnostics: diag,
            seed,
        })
    }

    /// Runs the pipeline on an episode. Only the support labels are read;
    /// query labels stay inside the episode for the scorer.
    pub fn predict(&self, ep: &Episode, mode: Mode, seed: u64) -> Result<Prediction> {
        let task = self.project(ep, mode, seed)?;
        self.infer(ep, task)
    }

    /// Preprocessing and inference on an already projected task.
    pub fn infer(&self, ep: &Episode, task: ProjectedTask) -> Result<Prediction> {
        let ProjectedTask {
            mut support,
            mut query,
            mut extra,
            diagnostics: mut diag,
            seed,
        } = task;
        let n_way = ep.n_way();

        let mut normalize_prototypes = false;
        if self.preproc != Preproc::None {
            let mode = if self.preproc == Preproc::Sub {
                CenterMode::Joint
            } else {
                CenterMode::Separate
            };
            let (s, mut q) = classify::center_sets(&support, &query, mode)?;
            diag.zero_norm_rows += classify::l2_normalize_rows(&mut q);
            support = s;
            if self.hyper.normalize_before_averaging {
                diag.zero_norm_rows += classify::l2_normalize_rows(&mut support);
            } else {
                normalize_prototypes = true;
            }
            query = q;
            // Transductive only (validated), so the pool follows the queries.
            extra = query.clone();
        }

        let (labels, posterior) = match self.inference {
            Inference::Nn => {
                let mut protos = classify::build_prototypes(&support, &ep.support_labels, n_way)?;
                if normalize_prototypes {
                    let mut v = protos.vectors().clone();
                    diag.zero_norm_rows += classify::l2_normalize_rows(&mut v);
                    protos = classify::Prototypes::new(v);
                }
                classify::nn_classify(&query, &protos, self.hyper.temperature)?
            }
            Inference::Bkm => {
                let pool = support.vstack(&extra)?;
                let out = cluster::bkm(
                    &support,
                    &ep.support_labels,
                    n_way,
                    &query,
                    &pool,
                    self.hyper.clusters,
                    seed,
                )?;
                if out.clustering.k() < out.clustering.requested_k {
                    diag.clusters_reduced += 1;
                }
                diag.bkm_fallback_rows += out.fallbacks;
                (out.posterior.predictions(), out.posterior)
            }
            Inference::Msp => {
                let pool = support.vstack(&extra)?;
                let params = MspParams {
                    threshold: self.hyper.msp_threshold,
                    iterations: self.hyper.msp_iterations,
                    temperature: self.hyper.temperature,
                };
                let out = cluster::msp(&support, &ep.support_labels, n_way, &query, &pool, params)?;
                diag.msp_skipped_rounds += out.k_history.iter().filter(|&&k| k == 0).count();
                (out.predictions, out.posterior)
            }
        };
        Ok(Prediction {
            labels,
            posterior,
            diagnostics: diag,
        })
    }
}

/// Fraction of correct predictions; the only place query labels are read.
pub fn score(predictions: &[usize], ep: &Episode) -> f64 {
    let truth = ep.query_labels();
    if truth.is_empty() {
        return 0.0;
    }
    let correct = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    correct as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in MethodName::ALL {
            assert_eq!(m.as_str().parse::<MethodName>().unwrap(), m);
        }
        assert_eq!("sub*".parse::<MethodName>().unwrap(), MethodName::SubStar);
        assert!("svm".parse::<MethodName>().is_err());
    }

    #[test]
    fn baselines_need_transductive_mode() {
        let p = MethodPipeline::new(MethodName::Sub, Hyperparams::default());
        assert!(p.validate(Mode::Transductive, 0).is_ok());
        assert_eq!(p.validate(Mode::Semi, 5).unwrap_err().kind(), "invalid_pipeline");
    }

    #[test]
    fn semi_clustering_needs_unlabeled() {
        let p = MethodPipeline::new(MethodName::IcaMsp, Hyperparams::default());
        assert!(p.validate(Mode::Semi, 0).is_err());
        assert!(p.validate(Mode::Semi, 10).is_ok());
        let nn = MethodPipeline::new(MethodName::Nn, Hyperparams::default());
        assert!(nn.validate(Mode::Semi, 0).is_ok());
    }
}
