//! Task-adaptive feature subspace learning for few-shot classification over
//! precomputed feature vectors.
//!
//! A task's support, query and (optionally) unlabeled samples are pooled, a
//! PCA or FastICA projection is fitted on the pool, and the projected samples
//! are classified by nearest prototype, Bayesian K-Means or Mean-Shift
//! Propagation. The [`harness`] module wraps this in an episode loop with
//! accuracy and confidence-interval reporting.

pub mod classify;
pub mod cluster;
pub mod episodes;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod subspace;

pub use classify::{ClassPosterior, Prototypes};
pub use episodes::{Episode, EpisodeSpec, FeatureStore, Mode, MogSpec};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use subspace::SubspaceProjection;
