//! Representation-geometry toolkit.
//!
//! * [`spectral`]: covariance eigenspectra, RankMe, αReQ and eigen-direction ablation.
//! * [`infini_gram`]: suffix-array ∞-gram model and distributional memorization.
//! * [`phase`]: linear toy model trained by gradient descent, with its
//!   singular-value diagnostics.
//! * [`eval`]: pass@k and DPO estimators.
//! * [`io`]: file formats, manifests and the checkpoint sweep.

pub mod eval;
pub mod infini_gram;
pub mod io;
pub mod linalg;
pub mod phase;
pub mod spectral;
