//! Two-stage polyadic synapse detection and connectome evaluation.
//!
//! Stage one scores voxels with a patch classifier and extracts T-bar point
//! detections via smoothing and non-maximum suppression. Stage two identifies
//! post-synaptic partner bodies around each T-bar using segmentation-aware
//! interface features. The remaining modules build connectome graphs from
//! synapse sets and evaluate them with connection-level precision/recall.

pub mod baseline;
pub mod config;
pub mod connectome;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mlp;
pub mod psd;
pub mod smooth;
pub mod synth;
pub mod tbar;
pub mod volume;

pub use error::{Error, Result};
