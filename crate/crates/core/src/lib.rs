//! Multiple-instance survival learning on precomputed whole-slide patch
//! features: per-patient phenotype clustering, shared-weight per-patch
//! encoders with attention pooling, Cox partial-likelihood training, and a
//! survival evaluation suite.

pub mod cluster;
pub mod cox;
pub mod data;
pub mod error;
pub mod heatmap;
pub mod metrics;
pub mod model;
pub mod scoring;
pub mod special;
pub mod train;
mod util;

pub use error::{Error, ErrorCategory, Result};
pub use util::{fmt_float, patient_seed};
