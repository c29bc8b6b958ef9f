//! Hyperbolic entailment geometry for text-to-image alignment scoring.
//!
//! Precomputed image/text embeddings pass through a gated residual adapter,
//! are lifted onto the Lorentz hyperboloid with a learnable scale and the
//! origin exponential map, and then reduced to three geometric primitives:
//! geodesic distance, exterior angle at the text vertex, and the text cone's
//! half-aperture. A small modulation network turns those primitives into a
//! per-sample (scale, bias, confidence) triple that calibrates the Euclidean
//! cosine similarity into the final score.
//!
//! Training optimizes an L1 regression loss plus a score-contracted
//! entailment-cone hinge with AdamW, a step learning-rate schedule and
//! validation-SRCC early stopping. Gradients are computed by hand-written
//! reverse-mode derivatives of each stage.
//!
//! Per-sample work fans out over rayon when the `parallel` feature is on
//! (the default); see [`exec`].

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod cli;
pub mod data;
pub mod entailment;
pub mod error;
pub mod exec;
pub mod manifold;
pub mod metrics;
pub mod model_io;
pub mod regressor;
pub mod training;

pub use error::{Error, Result};

/// Logistic sigmoid.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
