//! Motif-guided graph transformer with combinatorial skeleton prototype
//! learning for skeleton-based person re-identification.
//!
//! The crate covers the full desk-scale pipeline: skeleton graph
//! construction with Laplacian eigenvector positional encoding, motif mask
//! construction (hierarchical structural motifs and gait collaborative
//! motifs), a tape-based reverse-mode autodiff core, the motif guided graph
//! transformer encoder, combinatorial masking with prototype contrastive
//! losses, a synthetic gait dataset generator, and closed-set re-ID
//! evaluation (CMC / mAP).
//!
//! The numeric core ([`tensor`], [`autodiff`], [`eigen`], [`optim`]) is
//! generic over the scalar type via [`Scalar`]; the model layer is pinned to
//! `f64` through the aliases below.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod csp;
pub mod data;
pub mod eigen;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod motifs;
pub mod optim;
pub mod scalar;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision tensor used throughout the model layer.
pub type Tensor64 = tensor::Tensor<f64>;
/// Double-precision autodiff tape used throughout the model layer.
pub type Tape64 = autodiff::Tape<f64>;
