//! Incomplete multi-view multi-label classification.
//!
//! The pipeline completes missing views by propagating features along a
//! cross-view attention graph, splits every view into shared and private
//! representations trained with mutual-information bounds, refines Gaussian
//! label prototypes with graph attention over label co-occurrence, and fuses
//! the views with weights derived from a manifold-consistency loss.
//!
//! Module map:
//!
//! - [`numerics`]: matrices, the differentiation tape, gradient checking.
//! - [`data`]: datasets, on-disk format, missingness and splits, synthetic data.
//! - [`imputation`]: attention-guided missing-view completion and fragment masking.
//! - [`disentangle`]: shared/private encoders and their losses.
//! - [`labelgraph`]: label co-occurrence, graph attention, label embeddings.
//! - [`fusion`]: label-specific features, view fusion and the training objective.
//! - [`metrics`]: the six multi-label evaluation measures.
//! - [`harness`]: the model, training loop, ablations and run records.

pub mod error;
pub mod data;
pub mod disentangle;
pub mod fusion;
pub mod harness;
pub mod imputation;
pub mod labelgraph;
pub mod layers;
pub mod metrics;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::{Matrix, ParamStore, RngStream, Tape, Var};

// The guide's snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
    #[doc = include_str!("../../../book/src/imputation.md")]
    mod imputation {}
    #[doc = include_str!("../../../book/src/disentangle.md")]
    mod disentangle {}
    #[doc = include_str!("../../../book/src/labelgraph.md")]
    mod labelgraph {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
