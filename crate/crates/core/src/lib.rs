//! Few-shot classifier weight generation by visual analogy.
//!
//! Base classes contribute well-trained linear classifiers and class-mean
//! features. A complete similarity graph over the base classes is embedded
//! jointly with a linear map from embeddings to classifier weights; a novel
//! class seen through only a handful of samples is then placed in the same
//! embedding space and mapped to transferred weights, which can be fused with
//! weights trained on the samples themselves.
//!
//! The pipeline, bottom-up:
//!
//! * [`data`]: feature sets, class means, synthetic benchmarks, k-shot splits
//! * [`graph`]: the analogy graph, novel-to-base similarity, similarity ratio
//! * [`vager`]: the joint embedding objective and its alternating optimizer
//! * [`transfer`]: out-of-sample embedding inference and weight transfer
//! * [`classify`]: logistic training, fusion strategies, baselines
//! * [`eval`]: metrics, experiment protocols, regression diagnostics
//! * [`persist`]: binary model and classifier files

pub mod classify;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod persist;
pub mod seed;
pub mod transfer;
pub mod vager;

pub use error::{Error, Result};

/// Identifier of a class as it appears in feature files.
pub type ClassId = u64;
