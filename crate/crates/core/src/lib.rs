//! # stsvm
//!
//! Self-taught support vector machines: a binary classifier trained from a
//! small labeled *target* set together with a large unlabeled *source* set
//! whose distribution may differ.
//!
//! Training alternates three blocks:
//!
//! - the SVM multipliers, by an SMO dual solver ([`svm`]),
//! - convex weights over a bank of base kernels ([`kernel`], [`mkl`]),
//!   which trade margin against a class-conditional maximum mean
//!   discrepancy between the domains ([`adaptation`]),
//! - the latent source labels ([`refine`]).
//!
//! [`trainer`] runs the alternation and the ablation variants and owns the
//! model file; [`evaluation`] holds metrics and repeated-trial harnesses.
//!
//! ## Feature flags
//!
//! - `parallel` (default): per-kernel and per-trial loops run on rayon. With
//!   the feature off, or with [`Execution::Sequential`], the same loops run
//!   serially and produce bit-identical results.

pub mod adaptation;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod kernel;
pub mod mkl;
pub mod par;
pub mod refine;
pub mod svm;
pub mod trainer;

pub use error::{Error, Result};
pub use par::Execution;
