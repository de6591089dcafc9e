//! Chain-of-events training at desk scale: a symbolic event world, a tiny
//! causal-attention policy, composite rewards and group-relative policy
//! optimization, plus attention and judge analyses.

// negated comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod event;
pub mod policy;
pub mod reward;
pub mod trainer;
pub mod vocab;
pub mod world;

pub use error::{CoeError, Result};
