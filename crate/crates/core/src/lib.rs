// Negated float comparisons are used on purpose: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod estimator;
pub mod exec;
pub mod model;
pub mod runtime;
pub mod sampler_opt;
pub mod seed;
pub mod types;
pub mod wireless;
pub mod harness;
