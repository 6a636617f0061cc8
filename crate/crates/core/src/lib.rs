//! Semantic-space simulator, information measures, caption pyramid pipeline,
//! chat backends, and caption/VQA evaluation.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod backends;
pub mod cli;
pub mod config;
pub mod evaluation;
pub mod info;
pub mod pipeline;
pub mod semantic;
pub mod synthetic;
pub mod theory;
