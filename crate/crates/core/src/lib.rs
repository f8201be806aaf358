// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod numeric;
pub mod attention;
pub mod textproc;
pub mod embeddings;
pub mod metrics;
pub mod transformer;
pub mod decoding;
pub mod cli;
