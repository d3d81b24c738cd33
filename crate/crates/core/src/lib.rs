//! Learned hardware cost models for xpu-dialect dataflow IR.

pub mod dataset;
pub mod ir;
pub mod kv;
pub mod models;
pub mod nn;
pub mod oracle;
pub mod tokenizer;
pub mod training;
