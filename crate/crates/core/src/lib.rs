//! Context-conditioned language modelling for dialogue.

pub mod cli;
pub mod corpus;
pub mod embedder;
pub mod metrics;
pub mod model;
pub mod tokenizer;
pub mod trainer;
