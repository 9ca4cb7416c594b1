//! Library for building leakage-resistant multi-hop QA benchmarks.

pub mod config;
pub mod eval;
pub mod gateway;
pub mod graph;
pub mod import;
pub mod model;
pub mod orchestrate;
pub mod pool;
pub mod prompts;
#[cfg(feature = "testkit")]
pub mod testkit;
pub mod text;
pub mod transform;
pub mod verify;
