//! Descriptor-conditioned DeepONet variants (Vanilla, Concat, FiLM,
//! residual-gated and multi-head residual-gated) for coherent nonlinear wave
//! dynamics, together with the split-step solvers that generate their
//! training data, the training loop, physical diagnostics and mechanistic
//! analysis tools.

pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod container;
pub mod descriptors;
pub mod error;
pub mod evaluation;
pub mod fft;
pub mod grid;
pub mod models;
pub mod norm;
pub mod report;
pub mod runs;
pub mod solvers;
pub mod training;

pub use error::{Error, Result};
