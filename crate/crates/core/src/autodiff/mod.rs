//! Reverse-mode differentiation, MLPs and the Adam optimiser.

mod adam;
mod mlp;
mod params;
mod tape;

pub use adam::{clip_global_norm, global_norm, Adam, AdamConfig, LrSchedule, StepInfo};
pub use mlp::{xavier, LastLayer, Layer, Mlp, MlpSpec};
pub use params::{ParamId, ParamStore};
pub use tape::{gelu, normal_cdf, NodeGrads, Tape, Var};
