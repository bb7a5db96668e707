//! Split-step Fourier integrators, initial-condition families, and dataset
//! generation for the two benchmarks.

mod generate;
mod gpe;
mod ic;
mod nlse;

pub use generate::{generate_dataset, write_generated, Benchmark, GenerationReport, Split};
pub use gpe::{solve_gpe_2d, GpeConfig};
pub use ic::{
    sample_ic_1d, sample_ic_2d, Ic1dBoxes, Ic1dParams, Ic2dParams, Packet, IC_2D_BOXES,
};
pub use nlse::{solve_nlse_1d, NlseConfig};

/// Default max |ψ| above which a rollout is abandoned.
pub const BLOWUP_THRESHOLD: f64 = 1e3;
