//! The five DeepONet variants.

mod config;
mod net;

pub use config::{format_millions, param_count, ModelConfig, PreBranch, Variant};
pub use net::{Forward, Inputs, Model, QueryLayout};

use ndarray::{ArrayView2, Zip};

/// `(1/N) Σ_rows ‖ŷ − y‖²`.
pub fn mse(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    assert_eq!(pred.dim(), target.dim(), "mse shapes");
    let n = pred.nrows().max(1) as f64;
    Zip::from(pred)
        .and(target)
        .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b))
        / n
}
