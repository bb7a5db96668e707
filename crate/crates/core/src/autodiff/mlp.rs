use ndarray::Array2;
use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Layer widths `(n_0, …, n_L)`: `L` affine layers with GELU after every
/// layer but the last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub bias: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "MLP needs at least two positive widths, got {widths:?}"
            )));
        }
        Ok(Self { widths, bias: true })
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn input(&self) -> usize {
        self.widths[0]
    }

    pub fn output(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + if self.bias { w[1] } else { 0 })
            .sum()
    }
}

/// How the last layer is initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LastLayer {
    Xavier,
    Zero,
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

/// A registered MLP; weights are stored `in × out` and applied as `x · W + b`.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
}

/// Xavier/Glorot uniform matrix.
pub fn xavier<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-a..a))
}

impl Mlp {
    /// Registers `prefix.{l}.weight` / `prefix.{l}.bias` for each layer.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        spec: &MlpSpec,
        last: LastLayer,
        rng: &mut R,
    ) -> Self {
        let n = spec.n_layers();
        let layers = spec
            .widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let value = if l + 1 == n && last == LastLayer::Zero {
                    Array2::zeros((w[0], w[1]))
                } else {
                    xavier(rng, w[0], w[1])
                };
                let weight = store.add(format!("{prefix}.{l}.weight"), value);
                let bias = spec
                    .bias
                    .then(|| store.add(format!("{prefix}.{l}.bias"), Array2::zeros((1, w[1]))));
                Layer { weight, bias }
            })
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        self.forward_with(tape, x, |_, _, h| h)
    }

    /// Forward pass with a hook applied to each hidden activation (after
    /// GELU); the hook receives the hidden-layer index.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        x: Var,
        mut hook: impl FnMut(&mut Tape, usize, Var) -> Var,
    ) -> Var {
        let n = self.layers.len();
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            h = affine(tape, h, layer);
            if l + 1 < n {
                h = tape.gelu(h);
                h = hook(tape, l, h);
            }
        }
        h
    }
}

fn affine(tape: &mut Tape, x: Var, layer: &Layer) -> Var {
    let w = tape.param(layer.weight);
    let mut h = tape.matmul(x, w);
    if let Some(b) = layer.bias {
        let bv = tape.param(b);
        h = tape.add_bias(h, bv);
    }
    h
}
