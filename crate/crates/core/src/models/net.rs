use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::config::{ModelConfig, PreBranch, Variant};
use crate::autodiff::{xavier, LastLayer, Mlp, MlpSpec, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Pre {
    Dense(Mlp),
    LowRank { mlp: Mlp, up: ParamId },
}

#[derive(Clone, Debug)]
struct Head {
    gate_b: Mlp,
    gate_t: Mlp,
    readout: ParamId,
}

#[derive(Clone, Debug)]
struct Parts {
    branch: Mlp,
    trunk: Mlp,
    readout: Option<(ParamId, ParamId)>,
    film: Vec<Mlp>,
    pre: Option<Pre>,
    gate_b: Option<Mlp>,
    gate_t: Option<Mlp>,
    upsample: Option<(ParamId, ParamId)>,
    heads: Vec<Head>,
}

/// How query rows relate to trajectories in a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryLayout {
    /// One query set of `Q` rows used by every trajectory.
    Shared,
    /// `B·Q` rows, trajectory-major.
    PerTrajectory,
}

/// One forward batch. `sensor` is `B × sensor_dim` (normalised), `phi` is
/// `B × N_f` (standardised; may have zero columns for Vanilla), `queries` are
/// raw coordinates.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub sensor: Array2<f64>,
    pub phi: Array2<f64>,
    pub queries: Array2<f64>,
    pub layout: QueryLayout,
}

/// Tape handles produced by a forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `(B·Q) × q`, trajectory-major.
    pub output: Var,
    pub sensor: Var,
    pub phi: Var,
    /// MH-RG per-head outputs (only when requested).
    pub heads: Vec<Var>,
    /// Input-side modulation `1 + α_pre tanh(h_pre(φ))`, `B × sensor_dim`.
    pub pre_gate: Option<Var>,
    /// Branch gates, one `B × p` value per head (one for RG).
    pub branch_gates: Vec<Var>,
    /// Trunk gates, one `B × p` value per head (one for RG).
    pub trunk_gates: Vec<Var>,
}

/// A DeepONet variant with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    parts: Parts,
}

impl Model {
    /// Registers and initialises every slab in a fixed order.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let spec = |w: Vec<usize>| MlpSpec::new(w);
        let branch = Mlp::register(&mut store, "branch", &spec(c.branch_widths())?, LastLayer::Xavier, rng);
        let trunk = Mlp::register(&mut store, "trunk", &spec(c.trunk_widths())?, LastLayer::Xavier, rng);
        let (p, q, nf) = (c.latent, c.out_channels, c.n_descriptors);

        let mut parts = Parts {
            branch,
            trunk,
            readout: None,
            film: Vec::new(),
            pre: None,
            gate_b: None,
            gate_t: None,
            upsample: None,
            heads: Vec::new(),
        };
        if c.variant != Variant::Mhrg {
            let w = store.add("readout.weight", xavier(rng, p, q));
            let b = store.add("readout.bias", Array2::zeros((1, q)));
            parts.readout = Some((w, b));
        }
        match c.variant {
            Variant::Vanilla | Variant::Concat => {}
            Variant::Film => {
                for (l, &w) in c.branch_hidden.iter().enumerate() {
                    let s = spec(vec![nf, c.film_hidden, 2 * w])?;
                    parts
                        .film
                        .push(Mlp::register(&mut store, &format!("film.{l}"), &s, LastLayer::Zero, rng));
                }
            }
            Variant::Rg | Variant::Mhrg => {
                parts.pre = Some(match c.pre {
                    PreBranch::Dense { hidden } => {
                        let s = spec(vec![nf, hidden, c.sensor_dim])?;
                        Pre::Dense(Mlp::register(&mut store, "pre", &s, LastLayer::Zero, rng))
                    }
                    PreBranch::LowRank { hidden, rank } => {
                        let s = spec(vec![nf, hidden, rank])?;
                        let mlp = Mlp::register(&mut store, "pre", &s, LastLayer::Zero, rng);
                        let up = store.add("pre.up", xavier(rng, rank, c.sensor_dim));
                        Pre::LowRank { mlp, up }
                    }
                });
                if c.variant == Variant::Rg {
                    let s = spec(vec![nf, c.gate_hidden, p])?;
                    parts.gate_b = Some(Mlp::register(&mut store, "gate_b", &s, LastLayer::Zero, rng));
                    parts.gate_t = Some(Mlp::register(&mut store, "gate_t", &s, LastLayer::Zero, rng));
                } else {
                    let ub = store.add("u_b", xavier(rng, c.gate_rank, p));
                    let ut = store.add("u_t", xavier(rng, c.gate_rank, p));
                    parts.upsample = Some((ub, ut));
                    let s = spec(vec![nf, c.head_hidden, c.gate_rank])?;
                    for r in 0..c.heads {
                        let gate_b = Mlp::register(&mut store, &format!("head.{r}.gate_b"), &s, LastLayer::Zero, rng);
                        let gate_t = Mlp::register(&mut store, &format!("head.{r}.gate_t"), &s, LastLayer::Zero, rng);
                        let readout = store.add(format!("head.{r}.readout"), xavier(rng, p, q));
                        parts.heads.push(Head {
                            gate_b,
                            gate_t,
                            readout,
                        });
                    }
                }
            }
        }
        Ok(Self { config, store, parts })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn n_heads(&self) -> usize {
        self.parts.heads.len()
    }

    /// Replaces all slabs with `values` (same names and shapes).
    pub fn load_params(&mut self, named: &[(String, Array2<f64>)]) -> Result<()> {
        if named.len() != self.store.len() {
            return Err(Error::Shape(format!(
                "{} slabs supplied for {} parameters",
                named.len(),
                self.store.len()
            )));
        }
        for (name, value) in named {
            let id = self
                .store
                .id(name)
                .ok_or_else(|| Error::Shape(format!("unknown parameter `{name}`")))?;
            let slot = self.store.get_mut(id);
            if slot.dim() != value.dim() {
                return Err(Error::Shape(format!(
                    "`{name}`: expected {:?}, got {:?}",
                    slot.dim(),
                    value.dim()
                )));
            }
            slot.assign(value);
        }
        Ok(())
    }

    /// Zeros the final layer of every gate / FiLM generator.
    pub fn reset_generators(&mut self) {
        let mut last = Vec::new();
        let mut take = |m: &Mlp| {
            let l = m.layers().last().expect("non-empty");
            last.push(l.weight);
            last.extend(l.bias);
        };
        self.parts.film.iter().for_each(&mut take);
        if let Some(Pre::Dense(m) | Pre::LowRank { mlp: m, .. }) = &self.parts.pre {
            take(m);
        }
        self.parts.gate_b.iter().chain(&self.parts.gate_t).for_each(&mut take);
        for h in &self.parts.heads {
            take(&h.gate_b);
            take(&h.gate_t);
        }
        for id in last {
            self.store.get_mut(id).fill(0.0);
        }
    }

    fn check(&self, x: &Inputs) -> Result<()> {
        let c = &self.config;
        let b = x.sensor.nrows();
        if x.sensor.ncols() != c.sensor_dim {
            return Err(Error::Shape(format!(
                "sensor width {} != {}",
                x.sensor.ncols(),
                c.sensor_dim
            )));
        }
        if x.queries.ncols() != c.coord_dim {
            return Err(Error::Shape(format!(
                "query width {} != {}",
                x.queries.ncols(),
                c.coord_dim
            )));
        }
        if c.variant.uses_descriptors() && x.phi.dim() != (b, c.n_descriptors) {
            return Err(Error::Shape(format!(
                "descriptor block {:?} != ({b}, {})",
                x.phi.dim(),
                c.n_descriptors
            )));
        }
        if b == 0 || x.queries.nrows() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if x.layout == QueryLayout::PerTrajectory && !x.queries.nrows().is_multiple_of(b) {
            return Err(Error::Shape("per-trajectory queries not divisible by batch".into()));
        }
        Ok(())
    }

    /// Records the forward pass. With `expose_heads`, MH-RG per-head outputs
    /// are materialised as well.
    pub fn forward(&self, tape: &mut Tape, x: &Inputs, expose_heads: bool) -> Result<Forward> {
        self.forward_impl(tape, x, expose_heads, false)
    }

    /// Like [`Model::forward`] with the sensor and descriptor leaves tracked,
    /// so that input gradients are available after backward.
    pub fn forward_input_grads(&self, tape: &mut Tape, x: &Inputs) -> Result<Forward> {
        self.forward_impl(tape, x, false, true)
    }

    fn forward_impl(&self, tape: &mut Tape, x: &Inputs, expose_heads: bool, input_grads: bool) -> Result<Forward> {
        self.check(x)?;
        let c = &self.config;
        let q = c.out_channels;
        let shared = x.layout == QueryLayout::Shared;
        let (mut sensor, phi) = if input_grads {
            (tape.leaf_with_grad(x.sensor.clone()), tape.leaf_with_grad(x.phi.clone()))
        } else {
            (tape.leaf(x.sensor.clone()), tape.leaf(x.phi.clone()))
        };
        let sensor_leaf = sensor;
        let coords = tape.leaf(x.queries.clone());

        let mut fwd = Forward {
            output: sensor,
            sensor: sensor_leaf,
            phi,
            heads: Vec::new(),
            pre_gate: None,
            branch_gates: Vec::new(),
            trunk_gates: Vec::new(),
        };

        if let Some(pre) = &self.parts.pre {
            let h = match pre {
                Pre::Dense(m) => m.forward(tape, phi),
                Pre::LowRank { mlp, up } => {
                    let z = mlp.forward(tape, phi);
                    let u = tape.param(*up);
                    tape.matmul(z, u)
                }
            };
            let gate = tape.residual_gate(h, c.alpha_pre);
            sensor = tape.mul(sensor, gate);
            fwd.pre_gate = Some(gate);
        }

        let branch_in = if c.variant == Variant::Concat {
            tape.concat(sensor, phi)
        } else {
            sensor
        };
        let b = if c.variant == Variant::Film {
            let film = &self.parts.film;
            self.parts.branch.forward_with(tape, branch_in, |tape, l, h| {
                let width = c.branch_hidden[l];
                let g = film[l].forward(tape, phi);
                let dg = tape.slice_cols(g, 0, width);
                let beta = tape.slice_cols(g, width, 2 * width);
                let gamma = tape.affine(dg, 1.0, 1.0);
                let h = tape.mul(h, gamma);
                tape.add(h, beta)
            })
        } else {
            self.parts.branch.forward(tape, branch_in)
        };
        let t = self.parts.trunk.forward(tape, coords);

        match c.variant {
            Variant::Vanilla | Variant::Concat | Variant::Film | Variant::Rg => {
                let mut z = b;
                if c.variant == Variant::Rg {
                    let gb_in = self.parts.gate_b.as_ref().expect("rg").forward(tape, phi);
                    let gt_in = self.parts.gate_t.as_ref().expect("rg").forward(tape, phi);
                    let gb = tape.residual_gate(gb_in, c.alpha_b);
                    let gt = tape.residual_gate(gt_in, c.alpha_t);
                    let zb = tape.mul(z, gb);
                    z = tape.mul(zb, gt);
                    fwd.branch_gates.push(gb);
                    fwd.trunk_gates.push(gt);
                }
                let (w, bias) = self.parts.readout.expect("single readout");
                let w = tape.param(w);
                let m = tape.coeff(z, w);
                let out = tape.readout(t, m, q, shared);
                let bias = tape.param(bias);
                fwd.output = tape.add_bias(out, bias);
            }
            Variant::Mhrg => {
                let (ub, ut) = self.parts.upsample.expect("mhrg");
                let (ub, ut) = (tape.param(ub), tape.param(ut));
                let mut total: Option<Var> = None;
                for head in &self.parts.heads {
                    let hb = head.gate_b.forward(tape, phi);
                    let ht = head.gate_t.forward(tape, phi);
                    let fb = tape.matmul(hb, ub);
                    let ft = tape.matmul(ht, ut);
                    let gb = tape.residual_gate(fb, c.alpha_b);
                    let gt = tape.residual_gate(ft, c.alpha_t);
                    let zb = tape.mul(b, gb);
                    let z = tape.mul(zb, gt);
                    let w = tape.param(head.readout);
                    let m = tape.coeff(z, w);
                    if expose_heads {
                        let out = tape.readout(t, m, q, shared);
                        fwd.heads.push(out);
                    }
                    total = Some(match total {
                        Some(acc) => tape.add(acc, m),
                        None => m,
                    });
                    fwd.branch_gates.push(gb);
                    fwd.trunk_gates.push(gt);
                }
                let m = total.expect("at least one head");
                fwd.output = tape.readout(t, m, q, shared);
            }
        }
        Ok(fwd)
    }

    /// Inference helper: `(B·Q) × q` predictions in normalised space.
    pub fn predict(&self, x: &Inputs) -> Result<Array2<f64>> {
        let mut tape = Tape::new(&self.store);
        let fwd = self.forward(&mut tape, x, false)?;
        Ok(tape.value(fwd.output).clone())
    }

    /// Per-head predictions `(B·Q) × q` for MH-RG.
    pub fn predict_heads(&self, x: &Inputs) -> Result<Vec<Array2<f64>>> {
        if self.config.variant != Variant::Mhrg {
            return Err(Error::Unsupported("per-head outputs need an MH-RG model".into()));
        }
        let mut tape = Tape::new(&self.store);
        let fwd = self.forward(&mut tape, x, true)?;
        Ok(fwd.heads.iter().map(|&h| tape.value(h).clone()).collect())
    }

    /// Gate values for each head: `(branch, trunk)`, each `B × p`.
    pub fn gates(&self, x: &Inputs) -> Result<Vec<(Array2<f64>, Array2<f64>)>> {
        let mut tape = Tape::new(&self.store);
        let fwd = self.forward(&mut tape, x, false)?;
        Ok(fwd
            .branch_gates
            .iter()
            .zip(&fwd.trunk_gates)
            .map(|(&b, &t)| (tape.value(b).clone(), tape.value(t).clone()))
            .collect())
    }

    /// Normalised-space MSE and its parameter gradients.
    pub fn loss_and_grad(&self, x: &Inputs, target: ArrayView2<f64>) -> Result<(f64, Vec<Array2<f64>>)> {
        let mut tape = Tape::new(&self.store);
        let fwd = self.forward(&mut tape, x, false)?;
        if tape.value(fwd.output).dim() != target.dim() {
            return Err(Error::Shape(format!(
                "target {:?} vs prediction {:?}",
                target.dim(),
                tape.value(fwd.output).dim()
            )));
        }
        let loss = tape.mse(fwd.output, target.to_owned());
        let value = tape.scalar(loss);
        Ok((value, tape.backward(loss)))
    }

    /// Normalised-space MSE without gradients.
    pub fn loss(&self, x: &Inputs, target: ArrayView2<f64>) -> Result<f64> {
        let pred = self.predict(x)?;
        if pred.dim() != target.dim() {
            return Err(Error::Shape("target shape".into()));
        }
        Ok(crate::models::mse(pred.view(), target))
    }

    /// Shared low-rank upsamplers `(U_B, U_T)`, each `r_g × p` (MH-RG only).
    pub fn upsamplers(&self) -> Option<(&Array2<f64>, &Array2<f64>)> {
        self.parts
            .upsample
            .map(|(b, t)| (self.store.get(b), self.store.get(t)))
    }

    /// Swaps the parameters of heads `a` and `b`.
    pub fn swap_heads(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let ids = |h: &Head| {
            let mut v = Vec::new();
            for m in [&h.gate_b, &h.gate_t] {
                for l in m.layers() {
                    v.push(l.weight);
                    v.extend(l.bias);
                }
            }
            v.push(h.readout);
            v
        };
        let (ia, ib) = (ids(&self.parts.heads[a]), ids(&self.parts.heads[b]));
        let values = self.store.values_mut();
        for (x, y) in ia.into_iter().zip(ib) {
            values.swap(x.index(), y.index());
        }
    }
}
