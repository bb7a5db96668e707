//! A small reverse-mode tape over dense `f64` matrices.
//!
//! Every value is a 2-D array; row vectors are `1 × n`. The op set covers what
//! the operator models need: affine layers, GELU, tanh gates, elementwise
//! products, column concatenation/slicing, the DeepONet readout and the MSE
//! loss. Backward accumulates gradients for parameter slabs and for any leaf
//! created with [`Tape::leaf_with_grad`].

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Gelu(Var),
    Tanh(Var),
    Affine { x: Var, scale: f64 },
    Concat(Var, Var),
    Slice { x: Var, start: usize, end: usize },
    Coeff { z: Var, w: Var },
    Readout { trunk: Var, coeff: Var, q: usize, shared: bool },
    Mse { pred: Var, target: Var },
}

struct Node {
    op: Op,
    value: Option<Array2<f64>>,
    needs_grad: bool,
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact GELU `x Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    fn push(&mut self, op: Op, value: Option<Array2<f64>>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(val), _) => val,
            (None, Op::Param(id)) => self.store.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, Some(value), false)
    }

    pub fn leaf_with_grad(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, Some(value), true)
    }

    /// The tape node for a parameter slab (created once per tape).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.params[id.0] {
            return v;
        }
        let v = self.push(Op::Param(id), None, true);
        self.params[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = shape(self.value(a));
        let (rb, cb) = shape(self.value(b));
        assert_eq!(ca, rb, "matmul {ra}x{ca} by {rb}x{cb}");
        let out = self.value(a).dot(self.value(b));
        let g = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), Some(out), g)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = shape(self.value(a));
        let (rb, cb) = shape(self.value(b));
        assert_eq!(ca, cb, "matmul_t {ra}x{ca} by ({rb}x{cb})^T");
        let out = self.value(a).dot(&self.value(b).t());
        let g = self.needs(a) || self.needs(b);
        self.push(Op::MatMulT(a, b), Some(out), g)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let (_, ca) = shape(self.value(a));
        assert_eq!(shape(self.value(bias)), (1, ca), "bias shape");
        let out = self.value(a) + self.value(bias);
        let g = self.needs(a) || self.needs(bias);
        self.push(Op::AddBias(a, bias), Some(out), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(shape(self.value(a)), shape(self.value(b)), "add shapes");
        let out = self.value(a) + self.value(b);
        let g = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), Some(out), g)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(shape(self.value(a)), shape(self.value(b)), "mul shapes");
        let out = self.value(a) * self.value(b);
        let g = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), Some(out), g)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(gelu);
        let g = self.needs(x);
        self.push(Op::Gelu(x), Some(out), g)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(f64::tanh);
        let g = self.needs(x);
        self.push(Op::Tanh(x), Some(out), g)
    }

    /// `shift + scale · x`.
    pub fn affine(&mut self, x: Var, shift: f64, scale: f64) -> Var {
        let out = self.value(x).mapv(|v| shift + scale * v);
        let g = self.needs(x);
        self.push(Op::Affine { x, scale }, Some(out), g)
    }

    /// Residual gate `1 + α tanh(x)`.
    pub fn residual_gate(&mut self, x: Var, alpha: f64) -> Var {
        let t = self.tanh(x);
        self.affine(t, 1.0, alpha)
    }

    /// Column-wise concatenation `[a, b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (ra, _) = shape(self.value(a));
        let (rb, _) = shape(self.value(b));
        assert_eq!(ra, rb, "concat rows");
        let out = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts checked");
        let g = self.needs(a) || self.needs(b);
        self.push(Op::Concat(a, b), Some(out), g)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let out = self.value(x).slice(s![.., start..end]).to_owned();
        let g = self.needs(x);
        self.push(Op::Slice { x, start, end }, Some(out), g)
    }

    /// Per-trajectory readout coefficients `M[i, k·q + c] = z[i, k] · w[k, c]`.
    pub fn coeff(&mut self, z: Var, w: Var) -> Var {
        let (b, p) = shape(self.value(z));
        let (pw, q) = shape(self.value(w));
        assert_eq!(p, pw, "coeff: latent widths differ");
        let zv = self.value(z);
        let wv = self.value(w);
        let mut out = Array2::zeros((b, p * q));
        for i in 0..b {
            for k in 0..p {
                let zk = zv[[i, k]];
                for c in 0..q {
                    out[[i, k * q + c]] = zk * wv[[k, c]];
                }
            }
        }
        let g = self.needs(z) || self.needs(w);
        self.push(Op::Coeff { z, w }, Some(out), g)
    }

    /// DeepONet fusion: `out[i·Q + j, c] = Σ_k trunk[row(i, j), k] · M[i, k·q + c]`.
    ///
    /// With `shared`, all trajectories use the same `Q` trunk rows
    /// (`row = j`); otherwise the trunk holds `B·Q` rows, one block per
    /// trajectory (`row = i·Q + j`).
    pub fn readout(&mut self, trunk: Var, coeff: Var, q: usize, shared: bool) -> Var {
        let t = self.value(trunk);
        let m = self.value(coeff);
        let (b, pq) = m.dim();
        let (rows, p) = t.dim();
        assert_eq!(p * q, pq, "readout: coefficient width");
        let out = if shared {
            let y = t.dot(&coeff_to_cols(m, p, q));
            shared_to_rows(&y.view(), b, q)
        } else {
            assert_eq!(rows % b, 0, "readout: trunk rows not divisible by batch");
            let nq = rows / b;
            let mut out = Array2::zeros((b * nq, q));
            for i in 0..b {
                let mi = m.row(i).into_shape_with_order((p, q)).expect("contiguous row");
                let ti = t.slice(s![i * nq..(i + 1) * nq, ..]);
                out.slice_mut(s![i * nq..(i + 1) * nq, ..]).assign(&ti.dot(&mi));
            }
            out
        };
        let g = self.needs(trunk) || self.needs(coeff);
        self.push(
            Op::Readout {
                trunk,
                coeff,
                q,
                shared,
            },
            Some(out),
            g,
        )
    }

    /// `(1/N) Σ_rows ‖pred − target‖²` as a `1 × 1` value.
    pub fn mse(&mut self, pred: Var, target: Array2<f64>) -> Var {
        assert_eq!(shape(self.value(pred)), target.dim(), "mse shapes");
        let n = target.nrows() as f64;
        let loss = Zip::from(self.value(pred))
            .and(&target)
            .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b))
            / n;
        let target = self.leaf(target);
        let g = self.needs(pred);
        self.push(Op::Mse { pred, target }, Some(Array2::from_elem((1, 1), loss)), g)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "not a scalar");
        val[[0, 0]]
    }

    /// Reverse sweep from a scalar; returns gradients for every parameter
    /// slab (zeros for slabs not on the tape).
    pub fn backward(&self, loss: Var) -> Vec<Array2<f64>> {
        self.backward_full(loss).0
    }

    /// Like [`Tape::backward`] but also returns per-node gradients so that
    /// leaves created with [`Tape::leaf_with_grad`] can be inspected.
    pub fn backward_full(&self, loss: Var) -> (Vec<Array2<f64>>, NodeGrads) {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut param_grads = self.store.zeros_like();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &g, &mut grads, &mut param_grads);
            grads[idx] = Some(g);
        }
        (param_grads, NodeGrads(grads))
    }

    fn propagate(
        &self,
        op: &Op,
        g: &Array2<f64>,
        grads: &mut [Option<Array2<f64>>],
        param_grads: &mut [Array2<f64>],
    ) {
        let mut acc = |v: Var, delta: Array2<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match *op {
            Op::Leaf => {}
            Op::Param(id) => param_grads[id.0] += g,
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    acc(a, g.dot(&self.value(b).t()));
                }
                if self.needs(b) {
                    acc(b, self.value(a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.needs(a) {
                    acc(a, g.dot(self.value(b)));
                }
                if self.needs(b) {
                    acc(b, g.t().dot(self.value(a)));
                }
            }
            Op::AddBias(a, bias) => {
                acc(a, g.clone());
                if self.needs(bias) {
                    acc(bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Add(a, b) => {
                acc(a, g.clone());
                acc(b, g.clone());
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    acc(a, g * self.value(b));
                }
                if self.needs(b) {
                    acc(b, g * self.value(a));
                }
            }
            Op::Gelu(x) => {
                let mut d = self.value(x).mapv(gelu_grad);
                d *= g;
                acc(x, d);
            }
            Op::Tanh(x) => {
                // y of this node is not at hand here; recompute from the input
                let mut d = self.value(x).mapv(|v| {
                    let t = v.tanh();
                    1.0 - t * t
                });
                d *= g;
                acc(x, d);
            }
            Op::Affine { x, scale, .. } => acc(x, g * scale),
            Op::Concat(a, b) => {
                let ca = self.value(a).ncols();
                if self.needs(a) {
                    acc(a, g.slice(s![.., ..ca]).to_owned());
                }
                if self.needs(b) {
                    acc(b, g.slice(s![.., ca..]).to_owned());
                }
            }
            Op::Slice { x, start, end } => {
                let mut d = Array2::zeros(self.value(x).raw_dim());
                d.slice_mut(s![.., start..end]).assign(g);
                acc(x, d);
            }
            Op::Coeff { z, w } => {
                let zv = self.value(z);
                let wv = self.value(w);
                let (b, p) = zv.dim();
                let q = wv.ncols();
                let mut dz = Array2::zeros((b, p));
                let mut dw = Array2::zeros((p, q));
                for i in 0..b {
                    for k in 0..p {
                        let mut s = 0.0;
                        for c in 0..q {
                            let gm = g[[i, k * q + c]];
                            s += gm * wv[[k, c]];
                            dw[[k, c]] += gm * zv[[i, k]];
                        }
                        dz[[i, k]] = s;
                    }
                }
                acc(z, dz);
                acc(w, dw);
            }
            Op::Readout {
                trunk,
                coeff,
                q,
                shared,
            } => {
                let t = self.value(trunk);
                let m = self.value(coeff);
                let (b, pq) = m.dim();
                let p = pq / q;
                if shared {
                    let nq = t.nrows();
                    let dy = rows_to_shared(g, b, nq, q);
                    if self.needs(trunk) {
                        acc(trunk, dy.dot(&coeff_to_cols(m, p, q).t()));
                    }
                    if self.needs(coeff) {
                        let dmp = t.t().dot(&dy);
                        acc(coeff, cols_to_coeff(&dmp, b, p, q));
                    }
                } else {
                    let nq = t.nrows() / b;
                    let mut dt = Array2::zeros(t.raw_dim());
                    let mut dm = Array2::zeros(m.raw_dim());
                    for i in 0..b {
                        let gi = g.slice(s![i * nq..(i + 1) * nq, ..]);
                        let mi = m.row(i).into_shape_with_order((p, q)).expect("contiguous row");
                        let ti = t.slice(s![i * nq..(i + 1) * nq, ..]);
                        dt.slice_mut(s![i * nq..(i + 1) * nq, ..]).assign(&gi.dot(&mi.t()));
                        let dmi = ti.t().dot(&gi);
                        dm.row_mut(i)
                            .assign(&dmi.into_shape_with_order(p * q).expect("owned"));
                    }
                    acc(trunk, dt);
                    acc(coeff, dm);
                }
            }
            Op::Mse { pred, target } => {
                let tv = self.value(target);
                let n = tv.nrows() as f64;
                let scale = 2.0 * g[[0, 0]] / n;
                let d = (self.value(pred) - tv) * scale;
                acc(pred, d);
            }
        }
    }
}

/// Gradients of individual tape nodes after [`Tape::backward_full`].
pub struct NodeGrads(Vec<Option<Array2<f64>>>);

impl NodeGrads {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.0[v.0].as_ref()
    }
}

/// `B × (p·q)` → `p × (B·q)`.
fn coeff_to_cols(m: &Array2<f64>, p: usize, q: usize) -> Array2<f64> {
    let b = m.nrows();
    let mut out = Array2::zeros((p, b * q));
    for i in 0..b {
        for k in 0..p {
            for c in 0..q {
                out[[k, i * q + c]] = m[[i, k * q + c]];
            }
        }
    }
    out
}

fn cols_to_coeff(mp: &Array2<f64>, b: usize, p: usize, q: usize) -> Array2<f64> {
    let mut out = Array2::zeros((b, p * q));
    for i in 0..b {
        for k in 0..p {
            for c in 0..q {
                out[[i, k * q + c]] = mp[[k, i * q + c]];
            }
        }
    }
    out
}

/// `Q × (B·q)` → `(B·Q) × q`.
fn shared_to_rows(y: &ArrayView2<f64>, b: usize, q: usize) -> Array2<f64> {
    let nq = y.nrows();
    let mut out = Array2::zeros((b * nq, q));
    for i in 0..b {
        for j in 0..nq {
            for c in 0..q {
                out[[i * nq + j, c]] = y[[j, i * q + c]];
            }
        }
    }
    out
}

fn rows_to_shared(g: &Array2<f64>, b: usize, nq: usize, q: usize) -> Array2<f64> {
    let mut out = Array2::zeros((nq, b * q));
    for i in 0..b {
        for j in 0..nq {
            for c in 0..q {
                out[[j, i * q + c]] = g[[i * nq + j, c]];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gelu_scalar_values() {
        assert_eq!(gelu(0.0), 0.0);
        // 3 Φ(3) with Φ(3) = 0.998650101968...
        assert!((gelu(3.0) - 2.995_950_3).abs() < 1e-6);
        assert!((gelu(-3.0) + 3.0 * (1.0 - 0.998_650_101_968_37)).abs() < 1e-12);
    }

    #[test]
    fn quadratic_hand_gradient() {
        // loss = Σ (W x)²  → dL/dW = 2 (W x) xᵀ
        let mut store = ParamStore::new();
        let w = store.add("w", array![[1.0, -2.0], [0.5, 3.0]]);
        let x = array![[2.0], [1.0]];
        let tape_grads = {
            let mut tape = Tape::new(&store);
            let wv = tape.param(w);
            let xv = tape.leaf(x.clone());
            let y = tape.matmul(wv, xv);
            // Σ y² = N · mse(y, 0) with N = rows
            let loss = tape.mse(y, Array2::zeros((2, 1)));
            let mut g = tape.backward(loss);
            g[0] *= 2.0;
            g
        };
        let wx = store.get(w).dot(&x);
        let expected = 2.0 * wx.dot(&x.t());
        assert!((&tape_grads[0] - &expected).iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn constant_has_zero_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", array![[1.0, 2.0]]);
        let tape = {
            let mut tape = Tape::new(&store);
            let _ = tape.param(w);
            let c = tape.leaf(array![[3.0]]);
            let loss = tape.mse(c, array![[1.0]]);
            tape.backward(loss)
        };
        assert!(tape[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn readout_layouts_agree() {
        let mut store = ParamStore::new();
        let t = store.add("t", Array2::from_shape_fn((3, 2), |(i, k)| 1.0 + i as f64 - 0.5 * k as f64));
        let m = store.add("m", Array2::from_shape_fn((2, 4), |(i, c)| 0.3 * c as f64 - i as f64));
        let tiled = {
            let tv = store.get(t);
            ndarray::concatenate(Axis(0), &[tv.view(), tv.view()]).unwrap()
        };
        let mut tape = Tape::new(&store);
        let tv = tape.param(t);
        let mv = tape.param(m);
        let shared = tape.readout(tv, mv, 2, true);
        let tl = tape.leaf(tiled);
        let per = tape.readout(tl, mv, 2, false);
        assert_eq!(tape.value(shared), tape.value(per));
        // hand check of one entry: traj 1, query 2, channel 0
        let tvv = store.get(t);
        let mvv = store.get(m);
        let want = tvv[[2, 0]] * mvv[[1, 0]] + tvv[[2, 1]] * mvv[[1, 2]];
        assert!((tape.value(shared)[[5, 0]] - want).abs() < 1e-15);
    }
}
