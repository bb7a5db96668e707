use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wavegate::autodiff::Tape;
use wavegate::models::{param_count, Inputs, Model, ModelConfig, PreBranch, QueryLayout, Variant};

fn small(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        sensor_dim: 8,
        coord_dim: 2,
        n_descriptors: 3,
        branch_hidden: vec![6, 5],
        trunk_hidden: vec![7, 5],
        latent: 4,
        out_channels: 2,
        film_hidden: 5,
        pre: PreBranch::Dense { hidden: 4 },
        gate_hidden: 5,
        alpha_pre: 1.0,
        alpha_b: 0.5,
        alpha_t: 0.5,
        heads: 3,
        gate_rank: 2,
        head_hidden: 4,
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-scale..scale))
}

fn inputs(cfg: &ModelConfig, b: usize, nq: usize, layout: QueryLayout, seed: u64) -> Inputs {
    let mut r = rng(seed);
    let rows = if layout == QueryLayout::Shared { nq } else { b * nq };
    Inputs {
        sensor: random(&mut r, b, cfg.sensor_dim, 1.5),
        phi: random(&mut r, b, cfg.n_descriptors, 1.5),
        queries: random(&mut r, rows, cfg.coord_dim, 3.0),
        layout,
    }
}

fn randomize(model: &mut Model, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for v in model.store_mut().values_mut() {
        v.mapv_inplace(|_| r.random_range(-scale..scale));
    }
}

/// Copies every slab whose name and shape exist in both models.
fn copy_common(src: &Model, dst: &mut Model) {
    let named: Vec<_> = src
        .store()
        .iter()
        .map(|(n, v)| (n.to_string(), v.clone()))
        .collect();
    for (name, v) in named {
        if let Some(id) = dst.store().id(&name) {
            if dst.store().get(id).dim() == v.dim() {
                dst.store_mut().get_mut(id).assign(&v);
            }
        }
    }
}

fn max_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn vanilla_hand_hadamard_readout() {
    let cfg = ModelConfig {
        sensor_dim: 1,
        coord_dim: 1,
        branch_hidden: vec![],
        trunk_hidden: vec![],
        latent: 2,
        ..small(Variant::Vanilla)
    };
    let mut m = Model::new(cfg, &mut rng(0)).unwrap();
    let set = |m: &mut Model, name: &str, v: Array2<f64>| {
        let id = m.store().id(name).unwrap();
        m.store_mut().get_mut(id).assign(&v);
    };
    set(&mut m, "branch.0.weight", array![[1.0, 2.0]]);
    set(&mut m, "trunk.0.weight", array![[3.0, 4.0]]);
    set(&mut m, "readout.weight", array![[1.0, 0.0], [0.0, 1.0]]);
    set(&mut m, "readout.bias", array![[0.0, 0.0]]);
    let x = Inputs {
        sensor: array![[1.0]],
        phi: Array2::zeros((1, 0)),
        queries: array![[1.0]],
        layout: QueryLayout::Shared,
    };
    assert_eq!(m.predict(&x).unwrap(), array![[3.0, 8.0]]);

    set(&mut m, "readout.weight", Array2::zeros((2, 2)));
    set(&mut m, "readout.bias", array![[0.25, -1.5]]);
    let x = Inputs {
        queries: array![[1.0], [-2.0], [7.5]],
        ..x
    };
    let y = m.predict(&x).unwrap();
    for row in y.rows() {
        assert_eq!(row.to_vec(), vec![0.25, -1.5]);
    }
}

#[test]
fn batching_is_a_no_op() {
    for v in Variant::ALL {
        let cfg = small(v);
        let mut m = Model::new(cfg.clone(), &mut rng(1)).unwrap();
        randomize(&mut m, 2, 0.5);
        let x = inputs(&cfg, 3, 5, QueryLayout::Shared, 3);
        let full = m.predict(&x).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let one = Inputs {
                    sensor: x.sensor.slice(ndarray::s![i..i + 1, ..]).to_owned(),
                    phi: x.phi.slice(ndarray::s![i..i + 1, ..]).to_owned(),
                    queries: x.queries.slice(ndarray::s![j..j + 1, ..]).to_owned(),
                    layout: QueryLayout::Shared,
                };
                let y = m.predict(&one).unwrap();
                for c in 0..2 {
                    assert!((y[[0, c]] - full[[i * 5 + j, c]]).abs() <= 1e-14, "{v}");
                }
            }
        }
        // per-trajectory layout with tiled queries gives the same numbers
        let tiled = ndarray::concatenate(
            ndarray::Axis(0),
            &[x.queries.view(), x.queries.view(), x.queries.view()],
        )
        .unwrap();
        let per = Inputs {
            queries: tiled,
            layout: QueryLayout::PerTrajectory,
            ..x.clone()
        };
        assert!(max_diff(&m.predict(&per).unwrap(), &full) <= 1e-14, "{v}");
    }
}

#[test]
fn concat_without_descriptors_is_vanilla() {
    let mut vcfg = small(Variant::Vanilla);
    vcfg.n_descriptors = 0;
    let ccfg = ModelConfig {
        variant: Variant::Concat,
        ..vcfg.clone()
    };
    let vanilla = Model::new(vcfg.clone(), &mut rng(4)).unwrap();
    let mut concat = Model::new(ccfg, &mut rng(5)).unwrap();
    copy_common(&vanilla, &mut concat);
    let x = inputs(&vcfg, 2, 6, QueryLayout::Shared, 6);
    assert_eq!(vanilla.predict(&x).unwrap(), concat.predict(&x).unwrap());
}

#[test]
fn concat_responds_to_descriptors() {
    let cfg = small(Variant::Concat);
    let m = Model::new(cfg.clone(), &mut rng(7)).unwrap();
    let x = inputs(&cfg, 1, 4, QueryLayout::Shared, 8);
    let mut y = x.clone();
    y.phi[[0, 1]] += 0.5;
    assert!(max_diff(&m.predict(&x).unwrap(), &m.predict(&y).unwrap()) > 1e-6);
}

fn identity_case(variant: Variant) {
    let cfg = small(variant);
    let vcfg = ModelConfig {
        variant: Variant::Vanilla,
        ..cfg.clone()
    };
    let mut vanilla = Model::new(vcfg, &mut rng(9)).unwrap();
    randomize(&mut vanilla, 10, 0.6);
    let mut m = Model::new(cfg.clone(), &mut rng(11)).unwrap();
    randomize(&mut m, 12, 0.6);
    m.reset_generators();
    copy_common(&vanilla, &mut m);
    let x = inputs(&cfg, 3, 7, QueryLayout::Shared, 13);
    let want = vanilla.predict(&x).unwrap();
    let got = m.predict(&x).unwrap();
    assert!(max_diff(&want, &got) <= 1e-14, "{variant}: {}", max_diff(&want, &got));
}

#[test]
fn zeroed_generators_reduce_to_vanilla() {
    identity_case(Variant::Film);
    identity_case(Variant::Rg);
}

#[test]
fn zero_amplitudes_reduce_rg_to_vanilla() {
    let mut cfg = small(Variant::Rg);
    cfg.alpha_pre = 0.0;
    cfg.alpha_b = 0.0;
    cfg.alpha_t = 0.0;
    let mut vanilla = Model::new(ModelConfig { variant: Variant::Vanilla, ..cfg.clone() }, &mut rng(14)).unwrap();
    randomize(&mut vanilla, 15, 0.6);
    let mut m = Model::new(cfg.clone(), &mut rng(16)).unwrap();
    randomize(&mut m, 17, 0.6);
    copy_common(&vanilla, &mut m);
    let x = inputs(&cfg, 2, 5, QueryLayout::Shared, 18);
    assert!(max_diff(&vanilla.predict(&x).unwrap(), &m.predict(&x).unwrap()) <= 1e-14);
}

#[test]
fn gates_stay_in_their_band() {
    for v in [Variant::Rg, Variant::Mhrg] {
        let cfg = small(v);
        let mut m = Model::new(cfg.clone(), &mut rng(19)).unwrap();
        randomize(&mut m, 20, 3.0);
        for seed in 0..20 {
            let mut x = inputs(&cfg, 4, 2, QueryLayout::Shared, 100 + seed);
            x.phi.mapv_inplace(|p| 10.0 * p);
            for (gb, gt) in m.gates(&x).unwrap() {
                assert!(gb.iter().all(|g| (0.5..=1.5).contains(g)));
                assert!(gt.iter().all(|g| (0.5..=1.5).contains(g)));
            }
            let mut tape = Tape::new(m.store());
            let f = m.forward(&mut tape, &x, false).unwrap();
            let pre = tape.value(f.pre_gate.unwrap());
            assert!(pre.iter().all(|g| (0.0..=2.0).contains(g)));
        }
    }
}

#[test]
fn film_beta_shift_is_a_bias() {
    // branch (1 → 1 → 1): zero first layer so GELU(0) = 0, then β = 1
    let cfg = ModelConfig {
        sensor_dim: 1,
        coord_dim: 1,
        n_descriptors: 1,
        branch_hidden: vec![1],
        trunk_hidden: vec![],
        latent: 1,
        out_channels: 1,
        film_hidden: 2,
        ..small(Variant::Film)
    };
    let mut m = Model::new(cfg, &mut rng(21)).unwrap();
    let set = |m: &mut Model, name: &str, v: Array2<f64>| {
        let id = m.store().id(name).unwrap();
        m.store_mut().get_mut(id).assign(&v);
    };
    set(&mut m, "branch.0.weight", array![[0.0]]);
    set(&mut m, "branch.0.bias", array![[0.0]]);
    set(&mut m, "branch.1.weight", array![[2.5]]);
    set(&mut m, "branch.1.bias", array![[0.5]]);
    set(&mut m, "film.0.1.bias", array![[0.0, 1.0]]);
    set(&mut m, "trunk.0.weight", array![[0.0]]);
    set(&mut m, "trunk.0.bias", array![[1.0]]);
    set(&mut m, "readout.weight", array![[1.0]]);
    set(&mut m, "readout.bias", array![[0.0]]);
    let x = Inputs {
        sensor: array![[0.7]],
        phi: array![[-0.3]],
        queries: array![[2.0]],
        layout: QueryLayout::Shared,
    };
    // b = 2.5 · (0 + 1) + 0.5, t = 1
    assert!((m.predict(&x).unwrap()[[0, 0]] - 3.0).abs() < 1e-15);
}

#[test]
fn single_identity_head_is_biasless_vanilla() {
    let cfg = ModelConfig {
        heads: 1,
        ..small(Variant::Mhrg)
    };
    let mut vanilla = Model::new(ModelConfig { variant: Variant::Vanilla, ..cfg.clone() }, &mut rng(22)).unwrap();
    randomize(&mut vanilla, 23, 0.6);
    let mut m = Model::new(cfg.clone(), &mut rng(24)).unwrap();
    randomize(&mut m, 25, 0.6);
    m.reset_generators();
    copy_common(&vanilla, &mut m);
    let w = vanilla.store().by_name("readout.weight").unwrap().clone();
    let id = m.store().id("head.0.readout").unwrap();
    m.store_mut().get_mut(id).assign(&w);
    let c = vanilla.store().by_name("readout.bias").unwrap().clone();
    let x = inputs(&cfg, 2, 6, QueryLayout::Shared, 26);
    let want = vanilla.predict(&x).unwrap() - &c;
    assert!(max_diff(&want, &m.predict(&x).unwrap()) <= 1e-14);
}

#[test]
fn heads_sum_and_permute() {
    let cfg = small(Variant::Mhrg);
    let mut m = Model::new(cfg.clone(), &mut rng(27)).unwrap();
    randomize(&mut m, 28, 0.6);
    let x = inputs(&cfg, 3, 4, QueryLayout::Shared, 29);
    let total = m.predict(&x).unwrap();
    let heads = m.predict_heads(&x).unwrap();
    assert_eq!(heads.len(), 3);
    let sum = heads.iter().fold(Array2::zeros(total.raw_dim()), |acc, h| acc + h);
    assert!(max_diff(&sum, &total) <= 1e-14);

    m.swap_heads(0, 2);
    let swapped = m.predict_heads(&x).unwrap();
    assert!(max_diff(&m.predict(&x).unwrap(), &total) <= 1e-14);
    assert_eq!(swapped[0], heads[2]);
    assert_eq!(swapped[2], heads[0]);
}

#[test]
fn prediction_is_lipschitz_in_descriptors() {
    for v in [Variant::Concat, Variant::Film, Variant::Rg, Variant::Mhrg] {
        let cfg = small(v);
        let mut m = Model::new(cfg.clone(), &mut rng(30)).unwrap();
        randomize(&mut m, 31, 0.6);
        let x = inputs(&cfg, 1, 8, QueryLayout::Shared, 32);
        let base = m.predict(&x).unwrap();
        let dir = array![[0.6, -0.8, 0.0]];
        let ratio = |d: f64| {
            let y = Inputs {
                phi: &x.phi + &(&dir * d),
                ..x.clone()
            };
            max_diff(&m.predict(&y).unwrap(), &base) / d
        };
        let r = [ratio(1e-2), ratio(1e-3), ratio(1e-4)];
        assert!(r[1] > 0.0, "{v}");
        assert!((r[1] - r[2]).abs() <= 0.05 * r[2], "{v}: {r:?}");
        assert!((r[0] - r[2]).abs() <= 0.5 * r[2], "{v}: {r:?}");
    }
}

#[test]
fn gradients_match_central_differences() {
    let h = 1e-5;
    for v in Variant::ALL {
        for pre in [PreBranch::Dense { hidden: 4 }, PreBranch::LowRank { hidden: 4, rank: 2 }] {
            if pre != (PreBranch::Dense { hidden: 4 }) && !matches!(v, Variant::Rg | Variant::Mhrg) {
                continue;
            }
            let cfg = ModelConfig { pre, ..small(v) };
            let mut m = Model::new(cfg.clone(), &mut rng(40)).unwrap();
            randomize(&mut m, 41, 0.5);
            let x = inputs(&cfg, 3, 4, QueryLayout::Shared, 42);
            let target = random(&mut rng(43), 12, 2, 1.0);
            let (_, grads) = m.loss_and_grad(&x, target.view()).unwrap();

            let mut r = rng(44);
            let slabs: Vec<(usize, usize)> = m.store().values().iter().map(|a| a.dim()).collect();
            let mut worst: f64 = 0.0;
            let mut probed = 0;
            // every slab at least once, then random picks up to 200
            let mut picks: Vec<usize> = (0..slabs.len()).collect();
            while picks.len() < 200 {
                picks.push(r.random_range(0..slabs.len()));
            }
            for s in picks {
                let (rows, cols) = slabs[s];
                let (i, j) = (r.random_range(0..rows), r.random_range(0..cols));
                let orig = m.store().values()[s][[i, j]];
                m.store_mut().values_mut()[s][[i, j]] = orig + h;
                let up = m.loss(&x, target.view()).unwrap();
                m.store_mut().values_mut()[s][[i, j]] = orig - h;
                let down = m.loss(&x, target.view()).unwrap();
                m.store_mut().values_mut()[s][[i, j]] = orig;
                let fd = (up - down) / (2.0 * h);
                let g = grads[s][[i, j]];
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
                probed += 1;
            }
            assert_eq!(probed, 200.max(slabs.len()));
            assert!(worst <= 1e-4, "{v} {pre:?}: worst relative error {worst:e}");
        }
    }
}

#[test]
fn descriptor_gradient_matches_finite_differences() {
    for v in [Variant::Concat, Variant::Film, Variant::Rg, Variant::Mhrg] {
        let cfg = small(v);
        let mut m = Model::new(cfg.clone(), &mut rng(50)).unwrap();
        randomize(&mut m, 51, 0.5);
        let x = inputs(&cfg, 2, 3, QueryLayout::Shared, 52);
        let target = random(&mut rng(53), 6, 2, 1.0);
        let mut tape = Tape::new(m.store());
        let fwd = m.forward_input_grads(&mut tape, &x).unwrap();
        let loss = tape.mse(fwd.output, target.clone());
        let (_, nodes) = tape.backward_full(loss);
        let g_phi = nodes.get(fwd.phi).unwrap().clone();
        let eps = 1e-6;
        for ((i, j), g) in g_phi.indexed_iter() {
            let mut a = x.clone();
            let mut b = x.clone();
            a.phi[[i, j]] += eps;
            b.phi[[i, j]] -= eps;
            let fd = (m.loss(&a, target.view()).unwrap() - m.loss(&b, target.view()).unwrap()) / (2.0 * eps);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            assert!(rel <= 1e-4, "{v} ({i}, {j}): {g} vs {fd}");
        }
        assert!(g_phi.iter().any(|g| g.abs() > 1e-8), "{v}");
    }
}

#[test]
fn closed_form_counts_match_enumeration() {
    let mut configs: Vec<ModelConfig> = Variant::ALL.iter().map(|&v| ModelConfig::nlse_1d(v)).collect();
    for r in [6, 12, 24] {
        configs.push(ModelConfig::nlse_1d(Variant::Mhrg).with_heads(r));
    }
    configs.extend(Variant::ALL.iter().map(|&v| ModelConfig::gpe_2d(v)));
    for r in [2, 4, 8] {
        configs.push(ModelConfig::gpe_2d(Variant::Mhrg).with_heads(r));
    }
    for cfg in configs {
        let m = Model::new(cfg.clone(), &mut rng(60)).unwrap();
        assert_eq!(m.param_count(), param_count(&cfg), "{:?} R={}", cfg.variant, cfg.heads);
    }
}
