use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavegate::autodiff::{
    clip_global_norm, gelu, global_norm, Adam, AdamConfig, LastLayer, LrSchedule, Mlp, MlpSpec, ParamStore, Tape,
};

#[test]
fn gelu_reference_points() {
    assert_eq!(gelu(0.0), 0.0);
    assert!((gelu(3.0) - 2.995_95).abs() < 1e-5);
    // odd part: GELU(x) + GELU(-x) = x (2Φ(x) - 1)
    for x in [0.1, 0.7, 2.0] {
        let phi = 0.5 * (1.0 + erf_series(x / std::f64::consts::SQRT_2));
        assert!((gelu(x) + gelu(-x) - x * (2.0 * phi - 1.0)).abs() < 1e-15);
    }
}

// independent erf oracle: Maclaurin series
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..60 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

#[test]
fn zero_weights_give_constant_bias() {
    let mut store = ParamStore::new();
    let spec = MlpSpec::new(vec![3, 4, 2]).unwrap();
    let mlp = Mlp::register(&mut store, "m", &spec, LastLayer::Zero, &mut ChaCha8Rng::seed_from_u64(0));
    let last = mlp.layers()[1].bias.unwrap();
    store.get_mut(last).assign(&array![[0.5, -2.0]]);
    let mut tape = Tape::new(&store);
    let x = tape.leaf(array![[1.0, 2.0, 3.0], [-4.0, 0.0, 9.0]]);
    let y = mlp.forward(&mut tape, x);
    assert_eq!(tape.value(y), &array![[0.5, -2.0], [0.5, -2.0]]);
}

#[test]
fn adam_first_step_and_descent() {
    let mut store = ParamStore::new();
    let w = store.add("w", array![[1.0]]);
    let mut adam = Adam::new(&store, AdamConfig::default());
    let mut g = vec![array![[0.5]]];
    adam.step(&mut store, &mut g, 1e-3).unwrap();
    let delta = store.get(w)[[0, 0]] - 1.0;
    assert!((delta + 1e-3).abs() <= 1e-5);

    // f(w) = w² from w = 1, three steps
    let mut store = ParamStore::new();
    let w = store.add("w", array![[1.0]]);
    let mut adam = Adam::new(&store, AdamConfig::default());
    let mut f = 1.0;
    for _ in 0..3 {
        let wv = store.get(w)[[0, 0]];
        let mut g = vec![array![[2.0 * wv]]];
        adam.step(&mut store, &mut g, 1e-2).unwrap();
        let next = store.get(w)[[0, 0]].powi(2);
        assert!(next < f);
        f = next;
    }
    assert_eq!(adam.step, 3);
}

#[test]
fn clipping_scales_by_threshold_over_norm() {
    let mut g = vec![array![[6.0, 0.0]], array![[8.0]]];
    let (n, clipped) = clip_global_norm(&mut g, 1.0);
    assert_eq!(n, 10.0);
    assert!(clipped);
    assert!((g[0][[0, 0]] - 0.6).abs() < 1e-15 && (g[1][[0, 0]] - 0.8).abs() < 1e-15);
}

#[test]
fn schedules() {
    let s = LrSchedule::Step {
        base: 1e-3,
        interval: 100,
        factor: 0.5,
    };
    assert_eq!(s.lr_at(0), 1e-3);
    assert_eq!(s.lr_at(100), 5e-4);
    assert_eq!(s.lr_at(250), 2.5e-4);
    let flat = LrSchedule::Step {
        base: 1e-3,
        interval: 10,
        factor: 1.0,
    };
    for step in [0, 9, 10, 12345] {
        assert_eq!(flat.lr_at(step), 1e-3);
    }
    assert_eq!(LrSchedule::Constant { base: 1e-3 }.lr_at(777), 1e-3);
}

proptest! {
    #[test]
    fn clipped_norm_never_exceeds_threshold(
        v in prop::collection::vec(-1e3f64..1e3, 1..40),
        clip in 1e-3f64..10.0,
    ) {
        let mut g = vec![Array2::from_shape_vec((1, v.len()), v).unwrap()];
        clip_global_norm(&mut g, clip);
        prop_assert!(global_norm(&g) <= clip * (1.0 + 1e-12));
    }

    #[test]
    fn matmul_gradient_is_bilinear(a in -3.0f64..3.0, b in -3.0f64..3.0, x in -3.0f64..3.0) {
        // L = (a·x + b)² / 1 → dL/da = 2(a x + b) x, dL/db = 2(a x + b)
        let mut store = ParamStore::new();
        let wa = store.add("a", array![[a]]);
        let wb = store.add("b", array![[b]]);
        let mut tape = Tape::new(&store);
        let xv = tape.leaf(array![[x]]);
        let av = tape.param(wa);
        let bv = tape.param(wb);
        let y = tape.matmul(xv, av);
        let y = tape.add_bias(y, bv);
        let loss = tape.mse(y, array![[0.0]]);
        let g = tape.backward(loss);
        let r = a * x + b;
        prop_assert!((g[0][[0, 0]] - 2.0 * r * x).abs() <= 1e-12 * (1.0 + (2.0 * r * x).abs()));
        prop_assert!((g[1][[0, 0]] - 2.0 * r).abs() <= 1e-12 * (1.0 + (2.0 * r).abs()));
    }
}
