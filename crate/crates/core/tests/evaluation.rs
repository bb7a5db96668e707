use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavegate::evaluation::{
    add_noise, complex_noise, diagnostics_1d, diagnostics_2d, full_field_mse, noise_sweep, regime, rms, split_mse,
    DEFAULT_EPS,
};
use wavegate::grid::{Axis, ComplexField, Grid};
use wavegate::models::{Model, ModelConfig, Variant};
use wavegate::solvers::{generate_dataset, solve_gpe_2d, Benchmark, GpeConfig};
use wavegate::training::{model_inputs, TrainData};

fn sech(x: f64) -> f64 {
    1.0 / x.cosh()
}

fn soliton_frames(grid: Grid, times: &[f64]) -> Vec<ComplexField> {
    times
        .iter()
        .map(|&t| ComplexField::from_fn(grid, |x, _| Complex64::from_polar(sech(x), t / 2.0)).unwrap())
        .collect()
}

#[test]
fn mse_of_constant_offset() {
    let grid = Grid::nlse_benchmark();
    let a = soliton_frames(grid, &[0.0, 0.5, 1.0]);
    let b: Vec<ComplexField> = a
        .iter()
        .map(|f| ComplexField::new(grid, f.data().iter().map(|z| z + 0.1).collect()).unwrap())
        .collect();
    let mse = full_field_mse(&a, &b).unwrap();
    assert!((mse - 0.01).abs() < 1e-15, "{mse:e}");
}

fn loop_mse(a: &[ComplexField], b: &[ComplexField]) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for f in 0..a.len() {
        for i in 0..a[f].len() {
            let d = a[f].data()[i] - b[f].data()[i];
            s += d.re * d.re + d.im * d.im;
            n += 1.0;
        }
    }
    s / n
}

fn random_frames(seed: u64, grid: Grid, n: usize) -> Vec<ComplexField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| ComplexField::new(grid, complex_noise(&mut rng, grid.len())).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mse_is_symmetric_nonnegative_and_matches_loop(sa in 0u64..1000, sb in 0u64..1000, frames in 1usize..4) {
        let grid = Grid::new_1d(Axis::new(-1.0, 1.0, 16).unwrap());
        let a = random_frames(sa, grid, frames);
        let b = random_frames(sb + 1000, grid, frames);
        let ab = full_field_mse(&a, &b).unwrap();
        let ba = full_field_mse(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert!((ab - loop_mse(&a, &b)).abs() <= 1e-14 * ab.max(1.0));
        prop_assert_eq!(full_field_mse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn translation_shifts_centre(shift in -20i64..20) {
        let grid = Grid::nlse_benchmark();
        let dx = grid.x().spacing();
        let base = ComplexField::from_fn(grid, |x, _| Complex64::new((-(x + 1.0).powi(2)).exp(), 0.0)).unwrap();
        let moved = ComplexField::from_fn(grid, |x, _| {
            Complex64::new((-(x - shift as f64 * dx + 1.0).powi(2)).exp(), 0.0)
        })
        .unwrap();
        let d0 = diagnostics_1d(&[base], &[0.0], 0.0).unwrap();
        let d1 = diagnostics_1d(&[moved], &[0.0], 0.0).unwrap();
        let xc = d1.get("x_c").unwrap()[0] - d0.get("x_c").unwrap()[0];
        prop_assert!((xc - shift as f64 * dx).abs() < 1e-10, "{} vs {}", xc, shift as f64 * dx);
    }
}

#[test]
fn mse_rejects_mismatched_series() {
    let grid = Grid::nlse_benchmark();
    let a = soliton_frames(grid, &[0.0, 1.0]);
    assert!(full_field_mse(&a, &a[..1]).is_err());
    assert!(full_field_mse(&[], &[]).is_err());
}

#[test]
fn soliton_diagnostics() {
    let grid = Grid::nlse_benchmark();
    let times: Vec<f64> = (0..21).map(|k| k as f64 * 0.1).collect();
    let frames = soliton_frames(grid, &times);
    let d = diagnostics_1d(&frames, &times, 0.0).unwrap();
    let dx = grid.x().spacing();
    // the half-open grid keeps x = -10 but not +10; every other point pairs off
    let e0: f64 = grid.x().coords().iter().map(|x| sech(*x).powi(2)).sum::<f64>() * dx;
    let xc_oracle = -10.0 * sech(10.0).powi(2) * dx / e0;
    for (k, t) in times.iter().enumerate() {
        assert!((d.get("E").unwrap()[k] - 2.0).abs() < 1e-6);
        assert!((d.get("peak").unwrap()[k] - 1.0).abs() < 1e-6);
        assert!((d.get("x_c").unwrap()[k] - xc_oracle).abs() < 1e-10);
        assert!((d.get("probe_re").unwrap()[k] - (t / 2.0).cos()).abs() < 1e-12);
        assert!((d.get("probe_im").unwrap()[k] - (t / 2.0).sin()).abs() < 1e-12);
    }
    let csv = d.to_csv("# test");
    assert!(csv.starts_with("# test\nt,E,peak,x_c,probe_re,probe_im\n"));
    assert_eq!(csv.lines().count(), 2 + times.len());
}

#[test]
fn intensity_only_where_field_is_nonzero() {
    let grid = Grid::nlse_benchmark();
    let mut frames = vec![ComplexField::zeros(grid); 3];
    frames[1] = soliton_frames(grid, &[0.0]).remove(0);
    let d = diagnostics_1d(&frames, &[0.0, 1.0, 2.0], 0.0).unwrap();
    let e = d.get("E").unwrap();
    assert_eq!(e[0], 0.0);
    assert!(e[1] > 1.0);
    assert_eq!(e[2], 0.0);
}

#[test]
fn gaussian_rms_radius() {
    let grid = Grid::gpe_benchmark();
    for sigma in [0.5, 0.7] {
        let f = ComplexField::from_fn(grid, |x, y| Complex64::new((-(x * x + y * y) / (4.0 * sigma * sigma)).exp(), 0.0))
            .unwrap();
        let d = diagnostics_2d(&[f], &[0.0]).unwrap();
        let r = d.get("R_rms").unwrap()[0];
        assert!((r - sigma * 2f64.sqrt()).abs() < 1e-3, "σ = {sigma}: {r}");
    }
}

#[test]
fn damped_mass_follows_decay_law() {
    let cfg = GpeConfig {
        t_final: 0.5,
        ..GpeConfig::default()
    };
    let ic = ComplexField::from_fn(cfg.grid, |x, y| {
        Complex64::new(1.2 * (-((x - 0.4).powi(2) + y * y)).exp(), 0.3 * x)
    })
    .unwrap();
    let traj = solve_gpe_2d(&ic, &cfg).unwrap();
    let d = diagnostics_2d(&traj.frames, &traj.times).unwrap();
    let n = d.get("N").unwrap();
    for (k, t) in traj.times.iter().enumerate() {
        let want = (-2.0 * cfg.gamma * t).exp();
        assert!((n[k] / n[0] - want).abs() < 1e-10, "t = {t}");
    }
}

#[test]
fn undamped_centre_follows_ehrenfest() {
    let (x0, y0, kx, ky) = (0.3, -0.2, 0.2, 0.1);
    let cfg = GpeConfig {
        g: 0.0,
        gamma: 0.0,
        dt: 1e-3,
        stride: 100,
        ..GpeConfig::default()
    };
    let ic = ComplexField::from_fn(cfg.grid, |x, y| {
        let r2 = (x - x0).powi(2) + (y - y0).powi(2);
        Complex64::from_polar((-cfg.omega * r2 / 2.0).exp(), kx * x + ky * y)
    })
    .unwrap();
    let traj = solve_gpe_2d(&ic, &cfg).unwrap();
    let d = diagnostics_2d(&traj.frames, &traj.times).unwrap();
    let om = cfg.omega;
    for (k, t) in traj.times.iter().enumerate() {
        let xs = x0 * (om * t).cos() + kx / om * (om * t).sin();
        let ys = y0 * (om * t).cos() + ky / om * (om * t).sin();
        assert!((d.get("x_cm").unwrap()[k] - xs).abs() < 1e-6, "t = {t}");
        assert!((d.get("y_cm").unwrap()[k] - ys).abs() < 1e-6, "t = {t}");
    }
}

#[test]
fn diagnostics_check_dimension() {
    let f1 = ComplexField::zeros(Grid::nlse_benchmark());
    assert!(diagnostics_2d(std::slice::from_ref(&f1), &[0.0]).is_err());
    assert!(diagnostics_1d(&[f1], &[0.0, 1.0], 0.0).is_err());
}

#[test]
fn injected_noise_power() {
    let grid = Grid::nlse_benchmark();
    let u0 = ComplexField::from_fn(grid, |x, _| Complex64::new(sech(x), 0.2 * sech(x - 2.0))).unwrap();
    let r = rms(&u0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for eps in [0.01, 0.1, 0.5] {
        let draws = 10_000;
        let mut power = 0.0;
        for _ in 0..draws {
            let xi = complex_noise(&mut rng, grid.len());
            let noisy = add_noise(&u0, eps, &xi);
            power += noisy.data().iter().zip(u0.data()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()
                / grid.len() as f64;
        }
        power /= draws as f64;
        let want = eps * eps * r * r;
        assert!((power / want - 1.0).abs() < 0.03, "ε = {eps}: {power:e} vs {want:e}");
    }
}

#[test]
fn zero_noise_is_identity() {
    let grid = Grid::nlse_benchmark();
    let u0 = soliton_frames(grid, &[0.0]).remove(0);
    let xi = vec![Complex64::new(1e6, 1e6); grid.len()];
    assert_eq!(add_noise(&u0, 0.0, &xi), u0);
}

#[test]
fn regime_labels() {
    let labels: Vec<&str> = DEFAULT_EPS.iter().map(|&e| regime(e)).collect();
    assert_eq!(
        labels,
        ["clean", "small", "small", "moderate", "moderate", "strong", "strong", "severe"]
    );
}

fn small_model(seed: u64) -> Model {
    let mut cfg = ModelConfig::nlse_1d(Variant::Rg);
    cfg.branch_hidden = vec![16, 16];
    cfg.trunk_hidden = vec![16, 16];
    cfg.latent = 8;
    cfg.gate_hidden = 8;
    Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn noise_sweep_clean_ratio_is_one() {
    let (train, test, _) = generate_dataset(Benchmark::Nlse1d, 4, 3, 5).unwrap();
    let data = TrainData::new(&train, &test).unwrap();
    let model = small_model(2);
    let sweep = noise_sweep(&model, &data.stats, &test, &DEFAULT_EPS, 9).unwrap();
    assert_eq!(sweep.ratio[0], 1.0);
    let refs: Vec<&ComplexField> = test.trajectories.iter().map(|t| t.initial()).collect();
    let clean = split_mse(&model, &data.stats, &test, &model_inputs(&refs, &data.stats).unwrap()).unwrap();
    assert_eq!(sweep.mean_mse[0], clean.iter().sum::<f64>() / clean.len() as f64);
    assert!(sweep.ratio.iter().all(|r| r.is_finite() && *r > 0.0));
    // common noise draws: the sweep is reproducible
    assert_eq!(noise_sweep(&model, &data.stats, &test, &DEFAULT_EPS, 9).unwrap(), sweep);
    assert!(noise_sweep(&model, &data.stats, &test, &[-0.1], 9).is_err());
    let csv = sweep.to_csv("# h");
    assert!(csv.contains("0.5,severe,"));
}
