//! Raw-space errors, physical diagnostics and the input-noise sweep.

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Dataset};
use crate::models::{Inputs, Model, QueryLayout};
use crate::norm::NormStats;
use crate::training::{coords_of, model_inputs};

/// Queries per forward chunk at inference time.
pub const QUERY_CHUNK: usize = 4096;
/// Trajectories per inference batch.
pub const TRAJ_CHUNK: usize = 8;

pub const DEFAULT_EPS: [f64; 8] = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5];
pub const REGIME_BOUNDS: [f64; 3] = [0.02, 0.1, 0.3];

/// Model-ready rows for a set of initial conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalInputs {
    pub sensor: Array2<f64>,
    pub phi: Array2<f64>,
}

impl EvalInputs {
    pub fn len(&self) -> usize {
        self.sensor.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.sensor.nrows() == 0
    }

    pub fn rows(&self, start: usize, end: usize) -> EvalInputs {
        EvalInputs {
            sensor: self.sensor.slice(s![start..end, ..]).to_owned(),
            phi: self.phi.slice(s![start..end, ..]).to_owned(),
        }
    }
}

/// `(1/(N_t N_x)) Σ |Δψ|²` over frames and grid points.
pub fn full_field_mse(pred: &[ComplexField], truth: &[ComplexField]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!("{} vs {} frames", pred.len(), truth.len())));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in pred.iter().zip(truth) {
        if a.len() != b.len() {
            return Err(Error::Shape("frame sizes differ".into()));
        }
        sum += a.data().iter().zip(b.data()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>();
        n += a.len();
    }
    Ok(sum / n as f64)
}

/// Normalised predictions `(B·Q) × 2` for every row of `inputs` at every
/// coordinate row, evaluated in query chunks.
pub fn predict_normalized(model: &Model, inputs: &EvalInputs, coords: ArrayView2<f64>) -> Result<Array2<f64>> {
    let b = inputs.len();
    let nq = coords.nrows();
    let q = model.config().out_channels;
    let mut out = Array2::zeros((b * nq, q));
    for start in (0..nq).step_by(QUERY_CHUNK) {
        let end = (start + QUERY_CHUNK).min(nq);
        let x = Inputs {
            sensor: inputs.sensor.clone(),
            phi: inputs.phi.clone(),
            queries: coords.slice(s![start..end, ..]).to_owned(),
            layout: QueryLayout::Shared,
        };
        let y = model.predict(&x)?;
        let m = end - start;
        for i in 0..b {
            out.slice_mut(s![i * nq + start..i * nq + end, ..])
                .assign(&y.slice(s![i * m..(i + 1) * m, ..]));
        }
    }
    Ok(out)
}

pub(crate) fn all_coords(ds: &Dataset) -> Array2<f64> {
    let flat: Vec<usize> = (0..ds.n_space_time()).collect();
    coords_of(ds, &flat)
}

pub(crate) fn to_frames(ds: &Dataset, pred: ArrayView2<f64>, stats: &NormStats) -> Vec<ComplexField> {
    let n = ds.grid.len();
    (0..ds.n_frames())
        .map(|f| {
            let data = (0..n)
                .map(|p| {
                    let r = pred.row(f * n + p);
                    stats.output.denormalize([r[0], r[1]])
                })
                .collect();
            ComplexField::new(ds.grid, data).expect("grid-sized frame")
        })
        .collect()
}

/// De-normalised predicted frames for trajectories `indices` of `ds`,
/// using the matching rows of `inputs`.
pub fn predict_fields(
    model: &Model,
    stats: &NormStats,
    ds: &Dataset,
    inputs: &EvalInputs,
) -> Result<Vec<Vec<ComplexField>>> {
    let coords = all_coords(ds);
    let nq = coords.nrows();
    let chunks: Vec<(usize, usize)> = (0..inputs.len())
        .step_by(TRAJ_CHUNK)
        .map(|s| (s, (s + TRAJ_CHUNK).min(inputs.len())))
        .collect();
    let parts: Vec<Result<Vec<Vec<ComplexField>>>> = chunks
        .par_iter()
        .map(|&(a, b)| {
            let pred = predict_normalized(model, &inputs.rows(a, b), coords.view())?;
            Ok((0..b - a)
                .map(|i| to_frames(ds, pred.slice(s![i * nq..(i + 1) * nq, ..]), stats))
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(inputs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Raw-space full-field MSE of every trajectory of `ds`, predicted from
/// `inputs` (one row per trajectory).
pub fn split_mse(model: &Model, stats: &NormStats, ds: &Dataset, inputs: &EvalInputs) -> Result<Vec<f64>> {
    if inputs.len() != ds.len() {
        return Err(Error::Shape(format!("{} input rows for {} trajectories", inputs.len(), ds.len())));
    }
    if ds.is_empty() {
        return Err(Error::EmptySplit);
    }
    let coords = all_coords(ds);
    let nq = coords.nrows();
    let n = ds.grid.len();
    let chunks: Vec<(usize, usize)> = (0..ds.len())
        .step_by(TRAJ_CHUNK)
        .map(|s| (s, (s + TRAJ_CHUNK).min(ds.len())))
        .collect();
    let parts: Vec<Result<Vec<f64>>> = chunks
        .par_iter()
        .map(|&(a, b)| {
            let pred = predict_normalized(model, &inputs.rows(a, b), coords.view())?;
            Ok((a..b)
                .map(|t| {
                    let traj = &ds.trajectories[t];
                    let base = (t - a) * nq;
                    let mut sum = 0.0;
                    for (f, frame) in traj.frames.iter().enumerate() {
                        for (p, z) in frame.data().iter().enumerate() {
                            let r = pred.row(base + f * n + p);
                            sum += (stats.output.denormalize([r[0], r[1]]) - z).norm_sqr();
                        }
                    }
                    sum / nq as f64
                })
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(ds.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Named per-frame diagnostic series.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticSeries {
    pub times: Vec<f64>,
    pub names: Vec<&'static str>,
    /// `values[k][frame]` for series `names[k]`.
    pub values: Vec<Vec<f64>>,
}

impl DiagnosticSeries {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| *n == name)
            .map(|k| self.values[k].as_slice())
    }

    pub fn to_csv(&self, header_comment: &str) -> String {
        let mut out = format!("{header_comment}\nt,{}\n", self.names.join(","));
        for (f, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t}"));
            for v in &self.values {
                out.push_str(&format!(",{:e}", v[f]));
            }
            out.push('\n');
        }
        out
    }
}

fn check_series(frames: &[ComplexField], times: &[f64], dim: usize) -> Result<()> {
    if frames.len() != times.len() {
        return Err(Error::Shape(format!("{} frames for {} times", frames.len(), times.len())));
    }
    if frames.iter().any(|f| f.grid().dim() != dim) {
        return Err(Error::Shape(format!("diagnostics need {dim}D frames")));
    }
    Ok(())
}

/// Total intensity, peak amplitude, centre of intensity and the complex
/// value at the grid point nearest `probe_x`.
pub fn diagnostics_1d(frames: &[ComplexField], times: &[f64], probe_x: f64) -> Result<DiagnosticSeries> {
    check_series(frames, times, 1)?;
    let mut values: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(frames.len())).collect();
    for f in frames {
        let g = f.grid();
        let xs = g.x().coords();
        let e = f.mass();
        let first: f64 = xs.iter().zip(f.data()).map(|(x, z)| x * z.norm_sqr()).sum::<f64>() * g.cell_volume();
        let probe = f.data()[g.x().nearest_index(probe_x)];
        for (k, v) in [e, f.max_abs(), first / e, probe.re, probe.im].into_iter().enumerate() {
            values[k].push(v);
        }
    }
    Ok(DiagnosticSeries {
        times: times.to_vec(),
        names: vec!["E", "peak", "x_c", "probe_re", "probe_im"],
        values,
    })
}

/// Mass, peak amplitude, RMS radius `sqrt(<x² + y²>)` and centre of mass.
pub fn diagnostics_2d(frames: &[ComplexField], times: &[f64]) -> Result<DiagnosticSeries> {
    check_series(frames, times, 2)?;
    let mut values: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(frames.len())).collect();
    for f in frames {
        let g = f.grid();
        let (mut sx, mut sy, mut sr, mut n) = (0.0, 0.0, 0.0, 0.0);
        for (i, z) in f.data().iter().enumerate() {
            let [x, y] = g.point(i);
            let d = z.norm_sqr();
            n += d;
            sx += x * d;
            sy += y * d;
            sr += (x * x + y * y) * d;
        }
        let mass = n * g.cell_volume();
        for (k, v) in [mass, f.max_abs(), (sr / n).sqrt(), sx / n, sy / n].into_iter().enumerate() {
            values[k].push(v);
        }
    }
    Ok(DiagnosticSeries {
        times: times.to_vec(),
        names: vec!["N", "peak", "R_rms", "x_cm", "y_cm"],
        values,
    })
}

/// Unit-variance complex Gaussian samples `(a + i b)/√2`.
pub fn complex_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            Complex64::new(a * s, b * s)
        })
        .collect()
}

/// `sqrt(mean |u|²)` over the grid.
pub fn rms(field: &ComplexField) -> f64 {
    (field.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / field.len() as f64).sqrt()
}

/// `u0 + ε rms(u0) ξ`; returns `u0` unchanged for `ε = 0`.
pub fn add_noise(u0: &ComplexField, eps: f64, xi: &[Complex64]) -> ComplexField {
    if eps == 0.0 {
        return u0.clone();
    }
    let scale = eps * rms(u0);
    let data = u0.data().iter().zip(xi).map(|(z, x)| z + x * scale).collect();
    ComplexField::new(*u0.grid(), data).expect("same grid")
}

pub fn regime(eps: f64) -> &'static str {
    if eps == 0.0 {
        "clean"
    } else if eps <= REGIME_BOUNDS[0] {
        "small"
    } else if eps <= REGIME_BOUNDS[1] {
        "moderate"
    } else if eps <= REGIME_BOUNDS[2] {
        "strong"
    } else {
        "severe"
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSweepResult {
    pub eps: Vec<f64>,
    pub mean_mse: Vec<f64>,
    /// Mean MSE at each ε divided by the clean mean.
    pub ratio: Vec<f64>,
}

impl NoiseSweepResult {
    pub fn to_csv(&self, header_comment: &str) -> String {
        let mut out = format!(
            "{header_comment}\n# regime bounds {:?} are tool defaults\neps,regime,mean_mse,ratio\n",
            REGIME_BOUNDS
        );
        for i in 0..self.eps.len() {
            out.push_str(&format!(
                "{},{},{:e},{:e}\n",
                self.eps[i],
                regime(self.eps[i]),
                self.mean_mse[i],
                self.ratio[i]
            ));
        }
        out
    }
}

/// Inference-time robustness: the same noisy initial field feeds both the
/// sensor vector and the descriptors; errors are against the clean truth.
/// Every trajectory keeps one noise draw across the whole ε grid.
pub fn noise_sweep(
    model: &Model,
    stats: &NormStats,
    test: &Dataset,
    eps_grid: &[f64],
    seed: u64,
) -> Result<NoiseSweepResult> {
    if eps_grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::Config("noise levels must be finite and >= 0".into()));
    }
    let draws: Vec<Vec<Complex64>> = (0..test.len())
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            complex_noise(&mut rng, test.grid.len())
        })
        .collect();
    let clean: Vec<&ComplexField> = test.trajectories.iter().map(|t| t.initial()).collect();
    let mut mean_mse = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let noisy: Vec<ComplexField> = clean.iter().zip(&draws).map(|(u, xi)| add_noise(u, eps, xi)).collect();
        let refs: Vec<&ComplexField> = noisy.iter().collect();
        let inputs = model_inputs(&refs, stats)?;
        let per = split_mse(model, stats, test, &inputs)?;
        mean_mse.push(per.iter().sum::<f64>() / per.len() as f64);
    }
    let base = match eps_grid.iter().position(|&e| e == 0.0) {
        Some(i) => mean_mse[i],
        None => {
            let refs: Vec<&ComplexField> = clean.clone();
            let per = split_mse(model, stats, test, &model_inputs(&refs, stats)?)?;
            per.iter().sum::<f64>() / per.len() as f64
        }
    };
    Ok(NoiseSweepResult {
        eps: eps_grid.to_vec(),
        ratio: mean_mse.iter().map(|m| m / base).collect(),
        mean_mse,
    })
}
