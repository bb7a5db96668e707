//! Training protocol: input preparation, random query subsampling, the
//! normalised-space loss, the optimisation loop and seed aggregation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, LrSchedule};
use crate::checkpoint::Checkpoint;
use crate::descriptors::{dataset_descriptors, descriptors};
use crate::error::{Error, Result};
use crate::evaluation::{split_mse, EvalInputs};
use crate::grid::{ComplexField, Dataset};
use crate::models::{Inputs, Model, ModelConfig, QueryLayout};
use crate::norm::{compute_norm_stats, NormStats};

const STREAM_INIT: u64 = 0;
const STREAM_BATCH: u64 = 1;
const STREAM_QUERY: u64 = 2;
const STREAM_EVAL: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySharing {
    /// One query draw per step, shared by the whole batch.
    Shared,
    /// An independent query draw for every trajectory.
    PerTrajectory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub queries: usize,
    pub steps: u64,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub eval_every: u64,
    pub eval_queries: usize,
    pub query_sharing: QuerySharing,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.queries == 0 || self.eval_queries == 0 {
            return Err(Error::Config("batch size and query counts must be >= 1".into()));
        }
        if self.steps == 0 || self.eval_every == 0 {
            return Err(Error::Config("steps and eval cadence must be >= 1".into()));
        }
        if let LrSchedule::Step { interval, factor, .. } = self.schedule {
            if interval == 0 || !(factor > 0.0 && factor <= 1.0) {
                return Err(Error::Config("step schedule needs interval > 0 and factor in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Normalised sensors and standardised descriptors of initial fields.
pub fn model_inputs(fields: &[&ComplexField], stats: &NormStats) -> Result<EvalInputs> {
    let n = fields.len();
    let sensor_dim = fields.first().map_or(0, |f| 2 * f.len());
    let n_f = stats.descriptor.len();
    let mut sensor = Array2::zeros((n, sensor_dim));
    let mut phi = Array2::zeros((n, n_f));
    for (i, f) in fields.iter().enumerate() {
        if !f.is_finite() {
            return Err(Error::NonFinite("initial field".into()));
        }
        let s = stats.normalize_sensor(f.data());
        sensor.row_mut(i).assign(&ndarray::ArrayView1::from(&s));
        let d = descriptors(f)?;
        let z = stats.standardize(&d.0);
        phi.row_mut(i).assign(&ndarray::ArrayView1::from(&z));
    }
    Ok(EvalInputs { sensor, phi })
}

/// Both splits with training-only statistics.
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub stats: NormStats,
    pub train_inputs: EvalInputs,
    pub test_inputs: EvalInputs,
}

impl<'a> TrainData<'a> {
    pub fn new(train: &'a Dataset, test: &'a Dataset) -> Result<Self> {
        if train.grid != test.grid || train.times != test.times {
            return Err(Error::Shape("train and test splits live on different grids".into()));
        }
        let stats = compute_norm_stats(train, &dataset_descriptors(train)?)?;
        Self::with_stats(train, test, stats)
    }

    pub fn with_stats(train: &'a Dataset, test: &'a Dataset, stats: NormStats) -> Result<Self> {
        let initials = |d: &'a Dataset| d.trajectories.iter().map(|t| t.initial()).collect::<Vec<_>>();
        let train_inputs = model_inputs(&initials(train), &stats)?;
        let test_inputs = model_inputs(&initials(test), &stats)?;
        Ok(Self {
            train,
            test,
            stats,
            train_inputs,
            test_inputs,
        })
    }
}

/// `n` distinct flat space-time indices drawn uniformly from `total`.
pub fn sample_indices<R: Rng + ?Sized>(rng: &mut R, total: usize, n: usize) -> Result<Vec<usize>> {
    if n > total {
        return Err(Error::Config(format!("{n} queries requested from {total} points")));
    }
    Ok(index::sample(rng, total, n).into_vec())
}

/// Coordinates of flat indices, one row each.
pub fn coords_of(ds: &Dataset, flat: &[usize]) -> Array2<f64> {
    let d = ds.coord_dim();
    let mut out = Array2::zeros((flat.len(), d));
    for (row, &f) in flat.iter().enumerate() {
        for (c, v) in ds.query_coords(f).into_iter().enumerate() {
            out[[row, c]] = v;
        }
    }
    out
}

/// Normalised `(Re, Im)` targets of one trajectory at flat indices.
pub fn targets_of(ds: &Dataset, traj: usize, flat: &[usize], stats: &NormStats) -> Array2<f64> {
    let n = ds.grid.len();
    let t = &ds.trajectories[traj];
    let mut out = Array2::zeros((flat.len(), 2));
    for (row, &f) in flat.iter().enumerate() {
        let [re, im] = stats.output.normalize(t.frames[f / n].data()[f % n]);
        out[[row, 0]] = re;
        out[[row, 1]] = im;
    }
    out
}

/// `n` random (coordinate, normalised target) pairs from one trajectory.
pub fn sample_queries<R: Rng + ?Sized>(
    rng: &mut R,
    ds: &Dataset,
    traj: usize,
    n: usize,
    stats: &NormStats,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let flat = sample_indices(rng, ds.n_space_time(), n)?;
    Ok((coords_of(ds, &flat), targets_of(ds, traj, &flat, stats)))
}

/// `(1/N) Σ ‖ŷ − y‖²` over both channels.
pub fn train_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", pred.dim(), target.dim())));
    }
    Ok(crate::models::mse(pred.view(), target.view()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    /// Mean training loss over the steps since the previous evaluation.
    pub train_loss: f64,
    pub test_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub variant: String,
    pub params: usize,
    pub evals: Vec<EvalPoint>,
    /// Raw-space full-field MSE on the whole test split.
    pub final_mse: f64,
    pub wall_seconds: f64,
}

/// Per-step training losses, useful for smoke tests.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
}

pub struct FitOutput {
    pub model: Model,
    pub adam: Adam,
    pub record: RunRecord,
    pub trace: Trace,
}

/// Where to persist checkpoints during [`fit`]. The file is rewritten at
/// every evaluation, so it always holds the last finite state.
#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    pub checkpoint: Option<PathBuf>,
    /// Skip the final full-grid evaluation (the record then carries NaN).
    pub skip_final_eval: bool,
}

fn build_batch(
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    batch: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(Inputs, Array2<f64>)> {
    let ds = data.train;
    let b = batch.len();
    let mut sensor = Array2::zeros((b, data.train_inputs.sensor.ncols()));
    let mut phi = Array2::zeros((b, data.train_inputs.phi.ncols()));
    for (row, &i) in batch.iter().enumerate() {
        sensor.row_mut(row).assign(&data.train_inputs.sensor.row(i));
        phi.row_mut(row).assign(&data.train_inputs.phi.row(i));
    }
    let q = cfg.queries;
    let mut targets = Array2::zeros((b * q, 2));
    let (queries, layout) = match cfg.query_sharing {
        QuerySharing::Shared => {
            let flat = sample_indices(rng, ds.n_space_time(), q)?;
            for (row, &i) in batch.iter().enumerate() {
                targets
                    .slice_mut(s![row * q..(row + 1) * q, ..])
                    .assign(&targets_of(ds, i, &flat, &data.stats));
            }
            (coords_of(ds, &flat), QueryLayout::Shared)
        }
        QuerySharing::PerTrajectory => {
            let mut coords = Array2::zeros((b * q, ds.coord_dim()));
            for (row, &i) in batch.iter().enumerate() {
                let flat = sample_indices(rng, ds.n_space_time(), q)?;
                coords.slice_mut(s![row * q..(row + 1) * q, ..]).assign(&coords_of(ds, &flat));
                targets
                    .slice_mut(s![row * q..(row + 1) * q, ..])
                    .assign(&targets_of(ds, i, &flat, &data.stats));
            }
            (coords, QueryLayout::PerTrajectory)
        }
    };
    Ok((
        Inputs {
            sensor,
            phi,
            queries,
            layout,
        },
        targets,
    ))
}

/// Fixed evaluation query subset and the normalised test loss on it.
pub struct EvalSet {
    inputs: Inputs,
    targets: Array2<f64>,
}

impl EvalSet {
    pub fn new(data: &TrainData<'_>, n: usize, seed: u64) -> Result<Self> {
        let ds = data.test;
        if ds.is_empty() {
            return Err(Error::EmptySplit);
        }
        let n = n.min(ds.n_space_time());
        let flat = sample_indices(&mut stream(seed, STREAM_EVAL), ds.n_space_time(), n)?;
        let mut targets = Array2::zeros((ds.len() * n, 2));
        for i in 0..ds.len() {
            targets
                .slice_mut(s![i * n..(i + 1) * n, ..])
                .assign(&targets_of(ds, i, &flat, &data.stats));
        }
        Ok(Self {
            inputs: Inputs {
                sensor: data.test_inputs.sensor.clone(),
                phi: data.test_inputs.phi.clone(),
                queries: coords_of(ds, &flat),
                layout: QueryLayout::Shared,
            },
            targets,
        })
    }

    pub fn loss(&self, model: &Model) -> Result<f64> {
        let pred = model.predict(&self.inputs)?;
        train_loss(&pred, &self.targets)
    }
}

/// Runs the optimisation loop for one seed.
pub fn fit(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &TrainData<'_>,
    seed: u64,
    opts: &FitOptions,
    config_echo: &str,
) -> Result<FitOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let mut model = Model::new(model_cfg.clone(), &mut stream(seed, STREAM_INIT))?;
    let mut adam = Adam::new(model.store(), cfg.adam);
    let mut batch_rng = stream(seed, STREAM_BATCH);
    let mut query_rng = stream(seed, STREAM_QUERY);
    let eval = EvalSet::new(data, cfg.eval_queries, seed)?;
    let n_train = data.train.len();
    if n_train == 0 {
        return Err(Error::EmptySplit);
    }
    let b = cfg.batch_size.min(n_train);

    let mut trace = Trace::default();
    let mut evals = Vec::new();
    let mut window = 0.0;
    let mut window_n = 0u64;
    let save = |model: &Model, adam: &Adam, step: u64| -> Result<()> {
        if let Some(path) = &opts.checkpoint {
            Checkpoint::capture(model, adam, step, &data.stats, config_echo).save(path)?;
        }
        Ok(())
    };

    for step in 0..cfg.steps {
        let batch = sample_indices(&mut batch_rng, n_train, b)?;
        let (inputs, targets) = build_batch(data, cfg, &batch, &mut query_rng)?;
        let (loss, mut grads) = model.loss_and_grad(&inputs, targets.view())?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let info = adam
            .step(model.store_mut(), &mut grads, cfg.schedule.lr_at(step))
            .map_err(|_| Error::Diverged { step, loss: f64::NAN })?;
        trace.losses.push(loss);
        trace.grad_norms.push(info.grad_norm);
        window += loss;
        window_n += 1;

        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            let test_loss = eval.loss(&model)?;
            if !test_loss.is_finite() {
                return Err(Error::Diverged { step, loss: test_loss });
            }
            log::info!("step {done}: train {:.4e} test {test_loss:.4e}", window / window_n as f64);
            evals.push(EvalPoint {
                step: done,
                train_loss: window / window_n as f64,
                test_loss,
            });
            window = 0.0;
            window_n = 0;
            save(&model, &adam, done)?;
        }
    }

    let final_mse = if opts.skip_final_eval {
        f64::NAN
    } else {
        let per = split_mse(&model, &data.stats, data.test, &data.test_inputs)?;
        per.iter().sum::<f64>() / per.len() as f64
    };
    let record = RunRecord {
        seed,
        variant: model_cfg.variant.to_string(),
        params: model.param_count(),
        evals,
        final_mse,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(FitOutput {
        model,
        adam,
        record,
        trace,
    })
}

/// Mean and sample standard deviation (n − 1) across seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedAggregate {
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

pub fn aggregate_seeds(values: &[f64]) -> Result<SeedAggregate> {
    if values.is_empty() {
        return Err(Error::EmptySplit);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Ok(SeedAggregate { mean, std, n })
}

impl SeedAggregate {
    /// `2.000e0 ± 1.000e0`; the `±` part is omitted for a single seed.
    pub fn display_sci(&self) -> String {
        match self.std {
            Some(s) => format!("{:.3e} ± {:.3e}", self.mean, s),
            None => format!("{:.3e}", self.mean),
        }
    }

    /// `1.406 × 10^-3 ± 1.854 × 10^-4`.
    pub fn display_table(&self) -> String {
        match self.std {
            Some(s) => format!("{} ± {}", times_ten(self.mean), times_ten(s)),
            None => times_ten(self.mean),
        }
    }
}

/// `a.bbb × 10^c` with three decimals in the mantissa.
pub fn times_ten(x: f64) -> String {
    let sci = format!("{x:.3e}");
    match sci.split_once('e') {
        Some((m, e)) => format!("{m} × 10^{e}"),
        None => sci,
    }
}

/// Per-step record of the loop is written next to the checkpoint.
pub fn write_run_csv(path: &Path, record: &RunRecord, header_comment: &str) -> Result<()> {
    let mut out = format!("{header_comment}\nstep,train_loss,test_loss\n");
    for e in &record.evals {
        out.push_str(&format!("{},{:e},{:e}\n", e.step, e.train_loss, e.test_loss));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
