use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    sample_ic_1d, sample_ic_2d, solve_gpe_2d, solve_nlse_1d, GpeConfig, Ic1dBoxes, Ic1dParams,
    Ic2dParams, NlseConfig,
};
use crate::container::{DatasetWriter, Precision};
use crate::error::{Error, Result};
use crate::grid::{Dataset, Grid, Trajectory};

const MAX_RESAMPLES: usize = 1000;
const CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Nlse1d,
    Gpe2d,
}

impl Benchmark {
    pub fn grid(self) -> Grid {
        match self {
            Benchmark::Nlse1d => Grid::nlse_benchmark(),
            Benchmark::Gpe2d => Grid::gpe_benchmark(),
        }
    }

    pub fn n_descriptors(self) -> usize {
        match self {
            Benchmark::Nlse1d => 6,
            Benchmark::Gpe2d => 10,
        }
    }

    /// Trunk input width: spatial dims plus time.
    pub fn coord_dim(self) -> usize {
        match self {
            Benchmark::Nlse1d => 2,
            Benchmark::Gpe2d => 3,
        }
    }

    pub fn precision(self) -> Precision {
        match self {
            Benchmark::Nlse1d => Precision::F64,
            Benchmark::Gpe2d => Precision::F32,
        }
    }

    pub fn from_dim(dim: usize) -> Option<Self> {
        match dim {
            1 => Some(Benchmark::Nlse1d),
            2 => Some(Benchmark::Gpe2d),
            _ => None,
        }
    }

    pub fn frame_times(self) -> Vec<f64> {
        match self {
            Benchmark::Nlse1d => NlseConfig::default().frame_times(),
            Benchmark::Gpe2d => GpeConfig::default().frame_times().expect("valid default"),
        }
    }

    fn param_len(self) -> usize {
        match self {
            Benchmark::Nlse1d => Ic1dParams::RECORD_LEN,
            Benchmark::Gpe2d => Ic2dParams::RECORD_LEN,
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Benchmark::Nlse1d => "nlse1d",
            Benchmark::Gpe2d => "gpe2d",
        })
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nlse1d" => Ok(Benchmark::Nlse1d),
            "gpe2d" => Ok(Benchmark::Gpe2d),
            other => Err(Error::Config(format!("unknown benchmark `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stream_tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }
}

/// Per-trajectory random stream; independent of scheduling order.
fn trajectory_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split.stream_tag() << 32) | index as u64);
    rng
}

/// Solver health figures gathered during generation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GenerationReport {
    pub resamples: usize,
    /// NLSE: max relative mass drift. GPE: max relative deviation from the
    /// exponential decay law.
    pub max_mass_error: f64,
}

impl GenerationReport {
    fn merge(&mut self, other: &GenerationReport) {
        self.resamples += other.resamples;
        self.max_mass_error = self.max_mass_error.max(other.max_mass_error);
    }
}

fn mass_error(benchmark: Benchmark, traj: &Trajectory) -> f64 {
    let n0 = traj.initial().mass();
    let gamma = GpeConfig::default().gamma;
    traj.times
        .iter()
        .zip(&traj.frames)
        .map(|(t, f)| {
            let law = match benchmark {
                Benchmark::Nlse1d => n0,
                Benchmark::Gpe2d => n0 * (-2.0 * gamma * t).exp(),
            };
            ((f.mass() - law) / n0).abs()
        })
        .fold(0.0, f64::max)
}

fn one_trajectory(
    benchmark: Benchmark,
    seed: u64,
    split: Split,
    index: usize,
) -> Result<(Trajectory, GenerationReport)> {
    let mut rng = trajectory_rng(seed, split, index);
    let mut report = GenerationReport::default();
    for _ in 0..MAX_RESAMPLES {
        let solved = match benchmark {
            Benchmark::Nlse1d => {
                let cfg = NlseConfig::default();
                let (p, ic) = sample_ic_1d(&mut rng, &Ic1dBoxes::default(), &cfg.grid);
                solve_nlse_1d(&ic, &cfg).map(|t| (p.to_record(), t))
            }
            Benchmark::Gpe2d => {
                let cfg = GpeConfig::default();
                let (p, ic) = sample_ic_2d(&mut rng, &cfg.grid);
                solve_gpe_2d(&ic, &cfg).map(|t| (p.to_record(), t))
            }
        };
        match solved {
            Ok((params, mut traj)) => {
                traj.params = params;
                report.max_mass_error = mass_error(benchmark, &traj);
                return Ok((traj, report));
            }
            Err(e @ Error::BlowUp { .. }) => {
                debug!("{split:?} trajectory {index}: {e}; resampling");
                report.resamples += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Config(format!(
        "trajectory {index}: gave up after {MAX_RESAMPLES} blow-ups"
    )))
}

/// Generates `n` trajectories of one split and hands them to `sink` in index
/// order. Chunks are solved in parallel; results never depend on scheduling.
fn generate_split(
    benchmark: Benchmark,
    split: Split,
    n: usize,
    seed: u64,
    mut sink: impl FnMut(Trajectory) -> Result<()>,
) -> Result<GenerationReport> {
    let mut report = GenerationReport::default();
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let solved: Vec<_> = (start..end)
            .into_par_iter()
            .map(|i| one_trajectory(benchmark, seed, split, i))
            .collect();
        for r in solved {
            let (traj, rep) = r?;
            report.merge(&rep);
            sink(traj)?;
        }
        debug!("{benchmark} {split:?}: {end}/{n}");
    }
    Ok(report)
}

/// In-memory generation of a (train, test) pair.
pub fn generate_dataset(
    benchmark: Benchmark,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset, Dataset, GenerationReport)> {
    let grid = benchmark.grid();
    let times = benchmark.frame_times();
    let mut report = GenerationReport::default();
    let mut splits = vec![];
    for (split, n) in [(Split::Train, n_train), (Split::Test, n_test)] {
        let mut trajs = Vec::with_capacity(n);
        let rep = generate_split(benchmark, split, n, seed, |t| {
            trajs.push(t);
            Ok(())
        })?;
        report.merge(&rep);
        splits.push(Dataset::new(grid, times.clone(), trajs)?);
    }
    let test = splits.pop().expect("two splits");
    let train = splits.pop().expect("two splits");
    Ok((train, test, report))
}

/// Streams both splits to `dir/train.wgds` and `dir/test.wgds` and writes a
/// plain-text manifest.
pub fn write_generated(
    dir: &Path,
    benchmark: Benchmark,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<GenerationReport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let grid = benchmark.grid();
    let times = benchmark.frame_times();
    let mut report = GenerationReport::default();
    for (split, n, name) in [
        (Split::Train, n_train, "train.wgds"),
        (Split::Test, n_test, "test.wgds"),
    ] {
        let path = dir.join(name);
        let mut w = DatasetWriter::create(
            &path,
            grid,
            &times,
            n,
            benchmark.precision(),
            benchmark.param_len(),
        )?;
        let rep = generate_split(benchmark, split, n, seed, |t| w.write_trajectory(&t))?;
        w.finish()?;
        report.merge(&rep);
        info!("wrote {} ({n} trajectories)", path.display());
    }

    let mut manifest = format!(
        "# wavegate {} dataset manifest\nbenchmark = \"{benchmark}\"\nseed = {seed}\nn_train = {n_train}\nn_test = {n_test}\n",
        env!("CARGO_PKG_VERSION")
    );
    match benchmark {
        Benchmark::Nlse1d => {
            let c = NlseConfig::default();
            manifest += &format!(
                "grid = \"[{}, {}) x {}\"\nt_final = {}\nn_frames = {}\ndt_internal = {}\nnonlinearity = {}\nic_boxes = \"{:?}\"\n",
                c.grid.x().min, c.grid.x().max, c.grid.x().n, c.t_final, c.n_frames, c.dt, c.nonlinearity,
                Ic1dBoxes::default()
            );
        }
        Benchmark::Gpe2d => {
            let c = GpeConfig::default();
            manifest += &format!(
                "grid = \"[{}, {})^2 x {}^2\"\nt_final = {}\ndt = {}\nstride = {}\ng = {}\ngamma = {}\nomega = {}\nstorage = \"f32\"\n",
                c.grid.x().min, c.grid.x().max, c.grid.x().n, c.t_final, c.dt, c.stride, c.g, c.gamma, c.omega
            );
        }
    }
    manifest += &format!(
        "max_relative_mass_error = {:e}\nresampled_ics = {}\n",
        report.max_mass_error, report.resamples
    );
    let mpath = dir.join("manifest.txt");
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::read_dataset;

    #[test]
    fn smoke_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let rep = write_generated(dir.path(), Benchmark::Nlse1d, 2, 1, 7).unwrap();
        assert!(rep.max_mass_error <= 1e-12);
        let train = read_dataset(&dir.path().join("train.wgds")).unwrap();
        let test = read_dataset(&dir.path().join("test.wgds")).unwrap();
        assert_eq!((train.len(), test.len()), (2, 1));
        assert_eq!(train.n_frames(), 201);
        assert_eq!(train.grid.len(), 128);

        let (mem_train, mem_test, _) = generate_dataset(Benchmark::Nlse1d, 2, 1, 7).unwrap();
        assert_eq!(mem_train, train);
        assert_eq!(mem_test, test);

        let dir2 = tempfile::tempdir().unwrap();
        write_generated(dir2.path(), Benchmark::Nlse1d, 2, 1, 7).unwrap();
        for f in ["train.wgds", "test.wgds", "manifest.txt"] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(dir2.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn train_and_test_streams_differ() {
        let (train, test, _) = generate_dataset(Benchmark::Nlse1d, 1, 1, 3).unwrap();
        assert_ne!(train.trajectories[0].params, test.trajectories[0].params);
    }
}
