//! Run configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{AdamConfig, LrSchedule};
use crate::error::{Error, Result};
use crate::evaluation::DEFAULT_EPS;
use crate::models::{ModelConfig, PreBranch, Variant};
use crate::solvers::Benchmark;
use crate::training::{QuerySharing, TrainConfig};

pub const DATA_DIR_ENV: &str = "WAVEGATE_DATA_DIR";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Directory holding `train.wgds` and `test.wgds`.
    pub dir: Option<PathBuf>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub seed: Option<u64>,
}

/// Overrides on top of the benchmark's reference architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub branch_hidden: Option<Vec<usize>>,
    pub trunk_hidden: Option<Vec<usize>>,
    pub latent: Option<usize>,
    pub film_hidden: Option<usize>,
    pub pre: Option<PreBranch>,
    pub gate_hidden: Option<usize>,
    pub alpha_pre: Option<f64>,
    pub alpha_b: Option<f64>,
    pub alpha_t: Option<f64>,
    pub heads: Option<usize>,
    pub gate_rank: Option<usize>,
    pub head_hidden: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Step,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub queries: Option<usize>,
    pub steps: Option<u64>,
    pub lr: Option<f64>,
    pub schedule: Option<ScheduleKind>,
    pub decay_every: Option<u64>,
    pub decay_factor: Option<f64>,
    /// Global gradient-norm threshold; 0 disables clipping.
    pub clip: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub eval_every: Option<u64>,
    pub eval_queries: Option<usize>,
    pub query_sharing: Option<QuerySharing>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub eps: Option<Vec<f64>>,
    pub probe_x: Option<f64>,
    pub noise_seed: Option<u64>,
}

/// The file as written by the user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub benchmark: Benchmark,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub benchmark: Benchmark,
    pub output: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
    pub data_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub eps: Vec<f64>,
    pub probe_x: f64,
    pub noise_seed: u64,
}

/// Default `(n_train, n_test)`.
pub fn default_split_sizes(benchmark: Benchmark) -> (usize, usize) {
    match benchmark {
        Benchmark::Nlse1d => (1000, 200),
        Benchmark::Gpe2d => (400, 100),
    }
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// CSV comment line for outputs keyed by an arbitrary hash.
pub fn comment_for(hash: &str) -> String {
    format!("# wavegate {VERSION} config={hash}")
}

fn default_data_dir(benchmark: Benchmark, dir: Option<&Path>) -> PathBuf {
    let root = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    match (dir, root) {
        (Some(d), _) if d.is_absolute() => d.to_path_buf(),
        (Some(d), Some(root)) => root.join(d),
        (Some(d), None) => d.to_path_buf(),
        (None, Some(root)) => root.join(benchmark.to_string()),
        (None, None) => PathBuf::from("data").join(benchmark.to_string()),
    }
}

impl RunConfigFile {
    pub fn resolve(&self) -> Result<RunConfig> {
        let b = self.benchmark;
        let m = &self.model;
        let mut model = ModelConfig::preset(b, m.variant);
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = m.$field.clone() {
                    model.$field = v;
                }
            };
        }
        set!(branch_hidden);
        set!(trunk_hidden);
        set!(latent);
        set!(film_hidden);
        set!(pre);
        set!(gate_hidden);
        set!(alpha_pre);
        set!(alpha_b);
        set!(alpha_t);
        set!(heads);
        set!(gate_rank);
        set!(head_hidden);
        model.validate()?;

        let t = &self.train;
        let steps = t.steps.unwrap_or(match b {
            Benchmark::Nlse1d => 40_000,
            Benchmark::Gpe2d => 20_000,
        });
        let lr = t.lr.unwrap_or(1e-3);
        let kind = t.schedule.unwrap_or(match b {
            Benchmark::Nlse1d => ScheduleKind::Constant,
            Benchmark::Gpe2d => ScheduleKind::Step,
        });
        let schedule = match kind {
            ScheduleKind::Constant => LrSchedule::Constant { base: lr },
            ScheduleKind::Step => LrSchedule::Step {
                base: lr,
                interval: t.decay_every.unwrap_or((steps / 3).max(1)),
                factor: t.decay_factor.unwrap_or(0.2),
            },
        };
        let clip = match t.clip {
            Some(0.0) => None,
            Some(c) if c > 0.0 => Some(c),
            Some(c) => return Err(Error::Config(format!("clip {c} must be >= 0"))),
            None => Some(1.0),
        };
        let train = TrainConfig {
            batch_size: t.batch_size.unwrap_or(32),
            queries: t.queries.unwrap_or(1024),
            steps,
            schedule,
            adam: AdamConfig {
                clip,
                ..AdamConfig::default()
            },
            eval_every: t.eval_every.unwrap_or(500),
            eval_queries: t.eval_queries.unwrap_or(4096),
            query_sharing: t.query_sharing.unwrap_or(QuerySharing::Shared),
        };
        train.validate()?;
        let seeds = t.seeds.clone().unwrap_or_else(|| vec![0, 1, 2]);
        if seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        let eps = self.eval.eps.clone().unwrap_or_else(|| DEFAULT_EPS.to_vec());
        if eps.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::Config("noise levels must be finite and >= 0".into()));
        }
        let (n_train, n_test) = default_split_sizes(b);
        Ok(RunConfig {
            benchmark: b,
            output: self.output.clone(),
            data_dir: default_data_dir(b, self.data.dir.as_deref()),
            n_train: self.data.n_train.unwrap_or(n_train),
            n_test: self.data.n_test.unwrap_or(n_test),
            data_seed: self.data.seed.unwrap_or(0),
            model,
            train,
            seeds,
            eps,
            probe_x: self.eval.probe_x.unwrap_or(0.0),
            noise_seed: self.eval.noise_seed.unwrap_or(0),
        })
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let file: RunConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.resolve()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical TOML of the resolved configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("plain data serialises")
    }

    pub fn from_canonical(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config echo: {e}")))
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        short_hash(self.canonical().as_bytes())
    }

    /// First line of every emitted CSV.
    pub fn csv_comment(&self) -> String {
        comment_for(&self.hash())
    }

    pub fn train_path(&self) -> PathBuf {
        self.data_dir.join("train.wgds")
    }

    pub fn test_path(&self) -> PathBuf {
        self.data_dir.join("test.wgds")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
benchmark = "nlse1d"
[model]
variant = "mhrg"
"#;

    #[test]
    fn minimal_file_resolves_to_reference_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.model, ModelConfig::nlse_1d(Variant::Mhrg));
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.train.queries, 1024);
        assert_eq!(c.train.steps, 40_000);
        assert_eq!(c.train.schedule, LrSchedule::Constant { base: 1e-3 });
        assert_eq!(c.train.adam.clip, Some(1.0));
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.eps, DEFAULT_EPS.to_vec());
    }

    #[test]
    fn gpe_defaults_use_step_schedule() {
        let c = RunConfig::parse("benchmark = \"gpe2d\"\n[model]\nvariant = \"rg\"\n").unwrap();
        assert_eq!(
            c.train.schedule,
            LrSchedule::Step {
                base: 1e-3,
                interval: 6666,
                factor: 0.2
            }
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}colour = 3\n");
        assert!(RunConfig::parse(&bad).is_err());
        assert!(RunConfig::parse("benchmark = \"nlse1d\"\nfoo = 1\n[model]\nvariant = \"rg\"\n").is_err());
    }

    #[test]
    fn canonical_round_trip_and_hash() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        let back = RunConfig::from_canonical(&c.canonical()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 16);
        let other = RunConfig::parse(&MINIMAL.replace("mhrg", "rg")).unwrap();
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn overrides_apply() {
        let text = r#"
benchmark = "nlse1d"
[model]
variant = "mhrg"
heads = 8
latent = 64
branch_hidden = [128, 128, 128]
trunk_hidden = [128, 128, 128]
[train]
steps = 100
seeds = [4]
clip = 0
"#;
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.model.heads, 8);
        assert_eq!(c.model.latent, 64);
        assert_eq!(c.train.adam.clip, None);
        assert_eq!(c.seeds, vec![4]);
    }
}
