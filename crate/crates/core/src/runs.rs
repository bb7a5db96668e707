//! Run directories: dataset caching, one training run per seed, summaries.
//!
//! Layout of a run directory:
//! `config.toml`, `seed-<s>/checkpoint.wgck`, `seed-<s>/run.csv`, `seed-<s>/summary.csv`
//! and `seed-<s>/timing.txt` (wall time is kept out of the CSVs so that
//! reruns are byte-identical).

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::container::read_dataset;
use crate::error::{Error, Result};
use crate::grid::Dataset;
use crate::solvers::write_generated;
use crate::training::{fit, write_run_csv, FitOptions, RunRecord, TrainData};

pub const CHECKPOINT_FILE: &str = "checkpoint.wgck";
pub const SUMMARY_FILE: &str = "summary.csv";
/// Resolved configuration shared by all seeds of a run directory.
pub const CONFIG_FILE: &str = "config.toml";

/// True if `dir` holds a generated pair matching the config.
pub fn dataset_matches(cfg: &RunConfig) -> bool {
    let manifest = match fs::read_to_string(cfg.data_dir.join("manifest.txt")) {
        Ok(m) => m,
        Err(_) => return false,
    };
    let Ok(table) = manifest.parse::<toml::Table>() else {
        return false;
    };
    let int = |k: &str| table.get(k).and_then(|v| v.as_integer());
    table.get("benchmark").and_then(|v| v.as_str()) == Some(&cfg.benchmark.to_string())
        && int("seed") == Some(cfg.data_seed as i64)
        && int("n_train") == Some(cfg.n_train as i64)
        && int("n_test") == Some(cfg.n_test as i64)
        && cfg.train_path().exists()
        && cfg.test_path().exists()
}

/// Reads the configured splits, generating them first when absent.
pub fn load_or_generate(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    if !dataset_matches(cfg) {
        if cfg.data_dir.join("manifest.txt").exists() {
            return Err(Error::Config(format!(
                "{} holds a dataset that does not match the config (benchmark/seed/sizes)",
                cfg.data_dir.display()
            )));
        }
        log::info!("generating {} data in {}", cfg.benchmark, cfg.data_dir.display());
        write_generated(&cfg.data_dir, cfg.benchmark, cfg.n_train, cfg.n_test, cfg.data_seed)?;
    }
    Ok((read_dataset(&cfg.train_path())?, read_dataset(&cfg.test_path())?))
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed-{seed}"))
}

/// `<variant>[-R<heads>]-<hash>`.
pub fn run_dir_name(cfg: &RunConfig) -> String {
    let v = cfg.model.variant;
    if v == crate::models::Variant::Mhrg {
        format!("{v}-r{}-{}", cfg.model.heads, cfg.hash())
    } else {
        format!("{v}-{}", cfg.hash())
    }
}

/// Final per-seed result as stored in `summary.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub variant: String,
    pub params: usize,
    pub final_mse: f64,
}

fn summary_csv(cfg: &RunConfig, r: &RunRecord) -> String {
    format!(
        "{}\nseed,variant,params,final_mse\n{},{},{},{:e}\n",
        cfg.csv_comment(),
        r.seed,
        r.variant,
        r.params,
        r.final_mse
    )
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |why: &str| Error::format("summary", path, why);
    let mut lines = text.lines();
    let comment = lines.next().ok_or_else(|| bad("empty"))?;
    let config_hash = comment
        .split("config=")
        .nth(1)
        .ok_or_else(|| bad("missing config hash"))?
        .trim()
        .to_string();
    lines.next().ok_or_else(|| bad("missing header"))?;
    let row = lines.next().ok_or_else(|| bad("missing row"))?;
    let f: Vec<&str> = row.split(',').collect();
    if f.len() != 4 {
        return Err(bad("expected 4 columns"));
    }
    Ok(RunSummary {
        config_hash,
        seed: f[0].parse().map_err(|_| bad("seed"))?,
        variant: f[1].to_string(),
        params: f[2].parse().map_err(|_| bad("params"))?,
        final_mse: f[3].parse().map_err(|_| bad("final_mse"))?,
    })
}

/// Trains one seed into `run_dir/seed-<s>`.
pub fn train_seed(cfg: &RunConfig, data: &TrainData<'_>, seed: u64, run_dir: &Path) -> Result<RunRecord> {
    let dir = seed_dir(run_dir, seed);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let echo = run_dir.join(CONFIG_FILE);
    fs::write(&echo, cfg.canonical()).map_err(|e| Error::io(&echo, e))?;
    let opts = FitOptions {
        checkpoint: Some(dir.join(CHECKPOINT_FILE)),
        skip_final_eval: false,
    };
    let out = fit(&cfg.model, &cfg.train, data, seed, &opts, &cfg.canonical())?;
    write_run_csv(&dir.join("run.csv"), &out.record, &cfg.csv_comment())?;
    let summary = dir.join(SUMMARY_FILE);
    fs::write(&summary, summary_csv(cfg, &out.record)).map_err(|e| Error::io(&summary, e))?;
    let timing = dir.join("timing.txt");
    fs::write(&timing, format!("wall_seconds = {:.3}\n", out.record.wall_seconds))
        .map_err(|e| Error::io(&timing, e))?;
    Ok(out.record)
}

/// Summary of a finished seed whose config hash matches, if any.
pub fn cached_summary(cfg: &RunConfig, run_dir: &Path, seed: u64) -> Option<RunSummary> {
    let s = read_summary(&seed_dir(run_dir, seed).join(SUMMARY_FILE)).ok()?;
    (s.config_hash == cfg.hash() && s.seed == seed).then_some(s)
}

/// Trains every configured seed that has no matching cached summary.
pub fn ensure_runs(cfg: &RunConfig, run_dir: &Path) -> Result<Vec<RunSummary>> {
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let echo = run_dir.join(CONFIG_FILE);
    fs::write(&echo, cfg.canonical()).map_err(|e| Error::io(&echo, e))?;
    let mut out = Vec::with_capacity(cfg.seeds.len());
    let mut data_cache: Option<(Dataset, Dataset)> = None;
    for &seed in &cfg.seeds {
        if let Some(s) = cached_summary(cfg, run_dir, seed) {
            out.push(s);
            continue;
        }
        if data_cache.is_none() {
            data_cache = Some(load_or_generate(cfg)?);
        }
        let (train, test) = data_cache.as_ref().expect("loaded");
        let data = TrainData::new(train, test)?;
        log::info!("training {} seed {seed} into {}", cfg.model.variant, run_dir.display());
        train_seed(cfg, &data, seed, run_dir)?;
        out.push(cached_summary(cfg, run_dir, seed).ok_or_else(|| Error::Config("summary not readable after training".into()))?);
    }
    Ok(out)
}
