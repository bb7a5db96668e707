//! Comparison tables over finished run directories.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::models::{format_millions, Variant};
use crate::runs::{read_summary, RunSummary, CONFIG_FILE, SUMMARY_FILE};
use crate::training::{aggregate_seeds, SeedAggregate};

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub dir: PathBuf,
    pub config_hash: String,
    pub params: usize,
    pub seeds: Vec<u64>,
    pub mse: SeedAggregate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Run directories or seeds with no finished summary.
    pub missing: Vec<String>,
}

fn seed_summaries(dir: &Path) -> Result<Vec<RunSummary>> {
    let mut out = Vec::new();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(_) => return Ok(out),
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("seed-"))
        })
        .collect();
    paths.sort();
    for p in paths {
        let f = p.join(SUMMARY_FILE);
        if f.exists() {
            out.push(read_summary(&f)?);
        }
    }
    out.sort_by_key(|s| s.seed);
    Ok(out)
}

fn order_key(variant: &str, heads: usize) -> (usize, usize) {
    let v = variant.parse::<Variant>().ok();
    let idx = v.and_then(|v| Variant::ALL.iter().position(|w| *w == v)).unwrap_or(usize::MAX);
    (idx, heads)
}

/// One row per run directory, ordered by variant then head count.
/// `expected` seeds absent from a directory are listed in `missing`.
pub fn collect(dirs: &[PathBuf], expected: &[u64]) -> Result<Report> {
    let mut rows = Vec::new();
    let mut keys = Vec::new();
    let mut missing = Vec::new();
    for dir in dirs {
        let runs = seed_summaries(dir)?;
        let cfg = fs::read_to_string(dir.join(CONFIG_FILE))
            .ok()
            .and_then(|t| RunConfig::from_canonical(&t).ok());
        for s in expected {
            if !runs.iter().any(|r| r.seed == *s) {
                missing.push(format!("{} seed {s}", dir.display()));
            }
        }
        let Some(first) = runs.first() else {
            if expected.is_empty() {
                missing.push(dir.display().to_string());
            }
            continue;
        };
        if runs.iter().any(|r| r.config_hash != first.config_hash) {
            return Err(Error::Config(format!("{} mixes different models", dir.display())));
        }
        let heads = cfg.as_ref().map(|c| c.model.heads).unwrap_or(0);
        let label = match first.variant.parse::<Variant>() {
            Ok(Variant::Mhrg) if heads > 0 => format!("MH-RG (R={heads})"),
            Ok(v) => v.label().to_string(),
            Err(_) => first.variant.clone(),
        };
        let mse: Vec<f64> = runs.iter().map(|r| r.final_mse).collect();
        keys.push(order_key(&first.variant, heads));
        rows.push(ReportRow {
            label,
            dir: dir.clone(),
            config_hash: first.config_hash.clone(),
            params: first.params,
            seeds: runs.iter().map(|r| r.seed).collect(),
            mse: aggregate_seeds(&mse)?,
        });
    }
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by_key(|&i| keys[i]);
    let rows = idx.into_iter().map(|i| rows[i].clone()).collect();
    Ok(Report { rows, missing })
}

impl Report {
    /// Hash over the config hashes of all rows, in row order.
    pub fn hash(&self) -> String {
        let key: Vec<&str> = self.rows.iter().map(|r| r.config_hash.as_str()).collect();
        crate::config::short_hash(key.join("\n").as_bytes())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<14} {:>11} {:>6}  {:<34} {}\n", "model", "params", "seeds", "MSE", "MSE (mean ± std)");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>11} {:>6}  {:<34} {}\n",
                r.label,
                format_millions(r.params),
                r.seeds.len(),
                r.mse.display_table(),
                r.mse.display_sci()
            ));
        }
        for m in &self.missing {
            out.push_str(&format!("missing: {m}\n"));
        }
        out
    }

    pub fn to_csv(&self, header_comment: &str) -> String {
        let mut out = format!("{header_comment}\nmodel,params,seeds,mse_mean,mse_std\n");
        for r in &self.rows {
            let std = r.mse.std.map(|s| format!("{s:e}")).unwrap_or_default();
            out.push_str(&format!("{},{},{},{:e},{}\n", r.label, r.params, r.seeds.len(), r.mse.mean, std));
        }
        out
    }
}
