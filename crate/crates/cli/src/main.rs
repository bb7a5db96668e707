//! `wavegate` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use wavegate::analysis::{
    descriptor_sensitivity, fixed_queries, gate_subspace_overlap, head_ablation, head_correlation, head_fields,
    matrix_csv, SensitivityTarget, SENSITIVITY_DELTA, SENSITIVITY_QUERIES,
};
use wavegate::checkpoint::Checkpoint;
use wavegate::config::{comment_for, default_split_sizes, short_hash, RunConfig, DATA_DIR_ENV};
use wavegate::container::read_dataset;
use wavegate::descriptors::{dataset_descriptors, NAMES_1D, NAMES_2D};
use wavegate::evaluation::{diagnostics_1d, diagnostics_2d, noise_sweep, predict_fields, split_mse, EvalInputs};
use wavegate::grid::{ComplexField, Dataset};
use wavegate::models::{format_millions, param_count, Model};
use wavegate::report;
use wavegate::runs::{load_or_generate, run_dir_name, train_seed};
use wavegate::solvers::{write_generated, Benchmark};
use wavegate::training::{model_inputs, TrainData};

#[derive(Parser)]
#[command(name = "wavegate", version, about = "Gated DeepONet operator learning for NLSE and GPE benchmarks")]
struct Cli {
    /// Worker threads for data-parallel evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate train/test trajectories into a dataset directory.
    GenData {
        /// Benchmark to simulate (nlse1d or gpe2d).
        #[arg(long)]
        benchmark: Option<Benchmark>,
        /// Take benchmark, sizes, seed and directory from a run config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory [default: $WAVEGATE_DATA_DIR/<benchmark> or data/<benchmark>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// Data seed [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        /// Training trajectories [default: 1000 for nlse1d, 400 for gpe2d].
        #[arg(long)]
        n_train: Option<usize>,
        /// Test trajectories [default: 200 for nlse1d, 100 for gpe2d].
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Raw descriptor table, one row per trajectory.
    Descriptors {
        /// Dataset split file (train.wgds or test.wgds).
        #[arg(long)]
        dataset: PathBuf,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact and rounded parameter count of a configured model.
    ModelInfo {
        /// Run config (TOML).
        #[arg(long)]
        config: PathBuf,
    },
    /// Train one seed (or every configured seed).
    Train {
        /// Run config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Train only this seed instead of every configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory [default: the config output or runs/<variant>-<hash>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full-field MSE and diagnostics of a checkpoint on a dataset.
    Eval {
        /// Checkpoint written by train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset split file, normally test.wgds.
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Trajectory used for the diagnostic series.
        #[arg(long, default_value_t = 0)]
        sample: usize,
    },
    /// MSE under additive complex Gaussian noise on the initial state.
    NoiseSweep {
        /// Checkpoint written by train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset split file, normally test.wgds.
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated noise levels [default: from the checkpoint config].
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        /// Noise seed [default: from the checkpoint config].
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-head fields, correlation, ablation, sensitivity and gate overlap.
    Analyze {
        /// Checkpoint of an MH-RG model.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset split file, normally test.wgds.
        #[arg(long)]
        dataset: PathBuf,
        /// Trajectory used for the per-head fields.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Test trajectories averaged in the sensitivity scan.
        #[arg(long, default_value_t = 16)]
        sensitivity_samples: usize,
    },
    /// Comparison table over run directories.
    Report {
        /// Run directories written by train.
        runs: Vec<PathBuf>,
        /// Seeds every run directory should contain.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.cmd {
        Cmd::GenData {
            benchmark,
            config,
            out,
            seed,
            n_train,
            n_test,
        } => gen_data(benchmark, config, out, seed, n_train, n_test),
        Cmd::Descriptors { dataset, out } => descriptors(&dataset, &out),
        Cmd::ModelInfo { config } => model_info(&config),
        Cmd::Train { config, seed, out } => train(&config, seed, out),
        Cmd::Eval {
            checkpoint,
            dataset,
            out,
            sample,
        } => eval(&checkpoint, &dataset, &out, sample),
        Cmd::NoiseSweep {
            checkpoint,
            dataset,
            out,
            eps,
            seed,
        } => noise(&checkpoint, &dataset, &out, eps, seed),
        Cmd::Analyze {
            checkpoint,
            dataset,
            sample,
            out,
            sensitivity_samples,
        } => analyze(&checkpoint, &dataset, sample, &out, sensitivity_samples),
        Cmd::Report { runs, seeds, out } => report_cmd(&runs, &seeds, out.as_deref()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn gen_data(
    benchmark: Option<Benchmark>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    n_train: Option<usize>,
    n_test: Option<usize>,
) -> Result<()> {
    let (b, dir, seed, n_train, n_test) = match config {
        Some(path) => {
            let cfg = RunConfig::load(&path)?;
            if benchmark.is_some_and(|b| b != cfg.benchmark) {
                bail!("--benchmark disagrees with {}", path.display());
            }
            (
                cfg.benchmark,
                out.unwrap_or(cfg.data_dir),
                seed.unwrap_or(cfg.data_seed),
                n_train.unwrap_or(cfg.n_train),
                n_test.unwrap_or(cfg.n_test),
            )
        }
        None => {
            let b = benchmark.context("either --benchmark or --config is required")?;
            let dir = match out {
                Some(d) => d,
                None => std::env::var_os(DATA_DIR_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("data"))
                    .join(b.to_string()),
            };
            let (dtr, dte) = default_split_sizes(b);
            (b, dir, seed.unwrap_or(0), n_train.unwrap_or(dtr), n_test.unwrap_or(dte))
        }
    };
    if n_train == 0 || n_test == 0 {
        bail!("split sizes must be positive");
    }
    let report = write_generated(&dir, b, n_train, n_test, seed)?;
    println!(
        "{b}: {n_train} train / {n_test} test in {} (resamples {}, max mass error {:.3e})",
        dir.display(),
        report.resamples,
        report.max_mass_error
    );
    Ok(())
}

fn descriptor_names(ds: &Dataset) -> &'static [&'static str] {
    if ds.grid.dim() == 1 {
        &NAMES_1D
    } else {
        &NAMES_2D
    }
}

fn descriptors(dataset: &Path, out: &Path) -> Result<()> {
    let bytes = fs::read(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let ds = read_dataset(dataset)?;
    let rows = dataset_descriptors(&ds)?;
    let mut text = format!(
        "{}\ntrajectory,{}\n",
        comment_for(&short_hash(&bytes)),
        descriptor_names(&ds).join(",")
    );
    for (i, r) in rows.iter().enumerate() {
        text.push_str(&i.to_string());
        for v in r {
            text.push_str(&format!(",{v:e}"));
        }
        text.push('\n');
    }
    write(out, &text)
}

fn model_info(config: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let m = &cfg.model;
    let label = match m.variant {
        wavegate::models::Variant::Mhrg => format!("MH-RG (R={})", m.heads),
        v => v.label().to_string(),
    };
    let n = param_count(m);
    println!("benchmark: {}", cfg.benchmark);
    println!("model: {label}");
    println!("branch: {:?}", m.branch_widths());
    println!("trunk: {:?}", m.trunk_widths());
    println!("latent: {}", m.latent);
    println!("params: {n}");
    println!("params (M): {}", format_millions(n));
    Ok(())
}

fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let dir = out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(run_dir_name(&cfg)));
    let (train, test) = load_or_generate(&cfg)?;
    let data = TrainData::new(&train, &test)?;
    let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| cfg.seeds.clone());
    for s in seeds {
        let r = train_seed(&cfg, &data, s, &dir)?;
        println!(
            "{} seed {s}: params {}, test MSE {:.4e} ({:.1} s) -> {}",
            cfg.model.variant.label(),
            r.params,
            r.final_mse,
            r.wall_seconds,
            dir.display()
        );
    }
    Ok(())
}

struct Loaded {
    cfg: RunConfig,
    ck: Checkpoint,
    model: Model,
    ds: Dataset,
    inputs: EvalInputs,
}

fn load(checkpoint: &Path, dataset: &Path) -> Result<Loaded> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = RunConfig::from_canonical(&ck.config)
        .with_context(|| format!("{} carries no usable run config", checkpoint.display()))?;
    let model = ck.restore_model(&cfg.model)?;
    let ds = read_dataset(dataset)?;
    if Benchmark::from_dim(ds.grid.dim()) != Some(cfg.benchmark) {
        bail!("{} does not hold {} data", dataset.display(), cfg.benchmark);
    }
    let fields: Vec<&ComplexField> = ds.trajectories.iter().map(|t| t.initial()).collect();
    let inputs = model_inputs(&fields, &ck.stats)?;
    Ok(Loaded {
        cfg,
        ck,
        model,
        ds,
        inputs,
    })
}

fn eval(checkpoint: &Path, dataset: &Path, out: &Path, sample: usize) -> Result<()> {
    let l = load(checkpoint, dataset)?;
    if sample >= l.ds.len() {
        bail!("--sample {sample} out of range ({} trajectories)", l.ds.len());
    }
    let comment = l.cfg.csv_comment();
    let per = split_mse(&l.model, &l.ck.stats, &l.ds, &l.inputs)?;
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    let mut text = format!("{comment}\ntrajectory,mse\n");
    for (i, m) in per.iter().enumerate() {
        text.push_str(&format!("{i},{m:e}\n"));
    }
    write(&out.join("mse.csv"), &text)?;
    write(
        &out.join("summary.csv"),
        &format!("{comment}\nn,mean_mse\n{},{mean:e}\n", per.len()),
    )?;

    let pred = predict_fields(&l.model, &l.ck.stats, &l.ds, &l.inputs.rows(sample, sample + 1))?;
    let truth = &l.ds.trajectories[sample].frames;
    let times = &l.ds.times;
    let (p, t) = if l.ds.grid.dim() == 1 {
        (
            diagnostics_1d(&pred[0], times, l.cfg.probe_x)?,
            diagnostics_1d(truth, times, l.cfg.probe_x)?,
        )
    } else {
        (diagnostics_2d(&pred[0], times)?, diagnostics_2d(truth, times)?)
    };
    write(&out.join("diagnostics_pred.csv"), &p.to_csv(&comment))?;
    write(&out.join("diagnostics_true.csv"), &t.to_csv(&comment))?;
    println!("mean full-field MSE over {} trajectories: {mean:.4e}", per.len());
    Ok(())
}

fn noise(checkpoint: &Path, dataset: &Path, out: &Path, eps: Option<Vec<f64>>, seed: Option<u64>) -> Result<()> {
    let l = load(checkpoint, dataset)?;
    let eps = eps.unwrap_or_else(|| l.cfg.eps.clone());
    let seed = seed.unwrap_or(l.cfg.noise_seed);
    let sweep = noise_sweep(&l.model, &l.ck.stats, &l.ds, &eps, seed)?;
    let comment = format!("{}\n# noise seed {seed}", l.cfg.csv_comment());
    write(&out.join("noise.csv"), &sweep.to_csv(&comment))?;
    for i in 0..sweep.eps.len() {
        println!("eps {:<5} MSE {:.4e} ratio {:.3}", sweep.eps[i], sweep.mean_mse[i], sweep.ratio[i]);
    }
    Ok(())
}

fn analyze(checkpoint: &Path, dataset: &Path, sample: usize, out: &Path, n_sens: usize) -> Result<()> {
    let l = load(checkpoint, dataset)?;
    let comment = l.cfg.csv_comment();
    let r = l.model.n_heads();
    let heads: Vec<String> = (0..r).map(|k| format!("head{k}")).collect();

    let hf = head_fields(&l.model, &l.ck.stats, &l.ds, &l.inputs, sample)?;
    let o = hf.output;
    let axes = if l.ds.grid.dim() == 1 { "x,t" } else { "x,y,t" };
    let mut text = format!(
        "{comment}\n# normalised space; field = sum of heads mapped by re*{:e}+{:e}, im*{:e}+{:e}\n{axes}",
        o.re.std, o.re.mean, o.im.std, o.im.mean
    );
    for h in &heads {
        text.push_str(&format!(",{h}_re,{h}_im"));
    }
    text.push_str(",sum_re,sum_im\n");
    for row in 0..hf.prediction.nrows() {
        let c = l.ds.query_coords(row);
        text.push_str(&c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        for h in &hf.heads {
            text.push_str(&format!(",{:e},{:e}", h[[row, 0]], h[[row, 1]]));
        }
        text.push_str(&format!(",{:e},{:e}\n", hf.prediction[[row, 0]], hf.prediction[[row, 1]]));
    }
    write(&out.join("head_fields.csv"), &text)?;

    let corr = head_correlation(&hf.heads)?;
    let flagged: Vec<String> = (0..r).filter(|&k| corr.constant[k]).map(|k| k.to_string()).collect();
    let mut notes = vec![
        comment.clone(),
        format!("# Pearson over Re||Im of all frames and grid points, sample {sample}"),
    ];
    if !flagged.is_empty() {
        notes.push(format!("# constant heads reported as 0: {}", flagged.join(" ")));
    }
    write(&out.join("correlation.csv"), &matrix_csv(&notes, "head", &heads, &corr.matrix))?;

    let ab = head_ablation(&l.model, &l.ck.stats, &l.ds, &l.inputs)?;
    let mut text = format!("{comment}\n# full MSE {:e}\nhead,delta_mse\n", ab.full_mse);
    for (k, d) in ab.delta.iter().enumerate() {
        text.push_str(&format!("{k},{d:e}\n"));
    }
    write(&out.join("ablation.csv"), &text)?;

    let n = n_sens.clamp(1, l.ds.len());
    let sens_inputs = l.inputs.rows(0, n);
    let queries = fixed_queries(&l.ds, SENSITIVITY_QUERIES);
    let names: Vec<String> = descriptor_names(&l.ds).iter().map(|s| s.to_string()).collect();
    for target in SensitivityTarget::ALL {
        let s = descriptor_sensitivity(&l.model, &sens_inputs, &queries, target, SENSITIVITY_DELTA)?;
        let notes = vec![
            comment.clone(),
            format!(
                "# central differences, step {SENSITIVITY_DELTA} standardised units, RMS over {} queries, mean over {n} test samples",
                queries.nrows()
            ),
        ];
        write(
            &out.join(format!("sensitivity_{}.csv", target.name())),
            &matrix_csv(&notes, "head", &names, &s),
        )?;
    }

    let (ub, ut) = l.model.upsamplers().context("model has no gate upsamplers")?;
    let ov = gate_subspace_overlap(ub, ut)?;
    let mut notes = vec![comment.clone(), "# |Q_B^T Q_T|".to_string()];
    if ov.rank_deficient {
        notes.push(format!(
            "# rank deficient (U_B rank {}, U_T rank {}); truncated SVD basis",
            ov.rank_b, ov.rank_t
        ));
    }
    let cols: Vec<String> = (0..ov.overlap.ncols()).map(|k| format!("t{k}")).collect();
    write(&out.join("overlap.csv"), &matrix_csv(&notes, "b", &cols, &ov.overlap))?;
    let mut text = format!("{comment}\nindex,cosine\n");
    for (k, c) in ov.cosines.iter().enumerate() {
        text.push_str(&format!("{k},{c:e}\n"));
    }
    write(&out.join("cosines.csv"), &text)?;
    println!("analysis of {r} heads written to {}", out.display());
    Ok(())
}

fn report_cmd(runs: &[PathBuf], seeds: &[u64], out: Option<&Path>) -> Result<()> {
    if runs.is_empty() {
        bail!("no run directories given");
    }
    let rep = report::collect(runs, seeds)?;
    print!("{}", rep.to_text());
    if let Some(path) = out {
        write(path, &rep.to_csv(&comment_for(&rep.hash())))?;
    }
    if rep.rows.is_empty() {
        bail!("no finished runs found");
    }
    Ok(())
}
