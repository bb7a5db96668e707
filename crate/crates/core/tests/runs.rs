use std::fs;
use std::path::Path;

use wavegate::config::RunConfig;
use wavegate::report::collect;
use wavegate::runs::{cached_summary, dataset_matches, ensure_runs, load_or_generate, read_summary, seed_dir};
use wavegate::training::aggregate_seeds;

fn write_summary(dir: &Path, seed: u64, variant: &str, params: usize, mse: f64, hash: &str) {
    let d = seed_dir(dir, seed);
    fs::create_dir_all(&d).unwrap();
    fs::write(
        d.join("summary.csv"),
        format!("# wavegate 0.1.0 config={hash}\nseed,variant,params,final_mse\n{seed},{variant},{params},{mse:e}\n"),
    )
    .unwrap();
}

#[test]
fn three_seeds_aggregate_to_hand_values() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("rg");
    for (s, m) in [(0, 1.0), (1, 2.0), (2, 3.0)] {
        write_summary(&dir, s, "rg", 1_586_546, m, "aaaa");
    }
    let rep = collect(std::slice::from_ref(&dir), &[0, 1, 2]).unwrap();
    assert_eq!(rep.rows.len(), 1);
    assert!(rep.missing.is_empty());
    let row = &rep.rows[0];
    assert_eq!(row.label, "RG");
    assert_eq!(row.mse, aggregate_seeds(&[1.0, 2.0, 3.0]).unwrap());
    let text = rep.to_text();
    assert!(text.contains("2.000e0 ± 1.000e0"), "{text}");
    assert!(text.contains("1.587 M"));
    assert!(text.contains("2.000 × 10^0 ± 1.000 × 10^0"));
    let csv = rep.to_csv("# h");
    assert!(csv.starts_with("# h\nmodel,params,seeds,mse_mean,mse_std\nRG,1586546,3,2e0,1e0\n"), "{csv}");
}

#[test]
fn single_seed_has_no_std_and_missing_runs_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let van = tmp.path().join("van");
    let mh = tmp.path().join("mh");
    let empty = tmp.path().join("empty");
    write_summary(&van, 0, "vanilla", 10, 1.406e-3, "bbbb");
    write_summary(&mh, 1, "mhrg", 12, 5e-4, "cccc");
    let rep = collect(&[mh.clone(), van.clone(), empty.clone()], &[1]).unwrap();
    // ordered by variant, not by argument order
    assert_eq!(rep.rows[0].label, "Vanilla");
    assert_eq!(rep.rows[1].label, "MH-RG");
    assert_eq!(rep.rows[0].mse.std, None);
    assert_eq!(rep.rows[0].mse.display_table(), "1.406 × 10^-3");
    assert_eq!(rep.missing.len(), 2);
    assert!(rep.missing.iter().any(|m| m.contains("van") && m.ends_with("seed 1")));
    assert!(rep.missing.iter().any(|m| m.contains("empty")));
    assert!(rep.to_text().contains("missing:"));
}

#[test]
fn mixed_configs_in_one_directory_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("x");
    write_summary(&dir, 0, "rg", 10, 1.0, "aaaa");
    write_summary(&dir, 1, "rg", 10, 1.0, "dddd");
    assert!(collect(&[dir], &[]).is_err());
}

#[test]
fn summary_round_trip_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    write_summary(tmp.path(), 4, "film", 99, 2.5e-3, "0123456789abcdef");
    let s = read_summary(&seed_dir(tmp.path(), 4).join("summary.csv")).unwrap();
    assert_eq!((s.seed, s.variant.as_str(), s.params, s.final_mse), (4, "film", 99, 2.5e-3));
    assert_eq!(s.config_hash, "0123456789abcdef");
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "# wavegate\nseed\n1\n").unwrap();
    assert!(read_summary(&bad).is_err());
}

fn tiny(dir: &Path) -> RunConfig {
    RunConfig::parse(&format!(
        r#"benchmark = "nlse1d"
[data]
dir = "{}"
n_train = 4
n_test = 2
seed = 9
[model]
variant = "rg"
branch_hidden = [8]
trunk_hidden = [8]
latent = 4
gate_hidden = 4
[train]
batch_size = 2
queries = 16
steps = 4
eval_every = 2
eval_queries = 32
seeds = [0, 1]
"#,
        dir.join("data").display()
    ))
    .unwrap()
}

#[test]
fn runs_are_cached_by_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(tmp.path());
    assert!(!dataset_matches(&cfg));
    let run_dir = tmp.path().join("run");
    let first = ensure_runs(&cfg, &run_dir).unwrap();
    assert!(dataset_matches(&cfg));
    assert_eq!(first.len(), 2);
    assert!(first.iter().all(|s| s.config_hash == cfg.hash()));
    let ck = seed_dir(&run_dir, 0).join("checkpoint.wgck");
    let stamp = fs::metadata(&ck).unwrap().modified().unwrap();
    let again = ensure_runs(&cfg, &run_dir).unwrap();
    assert_eq!(again, first);
    assert_eq!(fs::metadata(&ck).unwrap().modified().unwrap(), stamp);

    let mut other = cfg.clone();
    other.train.steps = 6;
    assert!(cached_summary(&other, &run_dir, 0).is_none());

    // a different dataset in the same directory is refused, not overwritten
    let mut clash = cfg.clone();
    clash.data_seed = 10;
    assert!(load_or_generate(&clash).is_err());
}
