#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_rollout-stab");

pub fn run_in(dir: &Path, args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(dir).args(args).env_remove("ROLLOUT_STAB_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn ok_in(dir: &Path, args: &[&str], envs: &[(&str, &str)]) {
    let out = run_in(dir, args, envs);
    assert!(
        out.status.success(),
        "rollout-stab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every subcommand on a small seeded pair of synthetic runs, with relative
/// paths so the manifests do not depend on the directory.
pub const PIPELINE: &[&[&str]] = &[
    &[
        "synth",
        "--config",
        "small.json",
        "--regime",
        "STABLE",
        "--seed",
        "1",
        "-o",
        "ref.rgf",
        "--labels",
        "ref_labels.json",
    ],
    &[
        "synth",
        "--config",
        "small.json",
        "--regime",
        "BLOWUP",
        "--delta",
        "0.1",
        "--onset-days",
        "150",
        "--seed",
        "7",
        "-o",
        "run.rgf",
        "--labels",
        "labels.json",
    ],
    &[
        "report",
        "-i",
        "run.rgf",
        "-r",
        "ref.rgf",
        "-o",
        "report.json",
        "--csv",
        "report.csv",
    ],
    &[
        "report",
        "-i",
        "ref.rgf",
        "-r",
        "ref.rgf",
        "--run",
        "ref",
        "-o",
        "report_ref.json",
    ],
    &[
        "aggregate",
        "-i",
        "report.json",
        "report_ref.json",
        "-o",
        "aggregate.json",
        "--csv",
        "aggregate.csv",
    ],
    &[
        "spectra",
        "-i",
        "run.rgf",
        "--daily",
        "-o",
        "spectra.csv",
        "--full",
        "spectra_full.csv",
    ],
    &["blowup", "-i", "run.rgf", "-o", "blowup.json"],
    &[
        "seasonality",
        "-i",
        "run.rgf",
        "-r",
        "ref.rgf",
        "-o",
        "seasonality.json",
    ],
    &["smallscale", "-i", "run.rgf", "-r", "ref.rgf", "-o", "smallscale.json"],
    &["cycle-rmse", "-i", "run.rgf", "-r", "ref.rgf", "-o", "cycle_rmse.json"],
    &[
        "perturb",
        "--adapter",
        "synth:BLUR",
        "--kind",
        "white",
        "--k",
        "1",
        "--seed",
        "3",
        "--steps",
        "40",
        "-o",
        "perturbed.rgf",
        "--clean",
        "clean.rgf",
        "--errors",
        "errors.csv",
    ],
    &["extremes", "-i", "run.rgf", "-r", "ref.rgf", "--out-dir", "extremes"],
    &[
        "memorize",
        "-i",
        "run.rgf",
        "--training",
        "ref.rgf",
        "--every",
        "20",
        "-o",
        "memorize.json",
        "--csv",
        "memorize.csv",
    ],
];

pub const SMALL_GRID: &str = r#"{"n-lat": 4, "n-lon": 360, "horizon-days": 730}"#;

/// Run the whole pipeline in `dir`; returns every file it wrote, sorted.
pub fn run_pipeline(dir: &Path, envs: &[(&str, &str)]) -> Vec<PathBuf> {
    std::fs::write(dir.join("small.json"), SMALL_GRID).unwrap();
    for args in PIPELINE {
        ok_in(dir, args, envs);
    }
    let mut files = Vec::new();
    collect(dir, dir, &mut files);
    files.sort();
    files
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect(root, &p, out);
        } else {
            out.push(p.strip_prefix(root).unwrap().to_path_buf());
        }
    }
}
