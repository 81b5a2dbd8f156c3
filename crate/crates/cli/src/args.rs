use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Stability diagnostics for long autoregressive forecast rollouts.
///
/// Any flag may also be given in a JSON object passed with `--config`;
/// keys are flag names (`"onset-days": 150`). Flags on the command line
/// win over the file. `ROLLOUT_STAB_THREADS` caps worker threads.
#[derive(Debug, Parser)]
#[command(name = "rollout-stab", version)]
pub struct Cli {
    /// JSON file with default values for any flag of the subcommand
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every detector on every variable shared with a reference
    Report(ReportArgs),
    /// Zonal energy spectra and band averages over time
    Spectra(SpectraArgs),
    /// Day of blow-up per variable
    Blowup(BlowupArgs),
    /// Day the large-scale energy leaves the reference climatology
    Seasonality(SeasonalityArgs),
    /// Small-scale energy against the reference and the run's first days
    Smallscale(SmallscaleArgs),
    /// RMSE of the monthly seasonal cycle against a reference
    CycleRmse(CycleRmseArgs),
    /// Perturbed and clean rollouts of a model adapter
    Perturb(PerturbArgs),
    /// Synthetic rollout with a controlled failure regime
    Synth(SynthArgs),
    /// Regional extremes: quantiles, exceedance curves, event counts
    Extremes(ExtremesArgs),
    /// Nearest-neighbour distance ratio against a training archive
    Memorize(MemorizeArgs),
    /// Mean and spread of several reports
    Aggregate(AggregateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Report(_) => "report",
            Command::Spectra(_) => "spectra",
            Command::Blowup(_) => "blowup",
            Command::Seasonality(_) => "seasonality",
            Command::Smallscale(_) => "smallscale",
            Command::CycleRmse(_) => "cycle-rmse",
            Command::Perturb(_) => "perturb",
            Command::Synth(_) => "synth",
            Command::Extremes(_) => "extremes",
            Command::Memorize(_) => "memorize",
            Command::Aggregate(_) => "aggregate",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BlowupFlags {
    /// trailing smoothing window of the daily extremes, days
    #[arg(long, default_value_t = 4.0)]
    pub smoothing_days: f64,
    /// length of the growth-fit window, days
    #[arg(long, default_value_t = 30.0)]
    pub window_days: f64,
    /// R² a window must exceed to count as exponential growth
    #[arg(long, default_value_t = 0.9)]
    pub r2_threshold: f64,
    /// spacing of window starts, days
    #[arg(long, default_value_t = 1.0)]
    pub stride_days: f64,
    /// minimum fitted growth factor across one window
    #[arg(long, default_value_t = 10.0)]
    pub min_growth: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SeasonalityFlags {
    /// multiple of the climatological range a day must leave
    #[arg(long, default_value_t = 2.0)]
    pub multiplier: f64,
    /// consecutive violating days needed to flag a loss
    #[arg(long, default_value_t = 45)]
    pub run_days: usize,
    /// restrict the reference climatology to years FROM:TO
    #[arg(long, value_name = "FROM:TO")]
    pub envelope_years: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// rollout to diagnose (RGF1)
    #[arg(short, long)]
    pub input: PathBuf,
    /// reference rollout or reanalysis (RGF1)
    #[arg(short, long)]
    pub reference: PathBuf,
    /// row label; defaults to the input file stem
    #[arg(long)]
    pub run: Option<String>,
    /// only these variables
    #[arg(long, value_delimiter = ',')]
    pub variables: Vec<String>,
    #[command(flatten)]
    pub blowup: BlowupFlags,
    #[command(flatten)]
    pub seasonality: SeasonalityFlags,
    /// JSON report; stdout when absent
    #[arg(short, long)]
    #[serde(skip)]
    pub output: Option<PathBuf>,
    /// CSV table, one row per metric
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectraArgs {
    /// rollout to diagnose (RGF1)
    #[arg(short, long)]
    pub input: PathBuf,
    /// variable to transform; the first one when absent
    #[arg(long)]
    pub variable: Option<String>,
    /// average the spectra of each UTC day
    #[arg(long)]
    pub daily: bool,
    /// band averages as CSV; stdout when absent
    #[arg(short, long)]
    #[serde(skip)]
    pub output: Option<PathBuf>,
    /// full per-wavenumber spectrum as CSV
    #[arg(long)]
    #[serde(skip)]
    pub full: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BlowupArgs {
    /// rollout to diagnose (RGF1)
    #[arg(short, long)]
    pub input: PathBuf,
    /// only these variables
    #[arg(long, value_delimiter = ',')]
    pub variables: Vec<String>,
    #[command(flatten)]
    pub params: BlowupFlags,
    /// JSON result; stdout when absent
    #[arg(short, long)]
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SeasonalityArgs {
    /// rollout to diagnose (RGF1)
    #[arg(short, long)]
    pub input: PathBuf,
    /// reference rollout the climatology is built from
    #[arg(short, long, required_unless_present = "envelope", conflicts_with = "envelope")]
    pub reference: Option<PathBuf>,
    /// previously saved climatology (JSON); needs --variables with one name
    #[arg(long)]
    pub envelope: Option<PathBuf>,
    /// only these variables
    #[arg(long, value_delimiter = ',')]
    pub variables: Vec<String>,
    #[command(flatten)]
    pub params: SeasonalityFlags,
    /// write the climatology of each variable to DIR/<variable>.envelope.json
    #[arg(long, value_name = "DIR")]
    #[serde(skip)]
    pub save_envelopes: Option<PathBuf>,
    /// JSON result; stdout when absent
    #[arg(short, long)]
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SmallscaleArgs {
    /// rollout to diagnose (RGF1)
    #[arg(short, long)]
    pub input: PathBuf,
    /// reference rollout or reanalysis (RGF1)
    #[arg(short, long)]
    pub reference: PathBuf,
    /// only these variables
    #[arg(long, value_delimiter = ',')]
    pub variables: Vec<String>,
    /// end the window at this day instead of the end of the run
    #[arg(long)]
    pub blowup_day: Option<f64>,
    /// JSON result; stdout when absent
    #[arg(short, long)]
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CycleRmseArgs {
    /// rollout to diagnose (RGF1)
    #[arg(short, long)]
    pub input: PathBuf,
    /// reference rollout or reanalysis (RGF1)
    #[arg(short, long)]
    pub reference: PathBuf,
    /// only these variables
    #[arg(long, value_delimiter = ',')]
    pub variables: Vec<String>,
    /// JSON result; stdout when absent
    #[arg(short, long)]
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PerturbArgs {
    /// `synth:<REGIME>`, `synth:<config.json>` or `external:<adapter.json>`
    #[arg(long)]
    pub adapter: String,
    /// white, grf, pure_noise or image_init
    #[arg(long, default_value = "white")]
    pub kind: String,
    /// noise amplitude in units of each variable's std
    #[arg(long, default_value_t = 1.0)]
    pub k: f64,
    /// correlation length of grf noise, pixels
    #[arg(long, default_value_t = 10.0)]
    pub correlation_length: f64,
    /// dynamic, static or both
    #[arg(long, default_value = "dynamic")]
    pub target: String,
    /// days added to the clock the model sees
    #[arg(long)]
    pub time_shift_days: Option<f64>,
    /// noise seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// model steps to run
    #[arg(long)]
    pub steps: usize,
    /// initial state: first frame of this RGF1 file (required for external models)
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// start time of the rollout; the init file's, or the synth config's, by default
    #[arg(long)]
    pub start_time: Option<chrono::DateTime<chrono::Utc>>,
    /// per-variable mean and std (JSON); taken from the clean rollout when absent
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// image for image_init: the first field of this RGF1 file
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// perturbed rollout (RGF1)
    #[arg(short, long)]
    #[serde(skip)]
    pub output: PathBuf,
    /// clean rollout (RGF1)
    #[arg(long)]
    #[serde(skip)]
    pub clean: Option<PathBuf>,
    /// per-step error of the perturbed against the clean rollout (CSV)
    #[arg(long)]
    #[serde(skip)]
    pub errors: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// STABLE, BLOWUP, DRIFT, SHARPEN or BLUR
    #[arg(long, default_value = "STABLE")]
    pub regime: String,
    /// full generator configuration (JSON); flags below override it
    #[arg(long)]
    pub regime_config: Option<PathBuf>,
    /// growth per step of the unstable band
    #[arg(long)]
    pub delta: Option<f64>,
    /// day the unstable band starts growing
    #[arg(long)]
    pub onset_days: Option<f64>,
    /// e-folding time of the forced large-scale pattern, days
    #[arg(long)]
    pub tau_days: Option<f64>,
    /// latitude rows of the cell-centred grid
    #[arg(long)]
    pub n_lat: Option<usize>,
    /// longitude columns
    #[arg(long)]
    pub n_lon: Option<usize>,
    /// names of the generated variables, each an independent stream
    #[arg(long, value_delimiter = ',')]
    pub variables: Vec<String>,
    /// RFC 3339 time of the first frame
    #[arg(long)]
    pub start_time: Option<chrono::DateTime<chrono::Utc>>,
    /// rollout length, days (at least 60)
    #[arg(long, default_value_t = 730.0)]
    pub horizon_days: f64,
    /// model time step, seconds
    #[arg(long, default_value_t = 21600)]
    pub step_seconds: i64,
    /// noise seed; the same seed gives the same bytes
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// rollout (RGF1)
    #[arg(short, long)]
    #[serde(skip)]
    pub output: PathBuf,
    /// expected detector outcomes (JSON)
    #[arg(long)]
    #[serde(skip)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtremesArgs {
    /// model rollout (RGF1)
    #[arg(short, long)]
    pub input: PathBuf,
    /// reference the thresholds and reference quantiles come from
    #[arg(short, long)]
    pub reference: PathBuf,
    /// the first variable when absent
    #[arg(long)]
    pub variable: Option<String>,
    /// built-in region names; all built-in regions when absent
    #[arg(long, value_delimiter = ',')]
    pub regions: Vec<String>,
    /// JSON array of regions used instead of the built-in ones
    #[arg(long)]
    pub regions_file: Option<PathBuf>,
    /// spacing of the quantile-quantile levels, percent
    #[arg(long, default_value_t = 0.1)]
    pub qq_step: f64,
    /// directory receiving the per-region CSVs and summary.json
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MemorizeArgs {
    /// generated samples (RGF1)
    #[arg(short, long)]
    pub input: PathBuf,
    /// training archive (RGF1)
    #[arg(long)]
    pub training: PathBuf,
    /// only every N-th sample
    #[arg(long, default_value_t = 1)]
    pub every: usize,
    /// JSON summary and per-sample ratios; stdout when absent
    #[arg(short, long)]
    #[serde(skip)]
    pub output: Option<PathBuf>,
    /// per-sample ratios as CSV
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AggregateArgs {
    /// report JSON files written by `report`
    #[arg(short, long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// JSON result; stdout when absent
    #[arg(short, long)]
    #[serde(skip)]
    pub output: Option<PathBuf>,
    /// CSV table of the aggregated metrics
    #[arg(long)]
    #[serde(skip)]
    pub csv: Option<PathBuf>,
}
