//! Initial-condition perturbations, the model-adapter contract and
//! perturbed-vs-clean rollout comparisons.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{DateTime, Duration, Utc};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridio::{cell_weights, read_rollout, write_rollout, GridSpec, RolloutSeries, DEFAULT_STEP_SECONDS};

/// A model that advances a full state by one step.
///
/// `state` is `(variable, lat, lon)` in the order of [`variables`]; the
/// returned state must have the same shape. Static variables are part of the
/// state but adapters are expected to pass them through.
///
/// [`variables`]: ModelAdapter::variables
pub trait ModelAdapter {
    fn variables(&self) -> &[String];
    fn static_variables(&self) -> &[String];
    fn grid(&self) -> &GridSpec;
    /// Whether the adapter reads the clock, so shifting it means anything.
    fn supports_time_shift(&self) -> bool;
    fn step_seconds(&self) -> i64 {
        DEFAULT_STEP_SECONDS
    }
    fn step(&mut self, state: ArrayView3<'_, f32>, clock: DateTime<Utc>) -> Result<Array3<f32>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PerturbationKind {
    /// i.i.d. Gaussian noise added per pixel
    White,
    /// spatially correlated Gaussian noise added to the state
    Grf,
    /// state replaced by white noise with the variable's mean and std
    PureNoise,
    /// state replaced by a supplied image rescaled to the variable's mean and std
    ImageInit,
}

impl std::str::FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "white" => Ok(PerturbationKind::White),
            "grf" => Ok(PerturbationKind::Grf),
            "pure_noise" => Ok(PerturbationKind::PureNoise),
            "image_init" => Ok(PerturbationKind::ImageInit),
            other => Err(Error::InvalidConfig(format!("unknown perturbation kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Dynamic,
    Static,
    Both,
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dynamic" => Ok(Target::Dynamic),
            "static" => Ok(Target::Static),
            "both" => Ok(Target::Both),
            other => Err(Error::InvalidConfig(format!("unknown target `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    /// noise std in units of the variable std
    pub k: f64,
    /// GRF correlation length in pixels
    pub correlation_length: f64,
    pub target: Target,
    pub time_shift_days: Option<f64>,
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            kind: PerturbationKind::White,
            k: 1.0,
            correlation_length: 10.0,
            target: Target::Dynamic,
            time_shift_days: None,
            seed: 0,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "amplitude k must be positive, got {}",
                self.k
            )));
        }
        if !(self.correlation_length >= 1.0 && self.correlation_length.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "correlation length must be at least 1 pixel, got {}",
                self.correlation_length
            )));
        }
        if self.time_shift_days.is_some_and(|d| !d.is_finite()) {
            return Err(Error::InvalidConfig("time shift must be finite".into()));
        }
        Ok(())
    }
}

/// Pooled scalar mean and population std of one variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableStats {
    pub mean: f64,
    pub std: f64,
}

pub type StatsTable = BTreeMap<String, VariableStats>;

pub fn variable_stats(reference: &RolloutSeries, name: &str) -> Result<VariableStats> {
    let v = reference.checked_variable(name)?;
    let slab = reference.data().index_axis(Axis(1), v);
    let n = slab.len() as f64;
    let mean = slab.iter().map(|x| *x as f64).sum::<f64>() / n;
    let var = slab.iter().map(|x| (*x as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(VariableStats { mean, std: var.sqrt() })
}

pub fn stats_table(reference: &RolloutSeries, names: &[String]) -> Result<StatsTable> {
    names
        .iter()
        .map(|n| Ok((n.clone(), variable_stats(reference, n)?)))
        .collect()
}

pub fn save_stats(stats: &StatsTable, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(stats)?)?;
    Ok(())
}

pub fn load_stats(path: impl AsRef<Path>) -> Result<StatsTable> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn member_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn white(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
}

/// Zero-mean Gaussian random field with Gaussian correlation
/// `exp(-r^2 / (2 l^2))` (r, l in pixels), scaled to unit RMS. Both axes are
/// treated as periodic.
pub fn gaussian_random_field(shape: (usize, usize), length: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (ny, nx) = shape;
    let mut planner = FftPlanner::<f64>::new();
    let (fx, ix) = (planner.plan_fft_forward(nx), planner.plan_fft_inverse(nx));
    let (fy, iy) = (planner.plan_fft_forward(ny), planner.plan_fft_inverse(ny));

    let mut c = Array2::from_shape_fn(shape, |_| {
        Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
    });
    let angular = |j: usize, n: usize| 2.0 * std::f64::consts::PI * j.min(n - j) as f64 / n as f64;

    let mut col = vec![Complex64::new(0.0, 0.0); ny];
    let transform_rows = |c: &mut Array2<Complex64>, f: &dyn rustfft::Fft<f64>| {
        for mut row in c.outer_iter_mut() {
            let mut buf = row.to_vec();
            f.process(&mut buf);
            row.iter_mut().zip(buf).for_each(|(a, b)| *a = b);
        }
    };
    let mut transform_cols = |c: &mut Array2<Complex64>, f: &dyn rustfft::Fft<f64>| {
        for mut column in c.axis_iter_mut(Axis(1)) {
            col.iter_mut().zip(column.iter()).for_each(|(a, b)| *a = *b);
            f.process(&mut col);
            column.iter_mut().zip(&col).for_each(|(a, b)| *a = *b);
        }
    };

    transform_rows(&mut c, fx.as_ref());
    transform_cols(&mut c, fy.as_ref());
    for ((i, j), z) in c.indexed_iter_mut() {
        let k2 = angular(i, ny).powi(2) + angular(j, nx).powi(2);
        *z *= (-k2 * length * length / 4.0).exp();
    }
    transform_cols(&mut c, iy.as_ref());
    transform_rows(&mut c, ix.as_ref());

    let field = c.mapv(|z| z.re);
    let rms = (field.iter().map(|x| x * x).sum::<f64>() / field.len() as f64).sqrt();
    if rms > 0.0 {
        field / rms
    } else {
        field
    }
}

fn targeted(name: &str, statics: &[String], target: Target) -> bool {
    let is_static = statics.iter().any(|s| s == name);
    match target {
        Target::Dynamic => !is_static,
        Target::Static => is_static,
        Target::Both => true,
    }
}

/// Perturb the variables selected by `spec.target`. `image` is required for
/// [`PerturbationKind::ImageInit`] and must match the grid.
pub fn apply_perturbation(
    state: ArrayView3<'_, f32>,
    variables: &[String],
    statics: &[String],
    spec: &PerturbationSpec,
    stats: &StatsTable,
    image: Option<ArrayView2<'_, f32>>,
) -> Result<Array3<f32>> {
    spec.validate()?;
    let (nv, ny, nx) = state.dim();
    if nv != variables.len() {
        return Err(Error::InvalidShape(format!(
            "{} variable names for {nv} slices",
            variables.len()
        )));
    }
    let mut out = state.to_owned();
    for (v, name) in variables.iter().enumerate() {
        if !targeted(name, statics, spec.target) {
            continue;
        }
        let st = stats.get(name).ok_or_else(|| Error::MissingStats(name.clone()))?;
        let mut rng = member_rng(spec.seed, v as u64);
        let mut slab = out.index_axis_mut(Axis(0), v);
        match spec.kind {
            PerturbationKind::White => {
                let noise = white((ny, nx), &mut rng);
                slab.zip_mut_with(&noise, |x, e| *x = (*x as f64 + spec.k * st.std * e) as f32);
            }
            PerturbationKind::Grf => {
                let noise = gaussian_random_field((ny, nx), spec.correlation_length, &mut rng);
                slab.zip_mut_with(&noise, |x, e| *x = (*x as f64 + spec.k * st.std * e) as f32);
            }
            PerturbationKind::PureNoise => {
                let noise = white((ny, nx), &mut rng);
                slab.zip_mut_with(&noise, |x, e| *x = (st.mean + st.std * e) as f32);
            }
            PerturbationKind::ImageInit => {
                let img = image.ok_or_else(|| Error::InvalidConfig("image initialisation needs an image".into()))?;
                if img.dim() != (ny, nx) {
                    return Err(Error::InvalidShape(format!(
                        "image is {:?}, grid is {ny}x{nx}",
                        img.dim()
                    )));
                }
                let n = img.len() as f64;
                let m = img.iter().map(|x| *x as f64).sum::<f64>() / n;
                let s = (img.iter().map(|x| (*x as f64 - m).powi(2)).sum::<f64>() / n).sqrt();
                slab.zip_mut_with(&img, |x, p| {
                    let z = if s > 0.0 { (*p as f64 - m) / s } else { 0.0 };
                    *x = (st.mean + st.std * z) as f32;
                });
            }
        }
    }
    Ok(out)
}

fn check_pair(a: &RolloutSeries, b: &RolloutSeries) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::Mismatch("rollouts use different grids".into()));
    }
    if a.n_times() != b.n_times() {
        return Err(Error::Mismatch(format!(
            "rollout lengths differ: {} vs {}",
            a.n_times(),
            b.n_times()
        )));
    }
    Ok(())
}

/// Latitude-weighted RMSE between two rollouts at every step.
pub fn error_trajectory(clean: &RolloutSeries, perturbed: &RolloutSeries, name: &str) -> Result<Vec<f64>> {
    check_pair(clean, perturbed)?;
    let (va, vb) = (clean.checked_variable(name)?, perturbed.checked_variable(name)?);
    let w = cell_weights(clean.grid());
    Ok((0..clean.n_times())
        .map(|t| {
            let a = clean.field(t, va);
            let b = perturbed.field(t, vb);
            a.iter()
                .zip(b.iter())
                .zip(&w)
                .map(|((x, y), w)| w * (*x as f64 - *y as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Pixelwise sample std across members, reduced per step to its
/// latitude-weighted mean and its maximum.
pub fn ensemble_spread(members: &[RolloutSeries], name: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    if members.len() < 2 {
        return Err(Error::TooFewMembers(members.len()));
    }
    let first = &members[0];
    for m in &members[1..] {
        check_pair(first, m)?;
    }
    let idx: Vec<usize> = members
        .iter()
        .map(|m| m.checked_variable(name))
        .collect::<Result<_>>()?;
    let w = cell_weights(first.grid());
    let n = members.len() as f64;
    let mut mean_series = Vec::with_capacity(first.n_times());
    let mut max_series = Vec::with_capacity(first.n_times());
    for t in 0..first.n_times() {
        let fields: Vec<_> = members.iter().zip(&idx).map(|(m, v)| m.field(t, *v)).collect();
        let (mut wsum, mut max) = (0.0, 0.0f64);
        for (c, ((i, j), _)) in fields[0].indexed_iter().enumerate() {
            let mu = fields.iter().map(|f| f[[i, j]] as f64).sum::<f64>() / n;
            let var = fields.iter().map(|f| (f[[i, j]] as f64 - mu).powi(2)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            wsum += w[c] * sd;
            max = max.max(sd);
        }
        mean_series.push(wsum);
        max_series.push(max);
    }
    Ok((mean_series, max_series))
}

/// A rollout together with the failure that cut it short, if any.
#[derive(Debug)]
pub struct RolloutOutcome {
    pub series: RolloutSeries,
    pub error: Option<Error>,
}

impl RolloutOutcome {
    pub fn into_result(self) -> Result<RolloutSeries> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.series),
        }
    }
}

/// Extra inputs some perturbations need.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerturbationInputs<'a> {
    pub stats: Option<&'a StatsTable>,
    pub image: Option<ArrayView2<'a, f32>>,
}

/// Feed the adapter its own output for `n_steps` steps. The returned series
/// has `n_steps + 1` frames, the first being the (perturbed) initial state.
/// Timestamps stay physical even when the adapter sees a shifted clock.
pub fn run_rollout(
    adapter: &mut dyn ModelAdapter,
    init: ArrayView3<'_, f32>,
    start_time: DateTime<Utc>,
    n_steps: usize,
    spec: Option<&PerturbationSpec>,
    inputs: PerturbationInputs<'_>,
) -> Result<RolloutOutcome> {
    let grid = adapter.grid().clone();
    let variables = adapter.variables().to_vec();
    let expected = (variables.len(), grid.n_lat(), grid.n_lon());
    if init.dim() != expected {
        return Err(Error::InvalidShape(format!(
            "initial state is {:?}, adapter expects {expected:?}",
            init.dim()
        )));
    }
    let mut shift = Duration::zero();
    let mut state = match spec {
        None => init.to_owned(),
        Some(spec) => {
            if let Some(days) = spec.time_shift_days {
                if !adapter.supports_time_shift() {
                    return Err(Error::InvalidConfig("adapter does not accept a shifted clock".into()));
                }
                shift = Duration::milliseconds((days * 86_400_000.0).round() as i64);
            }
            let empty = StatsTable::new();
            let stats = inputs.stats.unwrap_or(&empty);
            let statics = adapter.static_variables().to_vec();
            let any_target = variables.iter().any(|n| targeted(n, &statics, spec.target));
            if any_target {
                apply_perturbation(init, &variables, &statics, spec, stats, inputs.image)?
            } else {
                init.to_owned()
            }
        }
    };

    let step = Duration::seconds(adapter.step_seconds());
    let mut frames = vec![state.clone()];
    let mut error = None;
    let mut clock = start_time;
    for t in 0..n_steps {
        match adapter.step(state.view(), clock + shift) {
            Ok(next) if next.dim() == expected => {
                if next.iter().any(|x| !x.is_finite()) {
                    error = Some(Error::Adapter {
                        step: t,
                        message: "non-finite values in adapter output".into(),
                    });
                    break;
                }
                state = next;
            }
            Ok(next) => {
                error = Some(Error::Adapter {
                    step: t,
                    message: format!("output shape {:?}, expected {expected:?}", next.dim()),
                });
                break;
            }
            Err(e) => {
                error = Some(Error::Adapter {
                    step: t,
                    message: e.to_string(),
                });
                break;
            }
        }
        clock += step;
        frames.push(state.clone());
    }
    let series = RolloutSeries::from_frames(grid, variables, start_time, adapter.step_seconds(), &frames)?;
    Ok(RolloutOutcome { series, error })
}

/// How to run a model that lives in another process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalAdapterConfig {
    /// program and arguments, run inside `work_dir`
    pub command: Vec<String>,
    pub work_dir: PathBuf,
    pub variables: Vec<String>,
    #[serde(default)]
    pub static_variables: Vec<String>,
    #[serde(default = "default_true")]
    pub supports_time_shift: bool,
    #[serde(default = "default_step")]
    pub step_seconds: i64,
}

fn default_true() -> bool {
    true
}

fn default_step() -> i64 {
    DEFAULT_STEP_SECONDS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClockFile {
    clock: DateTime<Utc>,
    step_seconds: i64,
}

/// Adapter that exchanges one state per step through files: it writes
/// `state_in.rgf` and `clock.json` to the work directory, runs the command
/// there and reads back `state_out.rgf`.
#[derive(Debug, Clone)]
pub struct ExternalAdapter {
    cfg: ExternalAdapterConfig,
    grid: GridSpec,
}

impl ExternalAdapter {
    pub fn new(cfg: ExternalAdapterConfig, grid: GridSpec) -> Result<Self> {
        if cfg.command.is_empty() {
            return Err(Error::InvalidConfig("external adapter needs a command".into()));
        }
        if cfg.variables.is_empty() {
            return Err(Error::InvalidConfig("external adapter needs variables".into()));
        }
        if cfg.step_seconds <= 0 {
            return Err(Error::InvalidConfig("step_seconds must be positive".into()));
        }
        std::fs::create_dir_all(&cfg.work_dir)?;
        Ok(ExternalAdapter { cfg, grid })
    }

    pub fn load(path: impl AsRef<Path>, grid: GridSpec) -> Result<Self> {
        let cfg: ExternalAdapterConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(cfg, grid)
    }
}

impl ModelAdapter for ExternalAdapter {
    fn variables(&self) -> &[String] {
        &self.cfg.variables
    }

    fn static_variables(&self) -> &[String] {
        &self.cfg.static_variables
    }

    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn supports_time_shift(&self) -> bool {
        self.cfg.supports_time_shift
    }

    fn step_seconds(&self) -> i64 {
        self.cfg.step_seconds
    }

    fn step(&mut self, state: ArrayView3<'_, f32>, clock: DateTime<Utc>) -> Result<Array3<f32>> {
        let dir = &self.cfg.work_dir;
        let out_path = dir.join("state_out.rgf");
        if out_path.exists() {
            std::fs::remove_file(&out_path)?;
        }
        let frame = RolloutSeries::from_frames(
            self.grid.clone(),
            self.cfg.variables.clone(),
            clock,
            self.cfg.step_seconds,
            &[state.to_owned()],
        )?;
        write_rollout(&frame, dir.join("state_in.rgf"))?;
        let clock_file = ClockFile {
            clock,
            step_seconds: self.cfg.step_seconds,
        };
        std::fs::write(dir.join("clock.json"), serde_json::to_string(&clock_file)?)?;

        let status = Command::new(&self.cfg.command[0])
            .args(&self.cfg.command[1..])
            .current_dir(dir)
            .status()
            .map_err(|e| Error::InvalidConfig(format!("cannot run `{}`: {e}", self.cfg.command[0])))?;
        if !status.success() {
            return Err(Error::InvalidConfig(format!("model command exited with {status}")));
        }
        let out = read_rollout(&out_path)?;
        if out.grid() != &self.grid || out.variables() != self.cfg.variables.as_slice() {
            return Err(Error::Mismatch(
                "state_out.rgf does not match the input grid and variables".into(),
            ));
        }
        Ok(out.frame(out.n_times() - 1).to_owned())
    }
}
