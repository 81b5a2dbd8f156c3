//! Linear spectral rollout generator with controllable failure regimes.
//!
//! Each latitude row evolves independently in zonal wavenumber space:
//!
//! ```text
//! c'_k = g_k c_k + eta_k        (per-band gain, per-band complex noise)
//! x'   = inverse(c') + S(t) P   (planetary-scale seasonal forcing)
//! ```
//!
//! Because every wavenumber is a decoupled linear mode, the behaviour a
//! detector should report (a blow-up day, a seasonality-loss day, a
//! small-scale ratio) can be derived in closed form from the configuration;
//! [`generate`] returns those derivations as [`GroundTruthLabels`].

use std::f64::consts::PI;
use std::sync::Arc;

use chrono::{DateTime, Datelike, TimeZone, Timelike, Utc};
use ndarray::{Array2, Array3, Array4, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridio::{latitude_weights, GridSpec, RolloutSeries, DEFAULT_STEP_SECONDS, SECONDS_PER_DAY};
use crate::perturb::ModelAdapter;
use crate::spectra::{band_of, band_wavenumbers, Band};

pub const SEASON_DAYS: f64 = 365.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Regime {
    Stable,
    Blowup,
    Drift,
    Sharpen,
    Blur,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "STABLE" => Ok(Regime::Stable),
            "BLOWUP" => Ok(Regime::Blowup),
            "DRIFT" => Ok(Regime::Drift),
            "SHARPEN" => Ok(Regime::Sharpen),
            "BLUR" => Ok(Regime::Blur),
            other => Err(Error::InvalidConfig(format!("unknown regime `{other}`"))),
        }
    }
}

/// One value per wavenumber class. `gap` covers the 1000-5000 km
/// wavelengths that belong to no band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandValues {
    pub large: f64,
    pub gap: f64,
    pub medium: f64,
    pub small: f64,
}

impl BandValues {
    pub const fn splat(x: f64) -> Self {
        BandValues {
            large: x,
            gap: x,
            medium: x,
            small: x,
        }
    }

    pub fn get(&self, class: Option<Band>) -> f64 {
        match class {
            Some(Band::Large) => self.large,
            None => self.gap,
            Some(Band::Medium) => self.medium,
            Some(Band::Small) => self.small,
        }
    }

    pub fn set(&mut self, class: Option<Band>, x: f64) {
        match class {
            Some(Band::Large) => self.large = x,
            None => self.gap = x,
            Some(Band::Medium) => self.medium = x,
            Some(Band::Small) => self.small = x,
        }
    }

    fn all(&self) -> [f64; 4] {
        [self.large, self.gap, self.medium, self.small]
    }

    fn zip(&self, other: &BandValues, f: impl Fn(f64, f64) -> f64) -> BandValues {
        BandValues {
            large: f(self.large, other.large),
            gap: f(self.gap, other.gap),
            medium: f(self.medium, other.medium),
            small: f(self.small, other.small),
        }
    }
}

/// Pixel standard deviation per band of the reference climate used by the
/// presets.
pub const CLIMATE_STD: BandValues = BandValues {
    large: 1.0,
    gap: 1.0,
    medium: 0.3,
    small: 0.1,
};

/// Per-step gains of the reference climate.
pub const STABLE_GAINS: BandValues = BandValues {
    large: 0.985,
    gap: 0.8,
    medium: 0.8,
    small: 0.9,
};

/// Generator parameters. They double as ground truth for detector checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegimeConfig {
    pub regime: Regime,
    pub n_lat: usize,
    pub n_lon: usize,
    pub variables: Vec<String>,
    /// held constant by the adapter, never stepped
    pub static_variables: Vec<String>,
    pub start_time: DateTime<Utc>,
    /// per-step multipliers of each wavenumber class
    pub gains: BandValues,
    /// pixel standard deviation of the noise injected per step in each band
    pub noise: BandValues,
    /// pixel standard deviation per band of the initial field
    pub initial_std: BandValues,
    /// equilibrium amplitude of the planetary pattern
    pub seasonal_amplitude: f64,
    /// relative seasonal modulation of the pattern amplitude
    pub seasonal_modulation: f64,
    /// e-folding time of the forcing amplitude (DRIFT)
    pub tau_days: Option<f64>,
    /// day the unstable band switches to gain 1 + delta (BLOWUP)
    pub onset_days: Option<f64>,
    /// growth rate per step (BLOWUP), or the upper bound on the small-band
    /// gain excess (SHARPEN)
    pub delta: Option<f64>,
    pub blowup_band: Band,
    /// cap on small-band coefficient amplitude (SHARPEN)
    pub cap: Option<f64>,
    /// cap on every coefficient amplitude, keeping blown-up runs finite
    pub saturation: f64,
    pub seed: u64,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        RegimeConfig::preset(Regime::Stable)
    }
}

fn injection(climate: BandValues, gains: BandValues) -> BandValues {
    climate.zip(&gains, |s, g| s * (1.0 - g * g).max(0.0).sqrt())
}

impl RegimeConfig {
    /// Default parameters of each regime on a 16 x 360 grid.
    pub fn preset(regime: Regime) -> Self {
        let stable_noise = injection(CLIMATE_STD, STABLE_GAINS);
        let mut cfg = RegimeConfig {
            regime,
            n_lat: 16,
            n_lon: 360,
            variables: vec!["T2m".into()],
            static_variables: Vec::new(),
            start_time: Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(),
            gains: STABLE_GAINS,
            noise: stable_noise,
            initial_std: CLIMATE_STD,
            seasonal_amplitude: 4.75,
            seasonal_modulation: 0.05,
            tau_days: None,
            onset_days: None,
            delta: None,
            blowup_band: Band::Medium,
            cap: None,
            saturation: 1e12,
            seed: 0,
        };
        match regime {
            Regime::Stable => {}
            Regime::Drift => cfg.tau_days = Some(100.0),
            Regime::Blowup => {
                // the unstable band starts far below the noise of the extremes
                cfg.onset_days = Some(150.0);
                cfg.delta = Some(0.1);
                let seed_std = 1e-3;
                cfg.initial_std.medium = seed_std;
                cfg.noise.medium = seed_std * (1.0 - STABLE_GAINS.medium.powi(2)).sqrt();
            }
            Regime::Sharpen => {
                // Damped like STABLE everywhere except the small band, which
                // grows until the clamp holds it at an elevated plateau.
                cfg.gains.small = 1.01;
                cfg.delta = Some(0.01);
                let m = band_modes(Band::Small, &cfg.grid().expect("preset grid"));
                cfg.cap = Some(5.0 * CLIMATE_STD.small / (m as f64).sqrt());
            }
            Regime::Blur => {
                cfg.gains = BandValues {
                    large: 0.9995,
                    gap: 0.5,
                    medium: 0.5,
                    small: 0.8,
                };
                cfg.noise.large = injection(CLIMATE_STD, cfg.gains).large;
            }
        }
        cfg
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::cell_centered(self.n_lat, self.n_lon)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_lat == 0 || self.n_lon < 4 {
            return bad(format!("grid {}x{} too small", self.n_lat, self.n_lon));
        }
        if self.variables.is_empty() {
            return bad("no variables".into());
        }
        let nonneg = |v: &BandValues| v.all().iter().all(|x| x.is_finite() && *x >= 0.0);
        if !nonneg(&self.gains) || !nonneg(&self.noise) || !nonneg(&self.initial_std) {
            return bad("gains, noise and initial_std must be finite and non-negative".into());
        }
        if !self.seasonal_amplitude.is_finite() || !self.seasonal_modulation.is_finite() {
            return bad("seasonal parameters must be finite".into());
        }
        if !(self.saturation > 0.0) {
            return bad("saturation must be positive".into());
        }
        let all_sub_unit = self.gains.all().iter().all(|g| *g <= 1.0);
        match self.regime {
            Regime::Stable | Regime::Blur | Regime::Drift | Regime::Blowup if !all_sub_unit => {
                bad(format!("{:?} requires every gain <= 1", self.regime))
            }
            Regime::Drift if !self.tau_days.is_some_and(|t| t > 0.0) => bad("DRIFT needs tau_days > 0".into()),
            Regime::Blowup if !self.delta.is_some_and(|d| d > 0.0) => bad("BLOWUP needs delta > 0".into()),
            Regime::Blowup if !self.onset_days.is_some_and(|t| t >= 0.0) => bad("BLOWUP needs onset_days >= 0".into()),
            Regime::Sharpen => {
                let g = self.gains.small;
                let upper = 1.0 + self.delta.unwrap_or(f64::INFINITY);
                if !(g > 1.0 && g <= upper) {
                    return bad(format!("SHARPEN needs 1 < g_small <= 1 + delta, got {g}"));
                }
                if !self.cap.is_some_and(|c| c > 0.0) {
                    return bad("SHARPEN needs a positive cap".into());
                }
                if ![self.gains.large, self.gains.gap, self.gains.medium]
                    .iter()
                    .all(|g| *g <= 1.0)
                {
                    return bad("SHARPEN amplifies only the small band".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let cfg: RegimeConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn days_since_start(&self, clock: DateTime<Utc>) -> f64 {
        (clock - self.start_time).num_milliseconds() as f64 / (1000.0 * SECONDS_PER_DAY as f64)
    }

    /// Gains in force at `clock`.
    pub fn gains_at(&self, clock: DateTime<Utc>) -> BandValues {
        let mut g = self.gains;
        if let (Regime::Blowup, Some(t0), Some(delta)) = (self.regime, self.onset_days, self.delta) {
            if self.days_since_start(clock) >= t0 {
                g.set(Some(self.blowup_band), 1.0 + delta);
            }
        }
        g
    }

    /// Pattern amplitude targeted by the forcing at `clock`.
    pub fn amplitude_at(&self, clock: DateTime<Utc>) -> f64 {
        let decay = match (self.regime, self.tau_days) {
            (Regime::Drift, Some(tau)) => (-self.days_since_start(clock) / tau).exp(),
            _ => 1.0,
        };
        let phase = 2.0 * PI * fractional_day_of_year(clock) / SEASON_DAYS;
        self.seasonal_amplitude * decay * (1.0 + self.seasonal_modulation * phase.sin())
    }
}

/// Zero-based day of year with the time of day as a fraction.
pub fn fractional_day_of_year(t: DateTime<Utc>) -> f64 {
    t.ordinal0() as f64 + t.num_seconds_from_midnight() as f64 / SECONDS_PER_DAY as f64
}

/// Real degrees of freedom a band holds in one row: two per complex
/// wavenumber, one for the mean and the Nyquist term.
fn band_modes(band: Band, grid: &GridSpec) -> usize {
    class_modes(Some(band), grid)
}

fn class_modes(class: Option<Band>, grid: &GridSpec) -> usize {
    let n = grid.n_lon();
    (0..=n / 2)
        .filter(|k| band_of(*k, grid) == class)
        .map(|k| if k == 0 || 2 * k == n { 1 } else { 2 })
        .sum()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64, key: i64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ splitmix(stream)) ^ key as u64))
}

const INIT_KEY: i64 = i64::MIN;

/// Planned transforms and per-wavenumber tables for one configuration.
#[derive(Clone)]
pub struct SynthEngine {
    cfg: RegimeConfig,
    grid: GridSpec,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    class: Vec<Option<Band>>,
    cos_lat: Vec<f64>,
    cos_lon: Vec<f64>,
}

impl std::fmt::Debug for SynthEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SynthEngine").field("cfg", &self.cfg).finish()
    }
}

impl SynthEngine {
    pub fn new(cfg: &RegimeConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let n = grid.n_lon();
        let mut planner = FftPlanner::new();
        Ok(SynthEngine {
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            class: (0..=n / 2).map(|k| band_of(k, &grid)).collect(),
            cos_lat: grid.lats().iter().map(|l| l.to_radians().cos()).collect(),
            cos_lon: grid.lons().iter().map(|l| l.to_radians().cos()).collect(),
            grid,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &RegimeConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Per-coefficient variance that spreads pixel variance `std^2` evenly
    /// over the modes of each class.
    fn mode_variance(&self, std: &BandValues) -> Vec<f64> {
        let modes = |c: Option<Band>| class_modes(c, &self.grid).max(1) as f64;
        self.class.iter().map(|c| std.get(*c).powi(2) / modes(*c)).collect()
    }

    /// Add Hermitian complex noise with per-wavenumber variance `var` to a
    /// full coefficient row.
    fn add_noise(&self, coeffs: &mut [Complex64], var: &[f64], rng: &mut ChaCha8Rng) {
        let n = coeffs.len();
        for (k, v) in var.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            if k == 0 || 2 * k == n {
                let z: f64 = rng.sample(StandardNormal);
                coeffs[k].re += v.sqrt() * z;
            } else {
                let s = (v / 2.0).sqrt();
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                let z = Complex64::new(s * re, s * im);
                coeffs[k] += z;
                coeffs[n - k] += z.conj();
            }
        }
    }

    fn forcing(&self, clock: DateTime<Utc>, gain_large: f64) -> f64 {
        (1.0 - gain_large).max(0.0) * self.cfg.amplitude_at(clock)
    }

    /// Advance one field by one step. `stream` separates the noise of
    /// different variables or ensemble members.
    pub fn step_field(&self, field: &mut Array2<f64>, clock: DateTime<Utc>, stream: u64) -> Result<()> {
        let (n_lat, n_lon) = field.dim();
        if n_lat != self.grid.n_lat() || n_lon != self.grid.n_lon() {
            return Err(Error::InvalidShape(format!(
                "field is {n_lat}x{n_lon}, generator grid is {}x{}",
                self.grid.n_lat(),
                self.grid.n_lon()
            )));
        }
        let gains = self.cfg.gains_at(clock);
        let g: Vec<f64> = self.class.iter().map(|c| gains.get(*c)).collect();
        let var = self.mode_variance(&self.cfg.noise);
        let f = self.forcing(clock, gains.large);
        let cap = match self.cfg.regime {
            Regime::Sharpen => self.cfg.cap,
            _ => None,
        };
        let mut rng = stream_rng(self.cfg.seed, stream, clock.timestamp());
        let mut buf = vec![Complex64::new(0.0, 0.0); n_lon];
        let mut scratch = vec![
            Complex64::new(0.0, 0.0);
            self.fwd
                .get_inplace_scratch_len()
                .max(self.inv.get_inplace_scratch_len())
        ];
        let scale = 1.0 / n_lon as f64;

        for (i, mut row) in field.outer_iter_mut().enumerate() {
            for (b, x) in buf.iter_mut().zip(row.iter()) {
                *b = Complex64::new(*x, 0.0);
            }
            self.fwd.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..=n_lon / 2 {
                buf[k] *= g[k] * scale;
                if k != 0 && 2 * k != n_lon {
                    buf[n_lon - k] *= g[k] * scale;
                }
            }
            self.add_noise(&mut buf, &var, &mut rng);
            for k in 0..=n_lon / 2 {
                let limit = match (cap, self.class[k]) {
                    (Some(c), Some(Band::Small)) => c.min(self.cfg.saturation),
                    _ => self.cfg.saturation,
                };
                let a = buf[k].norm();
                if a > limit {
                    let s = limit / a;
                    buf[k] *= s;
                    if k != 0 && 2 * k != n_lon {
                        buf[n_lon - k] *= s;
                    }
                }
            }
            self.inv.process_with_scratch(&mut buf, &mut scratch);
            let fl = f * self.cos_lat[i];
            for (j, (x, b)) in row.iter_mut().zip(&buf).enumerate() {
                *x = b.re + fl * self.cos_lon[j];
            }
        }
        Ok(())
    }

    /// Initial field: spectral noise at `initial_std` plus the forced pattern
    /// in equilibrium with the clock.
    pub fn initial_field(&self, clock: DateTime<Utc>, stream: u64) -> Array2<f64> {
        let (n_lat, n_lon) = (self.grid.n_lat(), self.grid.n_lon());
        let var = self.mode_variance(&self.cfg.initial_std);
        let amp = self.cfg.amplitude_at(clock);
        let mut rng = stream_rng(self.cfg.seed, stream, INIT_KEY);
        let mut field = Array2::zeros((n_lat, n_lon));
        let mut buf = vec![Complex64::new(0.0, 0.0); n_lon];
        for (i, mut row) in field.outer_iter_mut().enumerate() {
            buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
            self.add_noise(&mut buf, &var, &mut rng);
            self.inv.process(&mut buf);
            for (j, (x, b)) in row.iter_mut().zip(&buf).enumerate() {
                *x = b.re + amp * self.cos_lat[i] * self.cos_lon[j];
            }
        }
        field
    }
}

/// One step of a single field with the noise stream of variable 0.
pub fn synth_step(state: &Array2<f64>, clock: DateTime<Utc>, cfg: &RegimeConfig) -> Result<Array2<f64>> {
    let engine = SynthEngine::new(cfg)?;
    let mut next = state.clone();
    engine.step_field(&mut next, clock, 0)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupLabel {
    pub onset_days: f64,
    pub delta: f64,
    pub band: Band,
    /// typical extreme of the unstable band at onset, including the noise it
    /// will go on to amplify
    pub seed_amplitude: f64,
    /// fluctuation scale of the global extremes before onset
    pub noise_floor: f64,
    pub emergence_steps: u64,
    pub expected_day: f64,
    /// detections inside `[onset, expected + 5]` days count as correct
    pub window: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftLabel {
    pub tau_days: f64,
    /// large-band energy the run loses once the forced wave has fully decayed
    pub band_large_amplitude: f64,
}

impl DriftLabel {
    /// Day the remaining forced energy falls to `multiplier * range`.
    pub fn remaining_crossing(&self, multiplier: f64, range: f64) -> Option<f64> {
        let x = multiplier * range / self.band_large_amplitude;
        (x > 0.0 && x < 1.0).then(|| -self.tau_days * x.ln())
    }

    /// Day the lost forced energy first exceeds `multiplier * range`, which
    /// is when the envelope test starts failing.
    pub fn lost_crossing(&self, multiplier: f64, range: f64) -> Option<f64> {
        let x = multiplier * range / self.band_large_amplitude;
        (x > 0.0 && x < 1.0).then(|| -self.tau_days * (1.0 - x).ln())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallScaleLabel {
    /// steady small-band amplitude over the initial one
    pub expected_ratio_vs_self: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabels {
    pub regime: Regime,
    pub horizon_days: f64,
    pub expect_blowup: bool,
    pub expect_seasonality_loss: bool,
    pub blowup: Option<BlowupLabel>,
    pub drift: Option<DriftLabel>,
    pub small_scale: Option<SmallScaleLabel>,
}

impl GroundTruthLabels {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Stationary pixel standard deviation per band under the run's own gains;
/// bands with gain >= 1 report their initial level.
fn stationary_std(cfg: &RegimeConfig) -> BandValues {
    BandValues {
        large: stationary(cfg.noise.large, cfg.gains.large, cfg.initial_std.large),
        gap: stationary(cfg.noise.gap, cfg.gains.gap, cfg.initial_std.gap),
        medium: stationary(cfg.noise.medium, cfg.gains.medium, cfg.initial_std.medium),
        small: stationary(cfg.noise.small, cfg.gains.small, cfg.initial_std.small),
    }
}

fn stationary(noise: f64, gain: f64, fallback: f64) -> f64 {
    if gain < 1.0 {
        noise / (1.0 - gain * gain).sqrt()
    } else {
        fallback
    }
}

/// Mean modulus of `nu + s (x + i y)` with x, y standard normal, by
/// quadrature over +-8 s.
fn rice_mean(nu: f64, s: f64) -> f64 {
    if s == 0.0 {
        return nu.abs();
    }
    const N: usize = 321;
    let h = 16.0 / (N - 1) as f64;
    let phi: Vec<f64> = (0..N)
        .map(|i| {
            let z = -8.0 + i as f64 * h;
            (-0.5 * z * z).exp() / (2.0 * PI).sqrt() * h
        })
        .collect();
    let mut acc = 0.0;
    for (i, pi) in phi.iter().enumerate() {
        let x = nu + s * (-8.0 + i as f64 * h);
        for (j, pj) in phi.iter().enumerate() {
            let y = s * (-8.0 + j as f64 * h);
            acc += pi * pj * x.hypot(y);
        }
    }
    acc
}

/// Closed-form expectations for a configuration.
pub fn labels_for(cfg: &RegimeConfig, horizon_days: f64, step_seconds: i64) -> Result<GroundTruthLabels> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let steps_per_day = SECONDS_PER_DAY as f64 / step_seconds as f64;
    let sqrt_2ln_n = (2.0 * (grid.n_cells() as f64).ln()).sqrt();

    let blowup = match cfg.regime {
        Regime::Blowup => {
            let (t0, delta) = (cfg.onset_days.unwrap(), cfg.delta.unwrap());
            let band = cfg.blowup_band;
            let class = Some(band);
            let stat = stationary_std(cfg);
            let sigma_total = stat.all().iter().map(|s| s * s).sum::<f64>().sqrt();
            let eta = cfg.noise.get(class);
            let a_pix = (stat.get(class).powi(2) + eta * eta / ((1.0 + delta).powi(2) - 1.0)).sqrt();
            let seed_amplitude = a_pix * sqrt_2ln_n;
            let noise_floor = sigma_total / sqrt_2ln_n;
            let steps = ((10.0 * noise_floor / seed_amplitude).ln() / (1.0 + delta).ln())
                .ceil()
                .max(0.0) as u64;
            let expected_day = t0 + steps as f64 / steps_per_day;
            Some(BlowupLabel {
                onset_days: t0,
                delta,
                band,
                seed_amplitude,
                noise_floor,
                emergence_steps: steps,
                expected_day,
                window: (t0, expected_day + 5.0),
            })
        }
        _ => None,
    };

    let drift = match cfg.regime {
        Regime::Drift => {
            let w = latitude_weights(&grid);
            let n_large = band_wavenumbers(Band::Large, &grid).len() as f64;
            // the planetary wave sits at k = 1 on top of stationary noise, so
            // the large-band statistic (a mean of moduli) loses the Rice mean
            // of that coefficient down to the Rayleigh mean of the noise
            let var = cfg.noise.large.powi(2)
                / (1.0 - cfg.gains.large.powi(2)).max(f64::EPSILON)
                / class_modes(Some(Band::Large), &grid) as f64;
            let s = (var / 2.0).sqrt();
            let floor = rice_mean(0.0, s);
            let lost: f64 = grid
                .lats()
                .iter()
                .zip(&w)
                .map(|(lat, wi)| {
                    let nu = cfg.seasonal_amplitude.abs() * lat.to_radians().cos() / 2.0;
                    wi * (rice_mean(nu, s) - floor)
                })
                .sum::<f64>()
                / n_large;
            Some(DriftLabel {
                tau_days: cfg.tau_days.unwrap(),
                band_large_amplitude: lost,
            })
        }
        _ => None,
    };

    let small_scale = match cfg.regime {
        Regime::Blur => Some(SmallScaleLabel {
            expected_ratio_vs_self: stationary_std(cfg).small / cfg.initial_std.small,
        }),
        Regime::Sharpen => {
            let m = band_modes(Band::Small, &grid) as f64;
            let initial_mean_amp = cfg.initial_std.small / m.sqrt() * PI.sqrt() / 2.0;
            Some(SmallScaleLabel {
                expected_ratio_vs_self: cfg.cap.unwrap() / initial_mean_amp,
            })
        }
        _ => None,
    };

    Ok(GroundTruthLabels {
        regime: cfg.regime,
        horizon_days,
        expect_blowup: blowup.as_ref().is_some_and(|b| b.expected_day <= horizon_days),
        expect_seasonality_loss: cfg.regime == Regime::Drift,
        blowup,
        drift,
        small_scale,
    })
}

/// Run the generator from a seeded initial field for `horizon_days`. The
/// initial field is the first frame.
pub fn generate(
    cfg: &RegimeConfig,
    horizon_days: f64,
    step_seconds: i64,
) -> Result<(RolloutSeries, GroundTruthLabels)> {
    if horizon_days < 60.0 {
        return Err(Error::InvalidConfig(format!("horizon {horizon_days} days is below 60")));
    }
    if step_seconds <= 0 {
        return Err(Error::InvalidConfig("step_seconds must be positive".into()));
    }
    if let (Regime::Drift, Some(tau)) = (cfg.regime, cfg.tau_days) {
        if tau >= horizon_days {
            return Err(Error::InvalidConfig(format!(
                "DRIFT needs tau ({tau}) below the horizon"
            )));
        }
    }
    let engine = SynthEngine::new(cfg)?;
    let n_steps = (horizon_days * SECONDS_PER_DAY as f64 / step_seconds as f64).round() as usize;
    let (n_lat, n_lon) = (engine.grid.n_lat(), engine.grid.n_lon());
    let step = chrono::Duration::seconds(step_seconds);

    let per_var: Vec<Array3<f32>> = cfg
        .variables
        .par_iter()
        .enumerate()
        .map(|(v, _)| -> Result<Array3<f32>> {
            let mut out = Array3::<f32>::zeros((n_steps, n_lat, n_lon));
            let mut clock = cfg.start_time;
            let mut field = engine.initial_field(clock, v as u64);
            out.index_axis_mut(Axis(0), 0).assign(&field.mapv(|x| x as f32));
            for t in 1..n_steps {
                engine.step_field(&mut field, clock, v as u64)?;
                clock += step;
                out.index_axis_mut(Axis(0), t).assign(&field.mapv(|x| x as f32));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut data = Array4::<f32>::zeros((n_steps, cfg.variables.len(), n_lat, n_lon));
    for (v, block) in per_var.into_iter().enumerate() {
        data.index_axis_mut(Axis(1), v).assign(&block);
    }
    let series = RolloutSeries::new(
        engine.grid.clone(),
        cfg.variables.clone(),
        cfg.start_time,
        step_seconds,
        data,
    )?;
    Ok((series, labels_for(cfg, horizon_days, step_seconds)?))
}

/// `generate` with the default six-hour step.
pub fn generate_default(cfg: &RegimeConfig, horizon_days: f64) -> Result<(RolloutSeries, GroundTruthLabels)> {
    generate(cfg, horizon_days, DEFAULT_STEP_SECONDS)
}

/// The generator behind the model-adapter contract. Its noise depends only
/// on the seed, the variable and the clock, so two rollouts that see the
/// same clocks share the same noise.
#[derive(Debug, Clone)]
pub struct SynthAdapter {
    engine: SynthEngine,
    names: Vec<String>,
}

impl SynthAdapter {
    pub fn new(cfg: &RegimeConfig) -> Result<Self> {
        let mut names = cfg.variables.clone();
        names.extend(cfg.static_variables.iter().cloned());
        Ok(SynthAdapter {
            engine: SynthEngine::new(cfg)?,
            names,
        })
    }

    pub fn engine(&self) -> &SynthEngine {
        &self.engine
    }

    /// Seeded initial state for every variable; static variables hold a
    /// fixed smooth field.
    pub fn initial_state(&self, clock: DateTime<Utc>) -> Array3<f32> {
        let cfg = self.engine.config();
        let (n_lat, n_lon) = (self.engine.grid.n_lat(), self.engine.grid.n_lon());
        let mut out = Array3::zeros((self.names.len(), n_lat, n_lon));
        for v in 0..cfg.variables.len() {
            out.index_axis_mut(Axis(0), v)
                .assign(&self.engine.initial_field(clock, v as u64).mapv(|x| x as f32));
        }
        for s in 0..cfg.static_variables.len() {
            let lats = self.engine.grid.lats().to_vec();
            let lons = self.engine.grid.lons().to_vec();
            let f = Array2::from_shape_fn((n_lat, n_lon), |(i, j)| {
                (lats[i].to_radians().sin() + 0.5 * (2.0 * lons[j].to_radians()).sin() * (s + 1) as f64) as f32
            });
            out.index_axis_mut(Axis(0), cfg.variables.len() + s).assign(&f);
        }
        out
    }
}

impl ModelAdapter for SynthAdapter {
    fn variables(&self) -> &[String] {
        &self.names
    }

    fn static_variables(&self) -> &[String] {
        &self.engine.config().static_variables
    }

    fn grid(&self) -> &GridSpec {
        &self.engine.grid
    }

    fn supports_time_shift(&self) -> bool {
        true
    }

    fn step(&mut self, state: ArrayView3<'_, f32>, clock: DateTime<Utc>) -> Result<Array3<f32>> {
        let n_dyn = self.engine.config().variables.len();
        if state.dim().0 != self.names.len() {
            return Err(Error::InvalidShape(format!(
                "state has {} variables, adapter expects {}",
                state.dim().0,
                self.names.len()
            )));
        }
        let mut next = state.to_owned();
        for v in 0..n_dyn {
            let mut field = state.index_axis(Axis(0), v).mapv(|x| x as f64);
            self.engine.step_field(&mut field, clock, v as u64)?;
            next.index_axis_mut(Axis(0), v).assign(&field.mapv(|x| x as f32));
        }
        Ok(next)
    }
}
