//! Stability detectors: blow-up, loss of seasonality, small-scale energy
//! ratios, seasonal-cycle RMSE, and aggregation over several initialisations.

use std::fmt;

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::climatology::{build_envelope, day_of_year, ClimatologyEnvelope};
use crate::error::{Error, Result};
use crate::gridio::{cell_weights, spatial_extremes, RolloutSeries, SECONDS_PER_DAY};
use crate::spectra::{spectrum_series, Aggregation, Band, SpectrumSeries};

/// A day count that may be censored at the rollout horizon.
///
/// Serialises as a bare number, or as `{"censored": true, "horizon": H}`
/// when nothing was detected within `H` days.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "DaysRepr", into = "DaysRepr")]
pub enum Days {
    At(f64),
    Censored { horizon: f64 },
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DaysRepr {
    At(f64),
    Censored { censored: bool, horizon: f64 },
}

impl From<DaysRepr> for Days {
    fn from(r: DaysRepr) -> Self {
        match r {
            DaysRepr::At(d) => Days::At(d),
            DaysRepr::Censored { horizon, .. } => Days::Censored { horizon },
        }
    }
}

impl From<Days> for DaysRepr {
    fn from(d: Days) -> Self {
        match d {
            Days::At(d) => DaysRepr::At(d),
            Days::Censored { horizon } => DaysRepr::Censored {
                censored: true,
                horizon,
            },
        }
    }
}

impl Days {
    pub fn day(&self) -> Option<f64> {
        match self {
            Days::At(d) => Some(*d),
            Days::Censored { .. } => None,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, Days::Censored { .. })
    }

    /// The detected day, or the horizon for censored entries.
    pub fn value_or_horizon(&self) -> f64 {
        match self {
            Days::At(d) => *d,
            Days::Censored { horizon } => *horizon,
        }
    }
}

impl fmt::Display for Days {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Days::At(d) => write!(f, "{d}"),
            Days::Censored { horizon } => write!(f, ">{horizon}"),
        }
    }
}

// ---------------------------------------------------------------- blow-up

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlowupParams {
    pub smoothing_days: f64,
    pub window_days: f64,
    pub r2_threshold: f64,
    pub stride_days: f64,
    /// minimum fitted growth factor across one window
    pub min_growth: f64,
}

impl Default for BlowupParams {
    fn default() -> Self {
        BlowupParams {
            smoothing_days: 4.0,
            window_days: 30.0,
            r2_threshold: 0.9,
            stride_days: 1.0,
            min_growth: 10.0,
        }
    }
}

impl BlowupParams {
    fn validate(&self) -> Result<()> {
        let ok = self.smoothing_days > 0.0
            && self.window_days > 0.0
            && self.stride_days > 0.0
            && (0.0..1.0).contains(&self.r2_threshold)
            && self.min_growth >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "blow-up parameters out of range: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extreme {
    Min,
    Max,
}

impl fmt::Display for Extreme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Extreme::Min => "min",
            Extreme::Max => "max",
        })
    }
}

/// The window that triggered a blow-up flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowFit {
    /// start of the window, days from the first sample
    pub day: f64,
    pub r2: f64,
    /// slope of log-deviation per day
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupResult {
    pub variable: String,
    pub day: Days,
    pub statistic: Option<Extreme>,
    pub r2: Option<f64>,
    pub slope: Option<f64>,
}

/// Log-deviation after centring on the first window and trailing smoothing.
pub fn blowup_transform(series: &[f64], steps_per_day: f64, params: &BlowupParams) -> Result<Vec<f64>> {
    params.validate()?;
    let w = window_steps(params.window_days, steps_per_day);
    if series.len() < w {
        return Err(Error::SeriesTooShort {
            needed: w,
            got: series.len(),
        });
    }
    if let Some(i) = series.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidShape(format!("non-finite value at step {i}")));
    }
    let first = &series[..w];
    let mean = first.iter().sum::<f64>() / w as f64;
    let std = (first.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w as f64).sqrt();
    let eps = 1e-9 * std.max(1e-12);
    let dev: Vec<f64> = series.iter().map(|y| (y - mean).abs().max(eps)).collect();

    let s = window_steps(params.smoothing_days, steps_per_day).max(1);
    Ok((0..dev.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(s);
            let m = dev[lo..=t].iter().sum::<f64>() / (t + 1 - lo) as f64;
            m.ln()
        })
        .collect())
}

fn window_steps(days: f64, steps_per_day: f64) -> usize {
    ((days * steps_per_day).round() as usize).max(2)
}

/// Ordinary least squares of `y` on `x`: (slope, R²). A flat `y` has R² = 0.
fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let r2 = if syy <= f64::EPSILON * n * my.abs().max(1.0) {
        0.0
    } else {
        (sxy * sxy / (sxx * syy)).min(1.0)
    };
    (slope, r2)
}

/// First window of one extreme series that shows sustained exponential growth.
pub fn first_growth_window(series: &[f64], steps_per_day: f64, params: &BlowupParams) -> Result<Option<WindowFit>> {
    let logs = blowup_transform(series, steps_per_day, params)?;
    let w = window_steps(params.window_days, steps_per_day);
    let stride = ((params.stride_days * steps_per_day).round() as usize).max(1);
    let x: Vec<f64> = (0..w).map(|i| i as f64 / steps_per_day).collect();
    let mut start = 0;
    while start + w <= logs.len() {
        let (slope, r2) = ols(&x, &logs[start..start + w]);
        if r2 > params.r2_threshold && slope > 0.0 && (slope * params.window_days).exp() >= params.min_growth {
            return Ok(Some(WindowFit {
                day: start as f64 / steps_per_day,
                r2,
                slope,
            }));
        }
        start += stride;
    }
    Ok(None)
}

/// Blow-up day from the global minimum and maximum series; the earlier of
/// the two detections wins.
pub fn detect_blowup(
    min: &[f64],
    max: &[f64],
    steps_per_day: f64,
    params: &BlowupParams,
) -> Result<Option<(Extreme, WindowFit)>> {
    let lo = first_growth_window(min, steps_per_day, params)?.map(|f| (Extreme::Min, f));
    let hi = first_growth_window(max, steps_per_day, params)?.map(|f| (Extreme::Max, f));
    Ok(match (lo, hi) {
        (Some(a), Some(b)) => Some(if b.1.day < a.1.day { b } else { a }),
        (a, b) => a.or(b),
    })
}

/// Blow-up detection on variable `name` of a rollout.
pub fn blowup_for(r: &RolloutSeries, name: &str, params: &BlowupParams) -> Result<BlowupResult> {
    let (min, max) = spatial_extremes(r, name)?;
    let hit = detect_blowup(&min, &max, r.steps_per_day(), params)?;
    Ok(match hit {
        Some((stat, fit)) => BlowupResult {
            variable: name.to_string(),
            day: Days::At(fit.day),
            statistic: Some(stat),
            r2: Some(fit.r2),
            slope: Some(fit.slope),
        },
        None => BlowupResult {
            variable: name.to_string(),
            day: Days::Censored {
                horizon: r.horizon_days(),
            },
            statistic: None,
            r2: None,
            slope: None,
        },
    })
}

// ------------------------------------------------------------ seasonality

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeasonalityParams {
    /// multiple of the climatological range a deviation must exceed
    pub multiplier: f64,
    /// consecutive violating days required
    pub run_days: usize,
}

impl Default for SeasonalityParams {
    fn default() -> Self {
        SeasonalityParams {
            multiplier: 2.0,
            run_days: 45,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalityResult {
    pub variable: String,
    pub day: Days,
    pub multiplier: f64,
    pub run_days: usize,
    /// length of the violating run that starts at `day`
    pub run_length: Option<usize>,
}

/// Whether the day at `date` with value `x` lies outside the tolerated band.
pub fn violates(x: f64, date: NaiveDate, envelope: &ClimatologyEnvelope, multiplier: f64) -> bool {
    let doy = day_of_year(date);
    (x - envelope.mean_on(doy)).abs() > multiplier * envelope.range_on(doy)
}

/// First day (index into `daily`) that starts a run of at least `run_days`
/// violations, and the length of that run.
pub fn detect_seasonality_loss(
    daily: &[(NaiveDate, f64)],
    envelope: &ClimatologyEnvelope,
    params: &SeasonalityParams,
) -> Result<Option<(usize, usize)>> {
    if params.run_days == 0 || !(params.multiplier >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "seasonality parameters out of range: {params:?}"
        )));
    }
    for (i, pair) in daily.windows(2).enumerate() {
        if pair[1].0 != pair[0].0 + Duration::days(1) {
            return Err(Error::InvalidShape(format!(
                "daily series is not consecutive at index {}: {} then {}",
                i + 1,
                pair[0].0,
                pair[1].0
            )));
        }
    }
    let flags: Vec<bool> = daily
        .iter()
        .map(|(d, x)| violates(*x, *d, envelope, params.multiplier))
        .collect();
    let mut i = 0;
    while i < flags.len() {
        if !flags[i] {
            i += 1;
            continue;
        }
        let run = flags[i..].iter().take_while(|f| **f).count();
        if run >= params.run_days {
            return Ok(Some((i, run)));
        }
        i += run;
    }
    Ok(None)
}

/// Seasonality-loss detection from the daily large-band energy of `name`.
pub fn seasonality_for(
    r: &RolloutSeries,
    name: &str,
    envelope: &ClimatologyEnvelope,
    params: &SeasonalityParams,
) -> Result<SeasonalityResult> {
    let spec = spectrum_series(r, name, Aggregation::Daily)?;
    let daily: Vec<(NaiveDate, f64)> = spec
        .timestamps
        .iter()
        .map(|t| t.date_naive())
        .zip(spec.band_large.iter().copied())
        .collect();
    let hit = detect_seasonality_loss(&daily, envelope, params)?;
    let start_day = r.start_time().date_naive();
    Ok(SeasonalityResult {
        variable: name.to_string(),
        day: match hit {
            Some((i, _)) => Days::At((daily[i].0 - start_day).num_days() as f64),
            None => Days::Censored {
                horizon: r.horizon_days(),
            },
        },
        multiplier: params.multiplier,
        run_days: params.run_days,
        run_length: hit.map(|(_, n)| n),
    })
}

// ------------------------------------------------------------ small scale

pub const SMALL_SCALE_WINDOW_DAYS: i64 = 30;
pub const SELF_BASELINE_DAYS: i64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    LastDays,
    PreBlowup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallScaleResult {
    pub variable: String,
    pub ratio_vs_reference: f64,
    pub ratio_vs_self: f64,
    pub window: WindowKind,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    /// true when fewer than 30 days were available
    pub truncated: bool,
}

fn mean_in(spec: &SpectrumSeries, band: &[f64], from: DateTime<Utc>, to: DateTime<Utc>) -> Option<f64> {
    let (sum, n) = spec
        .timestamps
        .iter()
        .zip(band)
        .filter(|(t, _)| **t >= from && **t < to)
        .fold((0.0, 0usize), |(s, n), (_, x)| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Small-band energy of a prediction relative to the reference over the same
/// calendar window, and relative to the prediction's own first two days.
///
/// The window is the last 30 days, or the 30 days ending at `blowup_day`
/// (days after the prediction's first sample).
pub fn small_scale_ratios(
    prediction: &SpectrumSeries,
    reference: &SpectrumSeries,
    blowup_day: Option<f64>,
) -> Result<SmallScaleResult> {
    if prediction.is_empty() {
        return Err(Error::EmptyInput("prediction spectra".into()));
    }
    let pred = prediction.band(Band::Small)?;
    let refb = reference.band(Band::Small)?;
    let start = prediction.timestamps[0];
    let (kind, end) = match blowup_day {
        Some(d) => {
            let end = start + Duration::milliseconds((d * SECONDS_PER_DAY as f64 * 1000.0).round() as i64);
            (WindowKind::PreBlowup, end.min(prediction.end_time()))
        }
        None => (WindowKind::LastDays, prediction.end_time()),
    };
    let nominal = end - Duration::days(SMALL_SCALE_WINDOW_DAYS);
    let from = nominal.max(start);
    let truncated = nominal < start;

    let missing = |what: &str| Error::Mismatch(format!("no {what} spectra in window {from} .. {end}"));
    let p = mean_in(prediction, pred, from, end).ok_or_else(|| missing("prediction"))?;
    let q = mean_in(reference, refb, from, end).ok_or_else(|| missing("reference"))?;
    let base = mean_in(prediction, pred, start, start + Duration::days(SELF_BASELINE_DAYS))
        .expect("first sample lies in the baseline window");
    if q == 0.0 {
        return Err(Error::ZeroReference(format!(
            "{} small band over the window",
            reference.variable
        )));
    }
    if base == 0.0 {
        return Err(Error::ZeroReference(format!(
            "{} small band over the first two days",
            prediction.variable
        )));
    }
    Ok(SmallScaleResult {
        variable: prediction.variable.clone(),
        ratio_vs_reference: p / q,
        ratio_vs_self: p / base,
        window: kind,
        window_start: from,
        window_end: end,
        truncated,
    })
}

// ----------------------------------------------------- seasonal-cycle RMSE

fn month_start(year: i32, month: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(year, month, 1, 0, 0, 0).unwrap()
}

fn next_month(year: i32, month: u32) -> (i32, u32) {
    if month == 12 {
        (year + 1, 1)
    } else {
        (year, month + 1)
    }
}

/// Monthly-mean fields of one variable by calendar month; every month the
/// series touches must be fully covered, and all twelve months must occur
/// equally often.
fn monthly_climatology(r: &RolloutSeries, v: usize) -> Result<(Vec<(i32, u32)>, Vec<Vec<f64>>)> {
    let n_cells = r.grid().n_cells();
    let end = r.timestamp(r.n_times() - 1) + Duration::seconds(r.step_seconds());
    let mut sums = vec![vec![0.0f64; n_cells]; 12];
    let mut counts = [0usize; 12];
    let mut months: Vec<(i32, u32)> = Vec::new();
    for t in 0..r.n_times() {
        let ts = r.timestamp(t);
        let key = (ts.year(), ts.month());
        if months.last() != Some(&key) {
            let (ny, nm) = next_month(key.0, key.1);
            if month_start(key.0, key.1) < r.start_time() || month_start(ny, nm) > end {
                return Err(Error::IncompleteMonths(format!(
                    "{}-{:02} is only partly covered",
                    key.0, key.1
                )));
            }
            months.push(key);
        }
        let m = key.1 as usize - 1;
        counts[m] += 1;
        for (acc, x) in sums[m].iter_mut().zip(r.field(t, v).iter()) {
            *acc += *x as f64;
        }
    }
    let mut per_month = [0usize; 12];
    for (_, m) in &months {
        per_month[*m as usize - 1] += 1;
    }
    if per_month.iter().any(|c| *c != per_month[0]) || per_month[0] == 0 {
        return Err(Error::IncompleteMonths(format!(
            "calendar months are not covered equally often: {per_month:?}"
        )));
    }
    for (s, c) in sums.iter_mut().zip(counts) {
        s.iter_mut().for_each(|x| *x /= c as f64);
    }
    Ok((months, sums))
}

/// Latitude-weighted RMSE between the monthly-mean seasonal cycles of a
/// rollout and a reference covering the same whole years.
pub fn seasonal_cycle_rmse(rollout: &RolloutSeries, reference: &RolloutSeries, name: &str) -> Result<f64> {
    if rollout.grid() != reference.grid() {
        return Err(Error::Mismatch("rollout and reference grids differ".into()));
    }
    let a = rollout.checked_variable(name)?;
    let b = reference.checked_variable(name)?;
    let (ma, ca) = monthly_climatology(rollout, a)?;
    let (mb, cb) = monthly_climatology(reference, b)?;
    if ma != mb {
        return Err(Error::Mismatch("rollout and reference cover different months".into()));
    }
    let w = cell_weights(rollout.grid());
    let total: f64 = ca
        .iter()
        .zip(&cb)
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .zip(&w)
                .map(|((p, q), wc)| wc * (p - q).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok((total / 12.0).sqrt())
}

// ----------------------------------------------------------------- report

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub blowup: BlowupParams,
    pub seasonality: SeasonalityParams,
    /// restrict the envelope to reference years in this inclusive span
    pub envelope_years: Option<(i32, i32)>,
    /// limit the report to these variables; all shared ones otherwise
    pub variables: Option<Vec<String>>,
}

/// A metric that could not be computed, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell<T> {
    Value(T),
    Unavailable { unavailable: String },
}

impl<T> Cell<T> {
    pub fn value(&self) -> Option<&T> {
        match self {
            Cell::Value(v) => Some(v),
            Cell::Unavailable { .. } => None,
        }
    }

    fn from_result(r: Result<T>) -> Result<Self> {
        match r {
            Ok(v) => Ok(Cell::Value(v)),
            Err(e) if e.is_precondition() || matches!(e, Error::Mismatch(_)) => Ok(Cell::Unavailable {
                unavailable: e.to_string(),
            }),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableReport {
    pub variable: String,
    pub blowup: Cell<BlowupResult>,
    pub seasonality: Cell<SeasonalityResult>,
    pub small_scale: Cell<SmallScaleResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub run: String,
    pub start_time: DateTime<Utc>,
    pub horizon_days: f64,
    pub variables: Vec<VariableReport>,
}

impl StabilityReport {
    pub fn variable(&self, name: &str) -> Option<&VariableReport> {
        self.variables.iter().find(|v| v.variable == name)
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.variable.clone()).collect()
    }
}

fn shared_variables(prediction: &RolloutSeries, reference: &RolloutSeries, cfg: &ReportConfig) -> Result<Vec<String>> {
    let shared: Vec<String> = prediction
        .variables()
        .iter()
        .filter(|v| reference.variables().contains(v))
        .cloned()
        .collect();
    let chosen = match &cfg.variables {
        Some(list) => {
            for v in list {
                if !shared.contains(v) {
                    return Err(Error::UnknownVariable {
                        name: v.clone(),
                        available: shared.clone(),
                    });
                }
            }
            list.clone()
        }
        None => shared,
    };
    if chosen.is_empty() {
        return Err(Error::Mismatch("prediction and reference share no variables".into()));
    }
    Ok(chosen)
}

fn report_variable(
    prediction: &RolloutSeries,
    reference: &RolloutSeries,
    name: &str,
    cfg: &ReportConfig,
) -> Result<VariableReport> {
    let blowup = Cell::from_result(blowup_for(prediction, name, &cfg.blowup))?;

    let seasonality = Cell::from_result((|| {
        let mut daily = crate::climatology::daily_large_band(reference, name)?;
        if let Some((a, b)) = cfg.envelope_years {
            daily.retain(|(d, _)| (a..=b).contains(&d.year()));
        }
        let env = build_envelope(&daily, &format!("{name}:band_large"))?;
        seasonality_for(prediction, name, &env, &cfg.seasonality)
    })())?;

    let blowup_day = blowup.value().and_then(|b| b.day.day());
    let small_scale = Cell::from_result((|| {
        let p = spectrum_series(prediction, name, Aggregation::Daily)?;
        let q = spectrum_series(reference, name, Aggregation::Daily)?;
        small_scale_ratios(&p, &q, blowup_day)
    })())?;

    Ok(VariableReport {
        variable: name.to_string(),
        blowup,
        seasonality,
        small_scale,
    })
}

/// Run every detector on every shared variable. Metrics whose preconditions
/// fail (an unresolved band, a reference too short for an envelope) are
/// recorded as unavailable rather than aborting the report.
pub fn stability_report(
    run: &str,
    prediction: &RolloutSeries,
    reference: &RolloutSeries,
    cfg: &ReportConfig,
) -> Result<StabilityReport> {
    let names = shared_variables(prediction, reference, cfg)?;
    let variables = names
        .par_iter()
        .map(|n| report_variable(prediction, reference, n, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityReport {
        run: run.to_string(),
        start_time: prediction.start_time(),
        horizon_days: prediction.horizon_days(),
        variables,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    BlowupDays,
    SeasonalityDays,
    SmallScaleVsReference,
    SmallScaleVsSelf,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::BlowupDays,
        Metric::SeasonalityDays,
        Metric::SmallScaleVsReference,
        Metric::SmallScaleVsSelf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::BlowupDays => "blowup_days",
            Metric::SeasonalityDays => "seasonality_loss_days",
            Metric::SmallScaleVsReference => "small_scale_vs_reference",
            Metric::SmallScaleVsSelf => "small_scale_vs_self",
        }
    }

    /// Numeric value of this metric for one variable; censored days count as
    /// the horizon.
    pub fn extract(&self, v: &VariableReport) -> Option<f64> {
        match self {
            Metric::BlowupDays => v.blowup.value().map(|b| b.day.value_or_horizon()),
            Metric::SeasonalityDays => v.seasonality.value().map(|s| s.day.value_or_horizon()),
            Metric::SmallScaleVsReference => v.small_scale.value().map(|s| s.ratio_vs_reference),
            Metric::SmallScaleVsSelf => v.small_scale.value().map(|s| s.ratio_vs_self),
        }
    }

    fn cell_text(&self, v: &VariableReport) -> String {
        let days = |d: Option<&Days>| d.map_or_else(|| "n/a".to_string(), |d| d.to_string());
        match self {
            Metric::BlowupDays => days(v.blowup.value().map(|b| &b.day)),
            Metric::SeasonalityDays => days(v.seasonality.value().map(|s| &s.day)),
            _ => self.extract(v).map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}")),
        }
    }
}

/// Reports as a CSV table: one row per metric and run, one column per variable.
pub fn report_csv(reports: &[StabilityReport]) -> String {
    let mut vars: Vec<String> = Vec::new();
    for r in reports {
        for v in &r.variables {
            if !vars.contains(&v.variable) {
                vars.push(v.variable.clone());
            }
        }
    }
    let mut out = String::from("metric,run");
    for v in &vars {
        out.push(',');
        out.push_str(v);
    }
    out.push('\n');
    for m in Metric::ALL {
        for r in reports {
            out.push_str(m.name());
            out.push(',');
            out.push_str(&r.run);
            for v in &vars {
                out.push(',');
                out.push_str(&r.variable(v).map_or_else(|| "n/a".to_string(), |vr| m.cell_text(vr)));
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub metric: Metric,
    pub variable: String,
    pub mean: Option<f64>,
    /// sample standard deviation
    pub std: Option<f64>,
    /// runs contributing a value
    pub n: usize,
    /// runs whose value is the horizon because nothing was detected
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: Vec<String>,
    pub cells: Vec<AggregateCell>,
}

impl AggregateReport {
    pub fn cell(&self, metric: Metric, variable: &str) -> Option<&AggregateCell> {
        self.cells.iter().find(|c| c.metric == metric && c.variable == variable)
    }

    /// One row per metric, one column per variable, cells `mean ± std`.
    pub fn to_csv(&self) -> String {
        let mut vars: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !vars.contains(&c.variable.as_str()) {
                vars.push(&c.variable);
            }
        }
        let mut out = String::from("metric");
        for v in &vars {
            out.push(',');
            out.push_str(v);
        }
        out.push('\n');
        for m in Metric::ALL {
            out.push_str(m.name());
            for v in &vars {
                out.push(',');
                let text = match self.cell(m, v) {
                    Some(AggregateCell {
                        mean: Some(mu),
                        std: Some(sd),
                        ..
                    }) => match m {
                        Metric::BlowupDays | Metric::SeasonalityDays => format!("{mu:.1} ± {sd:.1}"),
                        _ => format!("{mu:.4} ± {sd:.4}"),
                    },
                    _ => "n/a".to_string(),
                };
                out.push_str(&text);
            }
            out.push('\n');
        }
        out
    }
}

/// Mean and sample standard deviation of every metric across runs started
/// from different initial dates.
pub fn aggregate_runs(reports: &[StabilityReport]) -> Result<AggregateReport> {
    if reports.len() < 2 {
        return Err(Error::TooFewMembers(reports.len()));
    }
    let names = reports[0].variable_names();
    let mut sorted = names.clone();
    sorted.sort();
    for r in &reports[1..] {
        let mut other = r.variable_names();
        other.sort();
        if other != sorted {
            return Err(Error::Mismatch(format!(
                "run `{}` has variables {:?}, run `{}` has {:?}",
                reports[0].run,
                names,
                r.run,
                r.variable_names()
            )));
        }
    }
    let mut cells = Vec::new();
    for m in Metric::ALL {
        for name in &names {
            let mut values = Vec::new();
            let mut censored = 0;
            for r in reports {
                let vr = r.variable(name).expect("variable sets checked");
                if let Some(x) = m.extract(vr) {
                    values.push(x);
                }
                let is_censored = match m {
                    Metric::BlowupDays => vr.blowup.value().is_some_and(|b| b.day.is_censored()),
                    Metric::SeasonalityDays => vr.seasonality.value().is_some_and(|s| s.day.is_censored()),
                    _ => false,
                };
                censored += is_censored as usize;
            }
            let (mean, std) = mean_std(&values);
            cells.push(AggregateCell {
                metric: m,
                variable: name.clone(),
                mean,
                std,
                n: values.len(),
                censored,
            });
        }
    }
    Ok(AggregateReport {
        runs: reports.iter().map(|r| r.run.clone()).collect(),
        cells,
    })
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    match values.len() {
        0 => (None, None),
        1 => (Some(values[0]), None),
        n => {
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (Some(mean), Some(var.sqrt()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridio::GridSpec;
    use ndarray::{Array2, Array4};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SPD: f64 = 4.0;

    fn days_series(n_days: usize, mut f: impl FnMut(f64) -> f64) -> Vec<f64> {
        (0..n_days * 4).map(|i| f(i as f64 / SPD)).collect()
    }

    #[test]
    fn exponential_onset_is_found_at_its_start() {
        let s = days_series(200, |t| if t >= 100.0 { (0.2 * (t - 100.0)).exp() } else { 1.0 });
        let hit = first_growth_window(&s, SPD, &BlowupParams::default()).unwrap().unwrap();
        assert!((hit.day - 100.0).abs() <= 1.0, "{hit:?}");
        assert!(hit.slope > 0.0 && hit.r2 > 0.9);
    }

    #[test]
    fn constant_and_seasonal_series_are_quiet() {
        let p = BlowupParams::default();
        assert_eq!(first_growth_window(&days_series(400, |_| 5.0), SPD, &p).unwrap(), None);
        let sine = days_series(1460, |t| 280.0 + 15.0 * (2.0 * std::f64::consts::PI * t / 365.25).sin());
        assert_eq!(first_growth_window(&sine, SPD, &p).unwrap(), None);
    }

    #[test]
    fn decaying_series_is_not_a_blowup() {
        let s = days_series(200, |t| 1.0 + 1e6 * (-0.3 * t).exp());
        assert_eq!(first_growth_window(&s, SPD, &BlowupParams::default()).unwrap(), None);
    }

    #[test]
    fn short_series_is_an_error() {
        let err = first_growth_window(&[1.0; 50], SPD, &BlowupParams::default()).unwrap_err();
        assert!(matches!(err, Error::SeriesTooShort { needed: 120, got: 50 }));
        assert!(err.is_precondition());
    }

    #[test]
    fn earliest_of_min_and_max_wins() {
        let quiet = days_series(300, |_| 0.0);
        let late = days_series(300, |t| {
            if t >= 200.0 {
                (0.3 * (t - 200.0)).exp() - 1.0
            } else {
                0.0
            }
        });
        let early = days_series(300, |t| {
            if t >= 120.0 {
                -((0.3 * (t - 120.0)).exp() - 1.0)
            } else {
                0.0
            }
        });
        let p = BlowupParams::default();
        let (stat, fit) = detect_blowup(&early, &late, SPD, &p).unwrap().unwrap();
        assert_eq!(stat, Extreme::Min);
        assert!((fit.day - 120.0).abs() <= 1.0);
        assert_eq!(detect_blowup(&quiet, &quiet, SPD, &p).unwrap(), None);
    }

    fn noisy_blowup(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        days_series(300, |t| {
            let noise: f64 = rng.random::<f64>() - 0.5;
            let growth = if t >= 150.0 {
                1e-3 * (1.3f64.powf((t - 150.0) * SPD) - 1.0)
            } else {
                0.0
            };
            10.0 + noise + growth
        })
    }

    proptest! {
        #[test]
        fn blowup_day_survives_affine_rescaling(seed in 0u64..50, a in 0.01f64..100.0, b in -1e3f64..1e3) {
            let s = noisy_blowup(seed);
            let p = BlowupParams::default();
            let base = first_growth_window(&s, SPD, &p).unwrap().map(|f| f.day);
            let scaled: Vec<f64> = s.iter().map(|y| a * y + b).collect();
            let other = first_growth_window(&scaled, SPD, &p).unwrap().map(|f| f.day);
            prop_assert!(base.is_some());
            prop_assert_eq!(base, other);
        }
    }

    fn flat_envelope(mean: f64, range: f64) -> ClimatologyEnvelope {
        ClimatologyEnvelope {
            statistic: "x".into(),
            first_year: 2000,
            last_year: 2001,
            mean: vec![mean; 365],
            min: vec![mean - range / 2.0; 365],
            max: vec![mean + range / 2.0; 365],
        }
    }

    fn daily(n: usize, f: impl Fn(usize) -> f64) -> Vec<(NaiveDate, f64)> {
        let d0 = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        (0..n).map(|i| (d0 + Duration::days(i as i64), f(i))).collect()
    }

    #[test]
    fn seasonality_examples() {
        let env = flat_envelope(10.0, 1.0);
        let p = SeasonalityParams::default();
        assert_eq!(detect_seasonality_loss(&daily(730, |_| 10.0), &env, &p).unwrap(), None);
        let s = daily(730, |i| if i >= 200 { 13.0 } else { 10.0 });
        assert_eq!(detect_seasonality_loss(&s, &env, &p).unwrap(), Some((200, 530)));
        // a 44-day excursion is not enough
        let s = daily(730, |i| if (300..344).contains(&i) { 13.0 } else { 10.0 });
        assert_eq!(detect_seasonality_loss(&s, &env, &p).unwrap(), None);
    }

    #[test]
    fn zero_range_days() {
        let env = flat_envelope(10.0, 0.0);
        let p = SeasonalityParams {
            run_days: 3,
            ..Default::default()
        };
        assert_eq!(detect_seasonality_loss(&daily(10, |_| 10.0), &env, &p).unwrap(), None);
        assert_eq!(
            detect_seasonality_loss(&daily(10, |i| 10.0 + (i >= 4) as u8 as f64 * 1e-9), &env, &p).unwrap(),
            Some((4, 6))
        );
    }

    #[test]
    fn gaps_in_daily_series_are_rejected() {
        let mut s = daily(10, |_| 0.0);
        s.remove(5);
        assert!(detect_seasonality_loss(&s, &flat_envelope(0.0, 1.0), &SeasonalityParams::default()).is_err());
    }

    proptest! {
        #[test]
        fn larger_multiplier_never_detects_earlier(
            vals in proptest::collection::vec(0.0f64..10.0, 200),
            m1 in 0.5f64..4.0,
            dm in 0.0f64..4.0,
        ) {
            let env = flat_envelope(5.0, 1.0);
            let s = daily(200, |i| vals[i]);
            let run = |m: f64| detect_seasonality_loss(&s, &env, &SeasonalityParams { multiplier: m, run_days: 5 })
                .unwrap()
                .map(|(d, _)| d);
            match (run(m1), run(m1 + dm)) {
                (None, later) => prop_assert_eq!(later, None),
                (Some(a), Some(b)) => prop_assert!(b >= a),
                (Some(_), None) => {}
            }
        }
    }

    fn spectra_with_small(values: &[f64]) -> SpectrumSeries {
        // 360 longitudes resolve the small band
        let grid = GridSpec::cell_centered(2, 360).unwrap();
        let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        let frames: Vec<ndarray::Array3<f32>> = values
            .iter()
            .map(|a| {
                Array2::from_shape_fn((2, 360), |(_, j)| {
                    let lon = (j as f64).to_radians();
                    (a * (170.0 * lon).cos()) as f32
                })
                .insert_axis(ndarray::Axis(0))
            })
            .collect();
        let r = RolloutSeries::from_frames(grid, vec!["x".into()], t0, SECONDS_PER_DAY, &frames).unwrap();
        spectrum_series(&r, "x", Aggregation::Daily).unwrap()
    }

    #[test]
    fn small_scale_ratio_examples() {
        let base: Vec<f64> = (0..60).map(|i| 1.0 + 0.01 * i as f64).collect();
        let pred = spectra_with_small(&base);
        let same = small_scale_ratios(&pred, &pred, None).unwrap();
        assert_eq!(same.ratio_vs_reference, 1.0);
        assert!(!same.truncated);

        let flat = spectra_with_small(&[1.0; 60]);
        let doubled = spectra_with_small(&[2.0; 60]);
        let r = small_scale_ratios(&doubled, &flat, None).unwrap();
        assert!((r.ratio_vs_reference - 2.0).abs() < 1e-9);
        assert!((r.ratio_vs_self - 1.0).abs() < 1e-9);

        let r = small_scale_ratios(&doubled, &flat, Some(20.0)).unwrap();
        assert_eq!(r.window, WindowKind::PreBlowup);
        assert!(r.truncated);
    }

    #[test]
    fn small_scale_needs_resolved_band_and_nonzero_reference() {
        let zero = spectra_with_small(&[0.0; 40]);
        let one = spectra_with_small(&[1.0; 40]);
        assert!(matches!(
            small_scale_ratios(&one, &zero, None),
            Err(Error::ZeroReference(_))
        ));

        let grid = GridSpec::regular(121, 240).unwrap();
        let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        let r = RolloutSeries::new(grid, vec!["x".into()], t0, 21600, Array4::zeros((8, 1, 121, 240))).unwrap();
        let s = spectrum_series(&r, "x", Aggregation::Daily).unwrap();
        assert!(matches!(
            small_scale_ratios(&s, &s, None),
            Err(Error::BandUnresolved { .. })
        ));
    }

    fn monthly_pair(bias: impl Fn(u32) -> f32) -> (RolloutSeries, RolloutSeries) {
        let grid = GridSpec::regular(5, 8).unwrap();
        let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        let n = 730;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = Array4::from_shape_fn((n, 1, 5, 8), |_| rng.random::<f32>() * 10.0);
        let mut biased = truth.clone();
        for t in 0..n {
            let m = (t0 + Duration::days(t as i64)).month();
            biased.index_axis_mut(ndarray::Axis(0), t).mapv_inplace(|x| x + bias(m));
        }
        let mk = |d| RolloutSeries::new(grid.clone(), vec!["x".into()], t0, SECONDS_PER_DAY, d).unwrap();
        (mk(biased), mk(truth))
    }

    #[test]
    fn cycle_rmse_examples() {
        let (a, b) = monthly_pair(|_| 0.0);
        assert_eq!(seasonal_cycle_rmse(&a, &b, "x").unwrap(), 0.0);
        let (a, b) = monthly_pair(|_| 1.5);
        assert!((seasonal_cycle_rmse(&a, &b, "x").unwrap() - 1.5).abs() < 1e-5);
        let (a, b) = monthly_pair(|m| m as f32 - 6.0);
        let expected = ((1..=12).map(|m| (m as f64 - 6.0).powi(2)).sum::<f64>() / 12.0).sqrt();
        assert!((seasonal_cycle_rmse(&a, &b, "x").unwrap() - expected).abs() < 1e-4);
    }

    #[test]
    fn cycle_rmse_rejects_partial_months() {
        let (a, b) = monthly_pair(|_| 0.0);
        let a = a.slice_time(0, 700).unwrap();
        let b = b.slice_time(0, 700).unwrap();
        assert!(matches!(
            seasonal_cycle_rmse(&a, &b, "x"),
            Err(Error::IncompleteMonths(_))
        ));
    }

    fn report(run: &str, days: &[Days]) -> StabilityReport {
        StabilityReport {
            run: run.into(),
            start_time: Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(),
            horizon_days: 730.0,
            variables: days
                .iter()
                .enumerate()
                .map(|(i, d)| VariableReport {
                    variable: format!("v{i}"),
                    blowup: Cell::Value(BlowupResult {
                        variable: format!("v{i}"),
                        day: *d,
                        statistic: None,
                        r2: None,
                        slope: None,
                    }),
                    seasonality: Cell::Unavailable {
                        unavailable: "test".into(),
                    },
                    small_scale: Cell::Unavailable {
                        unavailable: "test".into(),
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn aggregation_examples() {
        let h = Days::Censored { horizon: 730.0 };
        let same: Vec<_> = (0..5).map(|i| report(&format!("r{i}"), &[Days::At(41.0)])).collect();
        let agg = aggregate_runs(&same).unwrap();
        assert_eq!(agg.cell(Metric::BlowupDays, "v0").unwrap().std, Some(0.0));

        let two = [report("a", &[Days::At(10.0)]), report("b", &[Days::At(20.0)])];
        let c = aggregate_runs(&two)
            .unwrap()
            .cell(Metric::BlowupDays, "v0")
            .unwrap()
            .clone();
        assert_eq!(c.mean, Some(15.0));
        assert!((c.std.unwrap() - 50f64.sqrt()).abs() < 1e-12);

        let mixed: Vec<_> = [Days::At(41.0), h, h, h, h]
            .iter()
            .enumerate()
            .map(|(i, d)| report(&format!("r{i}"), &[*d]))
            .collect();
        let c = aggregate_runs(&mixed)
            .unwrap()
            .cell(Metric::BlowupDays, "v0")
            .unwrap()
            .clone();
        assert_eq!(c.censored, 4);
        assert!((c.mean.unwrap() - 592.2).abs() < 1e-9);
        assert!(c.std.unwrap() > 250.0);

        assert!(aggregate_runs(&two[..1]).is_err());
        let other = report("c", &[Days::At(1.0), Days::At(2.0)]);
        assert!(matches!(
            aggregate_runs(&[two[0].clone(), other]),
            Err(Error::Mismatch(_))
        ));
    }

    #[test]
    fn censored_days_encoding() {
        let h = Days::Censored { horizon: 730.0 };
        assert_eq!(
            serde_json::to_string(&h).unwrap(),
            r#"{"censored":true,"horizon":730.0}"#
        );
        assert_eq!(serde_json::to_string(&Days::At(8.0)).unwrap(), "8.0");
        assert_eq!(
            serde_json::from_str::<Days>(r#"{"censored":true,"horizon":730.0}"#).unwrap(),
            h
        );
        let csv = report_csv(&[report("m", &[Days::At(8.0), h])]);
        assert!(csv.starts_with("metric,run,v0,v1\nblowup_days,m,8,>730\n"), "{csv}");
        assert!(csv.contains("seasonality_loss_days,m,n/a,n/a"));
    }
}
