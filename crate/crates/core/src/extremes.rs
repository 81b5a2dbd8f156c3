//! Regional hot and cold extremes: tail quantiles, exceedance curves and
//! event flags against reference thresholds.

use std::fmt::Write as _;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::climatology::{percentiles, ThresholdSet};
use crate::error::{Error, Result};
use crate::gridio::{region_mask, RegionSpec, RolloutSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Hot,
    Cold,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Hot => "hot",
            Side::Cold => "cold",
        }
    }
}

/// Quantile levels (percent) shown on tail QQ plots: 90.0 to 99.9 for the
/// hot side and 0.1 to 10.0 for the cold side, in steps of `step`.
pub fn qq_levels(side: Side, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 10.0) {
        return Err(Error::InvalidConfig(format!("QQ level step {step} out of (0, 10]")));
    }
    let n = (10.0 / step).round() as usize;
    Ok(match side {
        Side::Hot => (0..n).map(|i| round6(90.0 + i as f64 * step)).collect(),
        Side::Cold => (1..=n).map(|i| round6(i as f64 * step)).collect(),
    })
}

/// Threshold levels for exceedance curves: P80 to P99 in whole percent plus
/// P99.5 and P99.9 (hot); P0.1, P0.5 and P1 to P20 (cold).
pub fn exceedance_levels(side: Side) -> Vec<f64> {
    match side {
        Side::Hot => (80..=99).map(f64::from).chain([99.5, 99.9]).collect(),
        Side::Cold => [0.1, 0.5].into_iter().chain((1..=20).map(f64::from)).collect(),
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Spatial max and min of one variable over a region at every time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionalExtremes {
    pub region: String,
    pub variable: String,
    pub times: Vec<DateTime<Utc>>,
    pub max: Vec<f64>,
    pub min: Vec<f64>,
}

impl RegionalExtremes {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn side(&self, side: Side) -> &[f64] {
        match side {
            Side::Hot => &self.max,
            Side::Cold => &self.min,
        }
    }

    fn select(&self, keep: &[usize]) -> RegionalExtremes {
        RegionalExtremes {
            region: self.region.clone(),
            variable: self.variable.clone(),
            times: keep.iter().map(|i| self.times[*i]).collect(),
            max: keep.iter().map(|i| self.max[*i]).collect(),
            min: keep.iter().map(|i| self.min[*i]).collect(),
        }
    }
}

pub fn regional_extreme_series(r: &RolloutSeries, name: &str, region: &RegionSpec) -> Result<RegionalExtremes> {
    let v = r.checked_variable(name)?;
    let mask = region_mask(r.grid(), region)?;
    let cells: Vec<(usize, usize)> = mask.indices().collect();
    let (mut max, mut min) = (Vec::with_capacity(r.n_times()), Vec::with_capacity(r.n_times()));
    for t in 0..r.n_times() {
        let f = r.field(t, v);
        let (lo, hi) = cells
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (i, j)| {
                let x = f[[*i, *j]] as f64;
                (lo.min(x), hi.max(x))
            });
        max.push(hi);
        min.push(lo);
    }
    Ok(RegionalExtremes {
        region: region.name.clone(),
        variable: name.to_string(),
        times: r.timestamps(),
        max,
        min,
    })
}

/// Restrict both series to their common timestamps.
pub fn matched_window(
    model: &RegionalExtremes,
    reference: &RegionalExtremes,
) -> Result<(RegionalExtremes, RegionalExtremes)> {
    let common: std::collections::BTreeSet<_> = model
        .times
        .iter()
        .filter(|t| reference.times.binary_search(t).is_ok())
        .collect();
    if common.is_empty() {
        return Err(Error::Mismatch(format!(
            "model and reference share no timestamps (model {}..{}, reference {}..{})",
            fmt_time(model.times.first()),
            fmt_time(model.times.last()),
            fmt_time(reference.times.first()),
            fmt_time(reference.times.last()),
        )));
    }
    let pick = |s: &RegionalExtremes| {
        let keep: Vec<usize> = (0..s.len()).filter(|i| common.contains(&s.times[*i])).collect();
        s.select(&keep)
    };
    Ok((pick(model), pick(reference)))
}

fn fmt_time(t: Option<&DateTime<Utc>>) -> String {
    t.map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| "-".into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqPair {
    pub level: f64,
    pub reference: f64,
    pub model: f64,
}

/// Paired quantiles of the model and reference series at each level.
pub fn qq_tails(model: &[f64], reference: &[f64], levels: &[f64]) -> Result<Vec<QqPair>> {
    if levels.is_empty() {
        return Err(Error::EmptyInput("no quantile levels".into()));
    }
    let m = percentiles(model, levels)?;
    let r = percentiles(reference, levels)?;
    Ok(levels
        .iter()
        .zip(r.into_iter().zip(m))
        .map(|(level, (reference, model))| QqPair {
            level: *level,
            reference,
            model,
        })
        .collect())
}

/// Fraction of steps beyond `threshold`: above it for the hot side, below it
/// for the cold side.
pub fn exceedance_fraction(series: &[f64], threshold: f64, side: Side) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::EmptyInput("empty extreme series".into()));
    }
    let n = series
        .iter()
        .filter(|x| match side {
            Side::Hot => **x > threshold,
            Side::Cold => **x < threshold,
        })
        .count();
    Ok(n as f64 / series.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceedancePoint {
    pub level: f64,
    pub threshold: f64,
    pub model: f64,
    pub reference: Option<f64>,
    /// model over reference fraction; absent when the reference never exceeds
    pub ratio: Option<f64>,
}

fn check_monotone(t: &ThresholdSet) -> Result<()> {
    if t.levels.len() != t.values.len() || t.levels.is_empty() {
        return Err(Error::InvalidConfig(
            "threshold set has mismatched or empty levels".into(),
        ));
    }
    let ok = t
        .levels
        .windows(2)
        .zip(t.values.windows(2))
        .all(|(l, v)| l[1] > l[0] && v[1] >= v[0]);
    if !ok {
        return Err(Error::InvalidConfig(
            "thresholds must increase with their levels".into(),
        ));
    }
    Ok(())
}

/// Exceedance fraction of `model` (and optionally `reference`) at every
/// threshold in the set.
pub fn exceedance_curve(
    model: &[f64],
    reference: Option<&[f64]>,
    thresholds: &ThresholdSet,
    side: Side,
) -> Result<Vec<ExceedancePoint>> {
    check_monotone(thresholds)?;
    thresholds
        .levels
        .iter()
        .zip(&thresholds.values)
        .map(|(level, th)| {
            let m = exceedance_fraction(model, *th, side)?;
            let r = reference.map(|r| exceedance_fraction(r, *th, side)).transpose()?;
            Ok(ExceedancePoint {
                level: *level,
                threshold: *th,
                model: m,
                reference: r,
                ratio: r.and_then(|r| (r > 0.0).then(|| m / r)),
            })
        })
        .collect()
}

/// Regional extremes flagged against the P90 and P10 of a threshold set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSeries {
    pub extremes: RegionalExtremes,
    pub p90: f64,
    pub p10: f64,
    pub hot: Vec<bool>,
    pub cold: Vec<bool>,
}

impl EventSeries {
    pub fn new(extremes: RegionalExtremes, thresholds: &ThresholdSet) -> Result<Self> {
        let get = |level: f64| {
            thresholds
                .value_at(level)
                .ok_or_else(|| Error::InvalidConfig(format!("threshold set for {} lacks P{level}", thresholds.region)))
        };
        let (p90, p10) = (get(90.0)?, get(10.0)?);
        let hot = extremes.max.iter().map(|x| *x > p90).collect();
        let cold = extremes.min.iter().map(|x| *x < p10).collect();
        Ok(EventSeries {
            extremes,
            p90,
            p10,
            hot,
            cold,
        })
    }

    pub fn hot_count(&self) -> usize {
        self.hot.iter().filter(|x| **x).count()
    }

    pub fn cold_count(&self) -> usize {
        self.cold.iter().filter(|x| **x).count()
    }
}

pub fn qq_csv(pairs: &[QqPair], side: Side) -> String {
    let mut s = String::from("side,level_pct,reference,model\n");
    for p in pairs {
        let _ = writeln!(s, "{},{},{:.6},{:.6}", side.name(), p.level, p.reference, p.model);
    }
    s
}

pub fn exceedance_csv(points: &[ExceedancePoint], side: Side) -> String {
    let mut s = String::from("side,level_pct,threshold,model_fraction,reference_fraction,ratio\n");
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into());
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{},{}",
            side.name(),
            p.level,
            p.threshold,
            p.model,
            opt(p.reference),
            opt(p.ratio)
        );
    }
    s
}

pub fn events_csv(events: &EventSeries) -> String {
    let mut s = String::from("timestamp,max,min,hot,cold\n");
    let e = &events.extremes;
    for i in 0..e.len() {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{},{}",
            e.times[i].to_rfc3339_opts(SecondsFormat::Secs, true),
            e.max[i],
            e.min[i],
            u8::from(events.hot[i]),
            u8::from(events.cold[i])
        );
    }
    s
}
