//! Day-of-year climatological envelopes and pooled percentile thresholds.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridio::{region_mask, RegionSpec, RolloutSeries};
use crate::spectra::{spectrum_series, Aggregation, Band};

pub const DAYS_PER_YEAR: usize = 365;

/// Day of year in `1..=365`; February 29 folds onto February 28.
pub fn day_of_year(date: NaiveDate) -> u16 {
    let ord = date.ordinal() as u16;
    if date.leap_year() && ord >= 60 {
        ord - 1
    } else {
        ord
    }
}

/// Per-day-of-year mean, minimum and maximum of a daily statistic over a
/// multi-year reference period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimatologyEnvelope {
    pub statistic: String,
    pub first_year: i32,
    pub last_year: i32,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ClimatologyEnvelope {
    pub fn mean_on(&self, doy: u16) -> f64 {
        self.mean[doy as usize - 1]
    }

    pub fn range_on(&self, doy: u16) -> f64 {
        let i = doy as usize - 1;
        self.max[i] - self.min[i]
    }

    pub fn ranges(&self) -> Vec<f64> {
        self.max.iter().zip(&self.min).map(|(a, b)| a - b).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let env: ClimatologyEnvelope = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if env.mean.len() != DAYS_PER_YEAR || env.min.len() != DAYS_PER_YEAR || env.max.len() != DAYS_PER_YEAR {
            return Err(Error::InvalidShape("envelope must hold 365 days".into()));
        }
        Ok(env)
    }
}

/// Build an envelope from daily samples. Every day of year needs samples from
/// at least two distinct years.
pub fn build_envelope(samples: &[(NaiveDate, f64)], statistic: &str) -> Result<ClimatologyEnvelope> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no daily samples for the envelope".into()));
    }
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); DAYS_PER_YEAR];
    let mut years: Vec<BTreeSet<i32>> = vec![BTreeSet::new(); DAYS_PER_YEAR];
    for (date, value) in samples {
        let i = day_of_year(*date) as usize - 1;
        buckets[i].push(*value);
        years[i].insert(date.year());
    }
    if let Some((i, y)) = years.iter().enumerate().find(|(_, y)| y.len() < 2) {
        return Err(Error::UnderSampledDay {
            doy: i as u16 + 1,
            years: y.len(),
        });
    }
    let mut mean = Vec::with_capacity(DAYS_PER_YEAR);
    let mut min = Vec::with_capacity(DAYS_PER_YEAR);
    let mut max = Vec::with_capacity(DAYS_PER_YEAR);
    for b in &buckets {
        // order-independent sum keeps the envelope invariant to year ordering
        let mut sorted = b.clone();
        sorted.sort_by(f64::total_cmp);
        mean.push(sorted.iter().sum::<f64>() / sorted.len() as f64);
        min.push(sorted[0]);
        max.push(*sorted.last().unwrap());
    }
    let first_year = samples.iter().map(|(d, _)| d.year()).min().unwrap();
    let last_year = samples.iter().map(|(d, _)| d.year()).max().unwrap();
    Ok(ClimatologyEnvelope {
        statistic: statistic.to_string(),
        first_year,
        last_year,
        mean,
        min,
        max,
    })
}

/// Daily large-band spectral energy of `variable`.
pub fn daily_large_band(reference: &RolloutSeries, variable: &str) -> Result<Vec<(NaiveDate, f64)>> {
    let spec = spectrum_series(reference, variable, Aggregation::Daily)?;
    Ok(spec
        .timestamps
        .iter()
        .map(|t| t.date_naive())
        .zip(spec.band(Band::Large)?.iter().copied())
        .collect())
}

/// Envelope of an arbitrary daily statistic extracted from a reference rollout.
pub fn envelope_from<F>(
    reference: &RolloutSeries,
    variable: &str,
    statistic: &str,
    extract: F,
) -> Result<ClimatologyEnvelope>
where
    F: Fn(&RolloutSeries, &str) -> Result<Vec<(NaiveDate, f64)>>,
{
    build_envelope(&extract(reference, variable)?, statistic)
}

/// Envelope of the daily large-band energy.
pub fn large_band_envelope(reference: &RolloutSeries, variable: &str) -> Result<ClimatologyEnvelope> {
    envelope_from(reference, variable, &format!("{variable}:band_large"), daily_large_band)
}

/// Percentile of already sorted values by linear interpolation between the
/// closest order statistics (position `(n - 1) * p / 100`).
pub fn percentile_sorted(sorted: &[f64], level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 100.0) {
        return Err(Error::InvalidLevel(level));
    }
    if sorted.is_empty() {
        return Err(Error::EmptyInput("percentile of an empty sample".into()));
    }
    let h = (sorted.len() - 1) as f64 * level / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn percentiles(values: &[f64], levels: &[f64]) -> Result<Vec<f64>> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    levels.iter().map(|l| percentile_sorted(&sorted, *l)).collect()
}

/// Thresholds at several percentile levels for one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub region: String,
    pub variable: String,
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
    pub pooling: String,
    pub samples: usize,
    pub first_time: String,
    pub last_time: String,
}

impl ThresholdSet {
    pub fn value_at(&self, level: f64) -> Option<f64> {
        self.levels
            .iter()
            .position(|l| (l - level).abs() < 1e-9)
            .map(|i| self.values[i])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Percentiles of all values of `variable` inside `region`, pooled over every
/// cell and time step.
pub fn pooled_percentiles(
    reference: &RolloutSeries,
    variable: &str,
    region: &RegionSpec,
    levels: &[f64],
) -> Result<ThresholdSet> {
    if let Some(bad) = levels.iter().find(|l| !(**l > 0.0 && **l < 100.0)) {
        return Err(Error::InvalidLevel(*bad));
    }
    let v = reference.checked_variable(variable)?;
    let mask = region_mask(reference.grid(), region)?;
    let mut pool = Vec::with_capacity(mask.count() * reference.n_times());
    for t in 0..reference.n_times() {
        let f = reference.field(t, v);
        pool.extend(mask.indices().map(|(i, j)| f[[i, j]] as f64));
    }
    let values = percentiles(&pool, levels)?;
    Ok(ThresholdSet {
        region: region.name.clone(),
        variable: variable.to_string(),
        levels: levels.to_vec(),
        values,
        pooling: "all region cells x all time steps".into(),
        samples: pool.len(),
        first_time: reference.start_time().to_rfc3339(),
        last_time: reference.timestamp(reference.n_times() - 1).to_rfc3339(),
    })
}
