use chrono::{DateTime, Duration, NaiveDate, Utc};
use ndarray::{Array3, Array4, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use super::grid::{latitude_weights, GridSpec};
use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const DEFAULT_STEP_SECONDS: i64 = 21_600;

/// A sequence of gridded fields with shape `(time, variable, lat, lon)`.
///
/// NaN values are only accepted when a fill value is declared; detectors
/// refuse fields that contain fill or NaN values (see
/// [`RolloutSeries::checked_variable`]).
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSeries {
    grid: GridSpec,
    variables: Vec<String>,
    start_time: DateTime<Utc>,
    step_seconds: i64,
    fill_value: Option<f32>,
    data: Array4<f32>,
}

impl RolloutSeries {
    pub fn new(
        grid: GridSpec,
        variables: Vec<String>,
        start_time: DateTime<Utc>,
        step_seconds: i64,
        data: Array4<f32>,
    ) -> Result<Self> {
        Self::with_fill_value(grid, variables, start_time, step_seconds, None, data)
    }

    pub fn with_fill_value(
        grid: GridSpec,
        variables: Vec<String>,
        start_time: DateTime<Utc>,
        step_seconds: i64,
        fill_value: Option<f32>,
        data: Array4<f32>,
    ) -> Result<Self> {
        let (nt, nv, ny, nx) = data.dim();
        if nt == 0 {
            return Err(Error::InvalidShape("a rollout needs at least one time step".into()));
        }
        if nv != variables.len() {
            return Err(Error::InvalidShape(format!(
                "{} variable names for {} variable slices",
                variables.len(),
                nv
            )));
        }
        if ny != grid.n_lat() || nx != grid.n_lon() {
            return Err(Error::InvalidShape(format!(
                "spatial slices are {ny}x{nx}, grid is {}x{}",
                grid.n_lat(),
                grid.n_lon()
            )));
        }
        if step_seconds <= 0 {
            return Err(Error::InvalidShape(format!(
                "step_seconds must be positive, got {step_seconds}"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = variables.iter().find(|v| !seen.insert(v.as_str())) {
            return Err(Error::InvalidShape(format!("duplicate variable `{dup}`")));
        }
        if let Some(f) = fill_value {
            if !f.is_finite() {
                return Err(Error::InvalidShape("fill value must be finite".into()));
            }
        } else if data.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidShape(
                "NaN values present but no fill value declared".into(),
            ));
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().to_owned()
        };
        Ok(RolloutSeries {
            grid,
            variables,
            start_time,
            step_seconds,
            fill_value,
            data,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn start_time(&self) -> DateTime<Utc> {
        self.start_time
    }

    pub fn step_seconds(&self) -> i64 {
        self.step_seconds
    }

    pub fn fill_value(&self) -> Option<f32> {
        self.fill_value
    }

    pub fn data(&self) -> &Array4<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array4<f32> {
        self.data
    }

    pub fn n_times(&self) -> usize {
        self.data.dim().0
    }

    pub fn steps_per_day(&self) -> f64 {
        SECONDS_PER_DAY as f64 / self.step_seconds as f64
    }

    /// Length covered by the series in days (`n_times * step`).
    pub fn horizon_days(&self) -> f64 {
        self.n_times() as f64 * self.step_seconds as f64 / SECONDS_PER_DAY as f64
    }

    pub fn timestamp(&self, t: usize) -> DateTime<Utc> {
        self.start_time + Duration::seconds(self.step_seconds * t as i64)
    }

    pub fn timestamps(&self) -> Vec<DateTime<Utc>> {
        (0..self.n_times()).map(|t| self.timestamp(t)).collect()
    }

    pub fn variable_index(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::UnknownVariable {
                name: name.to_string(),
                available: self.variables.clone(),
            })
    }

    /// Index of `name` after checking that none of its values is a fill value
    /// or NaN.
    pub fn checked_variable(&self, name: &str) -> Result<usize> {
        let v = self.variable_index(name)?;
        let fill = self.fill_value;
        for t in 0..self.n_times() {
            let bad = self
                .field(t, v)
                .iter()
                .any(|x| x.is_nan() || fill.is_some_and(|f| *x == f));
            if bad {
                return Err(Error::FillValue {
                    variable: name.to_string(),
                    time_index: t,
                });
            }
        }
        Ok(v)
    }

    pub fn field(&self, t: usize, v: usize) -> ArrayView2<'_, f32> {
        self.data.index_axis(Axis(0), t).index_axis_move(Axis(0), v)
    }

    /// All variables at time `t`, shape `(variable, lat, lon)`.
    pub fn frame(&self, t: usize) -> ArrayView3<'_, f32> {
        self.data.index_axis(Axis(0), t)
    }

    /// Copy holding only the named variables, in the given order.
    pub fn select_variables(&self, names: &[String]) -> Result<RolloutSeries> {
        let idx: Vec<usize> = names.iter().map(|n| self.variable_index(n)).collect::<Result<_>>()?;
        let data = self.data.select(Axis(1), &idx);
        Self::with_fill_value(
            self.grid.clone(),
            names.to_vec(),
            self.start_time,
            self.step_seconds,
            self.fill_value,
            data,
        )
    }

    /// Copy holding time steps `start..end`.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<RolloutSeries> {
        if start >= end || end > self.n_times() {
            return Err(Error::InvalidShape(format!(
                "time slice {start}..{end} outside 0..{}",
                self.n_times()
            )));
        }
        let data = self.data.slice(ndarray::s![start..end, .., .., ..]).to_owned();
        Self::with_fill_value(
            self.grid.clone(),
            self.variables.clone(),
            self.timestamp(start),
            self.step_seconds,
            self.fill_value,
            data,
        )
    }

    /// Build a series from consecutive `(variable, lat, lon)` frames.
    pub fn from_frames(
        grid: GridSpec,
        variables: Vec<String>,
        start_time: DateTime<Utc>,
        step_seconds: i64,
        frames: &[Array3<f32>],
    ) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::InvalidShape("a rollout needs at least one time step".into()));
        };
        let (nv, ny, nx) = first.dim();
        let mut data = Array4::<f32>::zeros((frames.len(), nv, ny, nx));
        for (t, f) in frames.iter().enumerate() {
            if f.dim() != (nv, ny, nx) {
                return Err(Error::InvalidShape(format!("frame {t} has shape {:?}", f.dim())));
            }
            data.index_axis_mut(Axis(0), t).assign(f);
        }
        Self::new(grid, variables, start_time, step_seconds, data)
    }
}

/// A scalar series with timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<DateTime<Utc>>,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(times: Vec<DateTime<Utc>>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Mismatch(format!(
                "{} timestamps for {} values",
                times.len(),
                values.len()
            )));
        }
        Ok(TimeSeries { times, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Entries with `from <= time < to`.
    pub fn window(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> TimeSeries {
        let (times, values) = self
            .times
            .iter()
            .zip(&self.values)
            .filter(|(t, _)| **t >= from && **t < to)
            .map(|(t, v)| (*t, *v))
            .unzip();
        TimeSeries { times, values }
    }

    /// Mean per UTC calendar day, in date order.
    pub fn daily_means(&self) -> Vec<(NaiveDate, f64)> {
        let mut out: Vec<(NaiveDate, f64, usize)> = Vec::new();
        for (t, v) in self.times.iter().zip(&self.values) {
            let d = t.date_naive();
            match out.last_mut() {
                Some((day, sum, n)) if *day == d => {
                    *sum += v;
                    *n += 1;
                }
                _ => out.push((d, *v, 1)),
            }
        }
        out.into_iter().map(|(d, s, n)| (d, s / n as f64)).collect()
    }
}

/// Global minimum and maximum of variable `name` at every time step.
pub fn spatial_extremes(r: &RolloutSeries, name: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let v = r.checked_variable(name)?;
    Ok((0..r.n_times())
        .map(|t| {
            r.field(t, v)
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                    let x = x as f64;
                    (lo.min(x), hi.max(x))
                })
        })
        .unzip())
}

/// Latitude-weighted spatial mean of variable `v` at time `t`.
pub fn area_mean(r: &RolloutSeries, t: usize, v: usize) -> f64 {
    let w = latitude_weights(r.grid());
    r.field(t, v)
        .outer_iter()
        .zip(&w)
        .map(|(row, wi)| wi * row.iter().map(|x| *x as f64).sum::<f64>() / row.len() as f64)
        .sum()
}
