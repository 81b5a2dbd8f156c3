//! Zonal Fourier energy spectra and wavelength bands.
//!
//! Each latitude row is transformed along longitude; the energy at zonal
//! wavenumber `k` is the amplitude `|c_k|` of the coefficient normalised by
//! `1/n_lon`, and rows are combined with [`latitude_weights`]. Wavenumbers map
//! to wavelengths through the equatorial circumference, `2 pi R / k`, the same
//! for every row.

use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridio::{latitude_weights, GridSpec, RolloutSeries, TimeSeries, SECONDS_PER_DAY};

pub const LARGE_MIN_KM: f64 = 5000.0;
pub const MEDIUM_MIN_KM: f64 = 250.0;
pub const MEDIUM_MAX_KM: f64 = 1000.0;
pub const SMALL_MAX_KM: f64 = 250.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    /// wavelengths of at least 5000 km, including the zonal mean (k = 0)
    Large,
    /// 250 km to 1000 km inclusive
    Medium,
    /// below 250 km
    Small,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Large, Band::Medium, Band::Small];
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Band::Large => "large",
            Band::Medium => "medium",
            Band::Small => "small",
        })
    }
}

/// Zonal wavelength in km of wavenumber `k`; infinite for `k = 0`.
pub fn wavelength_of(k: usize, grid: &GridSpec) -> f64 {
    if k == 0 {
        f64::INFINITY
    } else {
        2.0 * std::f64::consts::PI * grid.earth_radius_km() / k as f64
    }
}

/// Band holding wavenumber `k`, or `None` for the 1000-5000 km gap.
pub fn band_of(k: usize, grid: &GridSpec) -> Option<Band> {
    let lambda = wavelength_of(k, grid);
    if lambda >= LARGE_MIN_KM {
        Some(Band::Large)
    } else if (MEDIUM_MIN_KM..=MEDIUM_MAX_KM).contains(&lambda) {
        Some(Band::Medium)
    } else if lambda < SMALL_MAX_KM {
        Some(Band::Small)
    } else {
        None
    }
}

/// Highest zonal wavenumber of a real transform over `n_lon` points.
pub fn max_wavenumber(grid: &GridSpec) -> usize {
    grid.n_lon() / 2
}

pub fn band_wavenumbers(band: Band, grid: &GridSpec) -> Vec<usize> {
    (0..=max_wavenumber(grid))
        .filter(|k| band_of(*k, grid) == Some(band))
        .collect()
}

fn unresolved(band: Band, grid: &GridSpec) -> Error {
    Error::BandUnresolved {
        band: band.to_string(),
        min_wavelength_km: wavelength_of(max_wavenumber(grid).max(1), grid),
    }
}

/// Unweighted mean of `spectrum` over the wavenumbers of `band`.
pub fn band_average(spectrum: &[f64], band: Band, grid: &GridSpec) -> Result<f64> {
    let ks = band_wavenumbers(band, grid);
    if ks.is_empty() {
        return Err(unresolved(band, grid));
    }
    if spectrum.len() <= *ks.last().unwrap() {
        return Err(Error::InvalidShape(format!(
            "spectrum has {} wavenumbers, grid needs {}",
            spectrum.len(),
            max_wavenumber(grid) + 1
        )));
    }
    Ok(ks.iter().map(|k| spectrum[*k]).sum::<f64>() / ks.len() as f64)
}

/// Planned zonal transform for one grid, reusable across fields and threads.
#[derive(Clone)]
pub struct ZonalTransform {
    fft: Arc<dyn Fft<f64>>,
    weights: Vec<f64>,
    n_lat: usize,
    n_lon: usize,
}

impl fmt::Debug for ZonalTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ZonalTransform")
            .field("n_lat", &self.n_lat)
            .field("n_lon", &self.n_lon)
            .finish()
    }
}

impl ZonalTransform {
    pub fn new(grid: &GridSpec) -> Result<Self> {
        if grid.n_lon() < 4 {
            return Err(Error::TooFewLongitudes(grid.n_lon()));
        }
        let fft = FftPlanner::new().plan_fft_forward(grid.n_lon());
        Ok(ZonalTransform {
            fft,
            weights: latitude_weights(grid),
            n_lat: grid.n_lat(),
            n_lon: grid.n_lon(),
        })
    }

    pub fn n_wavenumbers(&self) -> usize {
        self.n_lon / 2 + 1
    }

    /// All `n_lon` coefficients of one row, scaled by `1/n_lon`.
    pub fn row_coefficients(&self, row: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = row.iter().map(|x| Complex64::new(*x, 0.0)).collect();
        self.fft.process(&mut buf);
        let scale = 1.0 / self.n_lon as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        buf
    }

    pub fn spectrum(&self, field: ArrayView2<'_, f32>) -> Result<Vec<f64>> {
        if field.dim() != (self.n_lat, self.n_lon) {
            return Err(Error::InvalidShape(format!(
                "field is {:?}, grid is {}x{}",
                field.dim(),
                self.n_lat,
                self.n_lon
            )));
        }
        let nk = self.n_wavenumbers();
        let scale = 1.0 / self.n_lon as f64;
        let mut energy = vec![0.0; nk];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_lon];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for (row, w) in field.outer_iter().zip(&self.weights) {
            if *w == 0.0 {
                continue;
            }
            for (b, x) in buf.iter_mut().zip(row.iter()) {
                *b = Complex64::new(*x as f64, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (e, c) in energy.iter_mut().zip(&buf[..nk]) {
                *e += w * c.norm() * scale;
            }
        }
        Ok(energy)
    }
}

/// Latitude-weighted zonal amplitude spectrum, wavenumbers `0..=n_lon/2`.
pub fn zonal_spectrum(field: ArrayView2<'_, f32>, grid: &GridSpec) -> Result<Vec<f64>> {
    ZonalTransform::new(grid)?.spectrum(field)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    PerStep,
    /// mean of the spectra within each UTC day
    Daily,
}

/// Spectra of one variable over time, with band averages.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSeries {
    pub variable: String,
    pub timestamps: Vec<DateTime<Utc>>,
    /// seconds represented by one sample (the step, or one day)
    pub sample_seconds: i64,
    pub wavenumbers: Vec<usize>,
    pub wavelengths_km: Vec<f64>,
    /// `(time, wavenumber)`
    pub energy: Array2<f64>,
    pub band_large: Vec<f64>,
    pub band_medium: Option<Vec<f64>>,
    pub band_small: Option<Vec<f64>>,
    min_wavelength_km: f64,
}

impl SpectrumSeries {
    fn from_energy(
        variable: &str,
        grid: &GridSpec,
        timestamps: Vec<DateTime<Utc>>,
        sample_seconds: i64,
        energy: Array2<f64>,
    ) -> Result<Self> {
        let bands = |band: Band| -> Result<Vec<f64>> {
            energy
                .outer_iter()
                .map(|row| band_average(row.as_slice().unwrap(), band, grid))
                .collect()
        };
        let optional = |band: Band| match bands(band) {
            Ok(v) => Ok(Some(v)),
            Err(Error::BandUnresolved { .. }) => Ok(None),
            Err(e) => Err(e),
        };
        let wavenumbers: Vec<usize> = (0..energy.ncols()).collect();
        Ok(SpectrumSeries {
            variable: variable.to_string(),
            timestamps,
            sample_seconds,
            wavelengths_km: wavenumbers.iter().map(|k| wavelength_of(*k, grid)).collect(),
            wavenumbers,
            band_large: bands(Band::Large)?,
            band_medium: optional(Band::Medium)?,
            band_small: optional(Band::Small)?,
            min_wavelength_km: wavelength_of(max_wavenumber(grid).max(1), grid),
            energy,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn band(&self, band: Band) -> Result<&[f64]> {
        let series = match band {
            Band::Large => Some(&self.band_large),
            Band::Medium => self.band_medium.as_ref(),
            Band::Small => self.band_small.as_ref(),
        };
        series.map(|v| v.as_slice()).ok_or_else(|| Error::BandUnresolved {
            band: band.to_string(),
            min_wavelength_km: self.min_wavelength_km,
        })
    }

    pub fn band_series(&self, band: Band) -> Result<TimeSeries> {
        TimeSeries::new(self.timestamps.clone(), self.band(band)?.to_vec())
    }

    /// End of the covered period (last timestamp plus one sample).
    pub fn end_time(&self) -> DateTime<Utc> {
        *self.timestamps.last().expect("non-empty spectrum series") + Duration::seconds(self.sample_seconds)
    }
}

/// Spectra of variable `name` at every step, optionally averaged per day.
pub fn spectrum_series(r: &RolloutSeries, name: &str, aggregation: Aggregation) -> Result<SpectrumSeries> {
    let v = r.checked_variable(name)?;
    let transform = ZonalTransform::new(r.grid())?;
    let rows: Vec<Vec<f64>> = (0..r.n_times())
        .into_par_iter()
        .map(|t| transform.spectrum(r.field(t, v)))
        .collect::<Result<_>>()?;
    let nk = transform.n_wavenumbers();
    let times = r.timestamps();

    let (timestamps, energy, sample_seconds) = match aggregation {
        Aggregation::PerStep => {
            let flat: Vec<f64> = rows.into_iter().flatten().collect();
            let e = Array2::from_shape_vec((times.len(), nk), flat).expect("row lengths agree");
            (times, e, r.step_seconds())
        }
        Aggregation::Daily => {
            let mut days: Vec<(DateTime<Utc>, Vec<f64>, usize)> = Vec::new();
            for (t, row) in times.iter().zip(rows) {
                let day = t.date_naive().and_hms_opt(0, 0, 0).unwrap().and_utc();
                match days.last_mut() {
                    Some((d, acc, n)) if *d == day => {
                        acc.iter_mut().zip(&row).for_each(|(a, x)| *a += x);
                        *n += 1;
                    }
                    _ => days.push((day, row, 1)),
                }
            }
            let mut e = Array2::zeros((days.len(), nk));
            let mut stamps = Vec::with_capacity(days.len());
            for (i, (d, acc, n)) in days.into_iter().enumerate() {
                e.index_axis_mut(Axis(0), i)
                    .iter_mut()
                    .zip(acc)
                    .for_each(|(dst, a)| *dst = a / n as f64);
                stamps.push(d);
            }
            (stamps, e, SECONDS_PER_DAY)
        }
    };
    SpectrumSeries::from_energy(name, r.grid(), timestamps, sample_seconds, energy)
}
