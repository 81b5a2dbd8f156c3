//! Grid geometry, latitude weighting, regions and the on-disk container.

mod grid;
mod region;
mod rgf;
mod series;

use std::path::Path;

use chrono::{DateTime, Utc};

pub use grid::{cell_weights, latitude_weights, GridSpec, DEFAULT_EARTH_RADIUS_KM};
pub use region::{builtin_region, builtin_regions, load_regions, region_mask, RegionMask, RegionSpec};
pub use rgf::{
    read_header, read_rollout, read_rollout_from, write_rollout, write_rollout_to, write_rollout_with_provenance, Dims,
    RgfHeader, MAGIC,
};
pub use series::{area_mean, spatial_extremes, RolloutSeries, TimeSeries, DEFAULT_STEP_SECONDS, SECONDS_PER_DAY};

use crate::error::{Error, Result};

/// Read a `timestamp,value` CSV (RFC 3339 timestamps, header row required).
pub fn read_series_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::InvalidShape(format!("expected 2 columns, got {}", rec.len())));
        }
        let t = DateTime::parse_from_rfc3339(rec[0].trim())
            .map_err(|e| Error::InvalidShape(format!("bad timestamp `{}`: {e}", &rec[0])))?
            .with_timezone(&Utc);
        let v: f64 = rec[1]
            .trim()
            .parse()
            .map_err(|e| Error::InvalidShape(format!("bad value `{}`: {e}", &rec[1])))?;
        times.push(t);
        values.push(v);
    }
    TimeSeries::new(times, values)
}

pub fn write_series_csv(series: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "value"])?;
    for (t, v) in series.times.iter().zip(&series.values) {
        w.write_record([t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
