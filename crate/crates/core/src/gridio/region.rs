use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use crate::error::{Error, Result};

const EPS_DEG: f64 = 1e-9;

/// Latitude/longitude box. Longitudes may be given in degrees east (0..360)
/// or with west as negative values; a box whose western edge lies east of its
/// eastern edge wraps across the prime meridian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub name: String,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl RegionSpec {
    pub fn new(name: &str, lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let r = RegionSpec {
            name: name.to_string(),
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn global() -> Self {
        RegionSpec {
            name: "Global".into(),
            lat_min: -90.0,
            lat_max: 90.0,
            lon_min: 0.0,
            lon_max: 360.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
            .iter()
            .all(|x| x.is_finite());
        if !finite || self.lat_min >= self.lat_max || self.lat_min < -90.0 || self.lat_max > 90.0 {
            return Err(Error::InvalidRegion(format!(
                "{}: latitudes must satisfy -90 <= lat_min < lat_max <= 90",
                self.name
            )));
        }
        if self.lon_min < -360.0 || self.lon_max > 720.0 {
            return Err(Error::InvalidRegion(format!("{}: longitude out of range", self.name)));
        }
        Ok(())
    }

    /// Longitude interval in canonical 0..360 degrees east, or `None` when the
    /// box spans the whole circle.
    fn canonical_lons(&self) -> Option<(f64, f64)> {
        if self.lon_max - self.lon_min >= 360.0 - EPS_DEG {
            return None;
        }
        Some((self.lon_min.rem_euclid(360.0), self.lon_max.rem_euclid(360.0)))
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        if lat < self.lat_min - EPS_DEG || lat > self.lat_max + EPS_DEG {
            return false;
        }
        let lon = lon.rem_euclid(360.0);
        match self.canonical_lons() {
            None => true,
            Some((a, b)) if a <= b => lon >= a - EPS_DEG && lon <= b + EPS_DEG,
            Some((a, b)) => lon >= a - EPS_DEG || lon <= b + EPS_DEG,
        }
    }
}

/// The five extreme-event regions plus the two polar caps.
pub fn builtin_regions() -> Vec<RegionSpec> {
    vec![
        RegionSpec::new("Central Europe", 45.0, 55.0, 5.0, 20.0),
        RegionSpec::new("Western US", 30.0, 50.0, -125.0, -105.0),
        RegionSpec::new("East Asia", 25.0, 45.0, 110.0, 135.0),
        RegionSpec::new("SE Australia", -40.0, -25.0, 140.0, 155.0),
        RegionSpec::new("Amazon", -15.0, 5.0, -70.0, -45.0),
        RegionSpec::new("Arctic", 66.5, 90.0, 0.0, 360.0),
        RegionSpec::new("Antarctic", -90.0, -66.5, 0.0, 360.0),
    ]
    .into_iter()
    .map(|r| r.expect("built-in regions are valid"))
    .collect()
}

pub fn builtin_region(name: &str) -> Option<RegionSpec> {
    builtin_regions()
        .into_iter()
        .find(|r| r.name.eq_ignore_ascii_case(name))
}

/// Read a JSON array of regions.
pub fn load_regions(path: impl AsRef<Path>) -> Result<Vec<RegionSpec>> {
    let text = std::fs::read_to_string(path)?;
    let regions: Vec<RegionSpec> = serde_json::from_str(&text)?;
    for r in &regions {
        r.validate()?;
    }
    Ok(regions)
}

/// Cells of a grid that fall inside a region, row-major `(lat, lon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    n_lon: usize,
    cells: Vec<bool>,
    count: usize,
}

impl RegionMask {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n_lon + j]
    }

    /// `(row, column)` pairs of the selected cells.
    pub fn indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n_lon = self.n_lon;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| **c)
            .map(move |(k, _)| (k / n_lon, k % n_lon))
    }
}

pub fn region_mask(grid: &GridSpec, region: &RegionSpec) -> Result<RegionMask> {
    region.validate()?;
    let cells: Vec<bool> = grid
        .lats()
        .iter()
        .flat_map(|lat| grid.lons().iter().map(move |lon| region.contains(*lat, *lon)))
        .collect();
    let count = cells.iter().filter(|c| **c).count();
    if count == 0 {
        return Err(Error::EmptyRegion(region.name.clone()));
    }
    Ok(RegionMask {
        n_lon: grid.n_lon(),
        cells,
        count,
    })
}
