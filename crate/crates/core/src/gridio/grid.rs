use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EARTH_RADIUS_KM: f64 = 6371.0;

/// Regular latitude/longitude grid.
///
/// Longitudes are uniformly spaced over the full circle, in degrees east
/// within `[0, 360)`. Latitudes are strictly monotone (either direction) and
/// lie in `[-90, 90]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct GridSpec {
    lats: Vec<f64>,
    lons: Vec<f64>,
    earth_radius_km: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    lats: Vec<f64>,
    lons: Vec<f64>,
    #[serde(default = "default_radius")]
    earth_radius_km: f64,
}

fn default_radius() -> f64 {
    DEFAULT_EARTH_RADIUS_KM
}

impl TryFrom<RawGrid> for GridSpec {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        GridSpec::new(raw.lats, raw.lons)?.with_earth_radius(raw.earth_radius_km)
    }
}

impl From<GridSpec> for RawGrid {
    fn from(g: GridSpec) -> Self {
        RawGrid {
            lats: g.lats,
            lons: g.lons,
            earth_radius_km: g.earth_radius_km,
        }
    }
}

impl GridSpec {
    pub fn new(lats: Vec<f64>, lons: Vec<f64>) -> Result<Self> {
        if lats.is_empty() || lons.is_empty() {
            return Err(Error::InvalidGrid(
                "grid needs at least one latitude and one longitude".into(),
            ));
        }
        if lats.iter().any(|l| !l.is_finite() || l.abs() > 90.0) {
            return Err(Error::InvalidGrid("latitudes must lie in [-90, 90]".into()));
        }
        if lats.len() > 1 {
            let ascending = lats[1] > lats[0];
            let monotone = lats
                .windows(2)
                .all(|w| if ascending { w[1] > w[0] } else { w[1] < w[0] });
            if !monotone {
                return Err(Error::InvalidGrid("latitudes must be strictly monotone".into()));
            }
        }
        if lons.iter().any(|l| !l.is_finite() || *l < 0.0 || *l >= 360.0) {
            return Err(Error::InvalidGrid("longitudes must lie in [0, 360)".into()));
        }
        if lons.len() > 1 {
            let spacing = 360.0 / lons.len() as f64;
            let tol = 1e-6 * spacing;
            let uniform = lons
                .iter()
                .enumerate()
                .all(|(i, l)| (l - lons[0] - i as f64 * spacing).abs() <= tol);
            if !uniform {
                return Err(Error::InvalidGrid(format!(
                    "longitudes must be uniformly spaced by 360/{} degrees",
                    lons.len()
                )));
            }
        }
        Ok(GridSpec {
            lats,
            lons,
            earth_radius_km: DEFAULT_EARTH_RADIUS_KM,
        })
    }

    pub fn with_earth_radius(mut self, radius_km: f64) -> Result<Self> {
        if !(radius_km.is_finite() && radius_km > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "earth radius must be positive, got {radius_km}"
            )));
        }
        self.earth_radius_km = radius_km;
        Ok(self)
    }

    /// Equiangular grid with both poles included, latitudes running north to
    /// south. `regular(721, 1440)` is the 0.25 degree grid, `regular(121, 240)`
    /// the 1.5 degree one.
    pub fn regular(n_lat: usize, n_lon: usize) -> Result<Self> {
        if n_lat < 2 || n_lon == 0 {
            return Err(Error::InvalidGrid(
                "regular grid needs n_lat >= 2 and n_lon >= 1".into(),
            ));
        }
        let dlat = 180.0 / (n_lat - 1) as f64;
        let lats = (0..n_lat).map(|i| 90.0 - i as f64 * dlat).collect();
        Self::new(lats, uniform_lons(n_lon))
    }

    /// Grid whose latitude rows sit at cell centres (no pole rows), south to
    /// north.
    pub fn cell_centered(n_lat: usize, n_lon: usize) -> Result<Self> {
        if n_lat == 0 || n_lon == 0 {
            return Err(Error::InvalidGrid("grid dimensions must be positive".into()));
        }
        let dlat = 180.0 / n_lat as f64;
        let lats = (0..n_lat).map(|i| -90.0 + (i as f64 + 0.5) * dlat).collect();
        Self::new(lats, uniform_lons(n_lon))
    }

    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    pub fn n_lat(&self) -> usize {
        self.lats.len()
    }

    pub fn n_lon(&self) -> usize {
        self.lons.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_lat() * self.n_lon()
    }

    pub fn earth_radius_km(&self) -> f64 {
        self.earth_radius_km
    }

    pub fn lon_spacing(&self) -> f64 {
        360.0 / self.n_lon() as f64
    }
}

fn uniform_lons(n_lon: usize) -> Vec<f64> {
    let dlon = 360.0 / n_lon as f64;
    (0..n_lon).map(|j| j as f64 * dlon).collect()
}

/// Area weights per latitude row: `cos(lat)` clipped at zero, normalised to
/// sum to one. Pole rows get weight zero.
///
/// A grid made only of pole rows has no area; it falls back to uniform
/// weights.
pub fn latitude_weights(grid: &GridSpec) -> Vec<f64> {
    let raw: Vec<f64> = grid
        .lats()
        .iter()
        .map(|lat| {
            if lat.abs() >= 90.0 {
                0.0
            } else {
                lat.to_radians().cos().max(0.0)
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.into_iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / raw.len() as f64; raw.len()]
    }
}

/// Per-cell weights (row weight spread evenly over the longitudes); sums to one.
pub fn cell_weights(grid: &GridSpec) -> Vec<f64> {
    let n_lon = grid.n_lon() as f64;
    latitude_weights(grid)
        .into_iter()
        .flat_map(|w| std::iter::repeat_n(w / n_lon, grid.n_lon()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equator_row_gets_full_weight() {
        let g = GridSpec::new(vec![0.0], vec![0.0, 90.0, 180.0, 270.0]).unwrap();
        assert_eq!(latitude_weights(&g), vec![1.0]);
    }

    #[test]
    fn symmetric_rows_split_evenly() {
        let g = GridSpec::new(vec![60.0, -60.0], vec![0.0, 180.0]).unwrap();
        let w = latitude_weights(&g);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quarter_degree_weights_sum_to_one() {
        let g = GridSpec::regular(721, 1440).unwrap();
        let w = latitude_weights(&g);
        assert_eq!(w[0], 0.0);
        assert_eq!(w[720], 0.0);
        let s: f64 = w.iter().sum();
        assert!((s - 1.0).abs() < 1e-12, "sum = {s}");
    }

    #[test]
    fn reversed_latitudes_permute_weights() {
        let g = GridSpec::regular(31, 8).unwrap();
        let mut rev = g.lats().to_vec();
        rev.reverse();
        let gr = GridSpec::new(rev, g.lons().to_vec()).unwrap();
        let mut a = latitude_weights(&g);
        let b = latitude_weights(&gr);
        a.reverse();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn pole_only_grid_falls_back_to_uniform() {
        let g = GridSpec::new(vec![90.0, -90.0], vec![0.0]).unwrap();
        assert_eq!(latitude_weights(&g), vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(GridSpec::new(vec![0.0, 0.0], vec![0.0]).is_err());
        assert!(GridSpec::new(vec![91.0], vec![0.0]).is_err());
        assert!(GridSpec::new(vec![0.0], vec![0.0, 10.0, 30.0]).is_err());
        assert!(GridSpec::new(vec![0.0], vec![0.0, 90.0, 180.0]).is_err());
        assert!(GridSpec::new(vec![0.0], vec![-10.0, 170.0]).is_err());
        assert!(GridSpec::regular(3, 4).unwrap().with_earth_radius(0.0).is_err());
    }

    #[test]
    fn serde_validates() {
        let ok = r#"{"lats":[10.0,-10.0],"lons":[0.0,180.0]}"#;
        let g: GridSpec = serde_json::from_str(ok).unwrap();
        assert_eq!(g.earth_radius_km(), DEFAULT_EARTH_RADIUS_KM);
        let bad = r#"{"lats":[10.0,10.0],"lons":[0.0,180.0]}"#;
        assert!(serde_json::from_str::<GridSpec>(bad).is_err());
    }
}
