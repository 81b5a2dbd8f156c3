//! Nearest-neighbour memorization test: is a predicted state much closer to
//! one training snapshot than to any other from the same time of year?

use std::fmt::Write as _;

use chrono::{DateTime, SecondsFormat, Utc};
use ndarray::{ArrayView3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::climatology::{day_of_year, DAYS_PER_YEAR};
use crate::error::{Error, Result};
use crate::gridio::{cell_weights, GridSpec, RolloutSeries};
use crate::perturb::VariableStats;

/// Half-width of the calendar window searched for neighbours, in days.
pub const DOY_WINDOW_DAYS: u16 = 10;

/// Ratios at or below this value flag a memorized state.
pub const MEMORIZED_RATIO: f64 = 0.5;

/// Training snapshots, standardized per variable by the training pool and
/// scaled by the square root of the cell area weight, so that a plain L2
/// distance between entries is the latitude-weighted distance.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    grid: GridSpec,
    variables: Vec<String>,
    stats: Vec<VariableStats>,
    sqrt_w: Vec<f64>,
    times: Vec<DateTime<Utc>>,
    doys: Vec<u16>,
    snapshots: Vec<Vec<f64>>,
}

impl NeighborIndex {
    /// Index every step of `training` over the chosen variables.
    pub fn build(training: &RolloutSeries, variables: &[String]) -> Result<Self> {
        if variables.is_empty() {
            return Err(Error::EmptyInput("no variables selected for the index".into()));
        }
        let idx: Vec<usize> = variables
            .iter()
            .map(|v| training.checked_variable(v))
            .collect::<Result<_>>()?;
        let stats = idx
            .iter()
            .map(|v| {
                let slab = training.data().index_axis(Axis(1), *v);
                let n = slab.len() as f64;
                let mean = slab.iter().map(|x| *x as f64).sum::<f64>() / n;
                let var = slab.iter().map(|x| (*x as f64 - mean).powi(2)).sum::<f64>() / n;
                VariableStats { mean, std: var.sqrt() }
            })
            .collect();
        let mut index = NeighborIndex {
            grid: training.grid().clone(),
            variables: variables.to_vec(),
            stats,
            sqrt_w: cell_weights(training.grid()).into_iter().map(f64::sqrt).collect(),
            times: training.timestamps(),
            doys: Vec::new(),
            snapshots: Vec::new(),
        };
        index.doys = index.times.iter().map(|t| day_of_year(t.date_naive())).collect();
        index.snapshots = (0..training.n_times())
            .into_par_iter()
            .map(|t| index.embed_indexed(training.frame(t), &idx))
            .collect();
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn stats(&self) -> &[VariableStats] {
        &self.stats
    }

    pub fn time(&self, i: usize) -> DateTime<Utc> {
        self.times[i]
    }

    fn embed_indexed(&self, frame: ArrayView3<'_, f32>, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * self.sqrt_w.len());
        for (v, st) in idx.iter().zip(&self.stats) {
            let scale = if st.std > 0.0 { 1.0 / st.std } else { 1.0 };
            let field = frame.index_axis(Axis(0), *v);
            out.extend(
                field
                    .iter()
                    .zip(&self.sqrt_w)
                    .map(|(x, w)| (*x as f64 - st.mean) * scale * w),
            );
        }
        out
    }

    /// Map a state laid out as `(variable, lat, lon)` with the given variable
    /// names into the index space.
    pub fn embed(&self, frame: ArrayView3<'_, f32>, names: &[String]) -> Result<Vec<f64>> {
        let (nv, ny, nx) = frame.dim();
        if nv != names.len() {
            return Err(Error::InvalidShape(format!(
                "{} names for {nv} variable slices",
                names.len()
            )));
        }
        if ny != self.grid.n_lat() || nx != self.grid.n_lon() {
            return Err(Error::Mismatch(format!(
                "sample grid {ny}x{nx} differs from index grid {}x{}",
                self.grid.n_lat(),
                self.grid.n_lon()
            )));
        }
        let idx: Vec<usize> = self
            .variables
            .iter()
            .map(|v| {
                names.iter().position(|n| n == v).ok_or_else(|| Error::UnknownVariable {
                    name: v.clone(),
                    available: names.to_vec(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(self.embed_indexed(frame, &idx))
    }

    /// Snapshots within the circular calendar window around `time`.
    pub fn candidates(&self, time: DateTime<Utc>) -> Vec<usize> {
        let doy = day_of_year(time.date_naive());
        (0..self.len())
            .filter(|i| doy_distance(self.doys[*i], doy) <= DOY_WINDOW_DAYS)
            .collect()
    }
}

/// Calendar distance on a 365-day circle.
pub fn doy_distance(a: u16, b: u16) -> u16 {
    let d = a.abs_diff(b);
    d.min(DAYS_PER_YEAR as u16 - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbors {
    pub ratio: f64,
    pub d1: f64,
    pub d2: f64,
    pub first: usize,
    pub second: usize,
}

impl Neighbors {
    pub fn memorized(&self) -> bool {
        self.ratio <= MEMORIZED_RATIO
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// The two nearest vectors among `candidates` and the ratio of their
/// distances. Two exact matches give a ratio of zero.
pub fn nearest_two<'a>(sample: &[f64], candidates: impl IntoIterator<Item = (usize, &'a [f64])>) -> Result<Neighbors> {
    let mut best = (f64::INFINITY, usize::MAX);
    let mut second = (f64::INFINITY, usize::MAX);
    let mut found = 0;
    for (id, v) in candidates {
        found += 1;
        let d = distance(sample, v);
        if d < best.0 || (d == best.0 && id < best.1) {
            second = best;
            best = (d, id);
        } else if d < second.0 || (d == second.0 && id < second.1) {
            second = (d, id);
        }
    }
    if found < 2 {
        return Err(Error::TooFewCandidates { found });
    }
    let ratio = if best.0 == 0.0 { 0.0 } else { best.0 / second.0 };
    Ok(Neighbors {
        ratio,
        d1: best.0,
        d2: second.0,
        first: best.1,
        second: second.1,
    })
}

/// Distance ratio of one state stamped `time` against the index.
pub fn distance_ratio(
    sample: ArrayView3<'_, f32>,
    names: &[String],
    time: DateTime<Utc>,
    index: &NeighborIndex,
) -> Result<Neighbors> {
    let x = index.embed(sample, names)?;
    let cands = index.candidates(time);
    nearest_two(&x, cands.iter().map(|i| (*i, index.snapshots[*i].as_slice())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationPoint {
    pub time: DateTime<Utc>,
    pub neighbors: Neighbors,
    pub first_time: DateTime<Utc>,
}

/// Distance ratio at every step of a rollout.
pub fn memorization_series(rollout: &RolloutSeries, index: &NeighborIndex) -> Result<Vec<MemorizationPoint>> {
    (0..rollout.n_times())
        .into_par_iter()
        .map(|t| {
            let time = rollout.timestamp(t);
            let n = distance_ratio(rollout.frame(t), rollout.variables(), time, index)?;
            Ok(MemorizationPoint {
                time,
                first_time: index.time(n.first),
                neighbors: n,
            })
        })
        .collect()
}

pub fn memorization_csv(points: &[MemorizationPoint]) -> String {
    let mut s = String::from("timestamp,ratio,d1,d2,neighbor\n");
    let ts = |t: &DateTime<Utc>| t.to_rfc3339_opts(SecondsFormat::Secs, true);
    for p in points {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{}",
            ts(&p.time),
            p.neighbors.ratio,
            p.neighbors.d1,
            p.neighbors.d2,
            ts(&p.first_time)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use ndarray::{Array3, Array4};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_series(n_days: usize, ny: usize, nx: usize, seed: u64) -> RolloutSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Array4::from_shape_simple_fn((n_days, 2, ny, nx), || StandardNormal.sample(&mut rng));
        let t0 = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap();
        RolloutSeries::new(
            GridSpec::cell_centered(ny, nx).unwrap(),
            vec!["a".into(), "b".into()],
            t0,
            86_400,
            data,
        )
        .unwrap()
    }

    fn names() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn calendar_window_wraps() {
        assert_eq!(doy_distance(361, 4), 8);
        assert_eq!(doy_distance(100, 111), 11);
        let dec28 = NaiveDateExt::at(2001, 12, 28);
        let jan5 = NaiveDateExt::at(2002, 1, 5);
        assert!(doy_distance(day_of_year(dec28), day_of_year(jan5)) <= DOY_WINDOW_DAYS);
    }

    struct NaiveDateExt;
    impl NaiveDateExt {
        fn at(y: i32, m: u32, d: u32) -> chrono::NaiveDate {
            chrono::NaiveDate::from_ymd_opt(y, m, d).unwrap()
        }
    }

    #[test]
    fn copy_of_training_snapshot_gives_zero() {
        let train = noise_series(800, 6, 12, 1);
        let index = NeighborIndex::build(&train, &names()).unwrap();
        let n = distance_ratio(train.frame(400), &names(), train.timestamp(400), &index).unwrap();
        assert_eq!(n.ratio, 0.0);
        assert_eq!(n.first, 400);
        assert!(n.memorized());
    }

    #[test]
    fn planted_near_copy_is_flagged() {
        let train = noise_series(800, 6, 12, 2);
        let index = NeighborIndex::build(&train, &names()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = train.frame(100).to_owned();
        let sample = &base
            + &Array3::from_shape_simple_fn(base.dim(), || {
                let z: f32 = StandardNormal.sample(&mut rng);
                0.01 * z
            });
        let n = distance_ratio(sample.view(), &names(), train.timestamp(100), &index).unwrap();
        assert!(n.ratio < 0.5, "{n:?}");
    }

    #[test]
    fn unrelated_samples_sit_near_one() {
        let train = noise_series(730, 8, 16, 3);
        let index = NeighborIndex::build(&train, &names()).unwrap();
        let other = noise_series(30, 8, 16, 4);
        let pts = memorization_series(&other, &index).unwrap();
        let mut r: Vec<f64> = pts.iter().map(|p| p.neighbors.ratio).collect();
        r.sort_by(|a, b| a.total_cmp(b));
        assert!(r[r.len() / 2] > 0.8, "{r:?}");
    }

    #[test]
    fn too_few_candidates() {
        let train = noise_series(1, 2, 4, 5);
        let index = NeighborIndex::build(&train, &names()).unwrap();
        let e = distance_ratio(train.frame(0), &names(), train.timestamp(0), &index);
        assert!(matches!(e, Err(Error::TooFewCandidates { found: 1 })));
    }

    #[test]
    fn far_snapshot_does_not_change_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vecs: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..50).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let q: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
        let base = nearest_two(&q, vecs.iter().enumerate().map(|(i, v)| (i, v.as_slice()))).unwrap();
        let far = vec![1e6; 50];
        let more = nearest_two(
            &q,
            vecs.iter()
                .enumerate()
                .map(|(i, v)| (i, v.as_slice()))
                .chain([(99, far.as_slice())]),
        )
        .unwrap();
        assert_eq!(base, more);
    }

    proptest! {
        #[test]
        fn ratio_is_invariant_under_reflection(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
            let vecs: Vec<Vec<f64>> = (0..8).map(|_| draw(30)).collect();
            let q = draw(30);
            let u = draw(30);
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let u: Vec<f64> = u.iter().map(|x| x / norm).collect();
            let reflect = |x: &[f64]| -> Vec<f64> {
                let d: f64 = x.iter().zip(&u).map(|(a, b)| a * b).sum();
                x.iter().zip(&u).map(|(a, b)| a - 2.0 * d * b).collect()
            };
            let a = nearest_two(&q, vecs.iter().enumerate().map(|(i, v)| (i, v.as_slice()))).unwrap();
            let rv: Vec<Vec<f64>> = vecs.iter().map(|v| reflect(v)).collect();
            let b = nearest_two(&reflect(&q), rv.iter().enumerate().map(|(i, v)| (i, v.as_slice()))).unwrap();
            prop_assert_eq!(a.first, b.first);
            prop_assert!((a.ratio - b.ratio).abs() < 1e-9);
        }
    }
}
