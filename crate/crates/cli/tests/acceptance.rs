//! Binding acceptance criteria, one line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so the verdict lines are
//! always visible; exits non-zero when a binding criterion fails.

mod common;

use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use rollout_stab::climatology::{large_band_envelope, pooled_percentiles};
use rollout_stab::detectors::{blowup_for, seasonality_for, small_scale_ratios, BlowupParams, SeasonalityParams};
use rollout_stab::extremes::{qq_levels, qq_tails, regional_extreme_series, Side};
use rollout_stab::gridio::{GridSpec, RegionSpec, RolloutSeries};
use rollout_stab::memorize::{distance_ratio, NeighborIndex};
use rollout_stab::perturb::{
    error_trajectory, run_rollout, stats_table, ModelAdapter, PerturbationInputs, PerturbationKind, PerturbationSpec,
};
use rollout_stab::spectra::{spectrum_series, zonal_spectrum, Aggregation};
use rollout_stab::synth::{generate, generate_default, Regime, RegimeConfig, SynthAdapter, CLIMATE_STD};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ----------------------------------------------------------------- C1

/// Weighted mean over rows of |c_k| / n from a textbook O(n²) DFT.
fn naive_spectrum(field: &Array2<f32>, lats: &[f64]) -> Vec<f64> {
    let (ny, nx) = field.dim();
    let w: Vec<f64> = lats.iter().map(|l| l.to_radians().cos()).collect();
    let wsum: f64 = w.iter().sum();
    let twiddle: Vec<(f64, f64)> = (0..nx)
        .map(|m| {
            let phase = -2.0 * std::f64::consts::PI * m as f64 / nx as f64;
            (phase.cos(), phase.sin())
        })
        .collect();
    let mut out = vec![0.0; nx / 2 + 1];
    for i in 0..ny {
        for (k, o) in out.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for j in 0..nx {
                let (c, s) = twiddle[(k * j) % nx];
                let x = field[[i, j]] as f64;
                re += x * c;
                im += x * s;
            }
            *o += w[i] / wsum * re.hypot(im) / nx as f64;
        }
    }
    out
}

fn c1_spectral_oracle() -> Verdict {
    let start = Instant::now();
    let sizes = [64usize, 240, 1440];
    let worst = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let nx = sizes[i as usize % 3];
            let ny = 6;
            let grid = GridSpec::cell_centered(ny, nx).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let field = Array2::from_shape_fn((ny, nx), |_| rng.sample::<f64, _>(StandardNormal) as f32 * 3.0 + 1.0);
            let fast = zonal_spectrum(field.view(), &grid).unwrap();
            let slow = naive_spectrum(&field, grid.lats());
            fast.iter()
                .zip(&slow)
                .map(|(a, b)| (a - b).abs() / b.abs().max(1e-300))
                .fold(0.0f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let t = start.elapsed();
    verdict(
        worst < 1e-6 && t < Duration::from_secs(10),
        format!("max relative error {worst:.2e} over 100 fields, {}", secs(t)),
    )
}

// ----------------------------------------------------------------- C2

fn c2_blowup() -> Verdict {
    let start = Instant::now();
    let deltas = [0.02, 0.05, 0.1];
    let onsets = [50.0, 150.0, 300.0];
    let hits: Vec<(bool, String)> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let mut cfg = RegimeConfig::preset(Regime::Blowup);
            cfg.delta = Some(deltas[i as usize % 3]);
            cfg.onset_days = Some(onsets[(i as usize / 3) % 3]);
            cfg.seed = 100 + i;
            let (r, labels) = generate_default(&cfg, 730.0).unwrap();
            let (lo, hi) = labels.blowup.unwrap().window;
            let day = blowup_for(&r, "T2m", &BlowupParams::default()).unwrap().day.day();
            let ok = day.is_some_and(|d| d >= lo && d <= hi);
            (
                ok,
                format!(
                    "d={:?} t0={:?} got {day:?} in [{lo}, {hi:.1}]",
                    cfg.delta, cfg.onset_days
                ),
            )
        })
        .collect();
    let false_pos = (0..20u64)
        .into_par_iter()
        .filter(|s| {
            let mut cfg = RegimeConfig::preset(Regime::Stable);
            cfg.seed = 500 + s;
            let (r, _) = generate_default(&cfg, 730.0).unwrap();
            blowup_for(&r, "T2m", &BlowupParams::default())
                .unwrap()
                .day
                .day()
                .is_some()
        })
        .count();
    let inside = hits.iter().filter(|h| h.0).count();
    let t = start.elapsed();
    for (ok, line) in &hits {
        if !ok {
            println!("      miss: {line}");
        }
    }
    verdict(
        inside >= 19 && false_pos == 0 && t < Duration::from_secs(120),
        format!(
            "{inside}/20 BLOWUP runs in window, {false_pos}/20 STABLE flagged, {}",
            secs(t)
        ),
    )
}

// ----------------------------------------------------------------- C3

fn c3_seasonality() -> Verdict {
    let start = Instant::now();
    let mut rc = RegimeConfig::preset(Regime::Stable);
    rc.seed = 999;
    let (reference, _) = generate_default(&rc, 30.0 * 365.25).unwrap();
    let env = large_band_envelope(&reference, "T2m").unwrap();
    drop(reference);
    let ranges = env.ranges();
    let mean_range = ranges.iter().sum::<f64>() / ranges.len() as f64;
    let params = SeasonalityParams::default();

    let taus = [50.0, 100.0, 200.0];
    let drift: Vec<(bool, String)> = (0..10u64)
        .into_par_iter()
        .map(|i| {
            let mut cfg = RegimeConfig::preset(Regime::Drift);
            cfg.tau_days = Some(taus[i as usize % 3]);
            cfg.seed = 1000 + i;
            let (r, labels) = generate_default(&cfg, 1461.0).unwrap();
            let label = labels.drift.unwrap();
            let t_star = label.remaining_crossing(params.multiplier, mean_range);
            let day = seasonality_for(&r, "T2m", &env, &params).unwrap().day.day();
            let ok = match (t_star, day) {
                (Some(ts), Some(d)) => d >= ts && d <= ts + 60.0,
                _ => false,
            };
            (ok, format!("tau={:?} t*={t_star:?} got {day:?}", cfg.tau_days))
        })
        .collect();
    let stable_flagged = (0..10u64)
        .into_par_iter()
        .filter(|s| {
            let mut cfg = RegimeConfig::preset(Regime::Stable);
            cfg.seed = 40 + s;
            let (r, _) = generate_default(&cfg, 1461.0).unwrap();
            seasonality_for(&r, "T2m", &env, &params).unwrap().day.day().is_some()
        })
        .count();
    let inside = drift.iter().filter(|d| d.0).count();
    for (ok, line) in &drift {
        if !ok {
            println!("      miss: {line}");
        }
    }
    verdict(
        inside == 10 && stable_flagged == 0,
        format!(
            "{inside}/10 DRIFT losses in [t*, t*+60], {stable_flagged}/10 STABLE flagged (30-year reference, mean range {mean_range:.4}), {}",
            secs(start.elapsed())
        ),
    )
}

// ----------------------------------------------------------------- C4

fn doubled_pair() -> (RolloutSeries, RolloutSeries) {
    let grid = GridSpec::cell_centered(4, 360).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = Array2::from_shape_fn((4, 360), |_| rng.sample::<f64, _>(StandardNormal) as f32);
    let n = 40 * 4;
    let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
    let pred = Array4::from_shape_fn(
        (n, 1, 4, 360),
        |(t, _, i, j)| {
            if t < 8 {
                base[[i, j]]
            } else {
                2.0 * base[[i, j]]
            }
        },
    );
    let refr = Array4::from_shape_fn(
        (n, 1, 4, 360),
        |(t, _, i, j)| {
            if t < 8 {
                0.5 * base[[i, j]]
            } else {
                base[[i, j]]
            }
        },
    );
    let names = vec!["x".to_string()];
    (
        RolloutSeries::new(grid.clone(), names.clone(), t0, 21600, pred).unwrap(),
        RolloutSeries::new(grid, names, t0, 21600, refr).unwrap(),
    )
}

fn c4_small_scale() -> Verdict {
    let start = Instant::now();
    let run = |regime: Regime, seed: u64| {
        let mut cfg = RegimeConfig::preset(regime);
        cfg.seed = seed;
        generate_default(&cfg, 730.0).unwrap().0
    };
    let (blur, sharpen, stable) = (run(Regime::Blur, 11), run(Regime::Sharpen, 12), run(Regime::Stable, 13));
    let daily = |r: &RolloutSeries| spectrum_series(r, &r.variables()[0], Aggregation::Daily).unwrap();
    let reference = daily(&stable);
    let blur_ratio = small_scale_ratios(&daily(&blur), &reference, None)
        .unwrap()
        .ratio_vs_self;
    let sharpen_ratio = small_scale_ratios(&daily(&sharpen), &reference, None)
        .unwrap()
        .ratio_vs_self;
    let sharpen_blowup = blowup_for(&sharpen, "T2m", &BlowupParams::default()).unwrap().day;

    let (p, q) = doubled_pair();
    let d = small_scale_ratios(&daily(&p), &daily(&q), None).unwrap();
    // frames of the first two days are the base field, later ones twice it
    let doubling_err = (d.ratio_vs_self - 2.0).abs().max((d.ratio_vs_reference - 2.0).abs());
    let pass = blur_ratio < 1.0 && sharpen_ratio > 1.0 && sharpen_blowup.is_censored() && doubling_err <= 1e-9;
    verdict(
        pass,
        format!(
            "BLUR ratio_vs_self {blur_ratio:.3}, SHARPEN {sharpen_ratio:.3} (blow-up {sharpen_blowup}), doubling |ratio-2| {doubling_err:.1e}, {}",
            secs(start.elapsed())
        ),
    )
}

// ----------------------------------------------------------------- C5

fn trajectory(cfg: &RegimeConfig, steps: usize) -> Vec<f64> {
    let mut adapter = SynthAdapter::new(cfg).unwrap();
    let start = cfg.start_time;
    let init = adapter.initial_state(start);
    let names = adapter.variables().to_vec();
    let clean = run_rollout(
        &mut adapter,
        init.view(),
        start,
        steps,
        None,
        PerturbationInputs::default(),
    )
    .unwrap()
    .into_result()
    .unwrap();
    let stats = stats_table(&clean, &names).unwrap();
    let spec = PerturbationSpec {
        kind: PerturbationKind::White,
        k: 1.0,
        seed: 5,
        ..PerturbationSpec::default()
    };
    let inputs = PerturbationInputs {
        stats: Some(&stats),
        image: None,
    };
    let perturbed = run_rollout(&mut adapter, init.view(), start, steps, Some(&spec), inputs)
        .unwrap()
        .into_result()
        .unwrap();
    error_trajectory(&clean, &perturbed, "T2m").unwrap()
}

/// A sharpening model that keeps what it is given: the bands outside the
/// small one are close to neutral, and the clamp sits well above the
/// perturbation's small-scale amplitude.
fn undamped_sharpener() -> RegimeConfig {
    let mut cfg = RegimeConfig::preset(Regime::Sharpen);
    cfg.gains.large = 0.9995;
    cfg.gains.gap = 0.9999;
    cfg.gains.medium = 0.9999;
    let keep = |s: f64, g: f64| s * (1.0 - g * g).sqrt();
    cfg.noise.large = keep(CLIMATE_STD.large, cfg.gains.large);
    cfg.noise.gap = keep(CLIMATE_STD.gap, cfg.gains.gap);
    cfg.noise.medium = keep(CLIMATE_STD.medium, cfg.gains.medium);
    cfg.cap = cfg.cap.map(|c| 10.0 * c);
    cfg
}

fn c5_v_shape() -> Verdict {
    let start = Instant::now();
    // ten days of six-hourly steps
    let steps = 40;
    let blur = trajectory(&RegimeConfig::preset(Regime::Blur), steps);
    let sharpen = trajectory(&undamped_sharpener(), steps);
    let decreasing = blur[..=5].windows(2).all(|w| w[1] < w[0]);
    let floor = blur.iter().cloned().fold(f64::INFINITY, f64::min);
    let settled = blur[5..].iter().all(|e| (e / floor - 1.0).abs() <= 0.2);
    let rising = sharpen.windows(2).all(|w| w[1] >= w[0]);
    let t = start.elapsed();
    verdict(
        decreasing && settled && rising && t < Duration::from_secs(30),
        format!(
            "BLUR error {:.3} -> {:.3} by step 5, floor {floor:.3}, max after step 5 {:.2}x floor; SHARPEN {:.3} -> {:.3} non-decreasing={rising}, {}",
            blur[0],
            blur[5],
            blur[5..].iter().cloned().fold(0.0, f64::max) / floor,
            sharpen[0],
            sharpen[steps],
            secs(t)
        ),
    )
}

// ----------------------------------------------------------------- C6

fn c6_memorization() -> Verdict {
    let start = Instant::now();
    let daily = |seed: u64, days: f64| {
        let mut cfg = RegimeConfig::preset(Regime::Stable);
        cfg.n_lat = 8;
        cfg.n_lon = 72;
        cfg.seed = seed;
        generate(&cfg, days, 86_400).unwrap().0
    };
    let training = daily(21, 40.0 * 365.25);
    let names = training.variables().to_vec();
    let index = NeighborIndex::build(&training, &names).unwrap();

    let t = 5000;
    let time = training.timestamp(t);
    let copy = distance_ratio(training.frame(t), &names, time, &index).unwrap();

    // near copy: noise whose embedded size is 1% of the gap to the nearest
    // other snapshot
    let spacing = copy.d2;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let noise = training.frame(t).mapv(|_| rng.sample::<f64, _>(StandardNormal) as f32);
    let x0 = index.embed(training.frame(t), &names).unwrap();
    let probe = &training.frame(t) + &noise;
    let x1 = index.embed(probe.view(), &names).unwrap();
    let size = x0.iter().zip(&x1).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let near = &training.frame(t) + &noise.mapv(|e| e * (0.01 * spacing / size) as f32);
    let near_ratio = distance_ratio(near.view(), &names, time, &index).unwrap().ratio;

    let queries = daily(22, 365.0);
    let mut ratios: Vec<f64> = (0..100)
        .into_par_iter()
        .map(|q| {
            let i = q * 3 + 1;
            distance_ratio(queries.frame(i), &names, queries.timestamp(i), &index)
                .unwrap()
                .ratio
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    let median = 0.5 * (ratios[49] + ratios[50]);
    verdict(
        copy.ratio == 0.0 && near_ratio < 0.5 && median > 0.8,
        format!(
            "copy ratio {}, near copy {near_ratio:.4}, median of 100 fresh queries {median:.3} ({} snapshots), {}",
            copy.ratio,
            index.len(),
            secs(start.elapsed())
        ),
    )
}

// ----------------------------------------------------------------- C7

fn c7_extremes() -> Verdict {
    let start = Instant::now();
    let (nt, ny, nx) = (1000, 20, 50);
    let grid = GridSpec::cell_centered(ny, nx).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let data = Array4::from_shape_fn((nt, 1, ny, nx), |_| rng.sample::<f64, _>(StandardNormal) as f32);
    let shrunk = data.mapv(|x| 0.5 * x);
    let t0 = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap();
    let names = vec!["x".to_string()];
    let reference = RolloutSeries::new(grid.clone(), names.clone(), t0, 21600, data).unwrap();
    let model = RolloutSeries::new(grid, names, t0, 21600, shrunk).unwrap();

    let global = RegionSpec::global();
    let p90 = pooled_percentiles(&reference, "x", &global, &[90.0]).unwrap().values[0];

    let box_region = RegionSpec::new("box", -30.0, 30.0, 0.0, 90.0).unwrap();
    let r = regional_extreme_series(&reference, "x", &box_region).unwrap();
    let m = regional_extreme_series(&model, "x", &box_region).unwrap();
    let levels = qq_levels(Side::Hot, 0.1).unwrap();
    let own = qq_tails(&r.max, &r.max, &levels).unwrap();
    let diagonal = own.iter().all(|p| p.model == p.reference);
    let shrink = qq_tails(&m.max, &r.max, &levels).unwrap();
    let below = shrink.iter().all(|p| p.model < p.reference);
    verdict(
        (p90 - 1.2816).abs() <= 0.01 && diagonal && below,
        format!(
            "pooled P90 {p90:.4} of 10^6 normals, self QQ on diagonal={diagonal}, shrunk model below at all {} levels={below}, {}",
            levels.len(),
            secs(start.elapsed())
        ),
    )
}

// ----------------------------------------------------------------- C9

fn c9_determinism() -> Verdict {
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let fa = common::run_pipeline(a.path(), &[]);
    let fb = common::run_pipeline(b.path(), &[]);
    let fc = common::run_pipeline(c.path(), &[("ROLLOUT_STAB_THREADS", "1")]);
    let mut differing = Vec::new();
    if fa != fb || fa != fc {
        differing.push("file sets".to_string());
    }
    for f in &fa {
        let x = std::fs::read(a.path().join(f)).unwrap();
        for other in [&b, &c] {
            if std::fs::read(other.path().join(f)).ok().as_ref() != Some(&x) {
                differing.push(f.display().to_string());
            }
        }
    }
    differing.dedup();
    verdict(
        differing.is_empty(),
        format!(
            "{} output files from {} subcommand runs byte-identical across 3 runs (one single-threaded){}, {}",
            fa.len(),
            common::PIPELINE.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!("; differing: {differing:?}")
            },
            secs(start.elapsed())
        ),
    )
}

fn main() {
    // `cargo test -- <filter>` style arguments select criteria by label
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: Vec<(&str, &str, fn() -> Verdict)> = vec![
        ("C1", "spectral oracle", c1_spectral_oracle),
        ("C2", "blow-up detector", c2_blowup),
        ("C3", "seasonality detector", c3_seasonality),
        ("C4", "small-scale ratios", c4_small_scale),
        ("C5", "V-shaped error", c5_v_shape),
        ("C6", "memorization", c6_memorization),
        ("C7", "extremes", c7_extremes),
        ("C9", "determinism", c9_determinism),
    ];
    let mut failed = Vec::new();
    for (label, name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| label.eq_ignore_ascii_case(x)) {
            continue;
        }
        let v = f();
        println!(
            "{label} {name}: {} ({})",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        if !v.pass {
            failed.push(label);
        }
    }
    if filters.is_empty() || filters.iter().any(|x| x.eq_ignore_ascii_case("C8")) {
        println!(
            "C8 full-scale pass-through: NOT RUN (needs real model and reanalysis rollouts; documented in the guide)"
        );
    }
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
