use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use rollout_stab::climatology::{build_envelope, daily_large_band, pooled_percentiles, ClimatologyEnvelope};
use rollout_stab::detectors::{
    aggregate_runs, blowup_for, report_csv, seasonal_cycle_rmse, seasonality_for, small_scale_ratios, stability_report,
    BlowupParams, ReportConfig, SeasonalityParams, StabilityReport,
};
use rollout_stab::extremes::{
    events_csv, exceedance_csv, exceedance_curve, exceedance_levels, matched_window, qq_csv, qq_levels, qq_tails,
    regional_extreme_series, EventSeries, Side,
};
use rollout_stab::gridio::{
    builtin_region, builtin_regions, load_regions, read_rollout, write_rollout_with_provenance, RegionSpec,
    RolloutSeries,
};
use rollout_stab::memorize::{distance_ratio, NeighborIndex, MEMORIZED_RATIO};
use rollout_stab::perturb::{
    error_trajectory, load_stats, run_rollout, stats_table, ExternalAdapter, ModelAdapter, PerturbationInputs,
    PerturbationSpec,
};
use rollout_stab::spectra::{spectrum_series, Aggregation};
use rollout_stab::synth::{generate, Regime, RegimeConfig, SynthAdapter};
use rollout_stab::Error;

use crate::args::*;
use crate::manifest::{write_csv, write_json, RunManifest};

const DAYS: &str = "days since the first sample; {censored, horizon} when nothing was detected";
const RATIO: &str = "dimensionless";
const AMPLITUDE: &str = "mean |Fourier coefficient|, units of the variable";

pub fn run(command: &Command, config: Option<&Path>) -> anyhow::Result<()> {
    let name = command.name();
    match command {
        Command::Report(a) => report(a, manifest(name, a, None, config)?),
        Command::Spectra(a) => spectra(a, manifest(name, a, None, config)?),
        Command::Blowup(a) => blowup(a, manifest(name, a, None, config)?),
        Command::Seasonality(a) => seasonality(a, manifest(name, a, None, config)?),
        Command::Smallscale(a) => smallscale(a, manifest(name, a, None, config)?),
        Command::CycleRmse(a) => cycle_rmse(a, manifest(name, a, None, config)?),
        Command::Perturb(a) => perturb(a, manifest(name, a, Some(a.seed), config)?),
        Command::Synth(a) => synth(a, manifest(name, a, Some(a.seed), config)?),
        Command::Extremes(a) => extremes(a, manifest(name, a, None, config)?),
        Command::Memorize(a) => memorize(a, manifest(name, a, None, config)?),
        Command::Aggregate(a) => aggregate(a, manifest(name, a, None, config)?),
    }
}

fn manifest(
    name: &'static str,
    args: &impl Serialize,
    seed: Option<u64>,
    config: Option<&Path>,
) -> anyhow::Result<RunManifest> {
    let mut m = RunManifest::new(name, args, seed)?;
    if let Some(c) = config {
        m.input(c)?;
    }
    Ok(m)
}

fn load(path: &Path, m: &mut RunManifest) -> anyhow::Result<RolloutSeries> {
    m.input(path)?;
    read_rollout(path).with_context(|| format!("reading {}", path.display()))
}

/// `wanted`, checked against the rollout, or all of its variables.
fn pick_variables(r: &RolloutSeries, wanted: &[String]) -> anyhow::Result<Vec<String>> {
    if wanted.is_empty() {
        return Ok(r.variables().to_vec());
    }
    for w in wanted {
        r.checked_variable(w)?;
    }
    Ok(wanted.to_vec())
}

fn first_or(r: &RolloutSeries, name: &Option<String>) -> anyhow::Result<String> {
    match name {
        Some(n) => {
            r.checked_variable(n)?;
            Ok(n.clone())
        }
        None => r
            .variables()
            .first()
            .cloned()
            .ok_or_else(|| anyhow::anyhow!("rollout has no variables")),
    }
}

fn blowup_params(f: &BlowupFlags) -> BlowupParams {
    BlowupParams {
        smoothing_days: f.smoothing_days,
        window_days: f.window_days,
        r2_threshold: f.r2_threshold,
        stride_days: f.stride_days,
        min_growth: f.min_growth,
    }
}

fn seasonality_params(f: &SeasonalityFlags) -> SeasonalityParams {
    SeasonalityParams {
        multiplier: f.multiplier,
        run_days: f.run_days,
    }
}

fn year_span(text: &Option<String>) -> anyhow::Result<Option<(i32, i32)>> {
    let Some(t) = text else { return Ok(None) };
    let (a, b) = t
        .split_once(':')
        .ok_or_else(|| anyhow::anyhow!("--envelope-years expects FROM:TO, got `{t}`"))?;
    let (a, b): (i32, i32) = (a.trim().parse()?, b.trim().parse()?);
    if a > b {
        bail!("--envelope-years: {a} is after {b}");
    }
    Ok(Some((a, b)))
}

fn report(a: &ReportArgs, mut m: RunManifest) -> anyhow::Result<()> {
    let prediction = load(&a.input, &mut m)?;
    let reference = load(&a.reference, &mut m)?;
    let cfg = ReportConfig {
        blowup: blowup_params(&a.blowup),
        seasonality: seasonality_params(&a.seasonality),
        envelope_years: year_span(&a.seasonality.envelope_years)?,
        variables: (!a.variables.is_empty()).then(|| a.variables.clone()),
    };
    let run = match &a.run {
        Some(r) => r.clone(),
        None => a
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into()),
    };
    let rep = stability_report(&run, &prediction, &reference, &cfg)?;
    let units = [
        ("blowup_days", DAYS),
        ("seasonality_loss_days", DAYS),
        ("small_scale_vs_reference", RATIO),
        ("small_scale_vs_self", RATIO),
    ];
    write_json(a.output.as_deref(), &m, &units, &rep)?;
    if let Some(p) = &a.csv {
        write_csv(Some(p), &m, &units, &report_csv(std::slice::from_ref(&rep)))?;
    }
    Ok(())
}

fn aggregate(a: &AggregateArgs, mut m: RunManifest) -> anyhow::Result<()> {
    let mut reports = Vec::new();
    for p in &a.input {
        m.input(p)?;
        let doc: Value =
            serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?;
        let body = doc.get("result").cloned().unwrap_or(doc);
        let r: StabilityReport =
            serde_json::from_value(body).with_context(|| format!("{} is not a stability report", p.display()))?;
        reports.push(r);
    }
    let agg = aggregate_runs(&reports)?;
    let units = [
        ("blowup_days", "days; censored runs count as the horizon"),
        ("seasonality_loss_days", "days; censored runs count as the horizon"),
        ("small_scale_vs_reference", RATIO),
        ("small_scale_vs_self", RATIO),
        ("std", "sample standard deviation across runs"),
    ];
    write_json(a.output.as_deref(), &m, &units, &agg)?;
    if let Some(p) = &a.csv {
        write_csv(Some(p), &m, &units, &agg.to_csv())?;
    }
    Ok(())
}

fn opt_num(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

fn spectra(a: &SpectraArgs, mut m: RunManifest) -> anyhow::Result<()> {
    let r = load(&a.input, &mut m)?;
    let var = first_or(&r, &a.variable)?;
    let agg = if a.daily {
        Aggregation::Daily
    } else {
        Aggregation::PerStep
    };
    let s = spectrum_series(&r, &var, agg)?;

    let mut body = String::from("timestamp,band_large,band_medium,band_small\n");
    for (i, t) in s.timestamps.iter().enumerate() {
        body.push_str(&format!(
            "{},{},{},{}\n",
            t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            s.band_large[i],
            opt_num(s.band_medium.as_ref().map(|b| b[i])),
            opt_num(s.band_small.as_ref().map(|b| b[i])),
        ));
    }
    let units = [("band_*", AMPLITUDE), ("timestamp", "UTC")];
    write_csv(a.output.as_deref(), &m, &units, &body)?;

    if let Some(p) = &a.full {
        let mut full = String::from("timestamp,k,wavelength_km,amplitude\n");
        for (i, t) in s.timestamps.iter().enumerate() {
            let ts = t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
            for (k, wl) in s.wavenumbers.iter().zip(&s.wavelengths_km) {
                full.push_str(&format!("{ts},{k},{wl},{}\n", s.energy[[i, *k]]));
            }
        }
        let units = [("amplitude", AMPLITUDE), ("wavelength_km", "km at the equator")];
        write_csv(Some(p), &m, &units, &full)?;
    }
    Ok(())
}

fn blowup(a: &BlowupArgs, mut m: RunManifest) -> anyhow::Result<()> {
    let r = load(&a.input, &mut m)?;
    let params = blowup_params(&a.params);
    let results = pick_variables(&r, &a.variables)?
        .iter()
        .map(|v| blowup_for(&r, v, &params))
        .collect::<Result<Vec<_>, _>>()?;
    let units = [("day", DAYS), ("slope", "log-deviation per day"), ("r2", RATIO)];
    write_json(a.output.as_deref(), &m, &units, &results)
}

fn seasonality(a: &SeasonalityArgs, mut m: RunManifest) -> anyhow::Result<()> {
    let r = load(&a.input, &mut m)?;
    let params = seasonality_params(&a.params);
    let names = pick_variables(&r, &a.variables)?;
    let envelopes: Vec<ClimatologyEnvelope> = match (&a.reference, &a.envelope) {
        (_, Some(path)) => {
            if names.len() != 1 {
                bail!("--envelope needs exactly one variable in --variables");
            }
            m.input(path)?;
            vec![ClimatologyEnvelope::load(path).with_context(|| format!("reading {}", path.display()))?]
        }
        (Some(path), None) => {
            let reference = load(path, &mut m)?;
            let years = year_span(&a.params.envelope_years)?;
            names
                .iter()
                .map(|v| {
                    let mut daily = daily_large_band(&reference, v)?;
                    if let Some((lo, hi)) = years {
                        daily.retain(|(d, _)| (lo..=hi).contains(&chrono::Datelike::year(d)));
                    }
                    build_envelope(&daily, &format!("{v}:band_large"))
                })
                .collect::<Result<_, _>>()?
        }
        (None, None) => bail!("either --reference or --envelope is required"),
    };
    if let Some(dir) = &a.save_envelopes {
        std::fs::create_dir_all(dir)?;
        for (v, env) in names.iter().zip(&envelopes) {
            env.save(dir.join(format!("{v}.envelope.json")))?;
        }
    }
    let results = names
        .iter()
        .zip(&envelopes)
        .map(|(v, env)| seasonality_for(&r, v, env, &params))
        .collect::<Result<Vec<_>, _>>()?;
    let units = [("day", DAYS), ("run_length", "days")];
    write_json(a.output.as_deref(), &m, &units, &results)
}

fn smallscale(a: &SmallscaleArgs, mut m: RunManifest) -> anyhow::Result<()> {
    let r = load(&a.input, &mut m)?;
    let reference = load(&a.reference, &mut m)?;
    let results = pick_variables(&r, &a.variables)?
        .iter()
        .map(|v| {
            let p = spectrum_series(&r, v, Aggregation::Daily)?;
            let q = spectrum_series(&reference, v, Aggregation::Daily)?;
            small_scale_ratios(&p, &q, a.blowup_day)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let units = [("ratio_vs_reference", RATIO), ("ratio_vs_self", RATIO)];
    write_json(a.output.as_deref(), &m, &units, &results)
}

#[derive(Serialize)]
struct CycleRmse {
    variable: String,
    rmse: f64,
}

fn cycle_rmse(a: &CycleRmseArgs, mut m: RunManifest) -> anyhow::Result<()> {
    let r = load(&a.input, &mut m)?;
    let reference = load(&a.reference, &mut m)?;
    let results = pick_variables(&r, &a.variables)?
        .into_iter()
        .map(|v| {
            let rmse = seasonal_cycle_rmse(&r, &reference, &v)?;
            Ok(CycleRmse { variable: v, rmse })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let units = [("rmse", "units of the variable, latitude weighted over 12 monthly means")];
    write_json(a.output.as_deref(), &m, &units, &results)
}

#[derive(Serialize)]
struct SynthParameters<'a> {
    flags: &'a SynthArgs,
    generator: &'a RegimeConfig,
}

fn synth_config(a: &SynthArgs, m: &mut RunManifest) -> anyhow::Result<RegimeConfig> {
    let regime: Regime = a.regime.parse()?;
    let mut cfg = match &a.regime_config {
        Some(p) => {
            m.input(p)?;
            let cfg = RegimeConfig::load(p).with_context(|| format!("reading {}", p.display()))?;
            if cfg.regime != regime && !a.regime.eq_ignore_ascii_case("STABLE") {
                bail!("--regime {} disagrees with {}", a.regime, p.display());
            }
            cfg
        }
        None => RegimeConfig::preset(regime),
    };
    if let Some(d) = a.delta {
        cfg.delta = Some(d);
    }
    if let Some(d) = a.onset_days {
        cfg.onset_days = Some(d);
    }
    if let Some(t) = a.tau_days {
        cfg.tau_days = Some(t);
    }
    if let Some(n) = a.n_lat {
        cfg.n_lat = n;
    }
    if let Some(n) = a.n_lon {
        cfg.n_lon = n;
    }
    if !a.variables.is_empty() {
        cfg.variables = a.variables.clone();
    }
    if let Some(t) = a.start_time {
        cfg.start_time = t;
    }
    cfg.seed = a.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn synth(a: &SynthArgs, mut m: RunManifest) -> anyhow::Result<()> {
    let cfg = synth_config(a, &mut m)?;
    m.parameters = serde_json::to_value(SynthParameters {
        flags: a,
        generator: &cfg,
    })?;
    let (series, labels) = generate(&cfg, a.horizon_days, a.step_seconds)?;
    write_rollout_with_provenance(&series, &m.to_value(), &a.output)
        .with_context(|| format!("writing {}", a.output.display()))?;
    if let Some(p) = &a.labels {
        let units = [
            ("onset_days", "days"),
            ("expected_day", "days since the first sample"),
            ("window", "days since the first sample"),
            ("tau_days", "days"),
            ("band_large_amplitude", AMPLITUDE),
        ];
        write_json(Some(p), &m, &units, &labels)?;
    }
    Ok(())
}

enum AdapterChoice {
    Synth(SynthAdapter),
    External(ExternalAdapter),
}

impl AdapterChoice {
    fn as_dyn(&mut self) -> &mut dyn ModelAdapter {
        match self {
            AdapterChoice::Synth(a) => a,
            AdapterChoice::External(a) => a,
        }
    }
}

fn perturb(a: &PerturbArgs, mut m: RunManifest) -> anyhow::Result<()> {
    let init_series = match &a.init {
        Some(p) => Some(load(p, &mut m)?),
        None => None,
    };
    let (kind, rest) = a
        .adapter
        .split_once(':')
        .ok_or_else(|| anyhow::anyhow!("--adapter expects synth:<REGIME|config.json> or external:<adapter.json>"))?;
    let (mut adapter, default_start) = match kind {
        "synth" => {
            let cfg = match rest.parse::<Regime>() {
                Ok(regime) => RegimeConfig::preset(regime),
                Err(_) => {
                    let p = PathBuf::from(rest);
                    m.input(&p)?;
                    RegimeConfig::load(&p).with_context(|| format!("reading {}", p.display()))?
                }
            };
            let start = cfg.start_time;
            (AdapterChoice::Synth(SynthAdapter::new(&cfg)?), Some(start))
        }
        "external" => {
            let init = init_series
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("an external adapter needs --init"))?;
            let p = PathBuf::from(rest);
            m.input(&p)?;
            let ext =
                ExternalAdapter::load(&p, init.grid().clone()).with_context(|| format!("reading {}", p.display()))?;
            (AdapterChoice::External(ext), None)
        }
        other => bail!("unknown adapter kind `{other}`"),
    };
    let start = a
        .start_time
        .or_else(|| init_series.as_ref().map(|s| s.start_time()))
        .or(default_start)
        .expect("external adapters always have an init file");
    let model = adapter.as_dyn();
    let names = model.variables().to_vec();

    let init = match (&init_series, &adapter) {
        (Some(s), _) => {
            if s.variables() != names.as_slice() {
                bail!(
                    "init file has variables {:?}, the model expects {:?}",
                    s.variables(),
                    names
                );
            }
            s.frame(0).to_owned()
        }
        (None, AdapterChoice::Synth(sa)) => sa.initial_state(start),
        (None, AdapterChoice::External(_)) => unreachable!("checked above"),
    };
    let model = adapter.as_dyn();

    let spec = PerturbationSpec {
        kind: a.kind.parse()?,
        k: a.k,
        correlation_length: a.correlation_length,
        target: a.target.parse()?,
        time_shift_days: a.time_shift_days,
        seed: a.seed,
    };
    spec.validate()?;

    let clean = run_rollout(model, init.view(), start, a.steps, None, PerturbationInputs::default())?.into_result()?;
    let stats = match &a.stats {
        Some(p) => {
            m.input(p)?;
            load_stats(p).with_context(|| format!("reading {}", p.display()))?
        }
        None => stats_table(&clean, &names)?,
    };
    let image_series = match &a.image {
        Some(p) => Some(load(p, &mut m)?),
        None => None,
    };
    let inputs = PerturbationInputs {
        stats: Some(&stats),
        image: image_series.as_ref().map(|s| s.field(0, 0)),
    };
    let outcome = run_rollout(model, init.view(), start, a.steps, Some(&spec), inputs)?;

    let provenance = m.to_value();
    write_rollout_with_provenance(&outcome.series, &provenance, &a.output)
        .with_context(|| format!("writing {}", a.output.display()))?;
    if let Some(p) = &a.clean {
        write_rollout_with_provenance(&clean, &provenance, p).with_context(|| format!("writing {}", p.display()))?;
    }
    let perturbed = outcome.into_result()?;
    if let Some(p) = &a.errors {
        let traj: Vec<Vec<f64>> = names
            .iter()
            .map(|v| error_trajectory(&clean, &perturbed, v))
            .collect::<Result<_, _>>()?;
        let mut body = String::from("step,timestamp");
        for v in &names {
            body.push(',');
            body.push_str(v);
        }
        body.push('\n');
        for t in 0..perturbed.n_times() {
            body.push_str(&format!(
                "{t},{}",
                perturbed
                    .timestamp(t)
                    .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
            ));
            for e in &traj {
                body.push_str(&format!(",{}", e[t]));
            }
            body.push('\n');
        }
        let units = [("error", "latitude-weighted RMSE, units of the variable")];
        write_csv(Some(p), &m, &units, &body)?;
    }
    Ok(())
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Serialize)]
struct RegionSummary {
    region: String,
    skipped: Option<String>,
    matched_steps: usize,
    p90: Option<f64>,
    p10: Option<f64>,
    hot_events: Option<usize>,
    cold_events: Option<usize>,
    hot_thresholds: BTreeMap<String, f64>,
    cold_thresholds: BTreeMap<String, f64>,
}

fn extremes(a: &ExtremesArgs, mut m: RunManifest) -> anyhow::Result<()> {
    let model = load(&a.input, &mut m)?;
    let reference = load(&a.reference, &mut m)?;
    let var = first_or(&model, &a.variable)?;
    reference.checked_variable(&var)?;

    let (regions, defaults): (Vec<RegionSpec>, bool) = match &a.regions_file {
        Some(p) => {
            m.input(p)?;
            (
                load_regions(p).with_context(|| format!("reading {}", p.display()))?,
                false,
            )
        }
        None if !a.regions.is_empty() => (
            a.regions
                .iter()
                .map(|n| builtin_region(n).ok_or_else(|| anyhow::anyhow!("unknown region `{n}`")))
                .collect::<anyhow::Result<_>>()?,
            false,
        ),
        None => (builtin_regions(), true),
    };
    std::fs::create_dir_all(&a.out_dir)?;

    let hot_q = qq_levels(Side::Hot, a.qq_step)?;
    let cold_q = qq_levels(Side::Cold, a.qq_step)?;
    let mut summaries = Vec::new();
    for region in &regions {
        let model_ext = match regional_extreme_series(&model, &var, region) {
            Ok(x) => x,
            // a built-in region narrower than a coarse grid cell is skipped,
            // a requested one is an error
            Err(e @ Error::EmptyRegion(_)) if defaults => {
                summaries.push(RegionSummary {
                    region: region.name.clone(),
                    skipped: Some(e.to_string()),
                    matched_steps: 0,
                    p90: None,
                    p10: None,
                    hot_events: None,
                    cold_events: None,
                    hot_thresholds: BTreeMap::new(),
                    cold_thresholds: BTreeMap::new(),
                });
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let ref_ext = regional_extreme_series(&reference, &var, region)?;
        let (mm, rr) = matched_window(&model_ext, &ref_ext)?;

        let mut qq = qq_csv(&qq_tails(&mm.max, &rr.max, &hot_q)?, Side::Hot);
        let cold = qq_csv(&qq_tails(&mm.min, &rr.min, &cold_q)?, Side::Cold);
        qq.push_str(cold.split_once('\n').map_or("", |(_, rest)| rest));

        let hot_set = pooled_percentiles(&reference, &var, region, &exceedance_levels(Side::Hot))?;
        let cold_set = pooled_percentiles(&reference, &var, region, &exceedance_levels(Side::Cold))?;
        let mut exc = exceedance_csv(
            &exceedance_curve(&mm.max, Some(&rr.max), &hot_set, Side::Hot)?,
            Side::Hot,
        );
        let cold = exceedance_csv(
            &exceedance_curve(&mm.min, Some(&rr.min), &cold_set, Side::Cold)?,
            Side::Cold,
        );
        exc.push_str(cold.split_once('\n').map_or("", |(_, rest)| rest));

        let event_set = pooled_percentiles(&reference, &var, region, &[10.0, 90.0])?;
        let events = EventSeries::new(model_ext, &event_set)?;

        let base = slug(&region.name);
        let units = [
            ("reference/model/threshold", "units of the variable"),
            ("level_pct", "percent"),
            ("fractions", "share of time steps"),
        ];
        write_csv(Some(&a.out_dir.join(format!("{base}_qq.csv"))), &m, &units, &qq)?;
        write_csv(
            Some(&a.out_dir.join(format!("{base}_exceedance.csv"))),
            &m,
            &units,
            &exc,
        )?;
        write_csv(
            Some(&a.out_dir.join(format!("{base}_events.csv"))),
            &m,
            &[
                ("max/min", "units of the variable"),
                ("hot/cold", "1 beyond P90/P10 of the reference"),
            ],
            &events_csv(&events),
        )?;

        let table = |set: &rollout_stab::climatology::ThresholdSet| {
            set.levels
                .iter()
                .zip(&set.values)
                .map(|(l, v)| (format!("P{l}"), *v))
                .collect::<BTreeMap<_, _>>()
        };
        summaries.push(RegionSummary {
            region: region.name.clone(),
            skipped: None,
            matched_steps: mm.len(),
            p90: Some(events.p90),
            p10: Some(events.p10),
            hot_events: Some(events.hot_count()),
            cold_events: Some(events.cold_count()),
            hot_thresholds: table(&hot_set),
            cold_thresholds: table(&cold_set),
        });
    }
    let units = [
        ("p90/p10/thresholds", "units of the variable"),
        ("events", "time steps"),
    ];
    write_json(Some(&a.out_dir.join("summary.json")), &m, &units, &summaries)
}

#[derive(Serialize)]
struct MemorizeRow {
    time: chrono::DateTime<chrono::Utc>,
    ratio: f64,
    d1: f64,
    d2: f64,
    neighbor_time: chrono::DateTime<chrono::Utc>,
    memorized: bool,
}

#[derive(Serialize)]
struct MemorizeResult {
    samples: usize,
    memorized: usize,
    threshold: f64,
    median_ratio: f64,
    min_ratio: f64,
    points: Vec<MemorizeRow>,
}

fn memorize(a: &MemorizeArgs, mut m: RunManifest) -> anyhow::Result<()> {
    if a.every == 0 {
        bail!("--every must be at least 1");
    }
    let r = load(&a.input, &mut m)?;
    let training = load(&a.training, &mut m)?;
    let index = NeighborIndex::build(&training, r.variables())?;
    let steps: Vec<usize> = (0..r.n_times()).step_by(a.every).collect();
    if steps.is_empty() {
        bail!("{} holds no samples", a.input.display());
    }
    let points = steps
        .par_iter()
        .map(|t| {
            let time = r.timestamp(*t);
            let n = distance_ratio(r.frame(*t), r.variables(), time, &index)?;
            Ok(MemorizeRow {
                time,
                ratio: n.ratio,
                d1: n.d1,
                d2: n.d2,
                neighbor_time: index.time(n.first),
                memorized: n.memorized(),
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let mut ratios: Vec<f64> = points.iter().map(|p| p.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    let median = if n % 2 == 1 {
        ratios[n / 2]
    } else {
        0.5 * (ratios[n / 2 - 1] + ratios[n / 2])
    };
    let result = MemorizeResult {
        samples: n,
        memorized: points.iter().filter(|p| p.memorized).count(),
        threshold: MEMORIZED_RATIO,
        median_ratio: median,
        min_ratio: ratios[0],
        points,
    };
    let units = [
        ("ratio", "nearest over second-nearest distance, dimensionless"),
        ("d1/d2", "standardised, area-weighted Euclidean distance"),
    ];
    write_json(a.output.as_deref(), &m, &units, &result)?;
    if let Some(p) = &a.csv {
        let mut body = String::from("timestamp,ratio,d1,d2,neighbor,memorized\n");
        for row in &result.points {
            body.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                row.ratio,
                row.d1,
                row.d2,
                row.neighbor_time.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                u8::from(row.memorized)
            ));
        }
        write_csv(Some(p), &m, &units, &body)?;
    }
    Ok(())
}
