//! Config-driven runs: scenario construction, identification, metrics, sweeps
//! and the files each run leaves behind.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{run_identification, AdaptationConfig, DivergenceInfo, IdentificationRun, SensorSuite};
use crate::config::{AdaptationSettings, ExcitationConfig, FilterSettings, ResolvedStructure, RunConfig, Variant};
use crate::discretize::DiscretizationOrder;
use crate::error::{Error, Result};
use crate::model::IdentificationModel;
use crate::signal::{load_record, Channel, RecordFormat, SignalSeries};
use crate::simulation::{
    add_noise, derive_seed, impulse, quake_like, simulate_truth, white_noise, DamageSchedule, NoiseSpec,
    RealizedDamage, TruthOptions, TruthRun,
};
use crate::structure::{SensorLayout, StructureSpec};
use crate::ukf::FilterConfig;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "STIFFWATCH_OUT";

const DEFAULT_OUTPUT_ROOT: &str = "stiffwatch-out";

/// Output directory: explicit argument, then `output_dir` in the config, then
/// `$STIFFWATCH_OUT`, then `./stiffwatch-out`.
pub fn output_root(cfg: Option<&RunConfig>, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = cfg.and_then(|c| c.output_dir.as_ref()) {
        return cfg.map(|c| c.resolve_path(p)).unwrap_or_else(|| p.clone());
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUTPUT_ROOT),
    }
}

/// Provenance line written at the top of every output file.
pub fn manifest_line(cfg: &RunConfig) -> String {
    format!(
        "stiffwatch {} config={} seed={}",
        crate::VERSION,
        cfg.hash(),
        cfg.seed
    )
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Everything needed to identify one structure under one excitation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub structure: ResolvedStructure,
    pub variant: Variant,
    pub sensors: SensorLayout,
    /// Noise-free ground acceleration [m/s²].
    pub excitation: SignalSeries,
    pub schedule: DamageSchedule,
    pub truth: TruthRun,
    /// Noisy sensor outputs seen by the filter.
    pub measurements: SignalSeries,
    /// Noisy ground acceleration seen by the filter [m/s²].
    pub input: SignalSeries,
}

impl Scenario {
    pub fn spec(&self) -> &StructureSpec {
        &self.structure.spec
    }
}

/// Ground acceleration for `cfg`, `cfg.duration` long.
pub fn build_excitation(cfg: &RunConfig) -> Result<SignalSeries> {
    let seed = derive_seed(cfg.seed, 0);
    match &cfg.excitation {
        ExcitationConfig::WhiteNoise { rms } => white_noise(cfg.duration, cfg.ts, *rms, seed),
        ExcitationConfig::Impulse { amplitude, time } => impulse(cfg.duration, cfg.ts, *amplitude, *time),
        ExcitationConfig::Quake { preset, pga } => {
            let mut spec = preset.spec();
            if let Some(p) = pga {
                spec.pga = *p;
            }
            quake_like(cfg.duration, cfg.ts, &spec, seed)
        }
        ExcitationConfig::Record { path, format } => {
            let format: RecordFormat = format.parse()?;
            let mut rec = load_record(&cfg.resolve_path(path), format, Some(cfg.ts))?;
            if rec.n_channels() != 1 {
                rec = SignalSeries::from_values(rec.ts, rec.channels[0].clone(), rec.channel(0))?;
            }
            let n = (cfg.duration / cfg.ts).round() as usize + 1;
            if rec.len() > n {
                rec.samples.truncate(n);
            }
            rec.channels[0] = Channel::new("ag", "m/s^2");
            Ok(rec)
        }
    }
}

/// Simulate the truth and corrupt it with measurement noise.
pub fn build_scenario(cfg: &RunConfig, variant: Option<Variant>) -> Result<Scenario> {
    let mut structure = cfg.structure()?;
    let variant = match variant {
        Some(Variant::Bare) => {
            structure.spec = structure.spec.without_tmd();
            structure.tuning = None;
            Variant::Bare
        }
        Some(Variant::Tmd) if !structure.spec.has_tmd() => {
            return Err(Error::Config("variant 'tmd' needs a structure with a [tmd] table".into()))
        }
        _ if structure.spec.has_tmd() => Variant::Tmd,
        _ => Variant::Bare,
    };
    let spec = &structure.spec;
    let sensors = cfg.sensor_layout(spec)?;
    let schedule = cfg.damage_schedule(spec)?;
    let excitation = build_excitation(cfg)?;
    let opts = TruthOptions {
        oversample: cfg.oversample,
        sensors: Some(sensors.clone()),
        initial_state: None,
    };
    let truth = simulate_truth(spec, &schedule, &excitation, &opts)?;
    let measurements = add_noise(&truth.outputs, &NoiseSpec::uniform(cfg.noise.output_rms, derive_seed(cfg.seed, 1)))?;
    let input = add_noise(&excitation, &NoiseSpec::uniform(cfg.noise.input_rms, derive_seed(cfg.seed, 2)))?;
    Ok(Scenario {
        structure,
        variant,
        sensors,
        excitation,
        schedule,
        truth,
        measurements,
        input,
    })
}

/// Filter and adaptation objects for `spec` and `sensors`.
pub fn filter_setup(
    spec: &StructureSpec,
    sensors: &SensorLayout,
    ts: f64,
    filter: &FilterSettings,
    adaptation: Option<&AdaptationSettings>,
) -> Result<(IdentificationModel, FilterConfig, Option<AdaptationConfig>)> {
    let model = IdentificationModel::new(spec, sensors.clone(), ts, DiscretizationOrder::Taylor(filter.taylor_order))?
        .with_stiffness_unit(filter.stiffness_unit)?;
    let n = model.layout().dim();
    let m = model.output_dim();
    let mut fc = FilterConfig::scalar(n, m, filter.p0, filter.q, filter.r);
    fc.alpha = filter.alpha;
    fc.beta = filter.beta;
    fc.kappa = filter.kappa;
    fc.taylor_order = filter.taylor_order;
    let ad = match adaptation {
        Some(a) if a.enabled => {
            let suite = SensorSuite::from_kinds(sensors.sensors.iter().map(|s| s.kind))?;
            let mut ac = AdaptationConfig::new(suite, m);
            ac.z0 = a.z0;
            ac.p_adapt = a.p_adapt;
            ac.probe_reduction = a.probe_reduction;
            ac.cooldown = a.cooldown;
            Some(ac)
        }
        _ => None,
    };
    Ok((model, fc, ad))
}

/// A detection matched against a realized damage event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventOutcome {
    /// 1-based story.
    pub story: usize,
    pub damage_time: f64,
    pub detection_time: Option<f64>,
    pub latency: Option<f64>,
    /// 1-based story the detector localized.
    pub localized_story: Option<usize>,
    pub localized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Final estimate per story [N/m].
    pub final_stiffness: Vec<f64>,
    /// True stiffness at the end of the record [N/m].
    pub true_stiffness: Vec<f64>,
    /// |estimate − truth| / truth per story [%].
    pub error_pct: Vec<f64>,
    pub max_error_pct: f64,
    pub events: Vec<EventOutcome>,
    pub detections: usize,
    pub false_positives: usize,
    pub missed: usize,
    /// Innovation RMS per sensor.
    pub innovation_rms: Vec<f64>,
    pub gamma_threshold: Option<f64>,
    pub gamma_max: f64,
    pub gamma_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<DivergenceInfo>,
}

impl Metrics {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serialize: {e}")))
    }
}

/// Score a run. Detections within `[t_damage − ts, t_damage + window]` of a
/// realized event count as hits; the first hit per event is kept and every
/// other detection is a false positive.
pub fn compute_metrics(
    run: &IdentificationRun,
    model: &IdentificationModel,
    true_stiffness: &[f64],
    realized: &[RealizedDamage],
    window: f64,
    adaptive: bool,
) -> Metrics {
    let final_stiffness = model.stiffness_of(run.final_mean());
    let error_pct: Vec<f64> = final_stiffness
        .iter()
        .zip(true_stiffness)
        .map(|(e, t)| 100.0 * (e - t).abs() / t)
        .collect();
    let max_error_pct = error_pct.iter().cloned().fold(0.0, f64::max);
    let mut used = vec![false; run.log.events.len()];
    let events = realized
        .iter()
        .map(|r| {
            let hit = run.log.events.iter().enumerate().find(|(i, d)| {
                !used[*i] && d.time >= r.time - run.ts - 1e-9 && d.time <= r.time + window + 1e-9
            });
            let mut out = EventOutcome {
                story: r.parameter + 1,
                damage_time: r.time,
                detection_time: None,
                latency: None,
                localized_story: None,
                localized: false,
            };
            if let Some((i, d)) = hit {
                used[i] = true;
                out.detection_time = Some(d.time);
                out.latency = Some(d.time - r.time);
                out.localized_story = Some(d.index + 1);
                out.localized = d.index == r.parameter;
            }
            out
        })
        .collect::<Vec<_>>();
    let missed = events.iter().filter(|e| e.detection_time.is_none()).count();
    let gammas = &run.gammas[1.min(run.gammas.len())..];
    Metrics {
        final_stiffness,
        true_stiffness: true_stiffness.to_vec(),
        error_pct,
        max_error_pct,
        events,
        detections: run.log.events.len(),
        false_positives: used.iter().filter(|u| !**u).count(),
        missed,
        innovation_rms: run.innovation_rms(),
        gamma_threshold: adaptive.then_some(run.log.threshold),
        gamma_max: gammas.iter().cloned().fold(0.0, f64::max),
        gamma_mean: if gammas.is_empty() { 0.0 } else { gammas.iter().sum::<f64>() / gammas.len() as f64 },
        divergence: run.divergence.clone(),
    }
}

/// Result of identifying one scenario.
#[derive(Debug, Clone)]
pub struct Identification {
    pub model: IdentificationModel,
    pub run: IdentificationRun,
    pub metrics: Metrics,
}

/// Run the filter on `scenario` with the given settings.
pub fn identify_scenario(
    scenario: &Scenario,
    filter: &FilterSettings,
    adaptation: &AdaptationSettings,
) -> Result<Identification> {
    let spec = scenario.spec();
    let (model, fc, ad) = filter_setup(spec, &scenario.sensors, scenario.measurements.ts, filter, Some(adaptation))?;
    let initial: Vec<f64> = spec.story_stiffness.iter().map(|k| k * filter.initial_factor).collect();
    let run = run_identification(&scenario.measurements, &scenario.input, &model, &initial, &fc, ad.as_ref())?;
    let truth = scenario.truth.final_stiffness(spec.n_dof());
    let metrics = compute_metrics(&run, &model, &truth, &scenario.truth.realized, adaptation.match_window, ad.is_some());
    Ok(Identification { model, run, metrics })
}

/// Contents of `manifest.toml` in a simulate output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub variant: Variant,
    /// Story stiffness before damage [N/m].
    pub initial_stiffness: Vec<f64>,
    /// Story stiffness at the end of the record [N/m].
    pub final_stiffness: Vec<f64>,
    pub realized: Vec<RealizedDamage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tmd_mass_ratio: Option<f64>,
}

fn toml_with_manifest<T: Serialize>(cfg: &RunConfig, value: &T) -> Result<String> {
    let body = toml::to_string(value).map_err(|e| Error::Config(format!("serialize: {e}")))?;
    Ok(format!("# {}\n{body}", manifest_line(cfg)))
}

/// Write the scenario's signals and `manifest.toml` into `dir`.
pub fn write_scenario(cfg: &RunConfig, scenario: &Scenario, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let pre = [manifest_line(cfg)];
    scenario.excitation.write_csv(&dir.join("excitation.csv"), &pre)?;
    scenario.input.write_csv(&dir.join("input.csv"), &pre)?;
    scenario.truth.states.write_csv(&dir.join("states.csv"), &pre)?;
    scenario.truth.outputs.write_csv(&dir.join("outputs.csv"), &pre)?;
    scenario.measurements.write_csv(&dir.join("measurements.csv"), &pre)?;
    let spec = scenario.spec();
    let manifest = SimulationManifest {
        version: crate::VERSION.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        variant: scenario.variant,
        initial_stiffness: spec.story_stiffness.clone(),
        final_stiffness: scenario.truth.final_stiffness(spec.n_dof()),
        realized: scenario.truth.realized.clone(),
        tmd_mass_ratio: scenario.structure.tuning.map(|t| t.mass_ratio),
    };
    write_text(&dir.join("manifest.toml"), &toml_with_manifest(cfg, &manifest)?)?;
    write_text(&dir.join("config.toml"), &toml_with_manifest(cfg, cfg)?)
}

/// `simulate`: build the scenario from `cfg` and write it to `dir`.
pub fn simulate(cfg: &RunConfig, dir: &Path) -> Result<Scenario> {
    let scenario = build_scenario(cfg, None)?;
    write_scenario(cfg, &scenario, dir)?;
    Ok(scenario)
}

/// Replace the simulated signals with those from a `simulate` output directory.
pub fn load_scenario_data(scenario: &mut Scenario, data_dir: &Path) -> Result<()> {
    let ts = scenario.measurements.ts;
    let meas = load_record(&data_dir.join("measurements.csv"), RecordFormat::Csv, Some(ts))?;
    let input = load_record(&data_dir.join("input.csv"), RecordFormat::Csv, Some(ts))?;
    if meas.n_channels() != scenario.sensors.len() {
        return Err(Error::dims(format!(
            "measurements.csv has {} channels, config declares {} sensors",
            meas.n_channels(),
            scenario.sensors.len()
        )));
    }
    let manifest_path = data_dir.join("manifest.toml");
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m: SimulationManifest =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", manifest_path.display())))?;
        scenario.truth.realized = m.realized;
        let n = scenario.spec().n_dof();
        if let Some(last) = scenario.truth.states.samples.last_mut() {
            last.truncate(2 * n);
            last.extend_from_slice(&m.final_stiffness);
        }
    }
    scenario.measurements = meas;
    scenario.input = input;
    Ok(())
}

fn estimates_series(ident: &Identification) -> Result<SignalSeries> {
    let model = &ident.model;
    let n = model.n_dof();
    let np = model.n_params();
    let unit = model.stiffness_unit();
    let mut channels = Vec::new();
    for i in 0..np {
        channels.push(Channel::new(format!("k{}", i + 1), "N/m"));
    }
    for i in 0..np {
        channels.push(Channel::new(format!("k{}_std", i + 1), "N/m"));
    }
    for i in 0..n {
        channels.push(Channel::new(format!("x{}", i + 1), "m"));
    }
    for i in 0..n {
        channels.push(Channel::new(format!("v{}", i + 1), "m/s"));
    }
    let samples = ident
        .run
        .means
        .iter()
        .zip(&ident.run.variances)
        .map(|(x, var)| {
            let mut row = model.stiffness_of(x);
            row.extend((0..np).map(|i| var[2 * n + i].max(0.0).sqrt() * unit));
            row.extend(x.iter().take(2 * n));
            row
        })
        .collect();
    SignalSeries::new(ident.run.ts, channels, samples)
}

fn gamma_series(ident: &Identification) -> Result<SignalSeries> {
    let m = ident.model.output_dim();
    let mut channels = vec![Channel::new("gamma", "-")];
    channels.extend((0..m).map(|i| Channel::new(format!("e{}", i + 1), "sensor")));
    let zero = DVector::zeros(m);
    let samples = ident
        .run
        .gammas
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let e = ident.run.innovations.get(k).unwrap_or(&zero);
            std::iter::once(*g).chain(e.iter().copied()).collect()
        })
        .collect();
    SignalSeries::new(ident.run.ts, channels, samples)
}

/// Human-readable summary of an identification.
pub fn render_report(manifest: &str, metrics: &Metrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{manifest}");
    if let Some(d) = &metrics.divergence {
        let _ = writeln!(s, "DIVERGED at step {}: {}", d.step, d.reason);
    }
    let _ = writeln!(s, "story  estimate[N/m]  truth[N/m]  error[%]");
    for i in 0..metrics.final_stiffness.len() {
        let _ = writeln!(
            s,
            "{:>5}  {:>13.2}  {:>10.2}  {:>8.4}",
            i + 1,
            metrics.final_stiffness[i],
            metrics.true_stiffness[i],
            metrics.error_pct[i]
        );
    }
    match metrics.gamma_threshold {
        Some(t) => {
            let _ = writeln!(
                s,
                "gamma threshold {t:.2}, max {:.2}, mean {:.3}; {} detections, {} false positives, {} missed",
                metrics.gamma_max, metrics.gamma_mean, metrics.detections, metrics.false_positives, metrics.missed
            );
        }
        None => {
            let _ = writeln!(s, "adaptation off; gamma max {:.2}, mean {:.3}", metrics.gamma_max, metrics.gamma_mean);
        }
    }
    for e in &metrics.events {
        match (e.detection_time, e.latency, e.localized_story) {
            (Some(t), Some(l), Some(st)) => {
                let _ = writeln!(
                    s,
                    "damage story {} at {:.2} s: detected {:.2} s (latency {:.2} s), localized story {}{}",
                    e.story,
                    e.damage_time,
                    t,
                    l,
                    st,
                    if e.localized { "" } else { " (wrong)" }
                );
            }
            _ => {
                let _ = writeln!(s, "damage story {} at {:.2} s: not detected", e.story, e.damage_time);
            }
        }
    }
    let rms: Vec<String> = metrics.innovation_rms.iter().map(|v| format!("{v:.4e}")).collect();
    let _ = writeln!(s, "innovation rms: {}", rms.join(", "));
    s
}

/// Write estimates, γ, detections, metrics and report for an identification.
pub fn write_identification(cfg: &RunConfig, ident: &Identification, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let line = manifest_line(cfg);
    let pre = [line.clone()];
    estimates_series(ident)?.write_csv(&dir.join("estimates.csv"), &pre)?;
    gamma_series(ident)?.write_csv(&dir.join("gamma.csv"), &pre)?;
    ident.run.log.write_csv(&dir.join("detections.csv"), &pre)?;
    write_text(&dir.join("metrics.toml"), &toml_with_manifest(cfg, &ident.metrics)?)?;
    write_text(&dir.join("report.txt"), &render_report(&line, &ident.metrics))
}

/// `identify`: simulate (or load `data_dir`), run the filter and write results
/// to `dir`. A diverged run still writes its partial histories and then
/// returns [`Error::Divergence`].
pub fn identify(cfg: &RunConfig, data_dir: Option<&Path>, dir: &Path) -> Result<Identification> {
    if let Some(d) = data_dir {
        for name in ["measurements.csv", "input.csv"] {
            let p = d.join(name);
            if !p.is_file() {
                return Err(Error::invalid(format!("missing measurement file {}", p.display())));
            }
        }
    }
    let mut scenario = build_scenario(cfg, None)?;
    match data_dir {
        Some(d) => load_scenario_data(&mut scenario, d)?,
        None => write_scenario(cfg, &scenario, dir)?,
    }
    let ident = identify_scenario(&scenario, &cfg.filter, &cfg.adaptation)?;
    write_identification(cfg, &ident, dir)?;
    if let Some(d) = &ident.run.divergence {
        return Err(d.clone().into_error());
    }
    Ok(ident)
}

/// Write `A_d` and `B_d` of the filter model at the structure's nominal
/// stiffness to `model_ad.csv` and `model_bd.csv`.
pub fn write_discrete_model(cfg: &RunConfig, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let structure = cfg.structure()?;
    let sensors = cfg.sensor_layout(&structure.spec)?;
    let (model, _, _) = filter_setup(&structure.spec, &sensors, cfg.ts, &cfg.filter, None)?;
    let d = crate::discretize::taylor_discretize(&model.nominal_state_space()?, cfg.ts, cfg.filter.taylor_order)?;
    let line = manifest_line(cfg);
    for (name, m, unit) in [("model_ad.csv", &d.a_d, "-"), ("model_bd.csv", &d.b_d, "s")] {
        let mut out = format!("# {line}\n# units: {}\n", vec![unit; m.ncols()].join(","));
        let header: Vec<String> = (1..=m.ncols()).map(|j| format!("c{j}")).collect();
        let _ = writeln!(out, "{}", header.join(","));
        for r in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        write_text(&dir.join(name), &out)?;
    }
    Ok(())
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub variant: Variant,
    pub p0: f64,
    pub q: f64,
    pub order: usize,
    pub final_stiffness: Vec<f64>,
    pub error_pct: Vec<f64>,
    pub max_error_pct: f64,
    pub diverged: bool,
    /// Stiffness history per story, every `history_stride` samples [N/m].
    #[serde(skip)]
    pub history: Vec<Vec<f64>>,
}

/// Response of the true structure in one sweep variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResponse {
    pub variant: Variant,
    /// Peak |x| of the first story over the whole record [m].
    pub peak_x1: f64,
    /// Peak |x| of the first story over the second half of the record [m].
    pub late_peak_x1: f64,
    pub rms_x1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub responses: Vec<VariantResponse>,
    pub ts: f64,
    pub history_stride: usize,
}

impl SweepResult {
    pub fn cell(&self, variant: Variant, p0: f64, q: f64, order: usize) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.p0 == p0 && c.q == q && c.order == order)
    }

    pub fn response(&self, variant: Variant) -> Option<&VariantResponse> {
        self.responses.iter().find(|r| r.variant == variant)
    }
}

const HISTORY_STRIDE: usize = 5;

fn response_of(variant: Variant, truth: &TruthRun) -> VariantResponse {
    let x1 = truth.states.channel(0);
    let half = x1.len() / 2;
    let peak = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    VariantResponse {
        variant,
        peak_x1: peak(&x1),
        late_peak_x1: peak(&x1[half..]),
        rms_x1: (x1.iter().map(|v| v * v).sum::<f64>() / x1.len().max(1) as f64).sqrt(),
    }
}

/// Run every `(variant, p0, q, order)` combination without adaptation, in
/// parallel. Diverged cells are kept and flagged.
pub fn run_sweep(cfg: &RunConfig, grid: &[(Variant, f64, f64, usize)]) -> Result<SweepResult> {
    let mut variants: Vec<Variant> = grid.iter().map(|g| g.0).collect();
    variants.sort();
    variants.dedup();
    let scenarios: Vec<Scenario> = variants
        .iter()
        .map(|v| build_scenario(cfg, Some(*v)))
        .collect::<Result<_>>()?;
    let off = AdaptationSettings {
        enabled: false,
        ..cfg.adaptation.clone()
    };
    let job = |&(variant, p0, q, order): &(Variant, f64, f64, usize)| -> Result<SweepCell> {
        let scenario = &scenarios[variants.iter().position(|v| *v == variant).expect("built above")];
        let filter = FilterSettings {
            p0,
            q,
            taylor_order: order,
            ..cfg.filter.clone()
        };
        let ident = identify_scenario(scenario, &filter, &off)?;
        let history = ident
            .run
            .means
            .iter()
            .step_by(HISTORY_STRIDE)
            .map(|x| ident.model.stiffness_of(x))
            .collect();
        Ok(SweepCell {
            variant,
            p0,
            q,
            order,
            final_stiffness: ident.metrics.final_stiffness,
            error_pct: ident.metrics.error_pct,
            max_error_pct: ident.metrics.max_error_pct,
            diverged: ident.metrics.divergence.is_some(),
            history,
        })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.sweep.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let cells = pool.install(|| grid.par_iter().map(job).collect::<Result<Vec<_>>>())?;
    Ok(SweepResult {
        cells,
        responses: scenarios.iter().map(|s| response_of(s.variant, &s.truth)).collect(),
        ts: cfg.ts,
        history_stride: HISTORY_STRIDE,
    })
}

/// Grid over variants × initial covariances at the configured Q and order.
pub fn covariance_grid(cfg: &RunConfig) -> Vec<(Variant, f64, f64, usize)> {
    let mut grid = Vec::new();
    for v in &cfg.sweep.variants {
        for p0 in &cfg.sweep.p0 {
            grid.push((*v, *p0, cfg.filter.q, cfg.filter.taylor_order));
        }
    }
    grid
}

/// Grid over variants × Taylor orders × process-noise levels at the
/// configured P0.
pub fn model_grid(cfg: &RunConfig) -> Vec<(Variant, f64, f64, usize)> {
    let mut grid = Vec::new();
    for v in &cfg.sweep.variants {
        for p in &cfg.sweep.orders {
            for q in &cfg.sweep.q {
                grid.push((*v, cfg.filter.p0, *q, *p));
            }
        }
    }
    grid
}

fn write_sweep(cfg: &RunConfig, result: &SweepResult, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let line = manifest_line(cfg);
    let n = result.cells.first().map_or(0, |c| c.final_stiffness.len());

    let mut out = String::new();
    let _ = writeln!(out, "# {line}");
    let mut units = vec!["-", "-", "-", "-"];
    let mut header = vec!["variant".to_string(), "p0".into(), "q".into(), "order".into()];
    for i in 0..n {
        header.push(format!("k{}", i + 1));
        units.push("N/m");
    }
    for i in 0..n {
        header.push(format!("k{}_error", i + 1));
        units.push("%");
    }
    header.extend(["max_error".to_string(), "diverged".into()]);
    units.extend(["%", "-"]);
    let _ = writeln!(out, "# units: {}", units.join(","));
    let _ = writeln!(out, "{}", header.join(","));
    for c in &result.cells {
        let mut row = vec![c.variant.to_string(), format!("{:e}", c.p0), format!("{:e}", c.q), c.order.to_string()];
        row.extend(c.final_stiffness.iter().map(|v| v.to_string()));
        row.extend(c.error_pct.iter().map(|v| v.to_string()));
        row.push(c.max_error_pct.to_string());
        row.push(c.diverged.to_string());
        let _ = writeln!(out, "{}", row.join(","));
    }
    write_text(&dir.join("table.csv"), &out)?;

    let mut out = String::new();
    let _ = writeln!(out, "# {line}");
    let _ = writeln!(out, "# units: -,m,m,m");
    let _ = writeln!(out, "variant,peak_x1,late_peak_x1,rms_x1");
    for r in &result.responses {
        let _ = writeln!(out, "{},{},{},{}", r.variant, r.peak_x1, r.late_peak_x1, r.rms_x1);
    }
    write_text(&dir.join("responses.csv"), &out)?;

    if cfg.sweep.histories {
        let mut out = String::new();
        let _ = writeln!(out, "# {line}");
        let mut units = vec!["-", "-", "-", "-", "s"];
        units.extend(std::iter::repeat_n("N/m", n));
        let _ = writeln!(out, "# units: {}", units.join(","));
        let ks: Vec<String> = (1..=n).map(|i| format!("k{i}")).collect();
        let _ = writeln!(out, "variant,p0,q,order,time,{}", ks.join(","));
        for c in &result.cells {
            for (j, k) in c.history.iter().enumerate() {
                let t = (j * result.history_stride) as f64 * result.ts;
                let vals: Vec<String> = k.iter().map(|v| v.to_string()).collect();
                let _ = writeln!(out, "{},{:e},{:e},{},{},{}", c.variant, c.p0, c.q, c.order, t, vals.join(","));
            }
        }
        write_text(&dir.join("histories.csv"), &out)?;
    }
    write_text(&dir.join("config.toml"), &toml_with_manifest(cfg, cfg)?)
}

/// `sweep-covariance`: P0 grid for each variant.
pub fn sweep_covariance(cfg: &RunConfig, dir: &Path) -> Result<SweepResult> {
    let result = run_sweep(cfg, &covariance_grid(cfg))?;
    write_sweep(cfg, &result, dir)?;
    Ok(result)
}

/// `sweep-model`: Taylor order × Q grid for each variant.
pub fn sweep_model(cfg: &RunConfig, dir: &Path) -> Result<SweepResult> {
    let result = run_sweep(cfg, &model_grid(cfg))?;
    write_sweep(cfg, &result, dir)?;
    Ok(result)
}

/// `report`: summarize an output directory written by `identify` or a sweep.
pub fn report(dir: &Path) -> Result<String> {
    let metrics_path = dir.join("metrics.toml");
    if metrics_path.exists() {
        let text = fs::read_to_string(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        let manifest = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .unwrap_or("")
            .to_string();
        let metrics: Metrics =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", metrics_path.display())))?;
        return Ok(render_report(&manifest, &metrics));
    }
    let table_path = dir.join("table.csv");
    if table_path.exists() {
        return summarize_table(&table_path);
    }
    let manifest_path = dir.join("manifest.toml");
    if manifest_path.exists() {
        return fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e));
    }
    Err(Error::invalid(format!(
        "{} holds no metrics.toml, table.csv or manifest.toml",
        dir.display()
    )))
}

fn summarize_table(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut s = String::new();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    if let Some(line) = text.lines().next().and_then(|l| l.strip_prefix("# ")) {
        let _ = writeln!(s, "{line}");
    }
    let headers = reader.headers().map_err(|e| Error::Config(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(iv), Some(ip0), Some(iq), Some(io), Some(ie), Some(id)) = (
        col("variant"),
        col("p0"),
        col("q"),
        col("order"),
        col("max_error"),
        col("diverged"),
    ) else {
        return Err(Error::Config(format!("{}: unexpected columns", path.display())));
    };
    let _ = writeln!(s, "{:<8} {:>10} {:>10} {:>5} {:>12} diverged", "variant", "p0", "q", "order", "max_err[%]");
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Config(e.to_string()))?;
        let _ = writeln!(
            s,
            "{:<8} {:>10} {:>10} {:>5} {:>12} {}",
            &rec[iv], &rec[ip0], &rec[iq], &rec[io],
            rec[ie].parse::<f64>().map(|v| format!("{v:.4}")).unwrap_or_else(|_| rec[ie].to_string()),
            &rec[id]
        );
    }
    Ok(s)
}
