//! Innovation-triggered detection, probe-based localization and covariance
//! adaptation around the UKF.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::IdentificationModel;
use crate::signal::SignalSeries;
use crate::structure::SensorKind;
use crate::ukf::{ukf_step, AugmentedState, FilterConfig, Innovation};

/// Sensor family setting the innovation variance factor δ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorSuite {
    /// Displacement and/or velocity sensors: innovation carries output noise only.
    Kinematic,
    /// Accelerometers: output and input noise both enter the innovation.
    Acceleration,
}

impl SensorSuite {
    pub fn delta(self) -> f64 {
        match self {
            SensorSuite::Kinematic => 1.0,
            SensorSuite::Acceleration => 2.0,
        }
    }

    /// Suite of a sensor set; mixing accelerometers with other kinds is rejected.
    pub fn from_kinds(kinds: impl IntoIterator<Item = SensorKind>) -> Result<Self> {
        let mut suite = None;
        for k in kinds {
            let s = match k {
                SensorKind::Acceleration => SensorSuite::Acceleration,
                SensorKind::Displacement | SensorKind::Velocity => SensorSuite::Kinematic,
            };
            match suite {
                None => suite = Some(s),
                Some(prev) if prev != s => {
                    return Err(Error::invalid(
                        "mixed accelerometer and displacement/velocity suites have no common threshold",
                    ))
                }
                _ => {}
            }
        }
        suite.ok_or_else(|| Error::invalid("sensor suite is empty"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationConfig {
    pub suite: SensorSuite,
    /// Number of sensors m.
    pub sensor_count: usize,
    /// Standard-normal quantile z₀.
    pub z0: f64,
    /// Parameter variance written on adaptation, in filter parameter units².
    pub p_adapt: f64,
    /// Fractional stiffness decrease applied to each localization probe.
    pub probe_reduction: f64,
    /// Steps after an adaptation during which the trigger is ignored.
    pub cooldown: usize,
}

impl AdaptationConfig {
    /// z₀ = 3√2, P_adapt = 1, 5 % probes, 25-step cooldown.
    pub fn new(suite: SensorSuite, sensor_count: usize) -> Self {
        AdaptationConfig {
            suite,
            sensor_count,
            z0: 3.0 * std::f64::consts::SQRT_2,
            p_adapt: 1.0,
            probe_reduction: 0.05,
            cooldown: 25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensor_count == 0 {
            return Err(Error::invalid("sensor count must be >= 1"));
        }
        if !(self.z0.is_finite() && self.z0 > 0.0) {
            return Err(Error::invalid(format!("z0 must be > 0, got {}", self.z0)));
        }
        if !(self.p_adapt.is_finite() && self.p_adapt > 0.0) {
            return Err(Error::invalid(format!("p_adapt must be > 0, got {}", self.p_adapt)));
        }
        if !(self.probe_reduction > 0.0 && self.probe_reduction < 0.5) {
            return Err(Error::invalid(format!(
                "probe reduction must lie in (0, 0.5), got {}",
                self.probe_reduction
            )));
        }
        Ok(())
    }
}

/// γ = eᵀ R⁻¹ e.
pub fn trigger(innovation: &Innovation, r: &DMatrix<f64>) -> Result<f64> {
    gamma(&innovation.e, r)
}

/// γ for a raw innovation vector.
pub fn gamma(e: &DVector<f64>, r: &DMatrix<f64>) -> Result<f64> {
    if r.shape() != (e.len(), e.len()) {
        return Err(Error::dims(format!(
            "R is {}x{} for an innovation of length {}",
            r.nrows(),
            r.ncols(),
            e.len()
        )));
    }
    let chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("measurement covariance is not positive definite".into()))?;
    Ok(e.dot(&chol.solve(e)))
}

/// γ₀ = δ m z₀².
pub fn threshold(cfg: &AdaptationConfig) -> f64 {
    cfg.suite.delta() * cfg.sensor_count as f64 * cfg.z0 * cfg.z0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub step: usize,
    pub time: f64,
    pub gamma: f64,
    /// Zero-based localized parameter.
    pub index: usize,
    pub probe_gammas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLog {
    pub threshold: f64,
    pub events: Vec<DetectionEvent>,
}

impl DetectionLog {
    pub fn new(threshold: f64) -> Self {
        DetectionLog {
            threshold,
            events: Vec::new(),
        }
    }

    pub fn write_csv(&self, path: &Path, preamble: &[String]) -> Result<()> {
        let mut out = String::new();
        for line in preamble {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "# threshold={}", self.threshold);
        let _ = writeln!(out, "# units: -,s,-,-,-");
        let _ = writeln!(out, "step,time,gamma,parameter,probe_gammas");
        for e in &self.events {
            let probes: Vec<String> = e.probe_gammas.iter().map(|g| g.to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.step,
                e.time,
                e.gamma,
                e.index + 1,
                probes.join(";")
            );
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Everything the probes need besides the state and samples.
pub struct FilterContext<'a> {
    pub model: &'a IdentificationModel,
    pub filter: &'a FilterConfig,
    pub adaptation: &'a AdaptationConfig,
}

/// Probe each parameter with a one-step filter run from a perturbed copy of
/// `state` and return the index with the smallest γ together with all probe
/// values. Probes that fail count as +∞; ties go to the lowest index.
pub fn localize(
    state: &AugmentedState,
    u_k: &DVector<f64>,
    y_k1: &DVector<f64>,
    u_k1: &DVector<f64>,
    ctx: &FilterContext<'_>,
) -> Result<(usize, Vec<f64>)> {
    let n_params = state.layout.n_params;
    if n_params == 0 {
        return Err(Error::invalid("no parameters to localize"));
    }
    let model = ctx.model;
    let probes: Vec<f64> = (0..n_params)
        .into_par_iter()
        .map(|i| {
            let mut probe = adapt_covariance(state, i, ctx.adaptation.p_adapt);
            let idx = probe.layout.param(i);
            probe.mean[idx] *= 1.0 - ctx.adaptation.probe_reduction;
            ukf_step(
                &probe,
                u_k,
                y_k1,
                u_k1,
                ctx.filter,
                |x, u| model.propagate(x, u),
                |x, u| model.observe(x, u),
            )
            .and_then(|(_, innov)| trigger(&innov, &ctx.filter.r))
            .ok()
            .filter(|g| g.is_finite())
            .unwrap_or(f64::INFINITY)
        })
        .collect();
    let mut best = 0;
    for (i, g) in probes.iter().enumerate() {
        if *g < probes[best] {
            best = i;
        }
    }
    if !probes[best].is_finite() {
        return Err(Error::Divergence {
            step: state.step + 1,
            reason: "every localization probe diverged".into(),
        });
    }
    Ok((best, probes))
}

/// Copy of `state` with parameter variance `index` set to `p_adapt`; nothing
/// else changes.
pub fn adapt_covariance(state: &AugmentedState, index: usize, p_adapt: f64) -> AugmentedState {
    let mut out = state.clone();
    let k = out.layout.param(index);
    out.covariance[(k, k)] = p_adapt;
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceInfo {
    pub step: usize,
    pub reason: String,
}

impl DivergenceInfo {
    fn from_error(e: Error) -> Self {
        match e {
            Error::Divergence { step, reason } => DivergenceInfo { step, reason },
            other => DivergenceInfo {
                step: 0,
                reason: other.to_string(),
            },
        }
    }

    pub fn into_error(self) -> Error {
        Error::Divergence {
            step: self.step,
            reason: self.reason,
        }
    }
}

/// Per-step histories of an identification run.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationRun {
    pub ts: f64,
    /// Corrected mean per sample; row 0 is the initial state.
    pub means: Vec<DVector<f64>>,
    /// Diagonal of the corrected covariance per sample.
    pub variances: Vec<DVector<f64>>,
    /// γ per sample; zero for the initial sample.
    pub gammas: Vec<f64>,
    /// Innovation per sample; zero for the initial sample.
    pub innovations: Vec<DVector<f64>>,
    pub log: DetectionLog,
    /// Set when the filter diverged; histories stop at the last good sample.
    pub divergence: Option<DivergenceInfo>,
}

impl IdentificationRun {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn final_mean(&self) -> &DVector<f64> {
        self.means.last().expect("run holds the initial state")
    }

    /// RMS of every innovation channel over the run.
    pub fn innovation_rms(&self) -> Vec<f64> {
        let m = self.innovations.first().map_or(0, |e| e.len());
        let n = self.innovations.len().saturating_sub(1).max(1) as f64;
        (0..m)
            .map(|c| (self.innovations.iter().skip(1).map(|e| e[c] * e[c]).sum::<f64>() / n).sqrt())
            .collect()
    }
}

/// Run the filter over aligned measurement and ground-acceleration series.
/// Without an adaptation config this is a plain UKF. Divergence ends the run
/// early and is reported in [`IdentificationRun::divergence`].
pub fn run_identification(
    measurements: &SignalSeries,
    ground_accel: &SignalSeries,
    model: &IdentificationModel,
    initial_stiffness: &[f64],
    filter: &FilterConfig,
    adaptation: Option<&AdaptationConfig>,
) -> Result<IdentificationRun> {
    let layout = model.layout();
    filter.validate(layout.dim(), model.output_dim())?;
    if let Some(a) = adaptation {
        a.validate()?;
        if a.sensor_count != model.output_dim() {
            return Err(Error::invalid(format!(
                "adaptation expects {} sensors, model has {}",
                a.sensor_count,
                model.output_dim()
            )));
        }
        let suite = SensorSuite::from_kinds(model.sensors().sensors.iter().map(|s| s.kind))?;
        if suite != a.suite {
            return Err(Error::invalid("adaptation sensor suite does not match the model sensors"));
        }
    }
    if measurements.n_channels() != model.output_dim() {
        return Err(Error::dims(format!(
            "{} measurement channels for {} sensors",
            measurements.n_channels(),
            model.output_dim()
        )));
    }
    if ground_accel.n_channels() != 1 {
        return Err(Error::dims("ground acceleration must have one channel"));
    }
    if measurements.len() != ground_accel.len() {
        return Err(Error::dims(format!(
            "{} measurement samples but {} input samples",
            measurements.len(),
            ground_accel.len()
        )));
    }
    if measurements.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    for (name, s) in [("measurement", measurements), ("input", ground_accel)] {
        if (s.ts - model.ts()).abs() > 1e-9 * model.ts() {
            return Err(Error::invalid(format!(
                "{name} sampling time {} differs from model sampling time {}",
                s.ts,
                model.ts()
            )));
        }
    }

    let threshold_value = adaptation.map_or(f64::INFINITY, threshold);
    let mut state = model.initial_state(initial_stiffness, filter)?;
    let n_samples = measurements.len();
    let inputs: Vec<DVector<f64>> = (0..n_samples)
        .map(|k| model.input_vector(ground_accel.samples[k][0]))
        .collect();
    let output = |k: usize| DVector::from_row_slice(&measurements.samples[k]);

    let mut run = IdentificationRun {
        ts: model.ts(),
        means: vec![state.mean.clone()],
        variances: vec![state.covariance.diagonal()],
        gammas: vec![0.0],
        innovations: vec![DVector::zeros(model.output_dim())],
        log: DetectionLog::new(threshold_value),
        divergence: None,
    };
    let mut quiet_until = 0usize;

    for k in 0..n_samples - 1 {
        let y = output(k + 1);
        let step = ukf_step(
            &state,
            &inputs[k],
            &y,
            &inputs[k + 1],
            filter,
            |x, u| model.propagate(x, u),
            |x, u| model.observe(x, u),
        );
        let (corrected, innov) = match step {
            Ok(v) => v,
            Err(e) if e.is_divergence() => {
                run.divergence = Some(DivergenceInfo::from_error(e));
                return Ok(run);
            }
            Err(e) => return Err(e),
        };
        let g = trigger(&innov, &filter.r)?;
        state = corrected;
        let j = k + 1;

        if let Some(a) = adaptation {
            if g >= threshold_value && j >= quiet_until && j + 1 < n_samples {
                let ctx = FilterContext {
                    model,
                    filter,
                    adaptation: a,
                };
                match localize(&state, &inputs[j], &output(j + 1), &inputs[j + 1], &ctx) {
                    Ok((index, probe_gammas)) => {
                        log::info!(
                            "step {j}: gamma {g:.1} >= {threshold_value:.1}, adapting parameter {}",
                            index + 1
                        );
                        state = adapt_covariance(&state, index, a.p_adapt);
                        run.log.events.push(DetectionEvent {
                            step: j,
                            time: measurements.time(j),
                            gamma: g,
                            index,
                            probe_gammas,
                        });
                        quiet_until = j + 1 + a.cooldown;
                    }
                    Err(e) if e.is_divergence() => {
                        run.divergence = Some(DivergenceInfo::from_error(e));
                        return Ok(run);
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        run.means.push(state.mean.clone());
        run.variances.push(state.covariance.diagonal());
        run.gammas.push(g);
        run.innovations.push(innov.e);
    }
    Ok(run)
}
