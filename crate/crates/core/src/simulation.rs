//! Ground-truth response generation, excitation signals and measurement noise.
//!
//! The truth integrator uses the exact discretization at a fine step
//! (`Ts / oversample`) with the ground acceleration held over each sampling
//! interval. Stiffness changes are instantaneous matrix swaps between fine
//! steps; the kinematic state carries over unchanged.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::discretize::exact_series;
use crate::error::{Error, Result};
use crate::signal::{Channel, SignalSeries};
use crate::structure::{assemble_matrices, build_state_space, SensorKind, SensorLayout, StructureSpec};

/// Derive an independent stream seed from a base seed (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_count(duration: f64, ts: f64) -> Result<usize> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::invalid(format!("duration must be > 0, got {duration}")));
    }
    if !(ts.is_finite() && ts > 0.0) {
        return Err(Error::invalid(format!("sampling time must be > 0, got {ts}")));
    }
    Ok((duration / ts).round() as usize)
}

fn ground_channel() -> Channel {
    Channel::new("ground_accel", "m/s^2")
}

/// Zero-mean Gaussian white noise, rescaled so the sample mean is zero and the
/// sample RMS equals `rms` exactly.
pub fn white_noise(duration: f64, ts: f64, rms: f64, seed: u64) -> Result<SignalSeries> {
    let n = sample_count(duration, ts)?;
    if !(rms.is_finite() && rms >= 0.0) {
        return Err(Error::invalid(format!("rms must be >= 0, got {rms}")));
    }
    let mut values = vec![0.0; n];
    if rms > 0.0 && n > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in values.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        values.iter_mut().for_each(|v| *v -= mean);
        let sample_rms = (values.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        values.iter_mut().for_each(|v| *v *= rms / sample_rms);
    }
    SignalSeries::from_values(ts, ground_channel(), values)
}

/// A single sample of `amplitude` at the step nearest `t_hit`.
pub fn impulse(duration: f64, ts: f64, amplitude: f64, t_hit: f64) -> Result<SignalSeries> {
    let n = sample_count(duration, ts)?;
    if !(t_hit >= 0.0 && t_hit < duration) {
        return Err(Error::invalid(format!("impulse time {t_hit} outside [0, {duration})")));
    }
    let mut values = vec![0.0; n];
    let k = ((t_hit / ts).round() as usize).min(n.saturating_sub(1));
    if n > 0 {
        values[k] = amplitude;
    }
    SignalSeries::from_values(ts, ground_channel(), values)
}

/// Envelope-modulated Kanai–Tajimi filtered white noise, a hermetic stand-in
/// for recorded earthquake accelerograms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuakeSpec {
    /// Peak ground acceleration after scaling [m/s²].
    pub pga: f64,
    /// Ground filter frequency [Hz].
    pub ground_frequency: f64,
    /// Ground filter damping ratio.
    pub ground_damping: f64,
    /// End of the linear build-up [s].
    pub rise_end: f64,
    /// End of the strong-motion plateau [s].
    pub strong_end: f64,
    /// Time at which the linear decay reaches zero [s].
    pub decay_end: f64,
}

impl QuakeSpec {
    /// Far-field record: long strong phase, stiff-soil filter, PGA 3.4 m/s².
    pub fn far_field() -> Self {
        QuakeSpec {
            pga: 3.4,
            ground_frequency: 2.5,
            ground_damping: 0.6,
            rise_end: 2.0,
            strong_end: 12.0,
            decay_end: 30.0,
        }
    }

    /// Near-field record: short impulsive strong phase, softer filter, PGA 8.2 m/s².
    pub fn near_field() -> Self {
        QuakeSpec {
            pga: 8.2,
            ground_frequency: 1.5,
            ground_damping: 0.4,
            rise_end: 1.0,
            strong_end: 6.0,
            decay_end: 15.0,
        }
    }

    fn envelope(&self, t: f64) -> f64 {
        if t < self.rise_end {
            t / self.rise_end
        } else if t < self.strong_end {
            1.0
        } else if t < self.decay_end {
            1.0 - (t - self.strong_end) / (self.decay_end - self.strong_end)
        } else {
            0.0
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.pga >= 0.0
            && self.ground_frequency > 0.0
            && self.ground_damping > 0.0
            && self.rise_end > 0.0
            && self.strong_end >= self.rise_end
            && self.decay_end > self.strong_end;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("inconsistent quake parameters {self:?}")))
        }
    }
}

pub fn quake_like(duration: f64, ts: f64, spec: &QuakeSpec, seed: u64) -> Result<SignalSeries> {
    spec.validate()?;
    let n = sample_count(duration, ts)?;
    let wg = 2.0 * PI * spec.ground_frequency;
    let zg = spec.ground_damping;
    // Ground filter ẍ_f + 2ζω ẋ_f + ω² x_f = −w; output 2ζω ẋ_f + ω² x_f.
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -wg * wg, -2.0 * zg * wg]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, -1.0]);
    let (a_d, b_d) = exact_series(&a, &b, ts);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DVector::zeros(2);
    let mut values = Vec::with_capacity(n);
    for k in 0..n {
        let w: f64 = StandardNormal.sample(&mut rng);
        let out = 2.0 * zg * wg * x[1] + wg * wg * x[0];
        values.push(out * spec.envelope(k as f64 * ts));
        x = &a_d * &x + &b_d * w;
    }
    let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        values.iter_mut().for_each(|v| *v *= spec.pga / peak);
    }
    SignalSeries::from_values(ts, ground_channel(), values)
}

/// Additive white Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// RMS per channel; a single value applies to every channel.
    pub rms: Vec<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn uniform(rms: f64, seed: u64) -> Self {
        NoiseSpec { rms: vec![rms], seed }
    }

    fn rms_for(&self, channel: usize) -> f64 {
        if self.rms.len() == 1 {
            self.rms[0]
        } else {
            self.rms[channel]
        }
    }
}

/// `clean + N(0, rms²)` per channel per step from one seeded stream.
pub fn add_noise(clean: &SignalSeries, noise: &NoiseSpec) -> Result<SignalSeries> {
    if noise.rms.len() != 1 && noise.rms.len() != clean.n_channels() {
        return Err(Error::dims(format!(
            "{} noise levels for {} channels",
            noise.rms.len(),
            clean.n_channels()
        )));
    }
    if noise.rms.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::invalid("noise rms must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut out = clean.clone();
    for row in out.samples.iter_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += noise.rms_for(c) * z;
        }
    }
    out.noise_rms = Some((0..clean.n_channels()).map(|c| noise.rms_for(c)).collect());
    Ok(out)
}

/// When a stiffness change happens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DamageTrigger {
    /// At the first fine step at or after this time [s].
    AtTime(f64),
    /// At the first fine step at or after `after` [s] where the story's
    /// interstory drift magnitude reaches `threshold` [m].
    Drift { threshold: f64, after: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DamageEvent {
    /// Zero-based story index.
    pub parameter: usize,
    /// Stiffness after the event [N/m].
    pub new_stiffness: f64,
    pub trigger: DamageTrigger,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DamageSchedule {
    pub events: Vec<DamageEvent>,
}

impl DamageSchedule {
    pub fn none() -> Self {
        DamageSchedule::default()
    }

    /// Degradation of `parameter` to `factor` times its initial value at `time`.
    pub fn drop_at(spec: &StructureSpec, parameter: usize, factor: f64, time: f64) -> Self {
        DamageSchedule {
            events: vec![DamageEvent {
                parameter,
                new_stiffness: spec.story_stiffness[parameter] * factor,
                trigger: DamageTrigger::AtTime(time),
            }],
        }
    }

    pub fn then(mut self, event: DamageEvent) -> Self {
        self.events.push(event);
        self
    }

    /// Stiffness must strictly decrease and fixed times must increase, per
    /// story, in listed order.
    pub fn validate(&self, spec: &StructureSpec) -> Result<()> {
        let mut current = spec.story_stiffness.clone();
        let mut last_time = vec![f64::NEG_INFINITY; current.len()];
        for (i, ev) in self.events.iter().enumerate() {
            let p = ev.parameter;
            if p >= current.len() {
                return Err(Error::invalid(format!(
                    "damage event {i} targets story {} of {}",
                    p + 1,
                    current.len()
                )));
            }
            if !(ev.new_stiffness > 0.0 && ev.new_stiffness < current[p]) {
                return Err(Error::invalid(format!(
                    "damage event {i}: new stiffness {} must be in (0, {})",
                    ev.new_stiffness, current[p]
                )));
            }
            match ev.trigger {
                DamageTrigger::AtTime(t) => {
                    if !(t >= 0.0 && t > last_time[p]) {
                        return Err(Error::invalid(format!(
                            "damage event {i}: times must increase per story"
                        )));
                    }
                    last_time[p] = t;
                }
                DamageTrigger::Drift { threshold, after } => {
                    if !(threshold > 0.0 && after >= 0.0) {
                        return Err(Error::invalid(format!(
                            "damage event {i}: drift threshold must be > 0 and arming time >= 0"
                        )));
                    }
                }
            }
            current[p] = ev.new_stiffness;
        }
        Ok(())
    }
}

/// A damage event as it actually happened in the truth simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizedDamage {
    pub parameter: usize,
    pub new_stiffness: f64,
    /// Time of the fine step at which the swap happened [s].
    pub time: f64,
    /// Index into the schedule.
    pub event: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthOptions {
    pub oversample: usize,
    /// Sensors whose noise-free outputs are recorded; defaults to
    /// accelerometers on every story.
    pub sensors: Option<SensorLayout>,
    /// Initial `[x; ẋ]`; zero when absent.
    pub initial_state: Option<DVector<f64>>,
}

impl Default for TruthOptions {
    fn default() -> Self {
        TruthOptions {
            oversample: 10,
            sensors: None,
            initial_state: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRun {
    /// Displacements, velocities and story stiffnesses per sample.
    pub states: SignalSeries,
    /// Noise-free sensor outputs per sample.
    pub outputs: SignalSeries,
    pub realized: Vec<RealizedDamage>,
}

impl TruthRun {
    /// Story stiffness at the last sample.
    pub fn final_stiffness(&self, n_dof: usize) -> Vec<f64> {
        let last = self.states.samples.last().expect("non-empty run");
        last[2 * n_dof..].to_vec()
    }
}

struct Discretized {
    a_d: DMatrix<f64>,
    b_d: DMatrix<f64>,
    c_out: DMatrix<f64>,
    d: DMatrix<f64>,
}

fn discretize_truth(spec: &StructureSpec, sensors: &SensorLayout, h: f64) -> Result<Discretized> {
    let mats = assemble_matrices(spec)?;
    let ss = build_state_space(&mats, sensors, 0)?;
    let (a_d, b_d) = exact_series(&ss.a, &ss.b, h);
    Ok(Discretized {
        a_d,
        b_d,
        c_out: ss.c_out,
        d: ss.d,
    })
}

fn drift(x: &DVector<f64>, story: usize) -> f64 {
    if story == 0 {
        x[0].abs()
    } else {
        (x[story] - x[story - 1]).abs()
    }
}

/// Simulate the true response to a ground-acceleration record.
pub fn simulate_truth(
    spec: &StructureSpec,
    schedule: &DamageSchedule,
    excitation: &SignalSeries,
    options: &TruthOptions,
) -> Result<TruthRun> {
    spec.validate()?;
    schedule.validate(spec)?;
    if excitation.n_channels() != 1 {
        return Err(Error::dims("excitation must have exactly one channel"));
    }
    if options.oversample < 1 {
        return Err(Error::invalid("oversample factor must be >= 1"));
    }
    let n = spec.n_dof();
    let sensors = options
        .sensors
        .clone()
        .unwrap_or_else(|| SensorLayout::accelerometers(0..spec.n_stories()));
    let ts = excitation.ts;
    let os = options.oversample;
    let h = ts / os as f64;

    let mut current = spec.clone();
    let mut model = discretize_truth(&current, &sensors, h)?;
    let mut x = match &options.initial_state {
        Some(x0) if x0.len() == 2 * n => x0.clone(),
        Some(x0) => {
            return Err(Error::dims(format!("initial state has {} entries, expected {}", x0.len(), 2 * n)))
        }
        None => DVector::zeros(2 * n),
    };
    let mut pending: Vec<usize> = (0..schedule.events.len()).collect();
    let mut realized = Vec::new();

    let mut state_rows = Vec::with_capacity(excitation.len());
    let mut output_rows = Vec::with_capacity(excitation.len());
    let gamma = DVector::from_column_slice(&spec.influence);

    for k in 0..excitation.len() {
        let u = &gamma * excitation.samples[k][0];
        for j in 0..os {
            let fine = k * os + j;
            let t = fine as f64 * h;
            // Events fire in schedule order; a story's later event waits for
            // its earlier one.
            let mut changed = false;
            let mut idx = 0;
            while idx < pending.len() {
                let e = pending[idx];
                let ev = schedule.events[e];
                let blocked = pending[..idx]
                    .iter()
                    .any(|&p| schedule.events[p].parameter == ev.parameter);
                let fires = !blocked
                    && match ev.trigger {
                        DamageTrigger::AtTime(tf) => t >= tf - 1e-9 * h,
                        DamageTrigger::Drift { threshold, after } => {
                            t >= after - 1e-9 * h && drift(&x, ev.parameter) >= threshold
                        }
                    };
                if fires {
                    current.story_stiffness[ev.parameter] = ev.new_stiffness;
                    realized.push(RealizedDamage {
                        parameter: ev.parameter,
                        new_stiffness: ev.new_stiffness,
                        time: t,
                        event: e,
                    });
                    pending.remove(idx);
                    changed = true;
                } else {
                    idx += 1;
                }
            }
            if changed {
                model = discretize_truth(&current, &sensors, h)?;
            }
            if j == 0 {
                let y = &model.c_out * &x + &model.d * &u;
                let mut row: Vec<f64> = x.iter().copied().collect();
                row.extend(&current.story_stiffness);
                state_rows.push(row);
                output_rows.push(y.iter().copied().collect::<Vec<_>>());
            }
            x = &model.a_d * &x + &model.b_d * &u;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("truth response is not finite at t = {t}")));
            }
        }
    }

    let mut state_channels = Vec::with_capacity(2 * n + spec.n_stories());
    for i in 0..n {
        state_channels.push(Channel::new(dof_label("x", i, spec), "m"));
    }
    for i in 0..n {
        state_channels.push(Channel::new(dof_label("v", i, spec), "m/s"));
    }
    for i in 0..spec.n_stories() {
        state_channels.push(Channel::new(format!("k{}", i + 1), "N/m"));
    }
    let output_channels = sensors
        .sensors
        .iter()
        .map(|s| {
            let (prefix, unit) = match s.kind {
                SensorKind::Displacement => ("x", "m"),
                SensorKind::Velocity => ("v", "m/s"),
                SensorKind::Acceleration => ("a", "m/s^2"),
            };
            Channel::new(dof_label(prefix, s.dof, spec), unit)
        })
        .collect();

    Ok(TruthRun {
        states: SignalSeries::new(ts, state_channels, state_rows)?,
        outputs: SignalSeries::new(ts, output_channels, output_rows)?,
        realized,
    })
}

fn dof_label(prefix: &str, dof: usize, spec: &StructureSpec) -> String {
    if dof >= spec.n_stories() {
        format!("{prefix}d")
    } else {
        format!("{prefix}{}", dof + 1)
    }
}
