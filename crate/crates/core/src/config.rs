//! TOML run configuration and structure definition files.
//!
//! A structure file carries explicit units:
//!
//! ```toml
//! [units]
//! mass = "t"
//! stiffness = "kN/m"
//! damping = "kN*s/m"
//!
//! masses = [1.0, 1.0]
//! stiffnesses = [12.0, 10.0]
//! dampings = [0.1, 0.1]
//!
//! [tmd.auto_tune]
//! mass = 0.1
//! ```
//!
//! `[tmd]` may instead give `mass`, `stiffness` and `damping` directly. A run
//! config either points at such a file (`structure = "frame.toml"`) or embeds
//! it as a `[structure]` table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::simulation::{DamageEvent, DamageSchedule, DamageTrigger, QuakeSpec};
use crate::structure::{
    assemble_matrices, modal_analysis, warburton_tune, SensorLayout, StructureSpec, TmdSpec,
    WarburtonTuning,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MassUnit {
    #[serde(rename = "kg")]
    Kilogram,
    #[serde(rename = "t")]
    Tonne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StiffnessUnit {
    #[serde(rename = "N/m")]
    NewtonPerMetre,
    #[serde(rename = "kN/m")]
    KilonewtonPerMetre,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DampingUnit {
    #[serde(rename = "N*s/m", alias = "Ns/m", alias = "N·s/m")]
    NewtonSecondPerMetre,
    #[serde(rename = "kN*s/m", alias = "kNs/m", alias = "kN·s/m")]
    KilonewtonSecondPerMetre,
}

impl MassUnit {
    pub fn to_si(self) -> f64 {
        match self {
            MassUnit::Kilogram => 1.0,
            MassUnit::Tonne => 1e3,
        }
    }
}

impl StiffnessUnit {
    pub fn to_si(self) -> f64 {
        match self {
            StiffnessUnit::NewtonPerMetre => 1.0,
            StiffnessUnit::KilonewtonPerMetre => 1e3,
        }
    }
}

impl DampingUnit {
    pub fn to_si(self) -> f64 {
        match self {
            DampingUnit::NewtonSecondPerMetre => 1.0,
            DampingUnit::KilonewtonSecondPerMetre => 1e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub mass: MassUnit,
    pub stiffness: StiffnessUnit,
    pub damping: DampingUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoTune {
    pub mass: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TmdEntry {
    pub mass: Option<f64>,
    pub stiffness: Option<f64>,
    pub damping: Option<f64>,
    pub auto_tune: Option<AutoTune>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureFile {
    pub units: Units,
    pub masses: Vec<f64>,
    pub stiffnesses: Vec<f64>,
    pub dampings: Vec<f64>,
    /// Ground-acceleration influence per DoF; ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub influence: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tmd: Option<TmdEntry>,
}

/// A structure in SI units, with the tuning result when the TMD was auto-tuned.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedStructure {
    pub spec: StructureSpec,
    pub tuning: Option<WarburtonTuning>,
    pub units: Units,
}

impl StructureFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("structure file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self) -> Result<ResolvedStructure> {
        let (m, k, c) = (
            self.units.mass.to_si(),
            self.units.stiffness.to_si(),
            self.units.damping.to_si(),
        );
        let scale = |v: &[f64], f: f64| v.iter().map(|x| x * f).collect::<Vec<_>>();
        let mut spec = StructureSpec::shear_frame(
            scale(&self.masses, m),
            scale(&self.stiffnesses, k),
            scale(&self.dampings, c),
        )?;
        let mut tuning = None;
        if let Some(t) = &self.tmd {
            let tmd = match (t.mass, t.stiffness, t.damping, t.auto_tune) {
                (Some(md), Some(kd), Some(cd), None) => TmdSpec::new(md * m, kd * k, cd * c)?,
                (None, None, None, Some(auto)) => {
                    let mats = assemble_matrices(&spec)?;
                    let modal = modal_analysis(&mats)?;
                    let tuned = warburton_tune(&mats, &modal, auto.mass * m)?;
                    tuning = Some(tuned);
                    tuned.tmd
                }
                _ => {
                    return Err(Error::Config(
                        "tmd needs either mass, stiffness and damping, or an auto_tune.mass entry".into(),
                    ))
                }
            };
            spec = spec.with_tmd(tmd)?;
        }
        if let Some(gamma) = &self.influence {
            if gamma.len() != spec.n_dof() {
                return Err(Error::Config(format!(
                    "influence has {} entries for {} DoFs",
                    gamma.len(),
                    spec.n_dof()
                )));
            }
            spec.influence = gamma.clone();
        }
        spec.validate()?;
        Ok(ResolvedStructure {
            spec,
            tuning,
            units: self.units,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StructureSource {
    Path(PathBuf),
    Inline(StructureFile),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuakePreset {
    FarField,
    NearField,
}

impl QuakePreset {
    pub fn spec(self) -> QuakeSpec {
        match self {
            QuakePreset::FarField => QuakeSpec::far_field(),
            QuakePreset::NearField => QuakeSpec::near_field(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExcitationConfig {
    /// Gaussian white noise [m/s² RMS].
    WhiteNoise { rms: f64 },
    /// Single sample of `amplitude` [m/s²] at `time` [s].
    Impulse { amplitude: f64, time: f64 },
    /// Synthetic earthquake-like record.
    Quake {
        preset: QuakePreset,
        /// Overrides the preset peak ground acceleration [m/s²].
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pga: Option<f64>,
    },
    /// User-supplied ground acceleration [m/s²], resampled to `ts`.
    Record {
        path: PathBuf,
        #[serde(default = "default_record_format")]
        format: String,
    },
}

fn default_record_format() -> String {
    "csv".into()
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        ExcitationConfig::WhiteNoise { rms: 0.57 }
    }
}

/// One stiffness drop. `story` is 1-based; `factor` multiplies the stiffness
/// in place before the event. Exactly one of `at` or `drift` is required;
/// `after` arms a drift trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DamageConfig {
    pub story: usize,
    pub factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Noise on the measured ground acceleration [m/s²].
    pub input_rms: f64,
    /// Noise on each structural sensor [sensor unit].
    pub output_rms: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            input_rms: 0.01,
            output_rms: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSettings {
    pub p0: f64,
    pub q: f64,
    pub r: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub taylor_order: usize,
    /// Initial stiffness guesses as multiples of the structure values.
    pub initial_factor: f64,
    /// Stiffness [N/m] represented by one filter parameter unit.
    pub stiffness_unit: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            p0: 1e-6,
            q: 1e-9,
            r: 1e-4,
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
            taylor_order: 3,
            initial_factor: 1.0,
            stiffness_unit: crate::model::DEFAULT_STIFFNESS_UNIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptationSettings {
    pub enabled: bool,
    pub z0: f64,
    pub p_adapt: f64,
    pub probe_reduction: f64,
    pub cooldown: usize,
    /// Detections up to this long after a realized event count as hits [s].
    pub match_window: f64,
}

impl Default for AdaptationSettings {
    fn default() -> Self {
        AdaptationSettings {
            enabled: true,
            z0: 3.0 * std::f64::consts::SQRT_2,
            p_adapt: 1.0,
            probe_reduction: 0.05,
            cooldown: 25,
            match_window: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// The structure without its TMD.
    Bare,
    /// The structure with its TMD.
    Tmd,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Bare => "bare",
            Variant::Tmd => "tmd",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub p0: Vec<f64>,
    pub q: Vec<f64>,
    pub orders: Vec<usize>,
    pub variants: Vec<Variant>,
    /// Worker threads; all available cores when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Write per-sample stiffness histories next to the result table.
    pub histories: bool,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            p0: (0..=8).map(|e| 10f64.powi(-e)).rev().collect(),
            q: (8..=15).map(|e| 10f64.powi(-e)).rev().collect(),
            orders: vec![1, 2, 3, 4],
            variants: vec![Variant::Bare, Variant::Tmd],
            workers: None,
            histories: true,
        }
    }
}

fn default_seed() -> u64 {
    1
}

fn default_duration() -> f64 {
    60.0
}

fn default_ts() -> f64 {
    0.02
}

fn default_oversample() -> usize {
    10
}

/// Declarative description of one run or sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Simulated duration [s].
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Sampling time [s].
    #[serde(default = "default_ts")]
    pub ts: f64,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    pub structure: StructureSource,
    /// Sensor list such as `"a1,a2"`; accelerometers on every story by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<String>,
    #[serde(default)]
    pub excitation: ExcitationConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub damage: Vec<DamageConfig>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub filter: FilterSettings,
    #[serde(default)]
    pub adaptation: AdaptationSettings,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Set `dotted.key = value` in a TOML table, parsing `value` as TOML and
/// falling back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut current = table;
    for part in &parts[..parts.len() - 1] {
        let entry = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{part}' in override '{key}' is not a table")))?;
    }
    current.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parse config text, apply `key=value` overrides and validate.
    pub fn from_toml(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("run config: {e}")))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serialize: {e}")))
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad(format!("duration must be > 0 s, got {}", self.duration));
        }
        if !(self.ts.is_finite() && self.ts > 0.0) {
            return bad(format!("ts must be > 0 s, got {}", self.ts));
        }
        if self.duration < 2.0 * self.ts {
            return bad("duration must cover at least two samples".into());
        }
        if self.oversample == 0 {
            return bad("oversample must be >= 1".into());
        }
        if self.noise.input_rms < 0.0 || self.noise.output_rms < 0.0 {
            return bad("noise rms must be >= 0".into());
        }
        if !(self.filter.initial_factor > 0.0) {
            return bad("filter.initial_factor must be > 0".into());
        }
        for (i, d) in self.damage.iter().enumerate() {
            if d.story == 0 {
                return bad(format!("damage[{i}]: stories are numbered from 1"));
            }
            if !(d.factor > 0.0 && d.factor < 1.0) {
                return bad(format!("damage[{i}]: factor must lie in (0, 1), got {}", d.factor));
            }
            match (d.at, d.drift) {
                (Some(_), None) if d.after.is_none() => {}
                (None, Some(_)) => {}
                _ => return bad(format!("damage[{i}]: give either `at`, or `drift` with optional `after`")),
            }
        }
        if let Some(w) = self.sweep.workers {
            if w == 0 {
                return bad("sweep.workers must be >= 1".into());
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical TOML form of the resolved config, first 16
    /// hex digits.
    /// A structure given by path is inlined first, so edits to that file change
    /// the hash.
    pub fn hash(&self) -> String {
        let mut canonical_cfg = self.clone();
        if let StructureSource::Path(p) = &self.structure {
            if let Ok(s) = StructureFile::load(&self.resolve_path(p)) {
                canonical_cfg.structure = StructureSource::Inline(s);
            }
        }
        let canonical = toml::to_string(&canonical_cfg).unwrap_or_default();
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn structure(&self) -> Result<ResolvedStructure> {
        match &self.structure {
            StructureSource::Inline(s) => s.resolve(),
            StructureSource::Path(p) => StructureFile::load(&self.resolve_path(p))?.resolve(),
        }
    }

    pub fn sensor_layout(&self, spec: &StructureSpec) -> Result<SensorLayout> {
        match &self.sensors {
            Some(text) => SensorLayout::parse(text),
            None => Ok(SensorLayout::accelerometers(0..spec.n_stories())),
        }
    }

    /// Damage schedule in N/m for `spec`; factors compound per story.
    pub fn damage_schedule(&self, spec: &StructureSpec) -> Result<DamageSchedule> {
        let mut current = spec.story_stiffness.clone();
        let mut schedule = DamageSchedule::none();
        for (i, d) in self.damage.iter().enumerate() {
            let p = d.story - 1;
            if p >= current.len() {
                return Err(Error::invalid(format!(
                    "damage[{i}] targets story {} of {}",
                    d.story,
                    current.len()
                )));
            }
            current[p] *= d.factor;
            let trigger = match (d.at, d.drift) {
                (Some(t), _) => DamageTrigger::AtTime(t),
                (None, Some(threshold)) => DamageTrigger::Drift {
                    threshold,
                    after: d.after.unwrap_or(0.0),
                },
                (None, None) => unreachable!("validated"),
            };
            schedule = schedule.then(DamageEvent {
                parameter: p,
                new_stiffness: current[p],
                trigger,
            });
        }
        schedule.validate(spec)?;
        Ok(schedule)
    }
}
