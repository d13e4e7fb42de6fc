//! Uniformly sampled multi-channel signals and their CSV representation.
//!
//! CSV layout: optional `#` comment lines (a `# ts=<seconds>` line pins the
//! sampling time exactly, a `# units:` line documents channel units), then a
//! header row `time,<channel>,...`, then one row per sample.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum tolerated deviation of a time stamp from the uniform grid [s].
pub const MAX_TIME_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub unit: String,
}

impl Channel {
    pub fn new(name: impl Into<String>, unit: impl Into<String>) -> Self {
        Channel {
            name: name.into(),
            unit: unit.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    pub ts: f64,
    pub channels: Vec<Channel>,
    /// One row per sample, one entry per channel.
    pub samples: Vec<Vec<f64>>,
    /// Additive noise RMS per channel, when known.
    pub noise_rms: Option<Vec<f64>>,
}

impl SignalSeries {
    pub fn new(ts: f64, channels: Vec<Channel>, samples: Vec<Vec<f64>>) -> Result<Self> {
        let s = SignalSeries {
            ts,
            channels,
            samples,
            noise_rms: None,
        };
        s.validate()?;
        Ok(s)
    }

    /// Single-channel series.
    pub fn from_values(ts: f64, channel: Channel, values: Vec<f64>) -> Result<Self> {
        SignalSeries::new(ts, vec![channel], values.into_iter().map(|v| vec![v]).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ts.is_finite() && self.ts > 0.0) {
            return Err(Error::invalid(format!("sampling time must be > 0, got {}", self.ts)));
        }
        let width = self.channels.len();
        for (k, row) in self.samples.iter().enumerate() {
            if row.len() != width {
                return Err(Error::dims(format!(
                    "sample {k} has {} values for {width} channels",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("sample {k} is not finite")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.ts
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.ts
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.iter().map(|row| row[c]).collect()
    }

    pub fn row(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.samples[k])
    }

    pub fn rms(&self, c: usize) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|r| r[c] * r[c]).sum::<f64>() / self.len() as f64).sqrt()
    }

    /// Linear interpolation onto a new sampling time over the same span.
    pub fn resample(&self, ts: f64) -> Result<SignalSeries> {
        if !(ts.is_finite() && ts > 0.0) {
            return Err(Error::invalid(format!("target sampling time must be > 0, got {ts}")));
        }
        if self.is_empty() {
            return Ok(SignalSeries { ts, ..self.clone() });
        }
        let span = (self.len() - 1) as f64 * self.ts;
        let count = (span / ts + 1e-9).floor() as usize + 1;
        let last = self.len() - 1;
        let samples = (0..count)
            .map(|k| {
                let pos = k as f64 * ts / self.ts;
                let i = (pos.floor() as usize).min(last);
                let frac = pos - i as f64;
                if i == last || frac <= 0.0 {
                    self.samples[i].clone()
                } else {
                    self.samples[i]
                        .iter()
                        .zip(&self.samples[i + 1])
                        .map(|(a, b)| a + frac * (b - a))
                        .collect()
                }
            })
            .collect();
        Ok(SignalSeries {
            ts,
            channels: self.channels.clone(),
            samples,
            noise_rms: self.noise_rms.clone(),
        })
    }

    /// Write as CSV. `preamble` lines are emitted as `#` comments first.
    pub fn write_csv(&self, path: &Path, preamble: &[String]) -> Result<()> {
        let mut out = String::new();
        for line in preamble {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        out.push_str(&format!("# ts={}\n", self.ts));
        out.push_str("# units: s");
        for c in &self.channels {
            out.push(',');
            out.push_str(&c.unit);
        }
        out.push('\n');
        out.push_str("time");
        for c in &self.channels {
            out.push(',');
            out.push_str(&c.name);
        }
        out.push('\n');
        for (k, row) in self.samples.iter().enumerate() {
            out.push_str(&format!("{}", self.time(k)));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Layout of a user-supplied acceleration record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordFormat {
    /// `time,<channel>...` rows, header row optional.
    Csv,
    /// A `ts=<seconds>` (or `dt=`) line followed by one value per line.
    SingleColumn,
}

impl std::str::FromStr for RecordFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(RecordFormat::Csv),
            "single-column" | "single" => Ok(RecordFormat::SingleColumn),
            other => Err(Error::invalid(format!("unknown record format '{other}'"))),
        }
    }
}

/// Read a record, check uniform sampling and optionally resample.
pub fn load_record(path: &Path, format: RecordFormat, target_ts: Option<f64>) -> Result<SignalSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let series = match format {
        RecordFormat::Csv => parse_csv(path, &text)?,
        RecordFormat::SingleColumn => parse_single_column(path, &text)?,
    };
    match target_ts {
        Some(ts) if ts != series.ts => series.resample(ts),
        _ => Ok(series),
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn comment_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let body = line.trim_start_matches('#').trim();
    body.strip_prefix(key)
        .map(str::trim_start)
        .and_then(|r| r.strip_prefix('='))
        .map(str::trim)
}

fn parse_csv(path: &Path, text: &str) -> Result<SignalSeries> {
    let mut declared_ts = None;
    let mut units: Option<Vec<String>> = None;
    for line in text.lines().filter(|l| l.trim_start().starts_with('#')) {
        if let Some(v) = comment_value(line, "ts") {
            declared_ts = v.parse::<f64>().ok();
        }
        let body = line.trim_start_matches('#').trim();
        if let Some(rest) = body.strip_prefix("units:") {
            units = Some(rest.split(',').map(|s| s.trim().to_string()).collect());
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut names: Option<Vec<String>> = None;
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if names.is_none() && times.is_empty() && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            names = Some(record.iter().skip(1).map(str::to_string).collect());
            continue;
        }
        let values: Vec<f64> = record
            .iter()
            .enumerate()
            .map(|(i, f)| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_error(path, line, format!("column {} is not a number: '{f}'", i + 1)))
            })
            .collect::<Result<_>>()?;
        if values.len() < 2 {
            return Err(parse_error(path, line, "expected a time column and at least one value"));
        }
        if let Some(first) = samples.first().map(|s: &Vec<f64>| s.len()) {
            if values.len() - 1 != first {
                return Err(parse_error(
                    path,
                    line,
                    format!("expected {} values, found {}", first + 1, values.len()),
                ));
            }
        }
        times.push((line, values[0]));
        samples.push(values[1..].to_vec());
    }
    if samples.is_empty() {
        return Err(parse_error(path, 0, "record contains no samples"));
    }

    let ts = match declared_ts {
        Some(ts) => ts,
        None if times.len() >= 2 => (times[times.len() - 1].1 - times[0].1) / (times.len() - 1) as f64,
        None => return Err(parse_error(path, times[0].0, "cannot infer sampling time from one sample")),
    };
    if !(ts > 0.0) {
        return Err(parse_error(path, 0, format!("non-positive sampling time {ts}")));
    }
    let t0 = times[0].1;
    for (k, (line, t)) in times.iter().enumerate() {
        if (t - (t0 + k as f64 * ts)).abs() > MAX_TIME_JITTER {
            return Err(parse_error(
                path,
                *line,
                format!("non-uniform sampling: time {t} deviates from {}", t0 + k as f64 * ts),
            ));
        }
    }

    let width = samples[0].len();
    let names = names.unwrap_or_else(|| (1..=width).map(|i| format!("ch{i}")).collect());
    if names.len() != width {
        return Err(parse_error(path, 1, "header does not match the number of value columns"));
    }
    let units = units
        .map(|u| u.into_iter().skip(1).collect::<Vec<_>>())
        .filter(|u| u.len() == width)
        .unwrap_or_else(|| vec![String::new(); width]);
    let channels = names.into_iter().zip(units).map(|(n, u)| Channel::new(n, u)).collect();
    SignalSeries::new(ts, channels, samples)
}

fn parse_single_column(path: &Path, text: &str) -> Result<SignalSeries> {
    let mut ts = None;
    let mut values = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if let Some(v) = comment_value(line, "ts").or_else(|| comment_value(line, "dt")) {
                ts = Some(v.parse::<f64>().map_err(|_| parse_error(path, lineno, "bad sampling time"))?);
            }
            continue;
        }
        if ts.is_none() {
            let v = comment_value(line, "ts")
                .or_else(|| comment_value(line, "dt"))
                .ok_or_else(|| parse_error(path, lineno, "expected a 'ts=<seconds>' header"))?;
            ts = Some(v.parse::<f64>().map_err(|_| parse_error(path, lineno, "bad sampling time"))?);
            continue;
        }
        let v = line
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_error(path, lineno, format!("not a number: '{line}'")))?;
        values.push(v);
    }
    let ts = ts.ok_or_else(|| parse_error(path, 0, "missing 'ts=<seconds>' header"))?;
    if values.is_empty() {
        return Err(parse_error(path, 0, "record contains no samples"));
    }
    SignalSeries::from_values(ts, Channel::new("accel", "m/s^2"), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f64> = (0..500).map(|k| (k as f64 * 0.37).sin() * 1.234567890123e-3).collect();
        let s = SignalSeries::from_values(0.02, Channel::new("ag", "m/s^2"), values).unwrap();
        let p = dir.path().join("s.csv");
        s.write_csv(&p, &["test".into()]).unwrap();
        let back = load_record(&p, RecordFormat::Csv, None).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn resampling_a_ramp_picks_every_other_sample() {
        let ramp: Vec<f64> = (0..101).map(|k| 0.5 * k as f64 - 3.0).collect();
        let s = SignalSeries::from_values(0.01, Channel::new("a", ""), ramp.clone()).unwrap();
        let r = s.resample(0.02).unwrap();
        assert_eq!(r.len(), 51);
        for (k, row) in r.samples.iter().enumerate() {
            assert!((row[0] - ramp[2 * k]).abs() < 1e-12);
        }
    }

    #[test]
    fn malformed_row_is_reported_with_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("time,ag\n");
        for k in 0..20 {
            if k == 15 {
                body.push_str("0.3,abc\n");
            } else {
                body.push_str(&format!("{},{}\n", k as f64 * 0.02, k));
            }
        }
        let p = write(&dir, "bad.csv", &body);
        match load_record(&p, RecordFormat::Csv, None).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 17),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_uniform_sampling_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "j.csv", "0,1\n0.02,2\n0.0405,3\n0.06,4\n");
        assert!(matches!(load_record(&p, RecordFormat::Csv, None), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn headerless_two_column_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "h.csv", "0.0,1.5\n0.01,2.5\n0.02,3.5\n");
        let s = load_record(&p, RecordFormat::Csv, Some(0.02)).unwrap();
        assert_eq!(s.ts, 0.02);
        assert_eq!(s.channel(0), vec![1.5, 3.5]);
    }

    #[test]
    fn single_column_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "s.txt", "ts=0.01\n1\n2\n3\n");
        let s = load_record(&p, RecordFormat::SingleColumn, None).unwrap();
        assert_eq!(s.ts, 0.01);
        assert_eq!(s.channel(0), vec![1.0, 2.0, 3.0]);
        let p = write(&dir, "s2.txt", "1\n2\n");
        assert!(load_record(&p, RecordFormat::SingleColumn, None).is_err());
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_record(Path::new("/nonexistent/x.csv"), RecordFormat::Csv, None),
            Err(Error::Io { .. })
        ));
    }
}
