//! Ground-motion records: loading, resampling and synthetic training excitation.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.806_65;

/// Maximum tolerated deviation of a time column from a uniform grid, s.
pub const DT_TOLERANCE: f64 = 1e-6;

/// Historical strong motions of the reference comparison suite. Waveforms are
/// not distributed; supply the files and list them in a run manifest.
pub const REFERENCE_SUITE: [&str; 7] = [
    "Loma Prieta (1989)",
    "Imperial Valley (1979)",
    "Coalinga (1983)",
    "Kobe (1995)",
    "Chi-Chi (1999)",
    "Northridge (1994), Sylmar",
    "Northridge (1994), West Pico Canyon Road",
];

/// A uniformly sampled ground-acceleration series in m/s².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundMotionRecord {
    pub name: String,
    pub dt: f64,
    pub samples: Vec<f64>,
    /// Scale factors applied since loading (unit conversion, amplitude scaling).
    #[serde(default)]
    pub scale_applied: Vec<f64>,
}

impl GroundMotionRecord {
    pub fn new(name: impl Into<String>, dt: f64, samples: Vec<f64>) -> Result<Self> {
        let rec = Self {
            name: name.into(),
            dt,
            samples,
            scale_applied: Vec::new(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn zeros(name: impl Into<String>, dt: f64, len: usize) -> Result<Self> {
        Self::new(name, dt, vec![0.0; len])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Format(format!("record '{}': dt = {} must be positive", self.name, self.dt)));
        }
        if self.samples.len() < 2 {
            return Err(Error::Format(format!("record '{}' has fewer than 2 samples", self.name)));
        }
        if let Some(i) = self.samples.iter().position(|a| !a.is_finite()) {
            return Err(Error::Format(format!("record '{}': sample {i} is not finite", self.name)));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.dt
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.samples.iter_mut().for_each(|a| *a *= factor);
        self.scale_applied.push(factor);
        self
    }

    /// Two-column CSV with `# name:` / `# units: m/s2` comment lines.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# name: {}", self.name)?;
        writeln!(out, "# units: m/s2")?;
        writeln!(out, "time,accel")?;
        for (i, a) in self.samples.iter().enumerate() {
            writeln!(out, "{},{}", i as f64 * self.dt, a)?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_csv(&mut out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFormat {
    /// `time,accel` rows, optional header, `#` comments.
    Csv,
    /// Four header lines (NPTS/DT on the fourth) followed by whitespace-separated values.
    #[serde(alias = "at2")]
    StrongMotion,
}

impl FromStr for RecordFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "strong_motion" | "strong-motion" | "at2" => Ok(Self::StrongMotion),
            other => Err(Error::Config(format!("unknown record format '{other}'"))),
        }
    }
}

impl RecordFormat {
    /// Guess from the file extension: `.csv` is CSV, anything else strong-motion text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::StrongMotion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    #[serde(rename = "g")]
    G,
    #[serde(rename = "m/s2")]
    MetersPerSecond2,
    #[serde(rename = "cm/s2")]
    CentimetersPerSecond2,
}

impl Units {
    pub fn to_si(self) -> f64 {
        match self {
            Units::G => STANDARD_GRAVITY,
            Units::MetersPerSecond2 => 1.0,
            Units::CentimetersPerSecond2 => 0.01,
        }
    }

    /// Best-effort detection from free-form header text.
    fn detect(text: &str) -> Option<Self> {
        let t = text.to_ascii_lowercase();
        if t.contains("cm/s") || t.contains("cm/sec") || t.contains("gal") {
            Some(Units::CentimetersPerSecond2)
        } else if t.contains("m/s") || t.contains("m/sec") {
            Some(Units::MetersPerSecond2)
        } else if t.contains("(g)") || t.contains("units of g") || t.contains("units are g") || t.contains(" in g") {
            Some(Units::G)
        } else {
            None
        }
    }
}

impl FromStr for Units {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "g" => Ok(Units::G),
            "m/s2" | "m/s^2" | "mps2" => Ok(Units::MetersPerSecond2),
            "cm/s2" | "cm/s^2" | "gal" => Ok(Units::CentimetersPerSecond2),
            other => Err(Error::Config(format!("unknown units '{other}' (expected g, m/s2 or cm/s2)"))),
        }
    }
}

impl fmt::Display for Units {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Units::G => "g",
            Units::MetersPerSecond2 => "m/s2",
            Units::CentimetersPerSecond2 => "cm/s2",
        })
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "record".into())
}

/// Load a record, converting to m/s². An explicit `units` overrides any unit
/// declared in the file; when neither is present loading fails.
pub fn load_record(path: impl AsRef<Path>, format: RecordFormat, units: Option<Units>) -> Result<GroundMotionRecord> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = file_stem(path);
    match format {
        RecordFormat::Csv => parse_csv(&text, &name, units),
        RecordFormat::StrongMotion => parse_strong_motion(&text, &name, units),
    }
    .map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn finish(name: String, dt: f64, raw: Vec<f64>, units: Option<Units>, declared: Option<Units>) -> Result<GroundMotionRecord> {
    let units = units.or(declared).ok_or_else(|| {
        Error::Config(format!("record '{name}' declares no units; pass an explicit units flag (g, m/s2, cm/s2)"))
    })?;
    let rec = GroundMotionRecord::new(name, dt, raw)?;
    Ok(match units {
        Units::MetersPerSecond2 => rec,
        u => rec.scaled(u.to_si()),
    })
}

pub fn parse_csv(text: &str, name: &str, units: Option<Units>) -> Result<GroundMotionRecord> {
    let mut name = name.to_string();
    let mut declared = None;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut first_data = true;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(u) = comment.strip_prefix("units:") {
                declared = Some(u.parse()?);
            } else if let Some(n) = comment.strip_prefix("name:") {
                name = n.trim().to_string();
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.parse().ok()).collect();
        match parsed {
            Some(v) if v.len() == 2 => {
                times.push(v[0]);
                values.push(v[1]);
            }
            None if first_data => {}
            _ => {
                return Err(Error::Format(format!(
                    "line {}: expected two numeric columns time,accel",
                    lineno + 1
                )))
            }
        }
        first_data = false;
    }
    if times.len() < 2 {
        return Err(Error::Format("need at least two samples".into()));
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > DT_TOLERANCE {
            return Err(Error::Format(format!(
                "non-uniform sampling between rows {} and {}: step {} vs mean {dt}",
                i,
                i + 1,
                w[1] - w[0]
            )));
        }
    }
    // Snap to the grid implied by the first step when consistent, so "0.01" stays 0.01.
    let dt = if ((times[1] - times[0]) - dt).abs() <= DT_TOLERANCE {
        round_dt(dt)
    } else {
        dt
    };
    finish(name, dt, values, units, declared)
}

/// Remove accumulation noise from a mean step (e.g. 0.010000000000000002 → 0.01).
fn round_dt(dt: f64) -> f64 {
    let snapped: f64 = format!("{dt:.9}").parse().unwrap_or(dt);
    if (snapped - dt).abs() <= 1e-12 {
        snapped
    } else {
        dt
    }
}

fn header_value(line: &str, key: &str) -> Option<String> {
    let upper = line.to_ascii_uppercase();
    let start = upper.find(key)? + key.len();
    let rest = upper[start..].trim_start_matches([' ', '=', ':']);
    let token: String = rest
        .chars()
        .take_while(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'E'))
        .collect();
    (!token.is_empty()).then_some(token)
}

pub fn parse_strong_motion(text: &str, name: &str, units: Option<Units>) -> Result<GroundMotionRecord> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 5 {
        return Err(Error::Format("strong-motion file needs 4 header lines and data".into()));
    }
    let npts: usize = header_value(lines[3], "NPTS")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("no NPTS on header line 4: '{}'", lines[3].trim())))?;
    let dt: f64 = header_value(lines[3], "DT")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("no DT on header line 4: '{}'", lines[3].trim())))?;
    let declared = Units::detect(&lines[..3].join("\n"));

    let mut values = Vec::with_capacity(npts);
    for (i, line) in lines[4..].iter().enumerate() {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad value '{tok}'", i + 5)))?;
            values.push(v);
        }
    }
    if values.len() != npts {
        return Err(Error::Format(format!("header declares NPTS = {npts} but {} values found", values.len())));
    }
    let title = lines[0].trim();
    let name = if title.is_empty() { name.to_string() } else { title.to_string() };
    finish(name, dt, values, units, declared)
}

/// Linear interpolation onto a uniform grid of spacing `target_dt`, starting at 0.
pub fn resample(record: &GroundMotionRecord, target_dt: f64) -> Result<GroundMotionRecord> {
    if !(target_dt > 0.0 && target_dt.is_finite()) {
        return Err(Error::Parameter(format!("target dt = {target_dt} must be positive")));
    }
    if (target_dt - record.dt).abs() <= 1e-12 * record.dt {
        return Ok(record.clone());
    }
    let duration = record.duration();
    let count = (duration / target_dt + 1e-9).floor() as usize + 1;
    let last = record.samples.len() - 1;
    let samples = (0..count)
        .map(|i| {
            let pos = i as f64 * target_dt / record.dt;
            let lo = pos.floor() as usize;
            if lo >= last {
                return record.samples[last];
            }
            let frac = pos - lo as f64;
            if frac < 1e-9 {
                record.samples[lo]
            } else if frac > 1.0 - 1e-9 {
                record.samples[lo + 1]
            } else {
                record.samples[lo] * (1.0 - frac) + record.samples[lo + 1] * frac
            }
        })
        .collect();
    Ok(GroundMotionRecord {
        name: record.name.clone(),
        dt: target_dt,
        samples,
        scale_applied: record.scale_applied.clone(),
    })
}

/// White noise plus Poisson-timed rectangular impulses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingExcitationConfig {
    /// s
    pub duration: f64,
    /// s
    pub dt: f64,
    /// Standard deviation of the Gaussian noise, m/s².
    pub noise_std: f64,
    /// Expected impulses per second.
    pub impulse_rate: f64,
    /// Impulse amplitude bounds (min, max), m/s². The sign is drawn separately.
    pub impulse_amp_range: (f64, f64),
    /// Pulse width in samples.
    pub impulse_width: usize,
    pub seed: u64,
}

impl Default for TrainingExcitationConfig {
    fn default() -> Self {
        Self {
            duration: 20.0,
            dt: 0.01,
            noise_std: DEFAULT_NOISE_STD,
            impulse_rate: 0.2,
            impulse_amp_range: (1.0, 4.0),
            impulse_width: 1,
            seed: 0,
        }
    }
}

/// Noise level giving a few millimetres of RMS inter-story drift on the
/// benchmark building (see the `calibrate_default_noise` test).
pub const DEFAULT_NOISE_STD: f64 = 0.5;

impl TrainingExcitationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.dt > 0.0 && self.duration.is_finite() && self.dt.is_finite()) {
            return Err(Error::Config("training excitation duration and dt must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        if !(self.impulse_rate >= 0.0 && self.impulse_rate.is_finite()) {
            return Err(Error::Config("impulse_rate must be non-negative".into()));
        }
        let (lo, hi) = self.impulse_amp_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("impulse amplitude range ({lo}, {hi}) is not ordered")));
        }
        if self.impulse_width == 0 {
            return Err(Error::Config("impulse_width must be at least one sample".into()));
        }
        if self.duration / self.dt < 1.0 {
            return Err(Error::Config("duration must span at least one step".into()));
        }
        Ok(())
    }
}

/// One generated impulse: first sample index and signed amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Impulse {
    pub index: usize,
    pub amplitude: f64,
}

pub fn generate_training_excitation(config: &TrainingExcitationConfig) -> Result<GroundMotionRecord> {
    generate_with_impulses(config).map(|(rec, _)| rec)
}

/// Generator variant that also reports the impulse train.
pub fn generate_with_impulses(config: &TrainingExcitationConfig) -> Result<(GroundMotionRecord, Vec<Impulse>)> {
    config.validate()?;
    let len = (config.duration / config.dt).round() as usize + 1;

    // Independent streams for noise and impulses so changing one leaves the other intact.
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut impulse_rng = ChaCha8Rng::seed_from_u64(config.seed);
    impulse_rng.set_stream(1);

    let mut samples = if config.noise_std > 0.0 {
        let normal = Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        (0..len).map(|_| normal.sample(&mut noise_rng)).collect()
    } else {
        vec![0.0; len]
    };

    let mut impulses = Vec::new();
    if config.impulse_rate > 0.0 {
        let gaps = Exp::new(config.impulse_rate).map_err(|e| Error::Config(e.to_string()))?;
        let (lo, hi) = config.impulse_amp_range;
        let amps = Uniform::new_inclusive(lo, hi).map_err(|e| Error::Config(e.to_string()))?;
        let mut t = 0.0;
        loop {
            t += gaps.sample(&mut impulse_rng);
            if t >= config.duration {
                break;
            }
            let magnitude = amps.sample(&mut impulse_rng);
            let amplitude = if impulse_rng.random_bool(0.5) { magnitude } else { -magnitude };
            let index = ((t / config.dt).round() as usize).min(len - 1);
            for s in samples.iter_mut().skip(index).take(config.impulse_width) {
                *s += amplitude;
            }
            impulses.push(Impulse { index, amplitude });
        }
    }

    let rec = GroundMotionRecord::new(format!("generated-seed{}", config.seed), config.dt, samples)?;
    Ok((rec, impulses))
}
