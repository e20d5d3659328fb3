//! Manifest-driven evaluation of a controller over a suite of excitations.
//!
//! For every excitation the uncontrolled and controlled responses are
//! simulated and J1–J4 computed. Runs are independent; with the `parallel`
//! feature they are spread over the rayon pool. Results are collected in
//! manifest order, so the written files do not depend on the execution mode.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{BuildingModel, ResponseHistory};
use crate::environment::{EnvConfig, Environment};
use crate::excitation::{generate_training_excitation, load_record, resample, GroundMotionRecord, RecordFormat, TrainingExcitationConfig, Units};
use crate::lqg::{design_lqg, LqgConfig, LqgController, LqgDesign};
use crate::metrics::{aggregate, write_metrics_csv, write_summary_plot_data, MetricsReport, SuiteSummary};
use crate::policy::{load_policy, Controller, MlpPolicy, ZeroController};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControllerSpec {
    Zero,
    Lqg(LqgConfig),
    Policy { file: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExcitationSpec {
    Record {
        path: PathBuf,
        /// Guessed from the extension when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        format: Option<RecordFormat>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        units: Option<Units>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
    /// Synthetic record; its seed is offset by the manifest seed.
    Generator(TrainingExcitationConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Building model file; overrides the model in `env_config`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_config: Option<PathBuf>,
    pub controller: ControllerSpec,
    pub excitations: Vec<ExcitationSpec>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunManifest {
    /// Parse a manifest file; relative paths are taken relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.resolve_paths(base);
        Ok(manifest)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in self.model.iter_mut().chain(self.env_config.iter_mut()) {
            resolve(base, p);
        }
        if let ControllerSpec::Policy { file } = &mut self.controller {
            resolve(base, file);
        }
        for e in &mut self.excitations {
            if let ExcitationSpec::Record { path, .. } = e {
                resolve(base, path);
            }
        }
        resolve(base, &mut self.output_dir);
    }

    /// Referenced input files must exist and the suite must be non-empty.
    pub fn validate(&self) -> Result<()> {
        if self.excitations.is_empty() {
            return Err(Error::Config("manifest lists no excitations".into()));
        }
        let mut inputs: Vec<&Path> = self.model.iter().chain(self.env_config.iter()).map(PathBuf::as_path).collect();
        if let ControllerSpec::Policy { file } = &self.controller {
            inputs.push(file);
        }
        for e in &self.excitations {
            if let ExcitationSpec::Record { path, scale, .. } = e {
                inputs.push(path);
                if scale.is_some_and(|s| !(s.is_finite() && s > 0.0)) {
                    return Err(Error::Config(format!("scale for {} must be positive", path.display())));
                }
            }
        }
        match inputs.into_iter().find(|p| !p.is_file()) {
            Some(p) => Err(Error::Config(format!("manifest input {} not found", p.display()))),
            None => Ok(()),
        }
    }

    /// SHA-256 of the manifest's canonical JSON.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let mut cfg = match &self.env_config {
            Some(p) => EnvConfig::from_json_file(p)?,
            None => EnvConfig::default(),
        };
        if let Some(p) = &self.model {
            cfg.model = BuildingModel::from_json_file(p)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses rayon when built with the `parallel` feature, otherwise sequential.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Map `f` over `items` in order, in parallel when requested and available.
pub fn map_runs<T, R, F>(items: &[T], execution: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if execution == Execution::Parallel {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = execution;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Source of fresh controllers, one per run.
#[derive(Debug, Clone)]
pub enum ControllerFactory {
    Zero(usize),
    Lqg(Arc<LqgDesign>),
    Policy(Arc<MlpPolicy>),
}

impl ControllerFactory {
    pub fn from_spec(spec: &ControllerSpec, env: &EnvConfig) -> Result<Self> {
        Ok(match spec {
            ControllerSpec::Zero => Self::Zero(env.model.n_actuators()),
            ControllerSpec::Lqg(cfg) => Self::Lqg(Arc::new(design_lqg(env, cfg)?)),
            ControllerSpec::Policy { file } => Self::Policy(Arc::new(load_policy(file, Some(&env.layout()))?)),
        })
    }

    pub fn build(&self) -> Box<dyn Controller> {
        match self {
            Self::Zero(n) => Box::new(ZeroController::new(*n)),
            Self::Lqg(d) => Box::new(LqgController::new(d.clone())),
            Self::Policy(p) => Box::new((**p).clone()),
        }
    }
}

/// Histories and metrics of one excitation.
#[derive(Debug, Clone)]
pub struct ExcitationRun {
    pub label: String,
    pub uncontrolled: ResponseHistory,
    pub controlled: ResponseHistory,
    pub report: MetricsReport,
}

/// Uncontrolled and controlled runs of one record.
pub fn evaluate_record(env: &Environment, factory: &ControllerFactory, label: &str, record: &GroundMotionRecord) -> Result<ExcitationRun> {
    let uncontrolled = env.simulate_uncontrolled(record)?;
    let controlled = env.simulate_controlled(record, factory.build().as_mut())?;
    let report = MetricsReport::compute(label, &controlled, &uncontrolled)?;
    Ok(ExcitationRun {
        label: label.to_string(),
        uncontrolled,
        controlled,
        report,
    })
}

/// Materialise one excitation of the manifest at the simulation dt, with its label.
pub fn load_excitation(manifest: &RunManifest, index: usize, dt: f64) -> Result<(String, GroundMotionRecord)> {
    let spec = manifest
        .excitations
        .get(index)
        .ok_or_else(|| Error::Contract(format!("manifest has no excitation {}", index + 1)))?;
    let (label, record) = match spec {
        ExcitationSpec::Record {
            path,
            format,
            units,
            name,
            scale,
        } => {
            let format = format.unwrap_or_else(|| RecordFormat::from_path(path));
            let mut record = load_record(path, format, *units).map_err(|e| excitation_error(index, &path.display().to_string(), e))?;
            if let Some(s) = scale {
                record = record.scaled(*s);
            }
            (name.clone().unwrap_or_else(|| record.name.clone()), record)
        }
        ExcitationSpec::Generator(cfg) => {
            let cfg = TrainingExcitationConfig {
                seed: cfg.seed.wrapping_add(manifest.seed),
                ..cfg.clone()
            };
            let record = generate_training_excitation(&cfg).map_err(|e| excitation_error(index, "generator", e))?;
            (record.name.clone(), record)
        }
    };
    let record = resample(&record, dt).map_err(|e| excitation_error(index, &label, e))?;
    Ok((label, record))
}

/// All excitations of the manifest; labels must be unique.
pub fn load_excitations(manifest: &RunManifest, dt: f64) -> Result<Vec<(String, GroundMotionRecord)>> {
    let loaded = (0..manifest.excitations.len())
        .map(|i| load_excitation(manifest, i, dt))
        .collect::<Result<Vec<_>>>()?;
    check_labels(&loaded)?;
    Ok(loaded)
}

fn check_labels(loaded: &[(String, GroundMotionRecord)]) -> Result<()> {
    for (i, (label, _)) in loaded.iter().enumerate() {
        if loaded[..i].iter().any(|(l, _)| l == label) {
            return Err(Error::Config(format!("duplicate excitation label '{label}'")));
        }
    }
    Ok(())
}

fn excitation_error(index: usize, what: &str, e: Error) -> Error {
    let message = format!("excitation {} ({what}): {e}", index + 1);
    match e {
        Error::Format(_) | Error::Json(_) => Error::Format(message),
        Error::Config(_) | Error::Io { .. } => Error::Config(message),
        _ => Error::Parameter(message),
    }
}

#[derive(Debug, Clone)]
pub struct EvaluationOutput {
    pub reports: Vec<MetricsReport>,
    pub summary: SuiteSummary,
    pub manifest_hash: String,
    /// Written files relative to the output directory, sorted.
    pub files: Vec<String>,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_PLOT_FILE: &str = "summary_plot.csv";
pub const MANIFEST_HASH_FILE: &str = "manifest.sha256";
pub const OUTPUTS_HASH_FILE: &str = "outputs.sha256";
pub const ERROR_LOG_FILE: &str = "errors.log";
pub const LQG_DESIGN_FILE: &str = "lqg_design.json";

/// File-name-safe form of a label.
pub fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c.to_ascii_lowercase() } else { '_' })
        .collect();
    if s.is_empty() {
        "record".into()
    } else {
        s
    }
}

struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root.join("histories")).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, fill: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
        let mut bytes = Vec::new();
        fill(&mut bytes).map_err(|e| Error::io(rel, e))?;
        let path = self.root.join(rel);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(rel.to_string());
        Ok(())
    }
}

/// Run the whole manifest and write its outputs.
///
/// Output directory contents: `metrics.csv`, `summary_plot.csv`, one
/// `histories/NN_label_{uncontrolled,controlled}.csv` pair per excitation,
/// `lqg_design.json` for LQG runs, `manifest.sha256` and `outputs.sha256`.
/// If any run fails, `errors.log` lists every failed excitation and the first
/// error is returned.
pub fn run_evaluation(manifest: &RunManifest, execution: Execution) -> Result<EvaluationOutput> {
    manifest.validate()?;
    let config = manifest.env_config()?;
    let env = Environment::new(config.clone())?;
    let factory = ControllerFactory::from_spec(&manifest.controller, &config)?;
    let mut out = OutputDir::create(&manifest.output_dir)?;

    let loaded: Vec<Result<(String, GroundMotionRecord)>> = (0..manifest.excitations.len())
        .map(|i| load_excitation(manifest, i, config.dt))
        .collect();
    let load_labels: Vec<String> = (0..loaded.len()).map(|i| format!("excitation {}", i + 1)).collect();
    abort_on_failures(&mut out, loaded.iter().zip(&load_labels).map(|(r, l)| (l.as_str(), r.as_ref().err())))?;
    let excitations: Vec<(String, GroundMotionRecord)> = loaded.into_iter().collect::<Result<_>>()?;
    check_labels(&excitations)?;

    let results = map_runs(&excitations, execution, |_, (label, record)| evaluate_record(&env, &factory, label, record));
    abort_on_failures(&mut out, results.iter().zip(&excitations).map(|(r, (l, _))| (l.as_str(), r.as_ref().err())))?;
    let runs: Vec<ExcitationRun> = results.into_iter().collect::<Result<_>>()?;
    let reports: Vec<MetricsReport> = runs.iter().map(|r| r.report.clone()).collect();
    let summary = aggregate(&reports)?;
    let manifest_hash = manifest.hash()?;

    out.write(METRICS_FILE, |w| write_metrics_csv(w, &reports, &summary))?;
    out.write(SUMMARY_PLOT_FILE, |w| write_summary_plot_data(w, &summary))?;
    for (i, run) in runs.iter().enumerate() {
        let stem = format!("histories/{:02}_{}", i + 1, slug(&run.label));
        out.write(&format!("{stem}_uncontrolled.csv"), |w| run.uncontrolled.write_csv(w))?;
        out.write(&format!("{stem}_controlled.csv"), |w| run.controlled.write_csv(w))?;
    }
    if let ControllerFactory::Lqg(design) = &factory {
        let json = design.dump_json()?;
        out.write(LQG_DESIGN_FILE, |w| writeln!(w, "{json}"))?;
    }
    out.write(MANIFEST_HASH_FILE, |w| writeln!(w, "{manifest_hash}"))?;

    let mut files = out.files.clone();
    files.sort();
    let mut listing = String::new();
    for f in &files {
        let path = out.root.join(f);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        listing.push_str(&format!("{}  {f}\n", hex::encode(Sha256::digest(&bytes))));
    }
    out.write(OUTPUTS_HASH_FILE, |w| w.write_all(listing.as_bytes()))?;
    files.push(OUTPUTS_HASH_FILE.to_string());
    files.sort();

    Ok(EvaluationOutput {
        reports,
        summary,
        manifest_hash,
        files,
    })
}

/// Write `errors.log` and return the first error if any run failed.
fn abort_on_failures<'a>(out: &mut OutputDir, results: impl Iterator<Item = (&'a str, Option<&'a Error>)>) -> Result<()> {
    let failures: Vec<(&str, &Error)> = results.filter_map(|(l, e)| e.map(|e| (l, e))).collect();
    let Some((label, first)) = failures.first() else {
        return Ok(());
    };
    out.write(ERROR_LOG_FILE, |w| {
        failures
            .iter()
            .try_for_each(|(l, e)| writeln!(w, "{l}: [{}] {e}", e.category()))
    })?;
    Err(rewrap(first, label))
}

fn rewrap(e: &Error, label: &str) -> Error {
    let message = format!("excitation '{label}': {e}");
    match e {
        Error::Model(_) => Error::Model(message),
        Error::Numerical(_) | Error::NonConvergence { .. } => Error::Numerical(message),
        Error::Contract(_) | Error::Lifecycle(_) => Error::Contract(message),
        Error::Format(_) | Error::Json(_) => Error::Format(message),
        Error::Config(_) | Error::Io { .. } => Error::Config(message),
        Error::Parameter(_) => Error::Parameter(message),
        Error::UndefinedRatio(_) => Error::UndefinedRatio(message),
    }
}
