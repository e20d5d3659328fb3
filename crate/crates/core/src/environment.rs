//! Sequential decision-process wrapper around the shear-building simulator.
//!
//! Observations hold the last `history_len` frames of absolute acceleration at
//! the instrumented stories, the latest ground acceleration and the last
//! normalised action. Rewards are negated, scaled quadratic penalties on story
//! displacement, base shear and actuator force.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    assemble_matrices, simulate, BuildingModel, ForceLaw, NewmarkIntegrator, NewmarkParams, NoForce,
    ResponseHistory, SimState, SystemMatrices,
};
use crate::excitation::{
    generate_training_excitation, load_record, resample, GroundMotionRecord, RecordFormat, TrainingExcitationConfig,
    Units,
};
use crate::policy::Controller;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub displacement: f64,
    pub base_shear: f64,
    pub force: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            displacement: 1.0,
            base_shear: 1.0,
            force: 300.0,
        }
    }
}

/// Normalising scales: displacement in m, base shear and force in N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardScales {
    pub displacement: f64,
    pub base_shear: f64,
    pub force: f64,
}

impl Default for RewardScales {
    fn default() -> Self {
        Self {
            displacement: 0.01,
            base_shear: 5e5,
            force: DEFAULT_MAX_FORCE,
        }
    }
}

pub const DEFAULT_MAX_FORCE: f64 = 1e5;

/// Where episode excitations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EpisodeSource {
    /// Fresh noise-plus-impulse record per episode; the reset seed replaces `seed`.
    Generator(TrainingExcitationConfig),
    Record {
        path: PathBuf,
        format: RecordFormat,
        #[serde(default)]
        units: Option<Units>,
    },
    Inline {
        record: GroundMotionRecord,
    },
}

impl Default for EpisodeSource {
    fn default() -> Self {
        EpisodeSource::Generator(TrainingExcitationConfig::default())
    }
}

impl EpisodeSource {
    /// Materialise the excitation at the given dt.
    pub fn instantiate(&self, seed: u64, dt: f64) -> Result<GroundMotionRecord> {
        let record = match self {
            EpisodeSource::Generator(cfg) => generate_training_excitation(&TrainingExcitationConfig {
                seed,
                dt,
                ..cfg.clone()
            })?,
            EpisodeSource::Record { path, format, units } => {
                if !path.exists() {
                    return Err(Error::Config(format!("record file {} not found", path.display())));
                }
                load_record(path, *format, *units)?
            }
            EpisodeSource::Inline { record } => {
                record.validate()?;
                record.clone()
            }
        };
        resample(&record, dt)
    }

    /// Resolve relative record paths against `base`.
    pub fn with_base_dir(mut self, base: &Path) -> Self {
        if let EpisodeSource::Record { path, .. } = &mut self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub model: BuildingModel,
    pub history_len: usize,
    /// 1-based stories carrying accelerometers; `None` means every story.
    #[serde(default)]
    pub instrumented_stories: Option<Vec<usize>>,
    pub dt: f64,
    #[serde(default = "default_beta")]
    pub newmark_beta: f64,
    #[serde(default = "default_gamma")]
    pub newmark_gamma: f64,
    /// Physical force bound per actuator, N. Normalised action ±1 maps onto it.
    pub max_force: f64,
    pub reward_weights: RewardWeights,
    pub reward_scales: RewardScales,
    #[serde(default)]
    pub episode_source: EpisodeSource,
}

fn default_beta() -> f64 {
    0.25
}

fn default_gamma() -> f64 {
    0.5
}

impl Default for EnvConfig {
    fn default() -> Self {
        let model = BuildingModel::benchmark();
        let all = (1..=model.n_stories).collect();
        Self {
            model,
            history_len: 5,
            instrumented_stories: Some(all),
            dt: 0.01,
            newmark_beta: default_beta(),
            newmark_gamma: default_gamma(),
            max_force: DEFAULT_MAX_FORCE,
            reward_weights: RewardWeights::default(),
            reward_scales: RewardScales::default(),
            episode_source: EpisodeSource::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.history_len == 0 {
            return Err(Error::Config("history_len must be at least 1".into()));
        }
        if !(self.max_force > 0.0 && self.max_force.is_finite()) {
            return Err(Error::Config("max_force must be positive".into()));
        }
        let w = self.reward_weights;
        if [w.displacement, w.base_shear, w.force].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("reward weights must be non-negative".into()));
        }
        let s = self.reward_scales;
        if [s.displacement, s.base_shear, s.force].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("reward scales must be positive".into()));
        }
        let stories = self.instrumented();
        if stories.is_empty() {
            return Err(Error::Config("at least one story must be instrumented".into()));
        }
        if let Some(s) = stories.iter().find(|s| **s == 0 || **s > self.model.n_stories) {
            return Err(Error::Config(format!(
                "instrumented story {s} outside 1..={}",
                self.model.n_stories
            )));
        }
        self.newmark().validate()
    }

    pub fn newmark(&self) -> NewmarkParams {
        NewmarkParams {
            beta: self.newmark_beta,
            gamma: self.newmark_gamma,
            dt: self.dt,
        }
    }

    pub fn instrumented(&self) -> Vec<usize> {
        match &self.instrumented_stories {
            Some(s) => s.clone(),
            None => (1..=self.model.n_stories).collect(),
        }
    }

    pub fn layout(&self) -> ObservationLayout {
        ObservationLayout {
            k: self.history_len,
            instrumented: self.instrumented(),
            n_act: self.model.n_actuators(),
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self {
            episode_source: cfg.episode_source.clone().with_base_dir(base),
            ..cfg
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Shape of the flat observation vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub k: usize,
    pub instrumented: Vec<usize>,
    pub n_act: usize,
}

impl ObservationLayout {
    pub fn obs_dim(&self) -> usize {
        self.k * self.instrumented.len() + 1 + self.n_act
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `k` frames of absolute acceleration (m/s²), oldest first.
    pub accel_history: Vec<Vec<f64>>,
    pub ground_accel: f64,
    /// Last applied action in normalised units.
    pub last_action: Vec<f64>,
}

impl Observation {
    /// Frames, then ground acceleration, then last action.
    pub fn flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.accel_history.iter().flatten().copied().collect();
        v.push(self.ground_accel);
        v.extend(&self.last_action);
        v
    }

    pub fn latest_frame(&self) -> &[f64] {
        self.accel_history.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// FIFO buffer behind [`Observation`].
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    frames: VecDeque<Vec<f64>>,
    ground_accel: f64,
    last_action: Vec<f64>,
}

impl ObservationWindow {
    /// Zero-filled window.
    pub fn new(layout: &ObservationLayout) -> Self {
        Self {
            frames: std::iter::repeat_n(vec![0.0; layout.instrumented.len()], layout.k).collect(),
            ground_accel: 0.0,
            last_action: vec![0.0; layout.n_act],
        }
    }

    pub fn push(&mut self, frame: Vec<f64>, ground_accel: f64, last_action: Vec<f64>) {
        self.frames.pop_front();
        self.frames.push_back(frame);
        self.ground_accel = ground_accel;
        self.last_action = last_action;
    }

    pub fn observation(&self) -> Observation {
        Observation {
            accel_history: self.frames.iter().cloned().collect(),
            ground_accel: self.ground_accel,
            last_action: self.last_action.clone(),
        }
    }
}

/// Negated weighted quadratic penalty on displacement, base shear and force.
pub fn compute_reward(
    displacement: &[f64],
    base_shear: f64,
    forces: &[f64],
    weights: &RewardWeights,
    scales: &RewardScales,
) -> f64 {
    let sq = |v: f64, s: f64| (v / s) * (v / s);
    let x: f64 = displacement.iter().map(|x| sq(*x, scales.displacement)).sum();
    let u: f64 = forces.iter().map(|u| sq(*u, scales.force)).sum();
    -(weights.displacement * x + weights.base_shear * sq(base_shear, scales.base_shear) + weights.force * u)
}

/// Clip a normalised action to [-1, 1]; non-finite entries are a contract violation.
pub fn clip_action(action: &[f64], n_act: usize) -> Result<Vec<f64>> {
    if action.len() != n_act {
        return Err(Error::Contract(format!("expected {n_act} actions, got {}", action.len())));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Contract("action contains non-finite values".into()));
    }
    Ok(action.iter().map(|a| a.clamp(-1.0, 1.0)).collect())
}

fn base_shear(masses: &DVector<f64>, abs_accel: &DVector<f64>) -> f64 {
    masses.dot(abs_accel)
}

fn select(abs_accel: &DVector<f64>, stories: &[usize]) -> Vec<f64> {
    stories.iter().map(|s| abs_accel[s - 1]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub time: f64,
    pub isd: Vec<f64>,
    pub base_shear: f64,
    pub forces: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
struct Episode {
    record: GroundMotionRecord,
    cursor: usize,
    state: SimState,
    window: ObservationWindow,
    done: bool,
}

/// One environment instance. Not shareable across threads while stepping;
/// distinct instances are independent.
#[derive(Debug, Clone)]
pub struct Environment {
    config: EnvConfig,
    integrator: NewmarkIntegrator,
    layout: ObservationLayout,
    episode: Option<Episode>,
}

impl Environment {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let mats = assemble_matrices(&config.model)?;
        let integrator = NewmarkIntegrator::new(&mats, config.newmark())?;
        let layout = config.layout();
        Ok(Self {
            config,
            integrator,
            layout,
            episode: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn layout(&self) -> &ObservationLayout {
        &self.layout
    }

    pub fn matrices(&self) -> &SystemMatrices {
        self.integrator.matrices()
    }

    pub fn integrator(&self) -> &NewmarkIntegrator {
        &self.integrator
    }

    pub fn obs_dim(&self) -> usize {
        self.layout.obs_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.layout.n_act
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_none_or(|e| e.done)
    }

    /// Start an episode. `source` overrides the configured excitation source.
    pub fn reset(&mut self, seed: u64, source: Option<&EpisodeSource>) -> Result<Observation> {
        let source = source.unwrap_or(&self.config.episode_source);
        let record = source.instantiate(seed, self.config.dt)?;
        self.reset_with_record(record)
    }

    pub fn reset_with_record(&mut self, record: GroundMotionRecord) -> Result<Observation> {
        let record = resample(&record, self.config.dt)?;
        let state = self.integrator.rest_state(record.samples[0])?;
        let window = ObservationWindow::new(&self.layout);
        let obs = window.observation();
        self.episode = Some(Episode {
            record,
            cursor: 0,
            state,
            window,
            done: false,
        });
        Ok(obs)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let episode = match &mut self.episode {
            None => return Err(Error::Lifecycle("step called before reset".into())),
            Some(e) if e.done => return Err(Error::Lifecycle("step called after the episode finished".into())),
            Some(e) => e,
        };
        let action = clip_action(action, self.layout.n_act)?;
        let forces = DVector::from_iterator(action.len(), action.iter().map(|a| a * self.config.max_force));
        let ag = episode.record.samples[episode.cursor + 1];
        let state = self.integrator.step(&episode.state, ag, &forces)?;

        let mats = self.integrator.matrices();
        let abs_accel = state.a.add_scalar(ag);
        let shear = base_shear(&mats.mass_diagonal(), &abs_accel);
        let reward = compute_reward(
            state.x.as_slice(),
            shear,
            forces.as_slice(),
            &self.config.reward_weights,
            &self.config.reward_scales,
        );
        let isd = (0..state.x.len())
            .map(|j| state.x[j] - if j == 0 { 0.0 } else { state.x[j - 1] })
            .collect();

        episode.window.push(select(&abs_accel, &self.layout.instrumented), ag, action);
        episode.cursor += 1;
        episode.done = episode.cursor + 1 == episode.record.samples.len();
        let info = StepInfo {
            time: state.t,
            isd,
            base_shear: shear,
            forces: forces.as_slice().to_vec(),
        };
        episode.state = state;
        Ok(StepResult {
            observation: episode.window.observation(),
            reward,
            done: episode.done,
            info,
        })
    }

    /// Simulation state of the running episode.
    pub fn state(&self) -> Option<&SimState> {
        self.episode.as_ref().map(|e| &e.state)
    }

    /// Uncontrolled response to a record.
    pub fn simulate_uncontrolled(&self, record: &GroundMotionRecord) -> Result<ResponseHistory> {
        let record = resample(record, self.config.dt)?;
        simulate(&self.integrator, &record, &mut NoForce(self.layout.n_act))
    }

    /// Closed-loop response to a record under a controller. Produces the same
    /// trajectory as stepping this environment with the controller's actions.
    pub fn simulate_controlled(&self, record: &GroundMotionRecord, controller: &mut dyn Controller) -> Result<ResponseHistory> {
        let record = resample(record, self.config.dt)?;
        controller.reset();
        let mut law = ControllerForceLaw::new(controller, &self.layout, self.config.max_force)?;
        simulate(&self.integrator, &record, &mut law)
    }
}

/// Drives a [`Controller`] from inside [`simulate`], rebuilding the same
/// observations the environment would emit.
pub struct ControllerForceLaw<'a> {
    controller: &'a mut dyn Controller,
    window: ObservationWindow,
    stories: Vec<usize>,
    max_force: f64,
}

impl<'a> ControllerForceLaw<'a> {
    pub fn new(controller: &'a mut dyn Controller, layout: &ObservationLayout, max_force: f64) -> Result<Self> {
        if controller.n_actions() != layout.n_act {
            return Err(Error::Contract(format!(
                "controller produces {} actions, environment expects {}",
                controller.n_actions(),
                layout.n_act
            )));
        }
        Ok(Self {
            controller,
            window: ObservationWindow::new(layout),
            stories: layout.instrumented.clone(),
            max_force,
        })
    }
}

impl ForceLaw for ControllerForceLaw<'_> {
    fn n_forces(&self) -> usize {
        self.controller.n_actions()
    }

    fn next_forces(&mut self, step: usize, _: &SimState, ground_accel: f64, abs_accel: &DVector<f64>) -> Result<DVector<f64>> {
        if step > 0 {
            let last = std::mem::take(&mut self.window.last_action);
            self.window.push(select(abs_accel, &self.stories), ground_accel, last);
        }
        let raw = self.controller.act(&self.window.observation())?;
        let action = clip_action(&raw, self.controller.n_actions())?;
        let forces = DVector::from_iterator(action.len(), action.iter().map(|a| a * self.max_force));
        // Reported as the most recent action with the next frame.
        self.window.last_action = action;
        Ok(forces)
    }
}
