//! Controller abstraction and the portable MLP policy evaluator.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{Observation, ObservationLayout};
use crate::{Error, Result};

/// Maps observations to normalised actions in [-1, 1].
pub trait Controller: Send {
    fn n_actions(&self) -> usize;

    /// Clear internal state before a new episode.
    fn reset(&mut self) {}

    fn act(&mut self, observation: &Observation) -> Result<Vec<f64>>;
}

/// Always idle.
#[derive(Debug, Clone)]
pub struct ZeroController {
    n: usize,
}

impl ZeroController {
    pub fn new(n_actions: usize) -> Self {
        Self { n: n_actions }
    }
}

impl Controller for ZeroController {
    fn n_actions(&self) -> usize {
        self.n
    }

    fn act(&mut self, _: &Observation) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.n])
    }
}

/// Uniform random actions; reset restarts the seeded stream.
#[derive(Debug, Clone)]
pub struct RandomController {
    n: usize,
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomController {
    pub fn new(n_actions: usize, seed: u64) -> Self {
        Self {
            n: n_actions,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for RandomController {
    fn n_actions(&self) -> usize {
        self.n
    }

    fn reset(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }

    fn act(&mut self, _: &Observation) -> Result<Vec<f64>> {
        Ok((0..self.n).map(|_| self.rng.random_range(-1.0..=1.0)).collect())
    }
}

pub const POLICY_SCHEMA: u32 = 1;

/// Largest double below 1: tanh saturates to exactly ±1 for large inputs.
const SQUASH_BOUND: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    #[serde(alias = "identity")]
    Linear,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Linear => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputSquash {
    Tanh,
}

/// On-disk layer: `weights` is row-major `rows × cols` (outputs × inputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Portable policy file exchanged with the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub schema: u32,
    pub layers: Vec<LayerSpec>,
    pub obs_layout: ObservationLayout,
    pub output: OutputSquash,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Map<String, serde_json::Value>>,
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    weights: DMatrix<f64>,
    bias: DVector<f64>,
    activation: Activation,
}

/// Feed-forward policy evaluated deterministically (squashed mean action).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    layers: Vec<Dense>,
    layout: ObservationLayout,
    output: OutputSquash,
    metadata: Option<serde_json::Map<String, serde_json::Value>>,
}

impl MlpPolicy {
    pub fn from_file_spec(spec: PolicyFile) -> Result<Self> {
        if spec.schema != POLICY_SCHEMA {
            return Err(Error::Format(format!("unsupported policy schema {}", spec.schema)));
        }
        if spec.layers.is_empty() {
            return Err(Error::Format("policy has no layers".into()));
        }
        let mut expect_in = spec.obs_layout.obs_dim();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.into_iter().enumerate() {
            if l.cols != expect_in {
                return Err(Error::Format(format!("layer {i} expects {} inputs, previous stage gives {expect_in}", l.cols)));
            }
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::Format(format!(
                    "layer {i}: {} weights / {} biases do not fit {}x{}",
                    l.weights.len(),
                    l.bias.len(),
                    l.rows,
                    l.cols
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|w| !w.is_finite()) {
                return Err(Error::Format(format!("layer {i} has non-finite parameters")));
            }
            expect_in = l.rows;
            layers.push(Dense {
                weights: DMatrix::from_row_slice(l.rows, l.cols, &l.weights),
                bias: DVector::from_vec(l.bias),
                activation: l.activation,
            });
        }
        if expect_in != spec.obs_layout.n_act {
            return Err(Error::Format(format!(
                "policy outputs {expect_in} values, layout declares {} actuators",
                spec.obs_layout.n_act
            )));
        }
        Ok(Self {
            layers,
            layout: spec.obs_layout,
            output: spec.output,
            metadata: spec.metadata,
        })
    }

    pub fn to_file_spec(&self) -> PolicyFile {
        PolicyFile {
            schema: POLICY_SCHEMA,
            layers: self
                .layers
                .iter()
                .map(|l| LayerSpec {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.transpose().as_slice().to_vec(),
                    bias: l.bias.as_slice().to_vec(),
                    activation: l.activation,
                })
                .collect(),
            obs_layout: self.layout.clone(),
            output: self.output,
            metadata: self.metadata.clone(),
        }
    }

    pub fn layout(&self) -> &ObservationLayout {
        &self.layout
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.nrows()
    }

    /// (rows, cols, activation) per layer.
    pub fn shape(&self) -> Vec<(usize, usize, Activation)> {
        self.layers
            .iter()
            .map(|l| (l.weights.nrows(), l.weights.ncols(), l.activation))
            .collect()
    }

    pub fn metadata(&self) -> Option<&serde_json::Map<String, serde_json::Value>> {
        self.metadata.as_ref()
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.to_file_spec())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_json(std::io::BufWriter::new(file))
    }
}

/// Load a policy file; with `expected` set, its observation layout must match.
pub fn load_policy(path: impl AsRef<Path>, expected: Option<&ObservationLayout>) -> Result<MlpPolicy> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: PolicyFile = serde_json::from_str(&text)?;
    let policy = MlpPolicy::from_file_spec(spec)?;
    if let Some(layout) = expected {
        if policy.layout() != layout {
            return Err(Error::Format(format!(
                "policy observation layout {:?} does not match environment layout {:?}",
                policy.layout(),
                layout
            )));
        }
    }
    Ok(policy)
}

pub fn mlp_forward(policy: &MlpPolicy, observation: &[f64]) -> Result<Vec<f64>> {
    if observation.len() != policy.input_dim() {
        return Err(Error::Contract(format!(
            "observation has {} entries, policy expects {}",
            observation.len(),
            policy.input_dim()
        )));
    }
    let mut h = DVector::from_column_slice(observation);
    for (i, layer) in policy.layers.iter().enumerate() {
        h = (&layer.weights * h + &layer.bias).map(|v| layer.activation.apply(v));
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite activation after layer {i}")));
        }
    }
    Ok(match policy.output {
        OutputSquash::Tanh => h.iter().map(|v| v.tanh().clamp(-SQUASH_BOUND, SQUASH_BOUND)).collect(),
    })
}

impl Controller for MlpPolicy {
    fn n_actions(&self) -> usize {
        self.output_dim()
    }

    fn act(&mut self, observation: &Observation) -> Result<Vec<f64>> {
        mlp_forward(self, &observation.flat())
    }
}
