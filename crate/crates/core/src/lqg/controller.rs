use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::riccati::{kalman_design, lqr_design, spectral_radius};
use super::{build_state_space, discretize, discretize_ramp, RampInputs, StateSpaceModel};
use crate::dynamics::{assemble_matrices, SystemMatrices};
use crate::environment::{EnvConfig, Observation, RewardScales, RewardWeights};
use crate::policy::Controller;
use crate::{Error, Result};

/// Noise model of the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqgConfig {
    /// Ground-acceleration variance driving the process noise W = q·E_d·E_dᵀ, (m/s²)².
    pub process_noise: f64,
    /// Accelerometer noise variance, V = v·I, (m/s²)².
    pub measurement_noise: f64,
}

impl Default for LqgConfig {
    fn default() -> Self {
        Self {
            process_noise: 1.0,
            measurement_noise: 1e-4,
        }
    }
}

/// Quadratic stage cost zᵀQz + 2zᵀNu + uᵀRu on state z = [x; v] and force u (N).
#[derive(Debug, Clone, PartialEq)]
pub struct LqgCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub cross: DMatrix<f64>,
}

impl LqgCost {
    /// Cost equal to the negated environment reward. Base shear is
    /// V₁ = mᵀ(C_acc·z + D_acc·u), which is linear in (z, u), so its square
    /// contributes to Q, R and the cross weight.
    pub fn from_reward(mats: &SystemMatrices, weights: &RewardWeights, scales: &RewardScales) -> Self {
        let n = mats.n_dof();
        let n_act = mats.n_actuators();
        let all: Vec<usize> = (1..=n).collect();
        let ss = build_state_space(mats, &all).expect("assembled matrices have an invertible mass matrix");
        let m = mats.mass_diagonal();
        let h = ss.c_obs.transpose() * &m; // 2n × 1
        let g = ss.d_obs.transpose() * &m; // n_act × 1

        let wx = weights.displacement / (scales.displacement * scales.displacement);
        let wv = weights.base_shear / (scales.base_shear * scales.base_shear);
        let wa = weights.force / (scales.force * scales.force);

        let mut q = &h * h.transpose() * wv;
        for i in 0..n {
            q[(i, i)] += wx;
        }
        let r = DMatrix::identity(n_act, n_act) * wa + &g * g.transpose() * wv;
        let cross = &h * g.transpose() * wv;
        Self { q, r, cross }
    }

    pub fn stage_cost(&self, z: &DVector<f64>, u: &DVector<f64>) -> f64 {
        z.dot(&(&self.q * z)) + 2.0 * z.dot(&(&self.cross * u)) + u.dot(&(&self.r * u))
    }
}

/// Row-major matrix with dimensions, for the design dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDump {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixDump {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct DesignDump {
    dt: f64,
    measured: Vec<usize>,
    max_force: f64,
    a_d: MatrixDump,
    b_d: MatrixDump,
    b_prev: MatrixDump,
    b_next: MatrixDump,
    k_lqr: MatrixDump,
    l_kal: MatrixDump,
}

/// Synthesised LQG controller. Forces are in N.
///
/// The regulator acts on the augmented state [z_k; u_k], where u_k is the
/// force in effect at t_k, and chooses u_{k+1}. Forces ramp linearly between
/// samples, so z_{k+1} = A_d·z_k + B_prev·u_k + B_next·u_{k+1}. Its stage cost
/// is the [`LqgCost`] of the next augmented state, i.e. the negated reward of
/// the step being taken.
#[derive(Debug, Clone, PartialEq)]
pub struct LqgDesign {
    /// Zero-order-hold plant with the measurement model.
    pub plant: StateSpaceModel,
    pub ramp: RampInputs,
    pub cost: LqgCost,
    pub process_noise: DMatrix<f64>,
    pub measurement_noise: DMatrix<f64>,
    /// Regulator Riccati solution on the augmented state.
    pub riccati: DMatrix<f64>,
    /// n_act × (2n + n_act) gain on [z; u_prev].
    pub k_lqr: DMatrix<f64>,
    /// Kalman predictor gain, error dynamics A_d − L·C.
    pub l_kal: DMatrix<f64>,
    /// Kalman measurement-update gain.
    pub l_filter: DMatrix<f64>,
    pub max_force: f64,
}

/// Augmented regulator plant [z; u_prev] → [z⁺; u].
fn augmented(ramp: &RampInputs) -> (DMatrix<f64>, DMatrix<f64>) {
    let ns = ramp.a.nrows();
    let nu = ramp.b_next.ncols();
    let mut a = DMatrix::zeros(ns + nu, ns + nu);
    a.view_mut((0, 0), (ns, ns)).copy_from(&ramp.a);
    a.view_mut((0, ns), (ns, nu)).copy_from(&ramp.b_prev);
    let mut b = DMatrix::zeros(ns + nu, nu);
    b.view_mut((0, 0), (ns, nu)).copy_from(&ramp.b_next);
    b.view_mut((ns, 0), (nu, nu)).copy_from(&DMatrix::identity(nu, nu));
    (a, b)
}

impl LqgDesign {
    /// Augmented regulator matrices (A, B).
    pub fn regulator_plant(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        augmented(&self.ramp)
    }

    pub fn closed_loop_radius(&self) -> f64 {
        let (a, b) = self.regulator_plant();
        spectral_radius(&(a - b * &self.k_lqr))
    }

    pub fn open_loop_radius(&self) -> f64 {
        spectral_radius(&self.regulator_plant().0)
    }

    pub fn estimator_radius(&self) -> f64 {
        spectral_radius(&(&self.plant.a - &self.l_kal * &self.plant.c_obs))
    }

    /// JSON with the discrete plant and both gains, row-major with dimensions.
    pub fn dump_json(&self) -> Result<String> {
        let dump = DesignDump {
            dt: self.plant.dt.unwrap_or(0.0),
            measured: self.plant.measured.clone(),
            max_force: self.max_force,
            a_d: (&self.plant.a).into(),
            b_d: (&self.plant.b).into(),
            b_prev: (&self.ramp.b_prev).into(),
            b_next: (&self.ramp.b_next).into(),
            k_lqr: (&self.k_lqr).into(),
            l_kal: (&self.l_kal).into(),
        };
        Ok(serde_json::to_string_pretty(&dump)?)
    }
}

/// LQG synthesis matched to an environment: same measurements, force bound and
/// quadratic cost as the reward.
pub fn design_lqg(env: &EnvConfig, config: &LqgConfig) -> Result<LqgDesign> {
    env.validate()?;
    if !(config.process_noise >= 0.0 && config.measurement_noise > 0.0) {
        return Err(Error::Config("LQG noise variances must be non-negative (measurement positive)".into()));
    }
    let mats = assemble_matrices(&env.model)?;
    let continuous = build_state_space(&mats, &env.instrumented())?;
    let ramp = discretize_ramp(&continuous.a, &continuous.b, env.dt)?;
    let plant = discretize(&continuous, env.dt)?;
    let cost = LqgCost::from_reward(&mats, &env.reward_weights, &env.reward_scales);

    // Cost of the next augmented state: [z⁺; u]ᵀ·H·[z⁺; u] with H = [[Q, N], [Nᵀ, R]].
    let (a_aug, b_aug) = augmented(&ramp);
    let ns = plant.n_states();
    let nu = plant.b.ncols();
    let mut h = DMatrix::zeros(ns + nu, ns + nu);
    h.view_mut((0, 0), (ns, ns)).copy_from(&cost.q);
    h.view_mut((0, ns), (ns, nu)).copy_from(&cost.cross);
    h.view_mut((ns, 0), (nu, ns)).copy_from(&cost.cross.transpose());
    h.view_mut((ns, ns), (nu, nu)).copy_from(&cost.r);
    let q = a_aug.transpose() * &h * &a_aug;
    let r = b_aug.transpose() * &h * &b_aug;
    let cross = a_aug.transpose() * &h * &b_aug;
    let (riccati, k_lqr) = lqr_design(&a_aug, &b_aug, &q, &r, &cross)?;

    let w = &plant.e * plant.e.transpose() * config.process_noise;
    let v = DMatrix::identity(plant.c_obs.nrows(), plant.c_obs.nrows()) * config.measurement_noise;
    let kalman = kalman_design(&plant.a, &plant.c_obs, &w, &v)?;

    let design = LqgDesign {
        plant,
        ramp,
        cost,
        process_noise: w,
        measurement_noise: v,
        riccati,
        k_lqr,
        l_kal: kalman.predictor_gain,
        l_filter: kalman.filter_gain,
        max_force: env.max_force,
    };
    let (rc, re) = (design.closed_loop_radius(), design.estimator_radius());
    if !(rc < 1.0 && re < 1.0) {
        return Err(Error::Numerical(format!(
            "LQG design is not Schur stable: closed-loop radius {rc}, estimator radius {re}"
        )));
    }
    Ok(design)
}

/// Output-feedback LQG controller. Holds the a priori estimate of z.
#[derive(Debug, Clone)]
pub struct LqgController {
    design: Arc<LqgDesign>,
    estimate: DVector<f64>,
}

impl LqgController {
    pub fn new(design: Arc<LqgDesign>) -> Self {
        let n = design.plant.n_states();
        Self {
            design,
            estimate: DVector::zeros(n),
        }
    }

    pub fn design(&self) -> &LqgDesign {
        &self.design
    }

    /// A priori estimate of z for the next sample.
    pub fn estimate(&self) -> &DVector<f64> {
        &self.estimate
    }

    /// Correct with the measurement (absolute accelerations at the measured
    /// stories, taken while `last_force` was in effect), choose the next force
    /// (clipped to ±max_force) and propagate the estimate.
    pub fn step(&mut self, measurement: &DVector<f64>, last_force: &DVector<f64>) -> Result<DVector<f64>> {
        let d = &*self.design;
        let ns = d.plant.n_states();
        let nu = d.plant.b.ncols();
        if measurement.len() != d.plant.c_obs.nrows() || last_force.len() != nu {
            return Err(Error::Contract(format!(
                "LQG expects {} measurements and {nu} forces, got {} and {}",
                d.plant.c_obs.nrows(),
                measurement.len(),
                last_force.len()
            )));
        }
        let innovation = measurement - &d.plant.c_obs * &self.estimate - &d.plant.d_obs * last_force;
        let corrected = &self.estimate + &d.l_filter * innovation;
        let mut augmented = DVector::zeros(ns + nu);
        augmented.rows_mut(0, ns).copy_from(&corrected);
        augmented.rows_mut(ns, nu).copy_from(last_force);
        let force = (-&d.k_lqr * augmented).map(|u| u.clamp(-d.max_force, d.max_force));
        self.estimate = &d.ramp.a * corrected + &d.ramp.b_prev * last_force + &d.ramp.b_next * &force;
        Ok(force)
    }
}

impl Controller for LqgController {
    fn n_actions(&self) -> usize {
        self.design.plant.b.ncols()
    }

    fn reset(&mut self) {
        self.estimate.fill(0.0);
    }

    fn act(&mut self, observation: &Observation) -> Result<Vec<f64>> {
        let max = self.design.max_force;
        let y = DVector::from_column_slice(observation.latest_frame());
        let last = DVector::from_iterator(observation.last_action.len(), observation.last_action.iter().map(|a| a * max));
        let force = self.step(&y, &last)?;
        Ok(force.iter().map(|u| u / max).collect())
    }
}
