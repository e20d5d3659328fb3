use nalgebra::{DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use super::SystemMatrices;
use crate::{Error, Result};

/// Newmark-β parameters. The default is the average-acceleration scheme
/// (β = 1/4, γ = 1/2) at dt = 0.01 s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewmarkParams {
    pub beta: f64,
    pub gamma: f64,
    pub dt: f64,
}

impl Default for NewmarkParams {
    fn default() -> Self {
        Self { beta: 0.25, gamma: 0.5, dt: 0.01 }
    }
}

impl NewmarkParams {
    pub fn average_acceleration(dt: f64) -> Self {
        Self { dt, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 0.5) {
            return Err(Error::Parameter(format!("beta = {} outside (0, 0.5]", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Parameter(format!("gamma = {} outside (0, 1]", self.gamma)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Parameter(format!("dt = {} must be positive", self.dt)));
        }
        Ok(())
    }
}

/// Relative response of all stories at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub a: DVector<f64>,
}

impl SimState {
    pub fn at_rest(n: usize) -> Self {
        Self {
            t: 0.0,
            x: DVector::zeros(n),
            v: DVector::zeros(n),
            a: DVector::zeros(n),
        }
    }

    /// Total mechanical energy ½vᵀMv + ½xᵀKx.
    pub fn energy(&self, mats: &SystemMatrices) -> f64 {
        0.5 * self.v.dot(&(&mats.mass * &self.v)) + 0.5 * self.x.dot(&(&mats.stiffness * &self.x))
    }
}

/// Newmark integrator for a fixed linear system and step size. The effective
/// stiffness is factored once at construction.
#[derive(Debug, Clone)]
pub struct NewmarkIntegrator {
    mats: SystemMatrices,
    params: NewmarkParams,
    effective: LU<f64, Dyn, Dyn>,
    mass_lu: LU<f64, Dyn, Dyn>,
}

impl NewmarkIntegrator {
    pub fn new(mats: &SystemMatrices, params: NewmarkParams) -> Result<Self> {
        params.validate()?;
        let NewmarkParams { beta, gamma, dt } = params;
        let k_hat = &mats.stiffness
            + &mats.damping * (gamma / (beta * dt))
            + &mats.mass * (1.0 / (beta * dt * dt));
        let effective = k_hat.lu();
        if !effective.is_invertible() {
            return Err(Error::Parameter("effective stiffness is singular".into()));
        }
        let mass_lu = mats.mass.clone().lu();
        if !mass_lu.is_invertible() {
            return Err(Error::Model("mass matrix is singular".into()));
        }
        Ok(Self {
            mats: mats.clone(),
            params,
            effective,
            mass_lu,
        })
    }

    pub fn params(&self) -> &NewmarkParams {
        &self.params
    }

    pub fn matrices(&self) -> &SystemMatrices {
        &self.mats
    }

    fn check_forces(&self, forces: &DVector<f64>) -> Result<()> {
        if forces.len() != self.mats.n_actuators() {
            return Err(Error::Contract(format!(
                "expected {} actuator forces, got {}",
                self.mats.n_actuators(),
                forces.len()
            )));
        }
        Ok(())
    }

    /// State at `t` with given displacement and velocity; acceleration from equilibrium.
    pub fn initial_state(
        &self,
        t: f64,
        x: DVector<f64>,
        v: DVector<f64>,
        ground_accel: f64,
        forces: &DVector<f64>,
    ) -> Result<SimState> {
        self.check_forces(forces)?;
        let rhs = self.mats.load(ground_accel, forces) - &self.mats.damping * &v - &self.mats.stiffness * &x;
        let a = self
            .mass_lu
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("mass solve failed".into()))?;
        Ok(SimState { t, x, v, a })
    }

    /// Rest state consistent with the ground acceleration at t = 0.
    pub fn rest_state(&self, ground_accel: f64) -> Result<SimState> {
        let n = self.mats.n_dof();
        self.initial_state(
            0.0,
            DVector::zeros(n),
            DVector::zeros(n),
            ground_accel,
            &DVector::zeros(self.mats.n_actuators()),
        )
    }

    /// Advance one step to t + dt under the load at t + dt.
    pub fn step(&self, state: &SimState, ground_accel: f64, forces: &DVector<f64>) -> Result<SimState> {
        self.check_forces(forces)?;
        if !ground_accel.is_finite() || forces.iter().any(|f| !f.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite load at t = {}: ground accel {ground_accel}, forces {:?}",
                state.t + self.params.dt,
                forces.as_slice()
            )));
        }
        let NewmarkParams { beta, gamma, dt } = self.params;
        let SimState { x, v, a, .. } = state;
        let m = &self.mats.mass;
        let c = &self.mats.damping;

        let from_mass = x * (1.0 / (beta * dt * dt)) + v * (1.0 / (beta * dt)) + a * (0.5 / beta - 1.0);
        let from_damping = x * (gamma / (beta * dt)) + v * (gamma / beta - 1.0) + a * (dt * (0.5 * gamma / beta - 1.0));
        let p_hat = self.mats.load(ground_accel, forces) + m * from_mass + c * from_damping;

        let x_next = self
            .effective
            .solve(&p_hat)
            .ok_or_else(|| Error::Numerical("effective stiffness solve failed".into()))?;
        let a_next = (&x_next - x) * (1.0 / (beta * dt * dt)) - v * (1.0 / (beta * dt)) - a * (0.5 / beta - 1.0);
        let v_next = v + (a * (1.0 - gamma) + &a_next * gamma) * dt;

        if x_next.iter().chain(v_next.iter()).any(|z| !z.is_finite()) {
            return Err(Error::Numerical(format!("response diverged at t = {}", state.t + dt)));
        }
        Ok(SimState {
            t: state.t + dt,
            x: x_next,
            v: v_next,
            a: a_next,
        })
    }

    /// ‖M·a + C·v + K·x − f‖ / max(1, ‖f‖).
    pub fn equilibrium_residual(&self, state: &SimState, ground_accel: f64, forces: &DVector<f64>) -> f64 {
        let f = self.mats.load(ground_accel, forces);
        let lhs = &self.mats.mass * &state.a + &self.mats.damping * &state.v + &self.mats.stiffness * &state.x;
        (lhs - &f).norm() / f.norm().max(1.0)
    }
}

/// One-off Newmark step. Builds and factors the effective stiffness on every
/// call; use [`NewmarkIntegrator`] for repeated stepping.
pub fn newmark_step(
    state: &SimState,
    mats: &SystemMatrices,
    params: NewmarkParams,
    ground_accel_next: f64,
    forces_next: &DVector<f64>,
) -> Result<SimState> {
    NewmarkIntegrator::new(mats, params)?.step(state, ground_accel_next, forces_next)
}
