//! State-space realisation of the controlled building and the LQG baseline.

mod controller;
mod riccati;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::SystemMatrices;
use crate::{Error, Result};

pub use controller::{design_lqg, LqgConfig, LqgController, LqgCost, LqgDesign, MatrixDump};
pub use riccati::{
    dare_residual, kalman_design, kalman_gain, lqr_design, lqr_gain, solve_dare, spectral_radius, KalmanDesign,
    DARE_TOLERANCE,
};

/// State z = [x; v] (relative displacement and velocity), input u (actuator
/// forces), disturbance ag, output y (absolute accelerations at measured stories).
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub c_obs: DMatrix<f64>,
    pub d_obs: DMatrix<f64>,
    /// 1-based measured stories, one per output row.
    pub measured: Vec<usize>,
    /// Sample interval when discretised.
    pub dt: Option<f64>,
}

impl StateSpaceModel {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_discrete(&self) -> bool {
        self.dt.is_some()
    }
}

/// Continuous realisation:
/// A = [[0, I], [−M⁻¹K, −M⁻¹C]], B = [[0], [M⁻¹B_u]], E = [[0], [−iota]],
/// y = [−M⁻¹K, −M⁻¹C]·z + M⁻¹B_u·u on the measured rows.
pub fn build_state_space(mats: &SystemMatrices, measured: &[usize]) -> Result<StateSpaceModel> {
    let n = mats.n_dof();
    let n_act = mats.n_actuators();
    let inv_m = mats
        .mass
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Model("mass matrix is singular".into()))?;
    if let Some(s) = measured.iter().find(|s| **s == 0 || **s > n) {
        return Err(Error::Model(format!("measured story {s} outside 1..={n}")));
    }

    let mk = -(&inv_m * &mats.stiffness);
    let mc = -(&inv_m * &mats.damping);
    let mb = &inv_m * &mats.actuator;

    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).copy_from(&DMatrix::identity(n, n));
    a.view_mut((n, 0), (n, n)).copy_from(&mk);
    a.view_mut((n, n), (n, n)).copy_from(&mc);

    let mut b = DMatrix::zeros(2 * n, n_act);
    b.view_mut((n, 0), (n, n_act)).copy_from(&mb);

    let mut e = DMatrix::zeros(2 * n, 1);
    e.view_mut((n, 0), (n, 1)).copy_from(&(-&mats.iota));

    let mut c_obs = DMatrix::zeros(measured.len(), 2 * n);
    let mut d_obs = DMatrix::zeros(measured.len(), n_act);
    for (row, &story) in measured.iter().enumerate() {
        let i = story - 1;
        c_obs.view_mut((row, 0), (1, n)).copy_from(&mk.row(i));
        c_obs.view_mut((row, n), (1, n)).copy_from(&mc.row(i));
        d_obs.row_mut(row).copy_from(&mb.row(i));
    }

    Ok(StateSpaceModel {
        a,
        b,
        e,
        c_obs,
        d_obs,
        measured: measured.to_vec(),
        dt: None,
    })
}

/// Zero-order-hold discretisation through the augmented exponential
/// exp([[A, B, E], [0, 0, 0]]·dt) = [[A_d, B_d, E_d], [0, I, 0]].
pub fn discretize(model: &StateSpaceModel, dt: f64) -> Result<StateSpaceModel> {
    if model.is_discrete() {
        return Err(Error::Parameter("model is already discrete".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("dt = {dt} must be positive")));
    }
    let ns = model.n_states();
    let nu = model.b.ncols();
    let nw = model.e.ncols();
    let size = ns + nu + nw;
    let mut aug = DMatrix::zeros(size, size);
    aug.view_mut((0, 0), (ns, ns)).copy_from(&model.a);
    aug.view_mut((0, ns), (ns, nu)).copy_from(&model.b);
    aug.view_mut((0, ns + nu), (ns, nw)).copy_from(&model.e);
    let phi = (aug * dt).exp();
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix exponential overflowed".into()));
    }
    Ok(StateSpaceModel {
        a: phi.view((0, 0), (ns, ns)).into_owned(),
        b: phi.view((0, ns), (ns, nu)).into_owned(),
        e: phi.view((0, ns + nu), (ns, nw)).into_owned(),
        c_obs: model.c_obs.clone(),
        d_obs: model.d_obs.clone(),
        measured: model.measured.clone(),
        dt: Some(dt),
    })
}

/// Input matrices for forces that ramp linearly across a step, from u_k at
/// t_k to u_{k+1} at t_{k+1}: z_{k+1} = A_d·z_k + B_prev·u_k + B_next·u_{k+1}.
/// This is how the Newmark loop applies actuator forces.
#[derive(Debug, Clone, PartialEq)]
pub struct RampInputs {
    pub a: DMatrix<f64>,
    pub b_prev: DMatrix<f64>,
    pub b_next: DMatrix<f64>,
}

/// Exact discretisation for piecewise-linear inputs via
/// exp([[A, B, 0], [0, 0, I], [0, 0, 0]]·dt).
pub fn discretize_ramp(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> Result<RampInputs> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("dt = {dt} must be positive")));
    }
    let ns = a.nrows();
    let nu = b.ncols();
    let size = ns + 2 * nu;
    let mut aug = DMatrix::zeros(size, size);
    aug.view_mut((0, 0), (ns, ns)).copy_from(a);
    aug.view_mut((0, ns), (ns, nu)).copy_from(b);
    aug.view_mut((ns, ns + nu), (nu, nu)).copy_from(&DMatrix::identity(nu, nu));
    let phi = (aug * dt).exp();
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix exponential overflowed".into()));
    }
    let hold = phi.view((0, ns), (ns, nu)).into_owned();
    let ramp = phi.view((0, ns + nu), (ns, nu)).into_owned() / dt;
    Ok(RampInputs {
        a: phi.view((0, 0), (ns, ns)).into_owned(),
        b_prev: &hold - &ramp,
        b_next: ramp,
    })
}

/// Stack displacement and velocity into the state vector.
pub fn state_vector(x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + v.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), v.len()).copy_from(v);
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{assemble_matrices, BuildingModel};

    fn oscillator(k: f64, c: f64) -> SystemMatrices {
        SystemMatrices::from_parts(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, k),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn sdof_blocks() {
        let ss = build_state_space(&oscillator(4.0, 0.0), &[1]).unwrap();
        assert_eq!(ss.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, 0.0]));
        assert_eq!(ss.b, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
        assert_eq!(ss.e, DMatrix::from_row_slice(2, 1, &[0.0, -1.0]));
        assert_eq!(ss.c_obs, DMatrix::from_row_slice(1, 2, &[-4.0, 0.0]));
        assert_eq!(ss.d_obs, DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn undamped_eigenvalues_are_imaginary() {
        let mut mats = assemble_matrices(&BuildingModel::benchmark()).unwrap();
        mats.damping.fill(0.0);
        let ss = build_state_space(&mats, &[1, 2, 3, 4, 5]).unwrap();
        for ev in ss.a.complex_eigenvalues().iter() {
            assert!(ev.re.abs() < 1e-9 * ev.im.abs().max(1.0));
        }
    }

    #[test]
    fn zero_dynamics_discretise_to_integrator() {
        let ss = StateSpaceModel {
            a: DMatrix::zeros(1, 1),
            b: DMatrix::from_element(1, 1, 3.0),
            e: DMatrix::from_element(1, 1, 1.0),
            c_obs: DMatrix::from_element(1, 1, 1.0),
            d_obs: DMatrix::zeros(1, 1),
            measured: vec![1],
            dt: None,
        };
        let d = discretize(&ss, 0.1).unwrap();
        assert_eq!(d.a[(0, 0)], 1.0);
        assert!((d.b[(0, 0)] - 0.3).abs() < 1e-15);
        assert!(discretize(&d, 0.1).is_err());
    }

    #[test]
    fn small_step_matches_first_order_series() {
        let mats = assemble_matrices(&BuildingModel::benchmark()).unwrap();
        let ss = build_state_space(&mats, &[1]).unwrap();
        for dt in [1e-3, 5e-4] {
            let d = discretize(&ss, dt).unwrap();
            let first_order = DMatrix::identity(10, 10) + &ss.a * dt;
            let err = (&d.a - first_order).amax();
            let scale = (&ss.a * &ss.a).amax() * dt * dt;
            assert!(err <= scale, "dt = {dt}: {err} vs {scale}");
        }
    }

    #[test]
    fn ramp_inputs_sum_to_hold() {
        // A constant input (u_k = u_{k+1}) must reproduce the zero-order hold.
        let mats = assemble_matrices(&BuildingModel::benchmark()).unwrap();
        let ss = build_state_space(&mats, &[1]).unwrap();
        let zoh = discretize(&ss, 0.01).unwrap();
        let ramp = discretize_ramp(&ss.a, &ss.b, 0.01).unwrap();
        assert!((&ramp.a - &zoh.a).amax() < 1e-14);
        let scale = zoh.b.amax();
        assert!((&ramp.b_prev + &ramp.b_next - &zoh.b).amax() < 1e-12 * scale);
    }

    #[test]
    fn ramp_input_on_integrator() {
        // ẋ = u with u ramping from u0 to u1: x advances by dt·(u0 + u1)/2.
        let r = discretize_ramp(&DMatrix::zeros(1, 1), &DMatrix::from_element(1, 1, 1.0), 0.2).unwrap();
        assert!((r.b_prev[(0, 0)] - 0.1).abs() < 1e-15);
        assert!((r.b_next[(0, 0)] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn oscillator_discretisation_is_a_rotation() {
        let w: f64 = 3.0;
        let dt = 0.05;
        let d = discretize(&build_state_space(&oscillator(w * w, 0.0), &[1]).unwrap(), dt).unwrap();
        let (c, s) = ((w * dt).cos(), (w * dt).sin());
        let expect = DMatrix::from_row_slice(2, 2, &[c, s / w, -w * s, c]);
        assert!((d.a - expect).amax() < 1e-14);
    }
}
