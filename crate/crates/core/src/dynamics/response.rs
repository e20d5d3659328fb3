use std::io::Write;

use nalgebra::{DMatrix, DVector};

use super::{NewmarkIntegrator, SimState};
use crate::excitation::GroundMotionRecord;
use crate::{Error, Result};

/// Source of actuator forces during a simulation.
pub trait ForceLaw {
    fn n_forces(&self) -> usize;

    /// Forces (N) applied with the next sample, given the response at sample `step`.
    /// `abs_accel` is the absolute story acceleration a + ag.
    fn next_forces(
        &mut self,
        step: usize,
        state: &SimState,
        ground_accel: f64,
        abs_accel: &DVector<f64>,
    ) -> Result<DVector<f64>>;
}

/// Uncontrolled structure: every actuator idle.
#[derive(Debug, Clone, Copy)]
pub struct NoForce(pub usize);

impl ForceLaw for NoForce {
    fn n_forces(&self) -> usize {
        self.0
    }

    fn next_forces(&mut self, _: usize, _: &SimState, _: f64, _: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::zeros(self.0))
    }
}

/// Inter-story drifts and story shears, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StoryResponses {
    pub isd: DMatrix<f64>,
    pub shear: DMatrix<f64>,
}

/// ISD_j = x_j − x_{j−1} (x_0 = 0) and V_j = Σ_{i≥j} m_i·abs_acc_i.
pub fn story_responses(disp: &DMatrix<f64>, abs_accel: &DMatrix<f64>, masses: &[f64]) -> Result<StoryResponses> {
    let n = masses.len();
    if disp.ncols() != n || abs_accel.ncols() != n || disp.nrows() != abs_accel.nrows() {
        return Err(Error::Contract(format!(
            "history shapes {:?} / {:?} do not match {n} stories",
            disp.shape(),
            abs_accel.shape()
        )));
    }
    let rows = disp.nrows();
    let isd = DMatrix::from_fn(rows, n, |r, j| {
        let below = if j == 0 { 0.0 } else { disp[(r, j - 1)] };
        disp[(r, j)] - below
    });
    let mut shear = DMatrix::zeros(rows, n);
    for r in 0..rows {
        let mut acc = 0.0;
        for j in (0..n).rev() {
            acc += masses[j] * abs_accel[(r, j)];
            shear[(r, j)] = acc;
        }
    }
    Ok(StoryResponses { isd, shear })
}

/// Full time histories of a simulation. Matrices hold one row per sample and
/// one column per story (or actuator, for `forces`).
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseHistory {
    pub dt: f64,
    pub time: Vec<f64>,
    pub ground: Vec<f64>,
    pub disp: DMatrix<f64>,
    pub vel: DMatrix<f64>,
    pub acc: DMatrix<f64>,
    pub abs_accel: DMatrix<f64>,
    pub forces: DMatrix<f64>,
    pub isd: DMatrix<f64>,
    pub shear: DMatrix<f64>,
}

impl ResponseHistory {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn n_stories(&self) -> usize {
        self.disp.ncols()
    }

    pub fn base_shear(&self) -> Vec<f64> {
        self.shear.column(0).iter().copied().collect()
    }

    /// Per-column series of a history matrix.
    pub fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.column_iter().map(|c| c.iter().copied().collect()).collect()
    }

    /// CSV with one row per sample: time, ground accel, then per-story blocks.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.n_stories();
        let mut header = vec!["t".to_string(), "ag".to_string()];
        for (prefix, cols) in [
            ("x", n),
            ("v", n),
            ("a", n),
            ("abs_a", n),
            ("u", self.forces.ncols()),
            ("isd", n),
            ("shear", n),
        ] {
            header.extend((1..=cols).map(|j| format!("{prefix}_{j}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for r in 0..self.len() {
            let mut row = vec![self.time[r].to_string(), self.ground[r].to_string()];
            for m in [&self.disp, &self.vel, &self.acc, &self.abs_accel, &self.forces, &self.isd, &self.shear] {
                row.extend(m.row(r).iter().map(f64::to_string));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Integrate the response to a ground-motion record under a force law,
/// starting from rest.
pub fn simulate(
    integrator: &NewmarkIntegrator,
    record: &GroundMotionRecord,
    law: &mut dyn ForceLaw,
) -> Result<ResponseHistory> {
    let dt = integrator.params().dt;
    if (record.dt - dt).abs() > 1e-9 * dt {
        return Err(Error::Parameter(format!(
            "record '{}' has dt = {} but the simulation uses dt = {dt}; resample first",
            record.name, record.dt
        )));
    }
    let mats = integrator.matrices();
    let (n, n_act) = (mats.n_dof(), mats.n_actuators());
    if law.n_forces() != n_act {
        return Err(Error::Contract(format!(
            "controller drives {} actuators, model has {n_act}",
            law.n_forces()
        )));
    }
    let samples = &record.samples;
    let steps = samples.len();

    let mut time = Vec::with_capacity(steps);
    let mut disp = Vec::with_capacity(steps * n);
    let mut vel = Vec::with_capacity(steps * n);
    let mut acc = Vec::with_capacity(steps * n);
    let mut abs = Vec::with_capacity(steps * n);
    let mut forces = Vec::with_capacity(steps * n_act);

    let mut state = integrator.rest_state(samples[0])?;
    let mut u = DVector::zeros(n_act);
    for k in 0..steps {
        let abs_accel = state.a.add_scalar(samples[k]);
        time.push(k as f64 * dt);
        disp.extend(state.x.iter());
        vel.extend(state.v.iter());
        acc.extend(state.a.iter());
        abs.extend(abs_accel.iter());
        forces.extend(u.iter());
        if k + 1 == steps {
            break;
        }
        u = law.next_forces(k, &state, samples[k], &abs_accel)?;
        if u.len() != n_act {
            return Err(Error::Contract(format!("controller returned {} forces, expected {n_act}", u.len())));
        }
        state = integrator.step(&state, samples[k + 1], &u)?;
    }

    let disp = DMatrix::from_row_slice(steps, n, &disp);
    let abs_accel = DMatrix::from_row_slice(steps, n, &abs);
    let masses: Vec<f64> = mats.mass_diagonal().iter().copied().collect();
    let StoryResponses { isd, shear } = story_responses(&disp, &abs_accel, &masses)?;
    Ok(ResponseHistory {
        dt,
        time,
        ground: samples.clone(),
        disp,
        vel: DMatrix::from_row_slice(steps, n, &vel),
        acc: DMatrix::from_row_slice(steps, n, &acc),
        abs_accel,
        forces: DMatrix::from_row_slice(steps, n_act, &forces),
        isd,
        shear,
    })
}
