//! Linear MDOF shear-building model and its time integration.

mod modal;
mod newmark;
mod response;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use modal::{modal_analysis, modal_damping_ratios, rayleigh_coefficients, ModalResult};
pub use newmark::{newmark_step, NewmarkIntegrator, NewmarkParams, SimState};
pub use response::{simulate, story_responses, ForceLaw, NoForce, ResponseHistory, StoryResponses};

/// Two modes anchoring the Rayleigh damping fit. Mode indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingSpec {
    pub mode_i: usize,
    pub zeta_i: f64,
    pub mode_j: usize,
    pub zeta_j: f64,
}

/// How an actuator's force enters the story equations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// +u on the actuator's story and -u on the story below (ground for story 1).
    #[default]
    InterStory,
    /// +u on the actuator's story only.
    Nodal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingModel {
    pub n_stories: usize,
    /// Lumped story masses, kg.
    pub masses: Vec<f64>,
    /// Story lateral stiffnesses, N/m. Entry `j` connects story `j` to the one below.
    pub stiffnesses: Vec<f64>,
    pub damping: DampingSpec,
    /// 1-based story indices carrying an actuator.
    pub actuator_stories: Vec<usize>,
    #[serde(default)]
    pub coupling: Coupling,
}

impl BuildingModel {
    /// Five-story benchmark shear building: 1% / 5% Rayleigh damping on modes
    /// 1 and 5, actuators on stories 1, 3 and 5.
    pub fn benchmark() -> Self {
        Self {
            n_stories: 5,
            masses: vec![25e3, 20e3, 20e3, 18e3, 15e3],
            stiffnesses: vec![5e6, 4e6, 4e6, 3e6, 3e6],
            damping: DampingSpec {
                mode_i: 1,
                zeta_i: 0.01,
                mode_j: 5,
                zeta_j: 0.05,
            },
            actuator_stories: vec![1, 3, 5],
            coupling: Coupling::InterStory,
        }
    }

    pub fn n_actuators(&self) -> usize {
        self.actuator_stories.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_stories;
        if n == 0 {
            return Err(Error::Model("n_stories must be positive".into()));
        }
        if self.masses.len() != n || self.stiffnesses.len() != n {
            return Err(Error::Model(format!(
                "expected {n} masses and stiffnesses, got {} and {}",
                self.masses.len(),
                self.stiffnesses.len()
            )));
        }
        if let Some(m) = self.masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::Model(format!("story mass must be positive, got {m}")));
        }
        if let Some(k) = self.stiffnesses.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(Error::Model(format!("story stiffness must be positive, got {k}")));
        }
        let d = &self.damping;
        for zeta in [d.zeta_i, d.zeta_j] {
            if !(zeta > 0.0 && zeta < 1.0) {
                return Err(Error::Model(format!("damping ratio {zeta} outside (0, 1)")));
            }
        }
        if d.mode_i == d.mode_j {
            return Err(Error::Model("damping anchor modes must be distinct".into()));
        }
        for mode in [d.mode_i, d.mode_j] {
            if mode == 0 || mode > n {
                return Err(Error::Model(format!("damping anchor mode {mode} outside 1..={n}")));
            }
        }
        let mut seen = vec![false; n];
        for &s in &self.actuator_stories {
            if s == 0 || s > n {
                return Err(Error::Model(format!("actuator story {s} outside 1..={n}")));
            }
            if std::mem::replace(&mut seen[s - 1], true) {
                return Err(Error::Model(format!("duplicate actuator story {s}")));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }
}

/// Mass, stiffness, damping and influence matrices of a shear building.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    /// n × n_act actuator influence matrix.
    pub actuator: DMatrix<f64>,
    /// Ground-motion influence vector (all ones).
    pub iota: DVector<f64>,
    /// Rayleigh coefficients (a0, a1) with C = a0·M + a1·K, when C was built that way.
    pub rayleigh: Option<(f64, f64)>,
    pub modal: ModalResult,
}

impl SystemMatrices {
    /// System from explicit matrices, for models outside the shear-building family
    /// (e.g. an undamped oscillator). The ground influence vector is all ones.
    pub fn from_parts(
        mass: DMatrix<f64>,
        stiffness: DMatrix<f64>,
        damping: DMatrix<f64>,
        actuator: DMatrix<f64>,
    ) -> Result<Self> {
        let n = mass.nrows();
        if damping.shape() != (n, n) || actuator.nrows() != n {
            return Err(Error::Model("damping/actuator matrices do not match the mass matrix".into()));
        }
        let modal = modal_analysis(&mass, &stiffness)?;
        Ok(Self {
            mass,
            stiffness,
            damping,
            actuator,
            iota: DVector::from_element(n, 1.0),
            rayleigh: None,
            modal,
        })
    }

    pub fn n_dof(&self) -> usize {
        self.mass.nrows()
    }

    pub fn n_actuators(&self) -> usize {
        self.actuator.ncols()
    }

    /// Diagonal of the (lumped) mass matrix.
    pub fn mass_diagonal(&self) -> DVector<f64> {
        self.mass.diagonal()
    }

    /// External load -M·iota·ag + B_u·u.
    pub fn load(&self, ground_accel: f64, forces: &DVector<f64>) -> DVector<f64> {
        let inertial = self.mass_diagonal() * (-ground_accel);
        inertial + &self.actuator * forces
    }
}

/// Tridiagonal shear-building stiffness matrix.
pub fn shear_stiffness(stiffnesses: &[f64]) -> DMatrix<f64> {
    let n = stiffnesses.len();
    DMatrix::from_fn(n, n, |i, j| {
        let above = stiffnesses.get(i + 1).copied().unwrap_or(0.0);
        if i == j {
            stiffnesses[i] + above
        } else if j == i + 1 {
            -stiffnesses[j]
        } else if i == j + 1 {
            -stiffnesses[i]
        } else {
            0.0
        }
    })
}

pub fn actuator_influence(n: usize, stories: &[usize], coupling: Coupling) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(n, stories.len());
    for (col, &story) in stories.iter().enumerate() {
        b[(story - 1, col)] = 1.0;
        if coupling == Coupling::InterStory && story >= 2 {
            b[(story - 2, col)] = -1.0;
        }
    }
    b
}

pub fn assemble_matrices(model: &BuildingModel) -> Result<SystemMatrices> {
    model.validate()?;
    let n = model.n_stories;
    let mass = DMatrix::from_diagonal(&DVector::from_column_slice(&model.masses));
    let stiffness = shear_stiffness(&model.stiffnesses);
    let modal = modal_analysis(&mass, &stiffness)?;

    let d = &model.damping;
    let (wi, wj) = (modal.frequencies[d.mode_i - 1], modal.frequencies[d.mode_j - 1]);
    // The solver wants the lower frequency first.
    let (a0, a1) = if wi < wj {
        rayleigh_coefficients(wi, d.zeta_i, wj, d.zeta_j)?
    } else {
        rayleigh_coefficients(wj, d.zeta_j, wi, d.zeta_i)?
    };
    let damping = &mass * a0 + &stiffness * a1;

    Ok(SystemMatrices {
        actuator: actuator_influence(n, &model.actuator_stories, model.coupling),
        iota: DVector::from_element(n, 1.0),
        mass,
        stiffness,
        damping,
        rayleigh: Some((a0, a1)),
        modal,
    })
}
