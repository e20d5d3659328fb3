use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Natural frequencies (rad/s, ascending) and mass-normalised mode shapes
/// stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalResult {
    pub frequencies: Vec<f64>,
    pub shapes: DMatrix<f64>,
}

/// Generalised eigenproblem K·φ = ω²·M·φ for a diagonal positive mass matrix.
pub fn modal_analysis(mass: &DMatrix<f64>, stiffness: &DMatrix<f64>) -> Result<ModalResult> {
    let n = mass.nrows();
    if mass.ncols() != n || stiffness.shape() != (n, n) {
        return Err(Error::Model("mass and stiffness must be square and equal-sized".into()));
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && mass[(i, j)] != 0.0 {
                return Err(Error::Model("mass matrix must be diagonal".into()));
            }
        }
        if !(mass[(i, i)] > 0.0) {
            return Err(Error::Model(format!("mass[{i}][{i}] = {} is not positive", mass[(i, i)])));
        }
    }
    let scale = stiffness.amax().max(f64::MIN_POSITIVE);
    if (stiffness - stiffness.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Model("stiffness matrix is not symmetric".into()));
    }

    // S = M^-1/2 K M^-1/2 keeps the problem symmetric.
    let inv_sqrt_m: DVector<f64> = mass.diagonal().map(|m| 1.0 / m.sqrt());
    let s = DMatrix::from_fn(n, n, |i, j| stiffness[(i, j)] * inv_sqrt_m[i] * inv_sqrt_m[j]);
    let s = (&s + s.transpose()) * 0.5;

    let eig = SymmetricEigen::try_new(s, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (lo, hi) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[n - 1]]);
    if !(lo > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Model(format!(
            "stiffness matrix is singular or not positive definite (eigenvalues of M^-1/2 K M^-1/2 span [{lo:e}, {hi:e}])"
        )));
    }
    if hi / lo > 1e14 {
        return Err(Error::Numerical(format!(
            "ill-conditioned eigenproblem: condition number {:e}",
            hi / lo
        )));
    }

    let mut shapes = DMatrix::zeros(n, n);
    let mut frequencies = Vec::with_capacity(n);
    for (col, &idx) in order.iter().enumerate() {
        frequencies.push(eig.eigenvalues[idx].sqrt());
        let mut phi = eig.eigenvectors.column(idx).component_mul(&inv_sqrt_m);
        // Fix the sign so the largest component is positive.
        let imax = phi.iamax();
        if phi[imax] < 0.0 {
            phi.neg_mut();
        }
        // Renormalise against M to wash out eigensolver round-off.
        let norm = phi.dot(&(mass * &phi)).sqrt();
        shapes.set_column(col, &(phi / norm));
    }
    Ok(ModalResult { frequencies, shapes })
}

/// Rayleigh coefficients (a0, a1) with ζ = a0/(2ω) + a1·ω/2 at both anchors.
pub fn rayleigh_coefficients(omega_i: f64, zeta_i: f64, omega_j: f64, zeta_j: f64) -> Result<(f64, f64)> {
    if !(omega_i > 0.0) || !omega_j.is_finite() {
        return Err(Error::Parameter(format!("anchor frequencies must be positive, got {omega_i}, {omega_j}")));
    }
    if omega_i == omega_j {
        return Err(Error::Parameter(format!("degenerate Rayleigh anchors: both at {omega_i} rad/s")));
    }
    if !(omega_i < omega_j) {
        return Err(Error::Parameter("anchor frequencies must be ordered omega_i < omega_j".into()));
    }
    for z in [zeta_i, zeta_j] {
        if !(z > 0.0 && z < 1.0) {
            return Err(Error::Parameter(format!("damping ratio {z} outside (0, 1)")));
        }
    }
    let denom = omega_j * omega_j - omega_i * omega_i;
    let a0 = 2.0 * omega_i * omega_j * (zeta_i * omega_j - zeta_j * omega_i) / denom;
    let a1 = 2.0 * (zeta_j * omega_j - zeta_i * omega_i) / denom;
    Ok((a0, a1))
}

/// Modal damping ratios ζ_n = φ_nᵀ·C·φ_n / (2·ω_n).
pub fn modal_damping_ratios(modal: &ModalResult, damping: &DMatrix<f64>) -> Vec<f64> {
    modal
        .frequencies
        .iter()
        .enumerate()
        .map(|(n, w)| {
            let phi = modal.shapes.column(n);
            phi.dot(&(damping * phi)) / (2.0 * w)
        })
        .collect()
}
