//! Discrete algebraic Riccati equation and the LQR/Kalman gains built on it.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Accepted relative Frobenius residual of a DARE solution.
pub const DARE_TOLERANCE: f64 = 1e-10;

const DOUBLING_MAX_ITER: usize = 100;
const FIXED_POINT_MAX_ITER: usize = 200_000;

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::Parameter(format!("{name} is {:?}, expected {n}x{n}", m.shape())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("{name} has non-finite entries")));
    }
    Ok(())
}

fn riccati_map(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let pa = p * a;
    let bt_pa = b.transpose() * &pa;
    let s = r + b.transpose() * p * b;
    let gain = symmetrize(&s).cholesky()?.solve(&bt_pa);
    Some(a.transpose() * &pa - bt_pa.transpose() * gain + q)
}

/// ‖P − (AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q)‖_F / max(‖P‖_F, ‖Q‖_F).
pub fn dare_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let Some(next) = riccati_map(a, b, q, r, p) else {
        return f64::INFINITY;
    };
    let scale = p.norm().max(q.norm());
    let diff = (next - p).norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Structure-preserving doubling. Returns `None` on breakdown.
fn doubling(a: &DMatrix<f64>, g: &DMatrix<f64>, h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let (mut ak, mut gk, mut hk) = (a.clone(), g.clone(), h.clone());
    for _ in 0..DOUBLING_MAX_ITER {
        let w = (&eye + &gk * &hk).lu();
        let w_a = w.solve(&ak)?;
        let w_g = w.solve(&gk)?;
        let a_next = &ak * &w_a;
        let g_next = symmetrize(&(&gk + &ak * w_g * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &w_a));
        if h_next.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let change = (&h_next - &hk).norm();
        let scale = h_next.norm();
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if change <= 1e-15 * scale.max(f64::MIN_POSITIVE) || ak.amax() < 1e-300 {
            break;
        }
    }
    Some(hk)
}

/// Stabilising solution of P = AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q.
///
/// Uses the doubling algorithm, then fixed-point sweeps until the relative
/// residual reaches [`DARE_TOLERANCE`]. If doubling breaks down the
/// fixed-point iteration runs from P = Q alone.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    check_square("A", a, n)?;
    check_square("Q", q, n)?;
    check_square("R", r, m)?;
    if b.nrows() != n {
        return Err(Error::Parameter(format!("B has {} rows, expected {n}", b.nrows())));
    }
    let r_chol = symmetrize(r)
        .cholesky()
        .ok_or_else(|| Error::Parameter("R must be symmetric positive definite".into()))?;
    let q = symmetrize(q);

    let g = symmetrize(&(b * r_chol.solve(&b.transpose())));
    let mut p = doubling(a, &g, &q).unwrap_or_else(|| q.clone());
    let mut residual = dare_residual(a, b, &q, r, &p);
    let mut iterations = 0;
    while !(residual <= DARE_TOLERANCE) {
        if iterations == FIXED_POINT_MAX_ITER {
            return Err(Error::NonConvergence { iterations, residual });
        }
        p = symmetrize(
            &riccati_map(a, b, &q, r, &p)
                .ok_or_else(|| Error::Numerical("R + BᵀPB lost positive definiteness".into()))?,
        );
        residual = dare_residual(a, b, &q, r, &p);
        iterations += 1;
    }
    Ok(p)
}

/// K = (R + BᵀPB)⁻¹BᵀPA.
pub fn lqr_gain(p: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    gain_with_cross(p, a, b, r, None)
}

fn gain_with_cross(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    cross: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let s = symmetrize(&(r + b.transpose() * p * b));
    let eig = s.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(v.abs())));
    if !(lo > 0.0) || hi / lo > 1e14 {
        return Err(Error::Numerical(format!(
            "R + BᵀPB is ill-conditioned (eigenvalues in [{lo:e}, {hi:e}])"
        )));
    }
    let mut rhs = b.transpose() * p * a;
    if let Some(n) = cross {
        rhs += n.transpose();
    }
    s.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Numerical("R + BᵀPB is not positive definite".into()))
}

/// LQR with a state/input cross weight N in the stage cost zᵀQz + 2zᵀNu + uᵀRu.
/// Returns (P, K) with u = −K·z.
pub fn lqr_design(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    cross: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let r_chol = symmetrize(r)
        .cholesky()
        .ok_or_else(|| Error::Parameter("R must be symmetric positive definite".into()))?;
    let r_inv_nt = r_chol.solve(&cross.transpose());
    let a_mod = a - b * &r_inv_nt;
    let q_mod = symmetrize(&(q - cross * &r_inv_nt));
    let p = solve_dare(&a_mod, b, &q_mod, r)?;
    let k = gain_with_cross(&p, a, b, r, Some(cross))?;
    Ok((p, k))
}

/// Steady-state estimator for x⁺ = A·x + w, y = C·x + v.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanDesign {
    /// A priori error covariance.
    pub covariance: DMatrix<f64>,
    /// Predictor gain L = A·P·Cᵀ(C·P·Cᵀ + V)⁻¹; error dynamics A − L·C.
    pub predictor_gain: DMatrix<f64>,
    /// Measurement-update gain P·Cᵀ(C·P·Cᵀ + V)⁻¹.
    pub filter_gain: DMatrix<f64>,
}

pub fn kalman_design(a: &DMatrix<f64>, c: &DMatrix<f64>, w: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<KalmanDesign> {
    let at = a.transpose();
    let ct = c.transpose();
    let p = solve_dare(&at, &ct, w, v)?;
    let predictor_gain = lqr_gain(&p, &at, &ct, v)?.transpose();
    let innovation = symmetrize(&(c * &p * &ct + v));
    let filter_gain = innovation
        .cholesky()
        .map(|ch| ch.solve(&(c * &p)).transpose())
        .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
    Ok(KalmanDesign {
        covariance: p,
        predictor_gain,
        filter_gain,
    })
}

/// Predictor gain of the steady-state Kalman filter, from the dual DARE.
pub fn kalman_gain(a: &DMatrix<f64>, c: &DMatrix<f64>, w: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    kalman_design(a, c, w, v).map(|d| d.predictor_gain)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().fold(0.0, |acc, z| acc.max(z.norm()))
}
