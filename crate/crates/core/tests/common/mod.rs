//! Independent oracles shared by the integration tests. Nothing here calls the
//! library's eigen, exponential or Riccati code.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use structctl::dynamics::SystemMatrices;
use structctl::excitation::{load_record, GroundMotionRecord, RecordFormat};

pub const EL_CENTRO: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/elcentro_ns.at2");

pub fn el_centro() -> GroundMotionRecord {
    load_record(EL_CENTRO, RecordFormat::StrongMotion, None).unwrap()
}

/// exp(A) by scaling and squaring with a Taylor series summed to round-off.
pub fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().row_sum().max();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(s);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..60 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if term.abs().max() < 1e-18 * sum.abs().max() {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// Number of eigenvalues of the symmetric tridiagonal (d, e) below x.
fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = d[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..d.len() {
        let q_prev = if q == 0.0 { f64::EPSILON * (e[i - 1].abs() + 1.0) } else { q };
        q = d[i] - x - e[i - 1] * e[i - 1] / q_prev;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Eigenvalues ω² of K·φ = ω²·M·φ for diagonal M and tridiagonal K, ascending,
/// by Sturm-sequence bisection on M^-1/2·K·M^-1/2.
pub fn generalized_eigenvalues_sturm(m: &[f64], k: &DMatrix<f64>) -> Vec<f64> {
    let n = m.len();
    let d: Vec<f64> = (0..n).map(|i| k[(i, i)] / m[i]).collect();
    let e: Vec<f64> = (0..n - 1).map(|i| k[(i, i + 1)] / (m[i] * m[i + 1]).sqrt()).collect();
    // Gershgorin bounds.
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    (0..n)
        .map(|j| {
            let (mut a, mut b) = (lo, hi);
            while b - a > 4.0 * f64::EPSILON * b.abs().max(a.abs()) {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if sturm_count(&d, &e, mid) > j {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            0.5 * (a + b)
        })
        .collect()
}

/// Exact response of the damped building (no actuators) to a ground
/// acceleration that varies linearly between samples, from rest. Returns the
/// relative displacement history, one row per sample.
pub fn exact_piecewise_linear_response(mats: &SystemMatrices, record: &GroundMotionRecord) -> DMatrix<f64> {
    let n = mats.n_dof();
    let m_inv = DMatrix::from_diagonal(&mats.mass.diagonal().map(|m| 1.0 / m));
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).copy_from(&DMatrix::identity(n, n));
    a.view_mut((n, 0), (n, n)).copy_from(&(-&m_inv * &mats.stiffness));
    a.view_mut((n, n), (n, n)).copy_from(&(-&m_inv * &mats.damping));
    // z' = A z + e·ag with ag(t) = ag_k + s·(t − t_k); augment with [ag_k, s].
    let mut aug = DMatrix::zeros(2 * n + 2, 2 * n + 2);
    aug.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&a);
    for i in 0..n {
        aug[(n + i, 2 * n)] = -mats.iota[i];
    }
    aug[(2 * n, 2 * n + 1)] = 1.0;
    let phi = expm_taylor(&(aug * record.dt));
    let f = phi.view((0, 0), (2 * n, 2 * n)).clone_owned();
    let g0 = phi.view((0, 2 * n), (2 * n, 1)).clone_owned();
    let g1 = phi.view((0, 2 * n + 1), (2 * n, 1)).clone_owned();

    let len = record.samples.len();
    let mut out = DMatrix::zeros(len, n);
    let mut z = DVector::zeros(2 * n);
    for k in 0..len - 1 {
        let ag = record.samples[k];
        let slope = (record.samples[k + 1] - ag) / record.dt;
        z = &f * &z + &g0 * ag + &g1 * slope;
        out.row_mut(k + 1).copy_from(&z.rows(0, n).transpose());
    }
    out
}

pub fn inter_story_drift(disp: &DMatrix<f64>) -> DMatrix<f64> {
    let mut isd = disp.clone();
    for j in (1..disp.ncols()).rev() {
        let below = disp.column(j - 1).clone_owned();
        isd.column_mut(j).axpy(-1.0, &below, 1.0);
    }
    isd
}

pub fn column_peaks(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.amax()).collect()
}

/// Root of the scalar DARE p = a²p − (abp)²/(b²p + r) + q by bisection on [q, hi].
pub fn scalar_dare_bisection(a: f64, b: f64, q: f64, r: f64) -> f64 {
    let f = |p: f64| a * a * p - (a * b * p).powi(2) / (b * b * p + r) + q - p;
    let mut lo = q;
    let mut hi = q.max(1.0);
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Riccati value iteration from P = Q until the update stalls.
pub fn dare_value_iteration(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = q.clone();
    for _ in 0..1_000_000 {
        let s = r + b.transpose() * &p * b;
        let gain = s.lu().solve(&(b.transpose() * &p * a)).unwrap();
        let next = a.transpose() * &p * a - a.transpose() * &p * b * gain + q;
        let next = (&next + next.transpose()) * 0.5;
        let change = (&next - &p).norm() / next.norm();
        p = next;
        if change < 1e-15 {
            break;
        }
    }
    p
}
