//! J1–J4 performance ratios between controlled and uncontrolled responses.
//!
//! J1: peak inter-story drift ratio per story. J2: peak absolute acceleration
//! ratio per story. J3: control-force energy (summed over actuators) over the
//! uncontrolled base-shear energy. J4: peak story-shear ratio per story.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dynamics::ResponseHistory;
use crate::{Error, Result};

/// Header note attached to every report: how J3 combines multiple actuators.
pub const J3_CONVENTION: &str = "J3 = sum over actuators of the control-force signal energy / uncontrolled base-shear energy";

/// Trapezoidal ∫|x(t)|² dt over the sampled series.
pub fn signal_energy(series: &[f64], dt: f64) -> Result<f64> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Parameter(format!("dt = {dt} must be positive")));
    }
    if series.len() < 2 {
        return Ok(0.0);
    }
    let sq = |v: f64| v * v;
    let interior: f64 = series[1..series.len() - 1].iter().map(|v| sq(*v)).sum();
    Ok(dt * (interior + 0.5 * (sq(series[0]) + sq(series[series.len() - 1]))))
}

fn check_pair(c: &ResponseHistory, uc: &ResponseHistory) -> Result<()> {
    if c.len() != uc.len() || c.n_stories() != uc.n_stories() || (c.dt - uc.dt).abs() > 1e-12 * uc.dt {
        return Err(Error::Contract(format!(
            "paired histories differ: {} vs {} samples, {} vs {} stories, dt {} vs {}",
            c.len(),
            uc.len(),
            c.n_stories(),
            uc.n_stories(),
            c.dt,
            uc.dt
        )));
    }
    Ok(())
}

/// Column-wise max|controlled| / max|uncontrolled|.
pub fn peak_ratios(controlled: &DMatrix<f64>, uncontrolled: &DMatrix<f64>, what: &str) -> Result<Vec<f64>> {
    if controlled.ncols() != uncontrolled.ncols() {
        return Err(Error::Contract(format!("{what}: column counts differ")));
    }
    controlled
        .column_iter()
        .zip(uncontrolled.column_iter())
        .enumerate()
        .map(|(j, (c, uc))| {
            let denom = uc.amax();
            if denom == 0.0 {
                Err(Error::UndefinedRatio(format!("{what}: uncontrolled peak is zero at story {}", j + 1)))
            } else {
                Ok(c.amax() / denom)
            }
        })
        .collect()
}

/// (J1, J2) per story.
pub fn j1_j2(controlled: &ResponseHistory, uncontrolled: &ResponseHistory) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(controlled, uncontrolled)?;
    Ok((
        peak_ratios(&controlled.isd, &uncontrolled.isd, "J1")?,
        peak_ratios(&controlled.abs_accel, &uncontrolled.abs_accel, "J2")?,
    ))
}

pub fn j3(forces: &DMatrix<f64>, uncontrolled_base_shear: &[f64], dt: f64) -> Result<f64> {
    let denom = signal_energy(uncontrolled_base_shear, dt)?;
    if denom == 0.0 {
        return Err(Error::UndefinedRatio("J3: uncontrolled base-shear energy is zero".into()));
    }
    let mut total = 0.0;
    for col in forces.column_iter() {
        let series: Vec<f64> = col.iter().copied().collect();
        total += signal_energy(&series, dt)?;
    }
    Ok(total / denom)
}

pub fn j4(controlled: &ResponseHistory, uncontrolled: &ResponseHistory) -> Result<Vec<f64>> {
    check_pair(controlled, uncontrolled)?;
    peak_ratios(&controlled.shear, &uncontrolled.shear, "J4")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub earthquake: String,
    pub j1: Vec<f64>,
    pub j2: Vec<f64>,
    pub j3: f64,
    pub j4: Vec<f64>,
}

impl MetricsReport {
    pub fn compute(earthquake: impl Into<String>, controlled: &ResponseHistory, uncontrolled: &ResponseHistory) -> Result<Self> {
        let (j1, j2) = j1_j2(controlled, uncontrolled)?;
        Ok(Self {
            earthquake: earthquake.into(),
            j1,
            j2,
            j3: j3(&controlled.forces, &uncontrolled.base_shear(), uncontrolled.dt)?,
            j4: j4(controlled, uncontrolled)?,
        })
    }

    pub fn n_stories(&self) -> usize {
        self.j1.len()
    }
}

/// Mean of each metric over a suite of earthquakes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub n_earthquakes: usize,
    pub j1: Vec<f64>,
    pub j2: Vec<f64>,
    pub j3: f64,
    pub j4: Vec<f64>,
}

/// Order-independent mean: values are summed in sorted order.
fn mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values.into_iter().sum::<f64>() / n
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<SuiteSummary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Contract("cannot aggregate an empty report list".into()))?;
    let n = first.n_stories();
    if let Some(r) = reports.iter().find(|r| r.n_stories() != n || r.j2.len() != n || r.j4.len() != n) {
        return Err(Error::Contract(format!(
            "mixed story counts: '{}' has {} stories, '{}' has {n}",
            r.earthquake,
            r.n_stories(),
            first.earthquake
        )));
    }
    let per_story = |pick: fn(&MetricsReport) -> &Vec<f64>| -> Vec<f64> {
        (0..n).map(|j| mean(reports.iter().map(|r| pick(r)[j]).collect())).collect()
    };
    Ok(SuiteSummary {
        n_earthquakes: reports.len(),
        j1: per_story(|r| &r.j1),
        j2: per_story(|r| &r.j2),
        j3: mean(reports.iter().map(|r| r.j3).collect()),
        j4: per_story(|r| &r.j4),
    })
}

/// Long-format CSV: one row per story per metric per earthquake, then suite means.
pub fn write_metrics_csv<W: Write>(mut out: W, reports: &[MetricsReport], summary: &SuiteSummary) -> std::io::Result<()> {
    writeln!(out, "# {J3_CONVENTION}")?;
    writeln!(out, "earthquake,metric,story,value")?;
    let mut rows = |label: &str, j1: &[f64], j2: &[f64], j3: f64, j4: &[f64]| -> std::io::Result<()> {
        let label = csv_field(label);
        for (name, values) in [("J1", j1), ("J2", j2)] {
            for (j, v) in values.iter().enumerate() {
                writeln!(out, "{label},{name},{},{v}", j + 1)?;
            }
        }
        writeln!(out, "{label},J3,all,{j3}")?;
        for (j, v) in j4.iter().enumerate() {
            writeln!(out, "{label},J4,{},{v}", j + 1)?;
        }
        Ok(())
    };
    for r in reports {
        rows(&r.earthquake, &r.j1, &r.j2, r.j3, &r.j4)?;
    }
    rows("mean", &summary.j1, &summary.j2, summary.j3, &summary.j4)
}

/// Wide per-story table of the suite means, for plotting.
pub fn write_summary_plot_data<W: Write>(mut out: W, summary: &SuiteSummary) -> std::io::Result<()> {
    writeln!(out, "story,J1,J2,J4")?;
    for j in 0..summary.j1.len() {
        writeln!(out, "{},{},{},{}", j + 1, summary.j1[j], summary.j2[j], summary.j4[j])?;
    }
    Ok(())
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
