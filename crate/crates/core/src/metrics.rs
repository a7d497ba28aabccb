//! Calibration error, threshold rates, the stability ratio and report aggregation.

use std::cmp::Ordering;
use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{euler_from_rotation, EulerAngles, RigidTransform};
use crate::methods::Trajectory;

/// 1-based evaluation indices compared by the stability ratio.
pub const RHO_STEPS: [usize; 3] = [2, 5, 10];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationError {
    /// Degrees.
    pub euler: EulerAngles,
    /// Centimeters.
    pub trans: Vector3<f64>,
    pub rot_rmse: f64,
    pub trans_rmse: f64,
}

impl CalibrationError {
    pub fn zero() -> Self {
        Self {
            euler: EulerAngles::new(0.0, 0.0, 0.0),
            trans: Vector3::zeros(),
            rot_rmse: 0.0,
            trans_rmse: 0.0,
        }
    }

    /// Builds an error directly from RMSE values, leaving the per-axis parts at zero.
    pub fn from_rmse(rot_rmse: f64, trans_rmse: f64) -> Self {
        Self {
            rot_rmse,
            trans_rmse,
            ..Self::zero()
        }
    }

    pub fn within(&self, deg: f64, cm: f64) -> bool {
        self.rot_rmse < deg && self.trans_rmse < cm
    }
}

/// Root of the mean of squares over three axes.
pub fn axis_rmse(v: [f64; 3]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / 3.0).sqrt()
}

/// Error of `estimate` against `gt`, from `estimate * gt^-1`.
pub fn error_transform(estimate: &RigidTransform, gt: &RigidTransform) -> CalibrationError {
    let e = estimate.compose(&gt.inverse());
    let euler = euler_from_rotation(&e);
    let trans = e.translation * 100.0;
    CalibrationError {
        euler,
        trans,
        rot_rmse: axis_rmse(euler.to_array()),
        trans_rmse: axis_rmse([trans.x, trans.y, trans.z]),
    }
}

/// Percent of errors under 3 deg / 3 cm and under 5 deg / 5 cm (strict).
pub fn threshold_rates(errors: &[CalibrationError]) -> Result<(f64, f64)> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("threshold rates need at least one error".into()));
    }
    let n = errors.len() as f64;
    let count = |deg, cm| errors.iter().filter(|e| e.within(deg, cm)).count() as f64;
    Ok((100.0 * count(3.0, 3.0) / n, 100.0 * count(5.0, 5.0) / n))
}

/// One (sample, surrogate, method) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sample_id: u64,
    pub surrogate: String,
    pub method: String,
    pub initial_error: CalibrationError,
    pub errors_by_step: Vec<CalibrationError>,
    pub final_error: CalibrationError,
    /// Set when the run stopped on a log-map singularity.
    #[serde(default)]
    pub flagged: bool,
}

impl RunRecord {
    pub fn from_trajectory(
        sample_id: u64,
        surrogate: &str,
        method: &str,
        t0: &RigidTransform,
        gt: &RigidTransform,
        trajectory: &Trajectory,
    ) -> Self {
        Self {
            sample_id,
            surrogate: surrogate.to_string(),
            method: method.to_string(),
            initial_error: error_transform(t0, gt),
            errors_by_step: trajectory.estimates.iter().map(|e| error_transform(e, gt)).collect(),
            final_error: error_transform(&trajectory.final_estimate, gt),
            flagged: trajectory.is_flagged(),
        }
    }

    /// Error after the `step`-th evaluation (1-based).
    pub fn step(&self, step: usize) -> Option<&CalibrationError> {
        step.checked_sub(1).and_then(|i| self.errors_by_step.get(i))
    }

    pub fn supports_rho(&self) -> bool {
        self.errors_by_step.len() >= RHO_STEPS[2]
    }

    pub fn is_monotone(&self) -> Result<bool> {
        let pick = |i| {
            self.step(i).ok_or_else(|| {
                Error::ContractViolation(format!(
                    "sample {} ({}) has no step {i}",
                    self.sample_id, self.method
                ))
            })
        };
        let [a, b, c] = [pick(RHO_STEPS[0])?, pick(RHO_STEPS[1])?, pick(RHO_STEPS[2])?];
        Ok(a.rot_rmse >= b.rot_rmse
            && b.rot_rmse >= c.rot_rmse
            && a.trans_rmse >= b.trans_rmse
            && b.trans_rmse >= c.trans_rmse)
    }
}

/// Percent of records whose rotation and translation RMSE are both
/// non-increasing across evaluations 2, 5 and 10.
pub fn stability_rho(records: &[RunRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("stability ratio needs at least one record".into()));
    }
    let mut monotone = 0usize;
    for r in records {
        if r.is_monotone()? {
            monotone += 1;
        }
    }
    Ok(100.0 * monotone as f64 / records.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean_rot_rmse: f64,
    pub median_rot_rmse: f64,
    pub mean_trans_rmse: f64,
    pub median_trans_rmse: f64,
    pub rate_3deg3cm: f64,
    pub rate_5deg5cm: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

impl ErrorStats {
    pub fn from_errors(errors: &[CalibrationError]) -> Result<Self> {
        let (rate_3deg3cm, rate_5deg5cm) = threshold_rates(errors)?;
        let rot: Vec<f64> = errors.iter().map(|e| e.rot_rmse).collect();
        let trans: Vec<f64> = errors.iter().map(|e| e.trans_rmse).collect();
        Ok(Self {
            mean_rot_rmse: mean(&rot),
            median_rot_rmse: median(&rot),
            mean_trans_rmse: mean(&trans),
            median_trans_rmse: median(&trans),
            rate_3deg3cm,
            rate_5deg5cm,
        })
    }
}

/// Aggregate for one (surrogate, method) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub surrogate: String,
    pub method: String,
    pub samples: usize,
    pub flagged: usize,
    /// Over unflagged samples; absent when every sample was flagged.
    pub stats: Option<ErrorStats>,
    /// Absent for runs shorter than ten evaluations.
    pub rho_percent: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub rows: Vec<MethodSummary>,
}

/// Groups records by (surrogate, method) in order of first appearance.
pub fn aggregate(records: &[RunRecord]) -> Result<AggregateReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate zero records".into()));
    }
    let mut groups: Vec<((&str, &str), Vec<&RunRecord>)> = Vec::new();
    for r in records {
        let key = (r.surrogate.as_str(), r.method.as_str());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((surrogate, method), group) in groups {
        let valid: Vec<RunRecord> = group.iter().filter(|r| !r.flagged).map(|r| (*r).clone()).collect();
        let finals: Vec<CalibrationError> = valid.iter().map(|r| r.final_error).collect();
        let stats = if finals.is_empty() {
            None
        } else {
            Some(ErrorStats::from_errors(&finals)?)
        };
        let rho_percent = if !valid.is_empty() && valid.iter().all(RunRecord::supports_rho) {
            Some(stability_rho(&valid)?)
        } else {
            None
        };
        rows.push(MethodSummary {
            surrogate: surrogate.to_string(),
            method: method.to_string(),
            samples: group.len(),
            flagged: group.len() - valid.len(),
            stats,
            rho_percent,
        });
    }
    Ok(AggregateReport { rows })
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "surrogate",
    "method",
    "samples",
    "flagged",
    "rate_3deg3cm",
    "rate_5deg5cm",
    "rho_percent",
    "mean_rot_rmse_deg",
    "median_rot_rmse_deg",
    "mean_trans_rmse_cm",
    "median_trans_rmse_cm",
];

/// Whether a larger value is better in a numeric report column.
pub fn higher_is_better(column: &str) -> bool {
    matches!(column, "rate_3deg3cm" | "rate_5deg5cm" | "rho_percent")
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.digits$}"))
}

impl MethodSummary {
    /// Numeric columns in [`REPORT_COLUMNS`] order, starting at `rate_3deg3cm`.
    pub fn metric_values(&self) -> [Option<f64>; 7] {
        let s = self.stats.as_ref();
        [
            s.map(|s| s.rate_3deg3cm),
            s.map(|s| s.rate_5deg5cm),
            self.rho_percent,
            s.map(|s| s.mean_rot_rmse),
            s.map(|s| s.median_rot_rmse),
            s.map(|s| s.mean_trans_rmse),
            s.map(|s| s.median_trans_rmse),
        ]
    }

    fn cells(&self, digits: usize) -> Vec<String> {
        let mut out = vec![
            self.surrogate.clone(),
            self.method.clone(),
            self.samples.to_string(),
            self.flagged.to_string(),
        ];
        out.extend(self.metric_values().iter().map(|v| fmt_opt(*v, digits)));
        out
    }
}

impl AggregateReport {
    pub fn to_csv(&self) -> String {
        let mut s = REPORT_COLUMNS.join(",");
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.cells(6).join(","));
            s.push('\n');
        }
        s
    }

    /// Aligned text table, columns ordered as in the CSV.
    pub fn to_table(&self) -> String {
        let header = ["Surrogate", "Method", "N", "Flagged", "3°3cm %", "5°5cm %", "ρ %", "Rot mean", "Rot med", "Trans mean", "Trans med"];
        let rows: Vec<Vec<String>> = self.rows.iter().map(|r| r.cells(2)).collect();
        render_table(&header, &rows)
    }
}

/// Left-aligns the first two columns and right-aligns the rest.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut s = String::new();
        for (i, c) in cells.enumerate() {
            let pad = widths[i].saturating_sub(c.chars().count());
            if i > 0 {
                s.push_str("  ");
            }
            if i < 2 {
                let _ = write!(s, "{c}{}", " ".repeat(pad));
            } else {
                let _ = write!(s, "{}{c}", " ".repeat(pad));
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(&mut header.iter().copied());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(&mut r.iter().map(String::as_str)));
        out.push('\n');
    }
    out
}

/// Index of the best value among `values`, ignoring missing entries.
/// Ties resolve to the first occurrence.
pub fn best_index(values: &[Option<f64>], higher_better: bool) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            None => Some((i, v)),
            Some((bi, bv)) => {
                let better = match v.total_cmp(&bv) {
                    Ordering::Greater => higher_better,
                    Ordering::Less => !higher_better,
                    Ordering::Equal => false,
                };
                Some(if better { (i, v) } else { (bi, bv) })
            }
        })
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{exp_map, Twist};

    fn record(id: u64, rot: [f64; 10], trans: [f64; 10]) -> RunRecord {
        let steps: Vec<CalibrationError> = rot.iter().zip(&trans).map(|(r, t)| CalibrationError::from_rmse(*r, *t)).collect();
        RunRecord {
            sample_id: id,
            surrogate: "s".into(),
            method: "m".into(),
            initial_error: CalibrationError::zero(),
            final_error: *steps.last().unwrap(),
            errors_by_step: steps,
            flagged: false,
        }
    }

    #[test]
    fn identical_transforms_have_zero_error() {
        let t = exp_map(&Twist::from_array([0.3, -0.2, 0.1, 0.4, 0.2, -0.3])).unwrap();
        let e = error_transform(&t, &t);
        assert!(e.rot_rmse < 1e-12 && e.trans_rmse < 1e-12);
    }

    #[test]
    fn three_degree_rotation() {
        let gt = exp_map(&Twist::from_array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])).unwrap();
        let eps = RigidTransform::from_euler(EulerAngles::new(3.0, 3.0, 3.0), Vector3::zeros());
        let e = error_transform(&eps.compose(&gt), &gt);
        assert!((e.rot_rmse - 3.0).abs() < 1e-10);
        assert!(e.trans_rmse < 1e-10);
    }

    #[test]
    fn matches_matrix_recomputation() {
        let gt = exp_map(&Twist::from_array([0.1, -0.3, 0.2, 0.2, 0.1, -0.4])).unwrap();
        let est = exp_map(&Twist::from_array([0.12, -0.25, 0.18, 0.25, 0.05, -0.35])).unwrap();
        let m = est.to_matrix4() * gt.to_matrix4().try_inverse().unwrap();
        let rx = m[(2, 1)].atan2(m[(2, 2)]).to_degrees();
        let ry = (-m[(2, 0)]).asin().to_degrees();
        let rz = m[(1, 0)].atan2(m[(0, 0)]).to_degrees();
        let t = [m[(0, 3)] * 100.0, m[(1, 3)] * 100.0, m[(2, 3)] * 100.0];
        let e = error_transform(&est, &gt);
        assert!((e.rot_rmse - ((rx * rx + ry * ry + rz * rz) / 3.0).sqrt()).abs() < 1e-9);
        assert!((e.trans_rmse - ((t[0] * t[0] + t[1] * t[1] + t[2] * t[2]) / 3.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn composition_order_is_not_left_invariant() {
        let a = exp_map(&Twist::from_array([0.5, 0.1, -0.2, 0.3, -0.6, 0.2])).unwrap();
        let x = exp_map(&Twist::from_array([0.1, 0.0, 0.0, 0.05, 0.0, 0.0])).unwrap();
        let y = RigidTransform::identity();
        let base = error_transform(&x, &y);
        let moved = error_transform(&a.compose(&x), &a.compose(&y));
        assert!((base.trans_rmse - moved.trans_rmse).abs() > 1e-3);
    }

    #[test]
    fn rates_and_boundaries() {
        assert_eq!(threshold_rates(&[CalibrationError::zero()]).unwrap(), (100.0, 100.0));
        assert_eq!(threshold_rates(&[CalibrationError::from_rmse(2.9, 2.9)]).unwrap(), (100.0, 100.0));
        assert_eq!(threshold_rates(&[CalibrationError::from_rmse(3.0, 2.0)]).unwrap(), (0.0, 100.0));
        assert!(threshold_rates(&[]).is_err());
    }

    #[test]
    fn rho_hand_counts() {
        let dec: [f64; 10] = std::array::from_fn(|i| 10.0 - i as f64);
        let flat = [1.0; 10];
        let mut bump = dec;
        bump[4] = 20.0;
        let records = vec![
            record(0, dec, dec),
            record(1, dec, bump),
            record(2, flat, flat),
            record(3, bump, dec),
        ];
        assert_eq!(stability_rho(&records).unwrap(), 50.0);
        let mut reversed = records.clone();
        reversed.reverse();
        assert_eq!(stability_rho(&reversed).unwrap(), 50.0);
        let mut short = record(4, dec, dec);
        short.errors_by_step.truncate(5);
        assert!(matches!(stability_rho(&[short]), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn aggregate_means_flags_and_na() {
        let mut a = record(0, [1.0; 10], [2.0; 10]);
        let mut b = record(1, [3.0; 10], [6.0; 10]);
        let mut c = record(2, [50.0; 10], [50.0; 10]);
        c.flagged = true;
        let mut single = record(0, [1.0; 10], [1.0; 10]);
        single.method = "Single".into();
        single.errors_by_step.truncate(1);
        for r in [&mut a, &mut b, &mut c] {
            r.method = "LSD".into();
        }
        let report = aggregate(&[a, b, c, single]).unwrap();
        let lsd = &report.rows[0];
        assert_eq!((lsd.samples, lsd.flagged), (3, 1));
        let s = lsd.stats.unwrap();
        assert_eq!(s.mean_rot_rmse, 2.0);
        assert_eq!(s.mean_trans_rmse, 4.0);
        assert_eq!(s.median_trans_rmse, 4.0);
        assert_eq!((s.rate_3deg3cm, s.rate_5deg5cm), (50.0, 50.0));
        assert_eq!(lsd.rho_percent, Some(100.0));
        assert_eq!(report.rows[1].rho_percent, None);
        assert!(report.to_csv().lines().nth(2).unwrap().contains(",N/A,"));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn best_index_prefers_first_tie() {
        assert_eq!(best_index(&[Some(1.0), None, Some(3.0), Some(3.0)], true), Some(2));
        assert_eq!(best_index(&[Some(1.0), None, Some(3.0)], false), Some(0));
        assert_eq!(best_index(&[None, None], false), None);
    }

    #[test]
    fn table_is_aligned() {
        let report = aggregate(&[record(0, [1.0; 10], [1.0; 10])]).unwrap();
        let table = report.to_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].chars().count(), lines[2].chars().count());
    }
}
