//! Accuracy and consistency metrics.
//!
//! Translation error is the Euclidean distance between positions. Rotation
//! error is the geodesic angle of the relative rotation,
//! `2·acos(|⟨q₁, q₂⟩|)`, in degrees.

use std::fmt::Write as _;

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::lie::{ominus, GroupPose};
use crate::traj_io::Trajectory;
use crate::uncertainty::PoseGaussian;

/// Timestamps closer than this are considered the same frame.
pub const TIMESTAMP_TOLERANCE: f64 = 1e-6;

/// Name of the rotation metric recorded in machine-readable reports.
pub const ROTATION_METRIC: &str = "geodesic";

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub trans_errors: Vec<f64>,
    pub rot_errors_deg: Vec<f64>,
    pub median_trans: f64,
    pub mean_trans: f64,
    pub median_rot: f64,
    pub mean_rot: f64,
    pub nees_mean: Option<f64>,
}

impl ErrorReport {
    pub fn from_errors(trans_errors: Vec<f64>, rot_errors_deg: Vec<f64>) -> Result<Self> {
        if trans_errors.is_empty() || trans_errors.len() != rot_errors_deg.len() {
            return Err(Error::InvalidArgument(format!(
                "need matching non-empty error lists, got {} and {}",
                trans_errors.len(),
                rot_errors_deg.len()
            )));
        }
        Ok(Self {
            median_trans: median(&trans_errors),
            mean_trans: mean(&trans_errors),
            median_rot: median(&rot_errors_deg),
            mean_rot: mean(&rot_errors_deg),
            trans_errors,
            rot_errors_deg,
            nees_mean: None,
        })
    }

    /// Medians in the `0.18m, 6.75°` style.
    pub fn summary(&self) -> String {
        format!("{:.2}m, {:.2}°", self.median_trans, self.median_rot)
    }

    pub fn len(&self) -> usize {
        self.trans_errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trans_errors.is_empty()
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Median; even counts average the two middle values.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn translation_error(a: &GroupPose, b: &GroupPose) -> f64 {
    (a.translation() - b.translation()).norm()
}

/// Geodesic rotation distance in degrees, in `[0, 180]`.
pub fn rotation_error_deg(a: &GroupPose, b: &GroupPose) -> f64 {
    // conj(qa) * qb, written out so equal rotations give exactly zero
    let (qa, qb) = (a.rotation().quaternion(), b.rotation().quaternion());
    let (va, vb) = (qa.imag(), qb.imag());
    let w = qa.w * qb.w + va.dot(&vb);
    let v = vb * qa.w - va * qb.w - va.cross(&vb);
    (2.0 * v.norm().atan2(w.abs())).to_degrees()
}

fn check_alignment(estimate: &Trajectory, truth: &Trajectory) -> Result<()> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch {
            estimate: estimate.len(),
            truth: truth.len(),
        });
    }
    if estimate.is_empty() {
        return Err(Error::InvalidArgument("empty trajectories".into()));
    }
    for (index, (e, t)) in estimate.timestamps().zip(truth.timestamps()).enumerate() {
        if (e - t).abs() > TIMESTAMP_TOLERANCE {
            return Err(Error::TimestampMismatch {
                index,
                estimate: e,
                truth: t,
            });
        }
    }
    Ok(())
}

pub fn pose_errors(estimate: &Trajectory, truth: &Trajectory) -> Result<ErrorReport> {
    check_alignment(estimate, truth)?;
    let (trans, rot) = estimate
        .poses()
        .zip(truth.poses())
        .map(|(e, t)| (translation_error(e, t), rotation_error_deg(e, t)))
        .unzip();
    ErrorReport::from_errors(trans, rot)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeesSeries {
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

/// Normalized estimation error squared, `eᵀ Σ̂⁻¹ e` with `e = truth ⊖ x̂`.
pub fn nees(estimates: &[PoseGaussian], truth: &[GroupPose]) -> Result<NeesSeries> {
    if estimates.len() != truth.len() {
        return Err(Error::LengthMismatch {
            estimate: estimates.len(),
            truth: truth.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("no estimates".into()));
    }
    let per_frame = estimates
        .iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (est, t))| {
            let e = ominus(t, est.mean()).to_vector();
            let chol = Cholesky::new(*est.covariance()).ok_or_else(|| {
                Error::Covariance(format!("estimate {i} has a singular covariance"))
            })?;
            Ok(e.dot(&chol.solve(&e)))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(NeesSeries {
        mean: mean(&per_frame),
        per_frame,
    })
}

/// Side-by-side table of several methods with the best value per column
/// starred.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    /// Aligned human-readable table.
    pub text: String,
    /// Tab-separated rendering with the same cells as `text`.
    pub machine: String,
}

const COLUMNS: [&str; 5] = [
    "method",
    "median_trans_m",
    "mean_trans_m",
    "median_rot_deg",
    "mean_rot_deg",
];

pub fn compare_methods(reports: &[(String, ErrorReport)]) -> Result<Comparison> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("nothing to compare".into()));
    }
    let metric = |r: &ErrorReport, c: usize| match c {
        0 => r.median_trans,
        1 => r.mean_trans,
        2 => r.median_rot,
        _ => r.mean_rot,
    };
    let best: Vec<f64> = (0..4)
        .map(|c| {
            reports
                .iter()
                .map(|(_, r)| metric(r, c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    let mut rows: Vec<Vec<String>> = vec![COLUMNS.iter().map(|s| s.to_string()).collect()];
    for (name, r) in reports {
        let mut row = vec![name.clone()];
        for (c, b) in best.iter().enumerate() {
            let v = metric(r, c);
            let digits = if c < 2 { 3 } else { 2 };
            let cell = format!("{v:.digits$}");
            let star = if cell == format!("{b:.digits$}") { "*" } else { "" };
            row.push(format!("{cell}{star}"));
        }
        rows.push(row);
    }

    // unstarred numbers get a trailing space so decimal points line up
    let display: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(c, cell)| {
                    if i > 0 && c > 0 && !cell.ends_with('*') {
                        format!("{cell} ")
                    } else {
                        cell.clone()
                    }
                })
                .collect()
        })
        .collect();
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|c| display.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for row in &display {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        writeln!(text, "{}", cells.join("  ").trim_end()).unwrap();
    }
    let mut machine = String::new();
    for row in &rows {
        writeln!(machine, "{}", row.join("\t")).unwrap();
    }
    Ok(Comparison { text, machine })
}

fn fmt_value(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

/// Machine-readable report: one `frame` record per pose followed by
/// `summary` records.
pub fn render_report(report: &ErrorReport, estimate: &Trajectory) -> Result<String> {
    if estimate.len() != report.len() {
        return Err(Error::LengthMismatch {
            estimate: estimate.len(),
            truth: report.len(),
        });
    }
    let mut out = String::new();
    writeln!(out, "# posefuse error report").unwrap();
    writeln!(out, "# rotation_metric {ROTATION_METRIC}").unwrap();
    writeln!(out, "# frame index timestamp err_trans_m err_rot_deg").unwrap();
    for (i, (t, (et, er))) in estimate
        .timestamps()
        .zip(report.trans_errors.iter().zip(&report.rot_errors_deg))
        .enumerate()
    {
        writeln!(out, "frame {i} {} {} {}", fmt_value(t), fmt_value(*et), fmt_value(*er)).unwrap();
    }
    writeln!(out, "summary frames {}", report.len()).unwrap();
    writeln!(out, "summary median_trans_m {}", fmt_value(report.median_trans)).unwrap();
    writeln!(out, "summary mean_trans_m {}", fmt_value(report.mean_trans)).unwrap();
    writeln!(out, "summary median_rot_deg {}", fmt_value(report.median_rot)).unwrap();
    writeln!(out, "summary mean_rot_deg {}", fmt_value(report.mean_rot)).unwrap();
    if let Some(n) = report.nees_mean {
        writeln!(out, "summary nees_mean {}", fmt_value(n)).unwrap();
    }
    writeln!(out, "summary headline {}", report.summary()).unwrap();
    Ok(out)
}

/// Reads back the per-frame lists of [`render_report`] and recomputes the
/// statistics from them.
pub fn parse_report(text: &str) -> Result<ErrorReport> {
    let mut trans = Vec::new();
    let mut rot = Vec::new();
    let mut nees_mean = None;
    for (idx, line) in text.lines().enumerate() {
        let bad = |message: String| Error::Parse {
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("not a number: {s:?}")));
        match fields.first() {
            None => {}
            Some(f) if f.starts_with('#') => {}
            Some(&"frame") => {
                if fields.len() != 5 {
                    return Err(bad(format!("frame record has {} fields", fields.len())));
                }
                trans.push(num(fields[3])?);
                rot.push(num(fields[4])?);
            }
            Some(&"summary") => {
                if fields.get(1) == Some(&"nees_mean") {
                    nees_mean = Some(num(fields.get(2).copied().unwrap_or(""))?);
                }
            }
            Some(other) => return Err(bad(format!("unknown record {other:?}"))),
        }
    }
    let mut report = ErrorReport::from_errors(trans, rot)?;
    report.nees_mean = nees_mean;
    Ok(report)
}

/// Whitespace-separated `t x y z err_trans err_rot` columns for plotting.
pub fn render_plot_dump(report: &ErrorReport, estimate: &Trajectory) -> Result<String> {
    if estimate.len() != report.len() {
        return Err(Error::LengthMismatch {
            estimate: estimate.len(),
            truth: report.len(),
        });
    }
    let mut out = String::from("# t x y z err_trans_m err_rot_deg\n");
    for (r, (et, er)) in estimate
        .records()
        .iter()
        .zip(report.trans_errors.iter().zip(&report.rot_errors_deg))
    {
        let p = r.pose.translation();
        writeln!(
            out,
            "{} {} {} {} {} {}",
            fmt_value(r.timestamp),
            fmt_value(p.x),
            fmt_value(p.y),
            fmt_value(p.z),
            fmt_value(*et),
            fmt_value(*er)
        )
        .unwrap();
    }
    Ok(out)
}
