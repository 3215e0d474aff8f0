//! Trajectories and their on-disk formats.
//!
//! * TUM: `timestamp tx ty tz qx qy qz qw`
//! * TUM with covariance: TUM plus `sigma_trans_sq sigma_rot_sq`
//! * 4×4 homogeneous matrices, one frame per file (7-Scenes layout)
//!
//! `#` starts a comment line; blank lines are ignored. Quaternions are
//! `(x, y, z, w)` on disk and are normalized on load.

use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Matrix6, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::lie::GroupPose;
use crate::uncertainty::BlockDiagonalCovariance;

/// Frame rate assigned to frame-indexed datasets that carry no timestamps.
pub const DEFAULT_FRAME_RATE_HZ: f64 = 30.0;

/// Largest departure from orthonormality that is projected away rather
/// than rejected.
pub const ROTATION_REPAIR_LIMIT: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub timestamp: f64,
    pub pose: GroupPose,
    pub covariance: Option<Matrix6<f64>>,
}

impl TrajectoryRecord {
    pub fn new(timestamp: f64, pose: GroupPose) -> Self {
        Self {
            timestamp,
            pose,
            covariance: None,
        }
    }

    pub fn with_covariance(timestamp: f64, pose: GroupPose, covariance: Matrix6<f64>) -> Self {
        Self {
            timestamp,
            pose,
            covariance: Some(covariance),
        }
    }
}

/// Timestamped poses with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn new(records: Vec<TrajectoryRecord>) -> Result<Self> {
        let mut t = Self::default();
        for r in records {
            t.push(r)?;
        }
        Ok(t)
    }

    pub fn from_poses(timestamps: &[f64], poses: &[GroupPose]) -> Result<Self> {
        if timestamps.len() != poses.len() {
            return Err(Error::InvalidArgument(format!(
                "{} timestamps for {} poses",
                timestamps.len(),
                poses.len()
            )));
        }
        Self::new(
            timestamps
                .iter()
                .zip(poses)
                .map(|(&t, &p)| TrajectoryRecord::new(t, p))
                .collect(),
        )
    }

    pub fn push(&mut self, record: TrajectoryRecord) -> Result<()> {
        if !record.timestamp.is_finite() {
            return Err(Error::InvalidArgument("non-finite timestamp".into()));
        }
        if let Some(last) = self.records.last() {
            if record.timestamp <= last.timestamp {
                return Err(Error::InvalidArgument(format!(
                    "timestamp {} does not follow {}",
                    record.timestamp, last.timestamp
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn poses(&self) -> impl Iterator<Item = &GroupPose> + '_ {
        self.records.iter().map(|r| &r.pose)
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.timestamp)
    }
}

fn parse_line_values(line: &str, lineno: usize, expected: usize) -> Result<Vec<f64>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != expected {
        return Err(Error::Parse {
            line: lineno,
            message: format!("expected {expected} fields, found {}", fields.len()),
        });
    }
    fields
        .iter()
        .map(|f| {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("not a number: {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("non-finite value {f:?}"),
                });
            }
            Ok(v)
        })
        .collect()
}

fn pose_from_tum_fields(v: &[f64], lineno: usize) -> Result<GroupPose> {
    let q = Quaternion::new(v[7], v[4], v[5], v[6]);
    if q.norm() < 1e-9 {
        return Err(Error::Parse {
            line: lineno,
            message: "zero quaternion".into(),
        });
    }
    Ok(GroupPose::new(q, Vector3::new(v[1], v[2], v[3])))
}

fn parse_lines<R, F>(reader: R, expected: usize, mut build: F) -> Result<Trajectory>
where
    R: BufRead,
    F: FnMut(&[f64], usize) -> Result<TrajectoryRecord>,
{
    let mut traj = Trajectory::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let values = parse_line_values(trimmed, lineno, expected)?;
        let record = build(&values, lineno)?;
        traj.push(record).map_err(|e| Error::Parse {
            line: lineno,
            message: match e {
                Error::InvalidArgument(m) => m,
                other => other.to_string(),
            },
        })?;
    }
    Ok(traj)
}

pub fn parse_tum<R: BufRead>(reader: R) -> Result<Trajectory> {
    parse_lines(reader, 8, |v, lineno| {
        Ok(TrajectoryRecord::new(v[0], pose_from_tum_fields(v, lineno)?))
    })
}

pub fn parse_tum_cov<R: BufRead>(reader: R) -> Result<Trajectory> {
    parse_lines(reader, 10, |v, lineno| {
        let cov = BlockDiagonalCovariance::new(v[8], v[9]).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        Ok(TrajectoryRecord::with_covariance(
            v[0],
            pose_from_tum_fields(v, lineno)?,
            cov.to_matrix(),
        ))
    })
}

fn pose_from_matrix_text(text: &str, frame: usize) -> Result<GroupPose> {
    let frame_err = |message: String| Error::Frame { frame, message };
    let rows: Vec<&str> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect();
    if rows.len() != 4 {
        return Err(frame_err(format!("expected 4 rows, found {}", rows.len())));
    }
    let mut m = [[0.0f64; 4]; 4];
    for (i, row) in rows.iter().enumerate() {
        let values: Vec<&str> = row.split_whitespace().collect();
        if values.len() != 4 {
            return Err(frame_err(format!(
                "row {} has {} columns, expected 4",
                i + 1,
                values.len()
            )));
        }
        for (j, v) in values.iter().enumerate() {
            let x: f64 = v
                .parse()
                .map_err(|_| frame_err(format!("not a number: {v:?}")))?;
            if !x.is_finite() {
                return Err(frame_err(format!("non-finite value {v:?}")));
            }
            m[i][j] = x;
        }
    }

    let bottom = [0.0, 0.0, 0.0, 1.0];
    if m[3].iter().zip(bottom).any(|(a, b)| (a - b).abs() > 1e-6) {
        return Err(frame_err(format!("bottom row {:?} is not (0, 0, 0, 1)", m[3])));
    }

    let block = Matrix3::from_fn(|i, j| m[i][j]);
    let deviation = (block.transpose() * block - Matrix3::identity()).amax();
    if deviation >= ROTATION_REPAIR_LIMIT || block.determinant() <= 0.0 {
        return Err(frame_err(format!(
            "3x3 block is not a rotation (orthonormality deviation {deviation:e})"
        )));
    }
    let rotation = if deviation > 0.0 {
        let svd = block.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let projected = u * v_t;
        log::debug!("frame {frame}: projected rotation block (deviation {deviation:e})");
        projected
    } else {
        block
    };
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation));
    Ok(GroupPose::from_parts(q, Vector3::new(m[0][3], m[1][3], m[2][3])))
}

/// Parses one 4×4 homogeneous matrix per frame. Frame `i` is stamped
/// `i / rate_hz` seconds.
pub fn parse_matrix4<S: AsRef<str>>(frames: &[S], rate_hz: f64) -> Result<Trajectory> {
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid frame rate {rate_hz}")));
    }
    let mut traj = Trajectory::default();
    for (i, text) in frames.iter().enumerate() {
        let pose = pose_from_matrix_text(text.as_ref(), i)?;
        traj.push(TrajectoryRecord::new(i as f64 / rate_hz, pose))?;
    }
    Ok(traj)
}

/// Shortest representation that parses back to the same value; zeros
/// (including −0) print as `0`.
fn format_value(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

/// Nanosecond fixed-point when it is exact, otherwise the shortest exact
/// representation.
fn format_timestamp(t: f64) -> String {
    let fixed = format!("{t:.9}");
    if fixed.parse::<f64>() == Ok(t) {
        fixed
    } else {
        format!("{t}")
    }
}

fn tum_fields(record: &TrajectoryRecord) -> Vec<String> {
    let pose = record.pose.canonical();
    let t = pose.translation();
    let q = pose.rotation();
    let mut out = vec![format_timestamp(record.timestamp)];
    out.extend([t.x, t.y, t.z, q.i, q.j, q.k, q.w].map(format_value));
    out
}

pub fn write_tum<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    for r in traj.records() {
        writeln!(out, "{}", tum_fields(r).join(" "))?;
    }
    Ok(())
}

/// Writes poses with their block-averaged variances. Every record must
/// carry a covariance.
pub fn write_tum_cov<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    for (i, r) in traj.records().iter().enumerate() {
        let cov = r.covariance.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("record {i} has no covariance"))
        })?;
        let block = BlockDiagonalCovariance::from_matrix_diagonal(cov);
        let mut fields = tum_fields(r);
        fields.push(format_value(block.sigma_trans_sq()));
        fields.push(format_value(block.sigma_rot_sq()));
        writeln!(out, "{}", fields.join(" "))?;
    }
    Ok(())
}

pub fn tum_to_string(traj: &Trajectory) -> String {
    let mut buf = Vec::new();
    write_tum(traj, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

pub fn tum_cov_to_string(traj: &Trajectory) -> Result<String> {
    let mut buf = Vec::new();
    write_tum_cov(traj, &mut buf)?;
    Ok(String::from_utf8(buf).expect("ascii output"))
}
