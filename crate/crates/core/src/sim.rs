//! Synthetic ground truth and estimator noise.
//!
//! The absolute and relative estimators are emulated by perturbing the
//! true poses in the right-perturbation tangent chart and reporting a
//! block-diagonal covariance, optionally mis-scaled to model over- or
//! under-confidence.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::lie::{compose, inverse, oplus, GroupPose, TangentPose};
use crate::traj_io::{Trajectory, TrajectoryRecord, DEFAULT_FRAME_RATE_HZ};
use crate::uncertainty::{BlockDiagonalCovariance, PoseGaussian, Role};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    Circle,
    FigureEight,
    Straight,
    RandomWalk,
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(Self::Circle),
            "figure-eight" => Ok(Self::FigureEight),
            "straight" => Ok(Self::Straight),
            "random-walk" => Ok(Self::RandomWalk),
            other => Err(Error::Config(format!("unknown trajectory kind {other:?}"))),
        }
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Circle => "circle",
            Self::FigureEight => "figure-eight",
            Self::Straight => "straight",
            Self::RandomWalk => "random-walk",
        })
    }
}

/// Planar or random 3-D ground-truth motion. `step_count` is the number of
/// poses, so a trajectory has `step_count − 1` motions.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryGenerator {
    pub kind: TrajectoryKind,
    pub step_count: usize,
    /// Meters per step.
    pub step_length: f64,
    /// Radians per step.
    pub turn_rate: f64,
    pub seed: u64,
    pub rate_hz: f64,
}

impl TrajectoryGenerator {
    pub fn new(kind: TrajectoryKind, step_count: usize, step_length: f64, turn_rate: f64, seed: u64) -> Self {
        Self {
            kind,
            step_count,
            step_length,
            turn_rate,
            seed,
            rate_hz: DEFAULT_FRAME_RATE_HZ,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_count < 2 {
            return Err(Error::Config(format!("step_count must be at least 2, got {}", self.step_count)));
        }
        if !(self.step_length >= 0.0 && self.step_length.is_finite()) {
            return Err(Error::Config(format!("invalid step_length {}", self.step_length)));
        }
        if !self.turn_rate.is_finite() {
            return Err(Error::Config(format!("invalid turn_rate {}", self.turn_rate)));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(Error::Config(format!("invalid rate_hz {}", self.rate_hz)));
        }
        Ok(())
    }
}

/// Noise emulating one estimator branch.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorNoiseModel {
    /// Per-axis translation standard deviation (m).
    pub sigma_trans: f64,
    /// Per-axis rotation standard deviation (rad).
    pub sigma_rot: f64,
    /// Reported σ = `reported_scale` × true σ.
    pub reported_scale: f64,
    pub bias: TangentPose,
    pub seed: u64,
}

impl EstimatorNoiseModel {
    pub fn new(sigma_trans: f64, sigma_rot: f64, seed: u64) -> Self {
        Self {
            sigma_trans,
            sigma_rot,
            reported_scale: 1.0,
            bias: TangentPose::zero(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_trans", self.sigma_trans), ("sigma_rot", self.sigma_rot)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.reported_scale > 0.0 && self.reported_scale.is_finite()) {
            return Err(Error::Config(format!(
                "reported_scale must be positive, got {}",
                self.reported_scale
            )));
        }
        if !self.bias.is_finite() {
            return Err(Error::Config("bias must be finite".into()));
        }
        Ok(())
    }

    pub fn reported_covariance(&self) -> BlockDiagonalCovariance {
        let st = self.reported_scale * self.sigma_trans;
        let sr = self.reported_scale * self.sigma_rot;
        BlockDiagonalCovariance::floored(st * st, sr * sr)
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> TangentPose {
        let mut n = || -> f64 { StandardNormal.sample(rng) };
        let rho = Vector3::new(n(), n(), n()) * self.sigma_trans;
        let phi = Vector3::new(n(), n(), n()) * self.sigma_rot;
        self.bias + TangentPose::new(rho, phi)
    }
}

/// Mixes a base seed with a role tag and run index (splitmix64 over an
/// FNV-1a hash of the tag).
pub fn derive_seed(seed: u64, tag: &str, run: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h ^ run.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn planar_step(length: f64, yaw: f64) -> GroupPose {
    GroupPose::from_parts(
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        Vector3::new(length, 0.0, 0.0),
    )
}

fn random_step(rng: &mut ChaCha8Rng, length: f64, max_turn: f64) -> GroupPose {
    let axis = loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    let angle = max_turn.abs() * rng.random::<f64>();
    let heading = Vector3::new(1.0, rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)).normalize();
    let magnitude = length * rng.random_range(0.5..=1.0);
    GroupPose::from_parts(
        UnitQuaternion::from_scaled_axis(axis * angle),
        heading * magnitude,
    )
}

/// Ground-truth trajectory; pose `k` is stamped `k / rate_hz`.
pub fn generate_truth(gen: &TrajectoryGenerator) -> Result<Trajectory> {
    gen.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(gen.seed);
    let lap = if gen.turn_rate != 0.0 {
        ((TAU / gen.turn_rate.abs()).round() as usize).max(1)
    } else {
        usize::MAX
    };

    let mut pose = GroupPose::identity();
    let mut records = Vec::with_capacity(gen.step_count);
    for k in 0..gen.step_count {
        records.push(TrajectoryRecord::new(k as f64 / gen.rate_hz, pose));
        let motion = match gen.kind {
            TrajectoryKind::Straight => planar_step(gen.step_length, 0.0),
            TrajectoryKind::Circle => planar_step(gen.step_length, gen.turn_rate),
            TrajectoryKind::FigureEight => {
                let sign = if (k / lap) % 2 == 0 { 1.0 } else { -1.0 };
                planar_step(gen.step_length, sign * gen.turn_rate)
            }
            TrajectoryKind::RandomWalk => random_step(&mut rng, gen.step_length, gen.turn_rate),
        };
        pose = compose(&pose, &motion);
    }
    Trajectory::new(records)
}

/// Absolute-pose measurements `truth_t ⊕ (bias + n_t)`.
pub fn emit_absolute(truth: &Trajectory, model: &EstimatorNoiseModel) -> Result<Vec<PoseGaussian>> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let cov = model.reported_covariance();
    Ok(truth
        .poses()
        .map(|p| PoseGaussian::from_block(oplus(p, &model.draw(&mut rng)), cov, Role::Measurement))
        .collect())
}

/// Relative-motion controls `(truth_{t−1}⁻¹ · truth_t) ⊕ (bias + n_t)`, one
/// per consecutive pair.
pub fn emit_relative(truth: &Trajectory, model: &EstimatorNoiseModel) -> Result<Vec<PoseGaussian>> {
    model.validate()?;
    if truth.len() < 2 {
        return Err(Error::InvalidArgument(
            "relative emission needs at least two poses".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let cov = model.reported_covariance();
    let poses: Vec<&GroupPose> = truth.poses().collect();
    Ok(poses
        .windows(2)
        .map(|w| {
            let motion = compose(&inverse(w[0]), w[1]);
            PoseGaussian::from_block(oplus(&motion, &model.draw(&mut rng)), cov, Role::Control)
        })
        .collect())
}

/// Integrates controls from `initial` without correction. Returns
/// `controls.len() + 1` poses, starting with `initial`.
pub fn dead_reckon(initial: &GroupPose, controls: &[PoseGaussian]) -> Result<Vec<GroupPose>> {
    if controls.is_empty() {
        return Err(Error::InvalidArgument("dead reckoning needs at least one control".into()));
    }
    let mut out = Vec::with_capacity(controls.len() + 1);
    out.push(*initial);
    let mut pose = *initial;
    for u in controls {
        pose = compose(&pose, u.mean());
        out.push(pose);
    }
    Ok(out)
}

/// Pairs emitted gaussians with timestamps into a trajectory carrying
/// covariances.
pub fn stamp(timestamps: &[f64], gaussians: &[PoseGaussian]) -> Result<Trajectory> {
    if timestamps.len() != gaussians.len() {
        return Err(Error::InvalidArgument(format!(
            "{} timestamps for {} estimates",
            timestamps.len(),
            gaussians.len()
        )));
    }
    Trajectory::new(
        timestamps
            .iter()
            .zip(gaussians)
            .map(|(&t, g)| TrajectoryRecord::with_covariance(t, *g.mean(), *g.covariance()))
            .collect(),
    )
}
