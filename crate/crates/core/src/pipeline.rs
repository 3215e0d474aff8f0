//! Scenario configuration and the simulate → fuse → evaluate pipeline.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ekf::{EkfState, KalmanStepReport};
use crate::error::{Error, Result};
use crate::eval::{self, ErrorReport, NeesSeries, TIMESTAMP_TOLERANCE};
use crate::lie::{log, GroupPose, TangentPose};
use crate::sim::{
    derive_seed, emit_absolute, emit_relative, generate_truth, stamp, EstimatorNoiseModel,
    TrajectoryGenerator, TrajectoryKind,
};
use crate::traj_io::{self, Trajectory, TrajectoryRecord};
use crate::uncertainty::{BlockDiagonalCovariance, PoseGaussian, Role};

/// Everything needed to reproduce a batch of simulated runs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub generator: TrajectoryGenerator,
    pub absolute: EstimatorNoiseModel,
    pub relative: EstimatorNoiseModel,
    pub runs: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ScenarioConfig {
    /// Circle of 1000 poses with APR noise 0.25 m / 0.05 rad and RPR noise
    /// 0.01 m / 0.002 rad per step, calibrated covariances.
    fn default() -> Self {
        let steps = 1000;
        Self {
            generator: TrajectoryGenerator::new(
                TrajectoryKind::Circle,
                steps,
                0.1,
                TAU / (steps - 1) as f64,
                0,
            ),
            absolute: EstimatorNoiseModel::new(0.25, 0.05, 0),
            relative: EstimatorNoiseModel::new(0.01, 0.002, 0),
            runs: 1,
            seed: 0,
            out: PathBuf::from("posefuse-out"),
        }
    }
}

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bias(key: &str, value: &str) -> Result<TangentPose> {
    let parts: Vec<f64> = value
        .split(',')
        .map(|s| parse_field(key, s.trim()))
        .collect::<Result<_>>()?;
    let arr: [f64; 6] = parts
        .try_into()
        .map_err(|_| Error::Config(format!("{key}: expected 6 comma-separated values")))?;
    Ok(TangentPose::from_components(arr))
}

impl ScenarioConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment. A circle without an explicit `turn_rate` closes exactly
    /// once over its length.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", idx + 1))
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_entries(&entries)
    }

    pub fn from_entries(entries: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        let mut explicit_turn = false;
        for (key, value) in entries {
            let (k, v) = (key.as_str(), value.as_str());
            match k {
                "trajectory" => cfg.generator.kind = parse_field(k, v)?,
                "steps" => cfg.generator.step_count = parse_field(k, v)?,
                "step_length" => cfg.generator.step_length = parse_field(k, v)?,
                "turn_rate" => {
                    cfg.generator.turn_rate = parse_field(k, v)?;
                    explicit_turn = true;
                }
                "rate_hz" => cfg.generator.rate_hz = parse_field(k, v)?,
                "abs_sigma_trans" => cfg.absolute.sigma_trans = parse_field(k, v)?,
                "abs_sigma_rot" => cfg.absolute.sigma_rot = parse_field(k, v)?,
                "abs_reported_scale" => cfg.absolute.reported_scale = parse_field(k, v)?,
                "abs_bias" => cfg.absolute.bias = parse_bias(k, v)?,
                "rel_sigma_trans" => cfg.relative.sigma_trans = parse_field(k, v)?,
                "rel_sigma_rot" => cfg.relative.sigma_rot = parse_field(k, v)?,
                "rel_reported_scale" => cfg.relative.reported_scale = parse_field(k, v)?,
                "rel_bias" => cfg.relative.bias = parse_bias(k, v)?,
                "runs" => cfg.runs = parse_field(k, v)?,
                "seed" => cfg.seed = parse_field(k, v)?,
                "out" => cfg.out = PathBuf::from(v),
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        if !explicit_turn && cfg.generator.kind == TrajectoryKind::Circle && cfg.generator.step_count > 1 {
            cfg.generator.turn_rate = TAU / (cfg.generator.step_count - 1) as f64;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.absolute
            .validate()
            .map_err(|e| Error::Config(format!("absolute noise: {e}")))?;
        self.relative
            .validate()
            .map_err(|e| Error::Config(format!("relative noise: {e}")))?;
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        Ok(())
    }

    /// Generator and noise models for one run, with sub-seeds mixed from
    /// the base seed, a role tag and the run index.
    pub fn for_run(&self, run: usize) -> (TrajectoryGenerator, EstimatorNoiseModel, EstimatorNoiseModel) {
        let run = run as u64;
        let generator = TrajectoryGenerator {
            seed: derive_seed(self.seed, "truth", run),
            ..self.generator.clone()
        };
        let absolute = EstimatorNoiseModel {
            seed: derive_seed(self.seed, "absolute", run),
            ..self.absolute.clone()
        };
        let relative = EstimatorNoiseModel {
            seed: derive_seed(self.seed, "relative", run),
            ..self.relative.clone()
        };
        (generator, absolute, relative)
    }
}

/// Truth plus the two estimator streams. Relative records carry the
/// timestamp of the later frame and store the control as the pose
/// `exp(u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedRun {
    pub truth: Trajectory,
    pub absolute: Trajectory,
    pub relative: Trajectory,
}

pub fn simulate_run(config: &ScenarioConfig, run: usize) -> Result<SimulatedRun> {
    let (generator, abs_model, rel_model) = config.for_run(run);
    let truth = generate_truth(&generator)?;
    let timestamps: Vec<f64> = truth.timestamps().collect();
    let absolute = stamp(&timestamps, &emit_absolute(&truth, &abs_model)?)?;
    let relative = stamp(&timestamps[1..], &emit_relative(&truth, &rel_model)?)?;
    Ok(SimulatedRun {
        truth,
        absolute,
        relative,
    })
}

/// File names for run `run` of a batch of `runs`.
pub fn run_file_names(run: usize, runs: usize) -> [String; 3] {
    let suffix = if runs > 1 { format!("_{run:03}") } else { String::new() };
    [
        format!("truth{suffix}.tum"),
        format!("absolute{suffix}.tum"),
        format!("relative{suffix}.tum"),
    ]
}

/// Writes truth (TUM), absolute and relative streams (TUM with covariance)
/// for every run into `config.out`. Returns the written paths.
pub fn write_simulation(config: &ScenarioConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    fs::create_dir_all(&config.out)?;
    let mut written = Vec::new();
    for run in 0..config.runs {
        let sim = simulate_run(config, run)?;
        let [t, a, r] = run_file_names(run, config.runs);
        let paths = [config.out.join(t), config.out.join(a), config.out.join(r)];
        fs::write(&paths[0], traj_io::tum_to_string(&sim.truth))?;
        fs::write(&paths[1], traj_io::tum_cov_to_string(&sim.absolute)?)?;
        fs::write(&paths[2], traj_io::tum_cov_to_string(&sim.relative)?)?;
        written.extend(paths);
    }
    Ok(written)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FuseMode {
    /// Relative controls predict, absolute measurements correct.
    Ekf,
    /// Absolute stream passed through unchanged.
    AprOnly,
    /// Relative controls integrated from the starting pose, no correction.
    DeadReckon,
}

impl FromStr for FuseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ekf" => Ok(Self::Ekf),
            "apr-only" => Ok(Self::AprOnly),
            "dead-reckon" => Ok(Self::DeadReckon),
            other => Err(Error::Config(format!("unknown fuse mode {other:?}"))),
        }
    }
}

/// Fused trajectory with full posterior covariances, plus the filter
/// reports (one per relative record consumed).
#[derive(Clone, Debug, PartialEq)]
pub struct FuseOutput {
    pub trajectory: Trajectory,
    pub steps: Vec<(f64, KalmanStepReport)>,
}

impl FuseOutput {
    pub fn states(&self) -> Result<Vec<PoseGaussian>> {
        self.trajectory
            .records()
            .iter()
            .map(|r| {
                let cov = r.covariance.ok_or_else(|| {
                    Error::InvalidArgument("fused record without covariance".into())
                })?;
                PoseGaussian::new(r.pose, cov, Role::State)
            })
            .collect()
    }
}

fn gaussian_from_record(r: &TrajectoryRecord, role: Role, what: &str) -> Result<PoseGaussian> {
    let cov = r.covariance.ok_or_else(|| {
        Error::InvalidArgument(format!("{what} record at t={} has no covariance", r.timestamp))
    })?;
    PoseGaussian::new(r.pose, cov, role)
}

/// Runs the requested fusion mode. The filter starts from the first
/// absolute record; relative records at or before that time are skipped,
/// and a correction is applied whenever an absolute record matches a
/// relative timestamp within [`TIMESTAMP_TOLERANCE`].
///
/// Dead reckoning starts from the first absolute record when there is one,
/// otherwise from the identity at the first relative timestamp (that first
/// control is then applied to reach the next record).
pub fn fuse(absolute: &Trajectory, relative: &Trajectory, mode: FuseMode) -> Result<FuseOutput> {
    if absolute.is_empty() && relative.is_empty() {
        return Err(Error::InvalidArgument("both input streams are empty".into()));
    }
    if mode == FuseMode::AprOnly {
        if absolute.is_empty() {
            return Err(Error::InvalidArgument("apr-only mode needs an absolute stream".into()));
        }
        return Ok(FuseOutput {
            trajectory: absolute.clone(),
            steps: Vec::new(),
        });
    }
    if relative.is_empty() {
        return Err(Error::InvalidArgument("relative stream is empty".into()));
    }

    let (t0, first) = match absolute.records().first() {
        Some(r) => (r.timestamp, gaussian_from_record(r, Role::Measurement, "absolute")?),
        None if mode == FuseMode::DeadReckon => {
            let start = relative.records()[0].timestamp - TIMESTAMP_TOLERANCE * 10.0;
            (
                start,
                PoseGaussian::from_block(
                    GroupPose::identity(),
                    BlockDiagonalCovariance::floored(0.0, 0.0),
                    Role::Measurement,
                ),
            )
        }
        None => {
            return Err(Error::InvalidArgument(
                "ekf mode needs an initial absolute measurement".into(),
            ))
        }
    };

    let mut state = EkfState::new();
    state.initialize(&first)?;
    let mut out = Trajectory::default();
    if !absolute.is_empty() {
        out.push(TrajectoryRecord::with_covariance(t0, *first.mean(), *first.covariance()))?;
    }

    let abs_records = absolute.records();
    let mut cursor = 1;
    let mut steps = Vec::with_capacity(relative.len());
    for rel in relative.records() {
        if rel.timestamp <= t0 + TIMESTAMP_TOLERANCE {
            continue;
        }
        let control = gaussian_from_record(rel, Role::Control, "relative")?;
        let measurement = if mode == FuseMode::Ekf {
            while cursor < abs_records.len() && abs_records[cursor].timestamp < rel.timestamp - TIMESTAMP_TOLERANCE {
                cursor += 1;
            }
            match abs_records.get(cursor) {
                Some(a) if (a.timestamp - rel.timestamp).abs() <= TIMESTAMP_TOLERANCE => {
                    cursor += 1;
                    Some(gaussian_from_record(a, Role::Measurement, "absolute")?)
                }
                _ => None,
            }
        } else {
            None
        };
        let report = state.step(&control, measurement.as_ref())?;
        out.push(TrajectoryRecord::with_covariance(
            rel.timestamp,
            *report.posterior.mean(),
            *report.posterior.covariance(),
        ))?;
        steps.push((rel.timestamp, report));
    }
    Ok(FuseOutput {
        trajectory: out,
        steps,
    })
}

/// Whitespace-separated per-step audit lines.
pub fn render_step_reports(steps: &[(f64, KalmanStepReport)]) -> String {
    let fmt = |v: f64| if v == 0.0 { "0".to_string() } else { format!("{v}") };
    let mut out = String::from(
        "# t corrected near_pi trace_prior trace_posterior residual[6] F[36] K[36] posterior_cov[36] (row-major; absent terms are 0)\n",
    );
    for (t, r) in steps {
        let mut fields = vec![
            fmt(*t),
            (r.corrected() as u8).to_string(),
            (r.residual_near_pi as u8).to_string(),
            fmt(r.prior.covariance().trace()),
            fmt(r.posterior.covariance().trace()),
        ];
        let residual = r.residual.unwrap_or_else(TangentPose::zero).to_vector();
        fields.extend(residual.iter().map(|&v| fmt(v)));
        for m in [
            r.transition_jacobian.unwrap_or_default(),
            r.gain.unwrap_or_default(),
            *r.posterior.covariance(),
        ] {
            for i in 0..6 {
                for j in 0..6 {
                    fields.push(fmt(m[(i, j)]));
                }
            }
        }
        writeln!(out, "{}", fields.join(" ")).unwrap();
    }
    out
}

/// Reads a TUM-cov relative stream into controls, converting each pose to
/// its tangent so the caller can inspect near-π motions.
pub fn controls_from_relative(relative: &Trajectory) -> Result<Vec<(f64, TangentPose, PoseGaussian)>> {
    relative
        .records()
        .iter()
        .map(|r| {
            let g = gaussian_from_record(r, Role::Control, "relative")?;
            Ok((r.timestamp, log(&r.pose), g))
        })
        .collect()
}

pub fn read_tum(path: &Path) -> Result<Trajectory> {
    traj_io::parse_tum(std::io::BufReader::new(fs::File::open(path)?))
}

pub fn read_tum_cov(path: &Path) -> Result<Trajectory> {
    traj_io::parse_tum_cov(std::io::BufReader::new(fs::File::open(path)?))
}

/// Reads either TUM flavour, picking the parser from the field count of
/// the first data line.
pub fn read_any_tum(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path)?;
    let fields = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().count())
        .unwrap_or(8);
    if fields == 10 {
        traj_io::parse_tum_cov(text.as_bytes())
    } else {
        traj_io::parse_tum(text.as_bytes())
    }
}

/// Error report of an estimate against truth; NEES is attached when every
/// estimate record carries a covariance.
pub fn evaluate(estimate: &Trajectory, truth: &Trajectory) -> Result<ErrorReport> {
    let mut report = eval::pose_errors(estimate, truth)?;
    if estimate.records().iter().all(|r| r.covariance.is_some()) {
        let states: Vec<PoseGaussian> = estimate
            .records()
            .iter()
            .map(|r| gaussian_from_record(r, Role::State, "estimate"))
            .collect::<Result<_>>()?;
        let truth_poses: Vec<GroupPose> = truth.poses().copied().collect();
        report.nees_mean = Some(eval::nees(&states, &truth_poses)?.mean);
    }
    Ok(report)
}

/// NEES of the EKF over one simulated run, against the truth at each
/// fused timestamp.
pub fn run_nees(sim: &SimulatedRun) -> Result<NeesSeries> {
    let fused = fuse(&sim.absolute, &sim.relative, FuseMode::Ekf)?;
    let truth: Vec<GroupPose> = sim.truth.poses().copied().collect();
    eval::nees(&fused.states()?, &truth)
}
