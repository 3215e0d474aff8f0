//! Built-in property checks, runnable from the CLI.
//!
//! Each property draws random trials from a seeded generator and records
//! the worst error against its tolerance. The adjoint used by the Jacobian
//! cross-checks is injectable so a deliberately broken implementation can
//! be shown to fail.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{Matrix6, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::ekf::{bayes_grid_oracle, translation_axis_correct, EkfState};
use crate::error::{Error, Result};
use crate::lie::{
    adjoint, compose, exp, inverse, log, numeric_jacobian, ominus, oplus, GroupPose, TangentPose,
};
use crate::pipeline::{run_nees, simulate_run, ScenarioConfig};
use crate::uncertainty::{
    fit_covariance, floor_slack, nll_loss, LogCovarianceParams, PoseGaussian, Role, DEFAULT_FIT_ITERATIONS,
    DEFAULT_FIT_LEARNING_RATE, VARIANCE_FLOOR,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Lie,
    Losses,
    Filter,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lie" => Ok(Self::Lie),
            "losses" => Ok(Self::Losses),
            "filter" => Ok(Self::Filter),
            "all" => Ok(Self::All),
            other => Err(Error::Config(format!("unknown check suite {other:?}"))),
        }
    }
}

pub type AdjointFn = fn(&GroupPose) -> Matrix6<f64>;

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub seed: u64,
    pub adjoint: AdjointFn,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            adjoint,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyOutcome {
    pub suite: &'static str,
    pub name: &'static str,
    pub trials: usize,
    pub passed: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl PropertyOutcome {
    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }
}

type Trial<'a> = Box<dyn FnMut(&mut ChaCha8Rng) -> Result<f64> + 'a>;

struct Property<'a> {
    suite: &'static str,
    name: &'static str,
    trials: usize,
    tolerance: f64,
    trial: Trial<'a>,
}

fn run_property(mut p: Property<'_>, rng: &mut ChaCha8Rng) -> PropertyOutcome {
    let mut passed = 0;
    let mut worst = 0.0f64;
    for _ in 0..p.trials {
        match (p.trial)(rng) {
            Ok(err) if err <= p.tolerance => {
                passed += 1;
                worst = worst.max(err);
            }
            Ok(err) => worst = worst.max(if err.is_nan() { f64::INFINITY } else { err }),
            Err(_) => worst = f64::INFINITY,
        }
    }
    PropertyOutcome {
        suite: p.suite,
        name: p.name,
        trials: p.trials,
        passed,
        worst,
        tolerance: p.tolerance,
    }
}

fn uniform3(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| scale * rng.random_range(-1.0..1.0))
}

/// Tangent with translation components in `[-trans, trans]` and rotation
/// angle below `max_angle` about a uniformly random axis.
pub fn random_tangent(rng: &mut ChaCha8Rng, trans: f64, max_angle: f64) -> TangentPose {
    let axis = Vector3::from_fn(|_, _| StandardNormal.sample(rng)).normalize();
    let angle = rng.random_range(0.0..max_angle);
    TangentPose::new(uniform3(rng, trans), axis * angle)
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> GroupPose {
    exp(&random_tangent(rng, 5.0, PI))
}

fn max_abs(m: &Matrix6<f64>) -> f64 {
    m.amax()
}

fn lie_properties(opts: CheckOptions) -> Vec<Property<'static>> {
    let ad = opts.adjoint;
    vec![
        Property {
            suite: "lie",
            name: "exp_log_roundtrip",
            trials: 100_000,
            tolerance: 1e-9,
            trial: Box::new(|rng| {
                let xi = random_tangent(rng, 5.0, PI - 0.01);
                Ok((log(&exp(&xi)) - xi).norm() / (1.0 + xi.norm()))
            }),
        },
        Property {
            suite: "lie",
            name: "associativity",
            trials: 10_000,
            tolerance: 1e-12,
            trial: Box::new(|rng| {
                let (a, b, c) = (random_pose(rng), random_pose(rng), random_pose(rng));
                Ok(compose(&compose(&a, &b), &c).distance(&compose(&a, &compose(&b, &c))))
            }),
        },
        Property {
            suite: "lie",
            name: "identity_and_inverse",
            trials: 10_000,
            tolerance: 1e-12,
            trial: Box::new(|rng| {
                let g = random_pose(rng);
                let id = GroupPose::identity();
                Ok(compose(&g, &id)
                    .distance(&g)
                    .max(compose(&id, &g).distance(&g))
                    .max(compose(&g, &inverse(&g)).distance(&id))
                    .max(compose(&inverse(&g), &g).distance(&id)))
            }),
        },
        Property {
            suite: "lie",
            name: "oplus_ominus_duality",
            trials: 10_000,
            tolerance: 1e-9,
            trial: Box::new(|rng| {
                let x = random_pose(rng);
                let xi = random_tangent(rng, 5.0, PI - 0.01);
                let y = random_pose(rng);
                let back = (ominus(&oplus(&x, &xi), &x) - xi).norm() / (1.0 + xi.norm());
                Ok(back.max(oplus(&x, &ominus(&y, &x)).distance(&y)))
            }),
        },
        Property {
            suite: "lie",
            name: "adjoint_homomorphism",
            trials: 1_000,
            tolerance: 1e-9,
            trial: Box::new(move |rng| {
                let (a, b) = (random_pose(rng), random_pose(rng));
                Ok(max_abs(&(ad(&a) * ad(&b) - ad(&compose(&a, &b)))))
            }),
        },
        Property {
            suite: "lie",
            name: "adjoint_vs_numeric_jacobian",
            trials: 1_000,
            tolerance: 1e-6,
            trial: Box::new(move |rng| {
                let g = random_pose(rng);
                let g_inv = inverse(&g);
                let num = numeric_jacobian(
                    |xi| log(&compose(&compose(&g, &exp(xi)), &g_inv)),
                    &TangentPose::zero(),
                    1e-6,
                );
                Ok(max_abs(&(num - ad(&g))) / (1.0 + max_abs(&num)))
            }),
        },
    ]
}

fn loss_properties() -> Vec<Property<'static>> {
    vec![
        Property {
            suite: "losses",
            name: "nll_gradient_vs_finite_difference",
            trials: 1_000,
            tolerance: 1e-6,
            trial: Box::new(|rng| {
                let pred = random_tangent(rng, 2.0, 1.0);
                let truth = random_tangent(rng, 2.0, 1.0);
                let params = LogCovarianceParams::new(rng.random_range(-4.0..2.0), rng.random_range(-6.0..1.0));
                let out = nll_loss(&pred, &truth, &params);
                let h = 1e-6;
                let mut worst = 0.0f64;
                let mut rel = |analytic: f64, numeric: f64| {
                    worst = worst.max((analytic - numeric).abs() / (1.0 + numeric.abs()));
                };
                let pv = pred.to_vector();
                let g = out.grad_prediction.to_vector();
                for i in 0..6 {
                    let (mut p, mut m) = (pv, pv);
                    p[i] += h;
                    m[i] -= h;
                    let fp = nll_loss(&TangentPose::from_vector(&p), &truth, &params).loss;
                    let fm = nll_loss(&TangentPose::from_vector(&m), &truth, &params).loss;
                    rel(g[i], (fp - fm) / (2.0 * h));
                }
                let shifted = |dt: f64, dr: f64| {
                    let q = LogCovarianceParams::new(params.log_sigma_trans_sq + dt, params.log_sigma_rot_sq + dr);
                    nll_loss(&pred, &truth, &q).loss
                };
                rel(out.grad_params.log_sigma_trans_sq, (shifted(h, 0.0) - shifted(-h, 0.0)) / (2.0 * h));
                rel(out.grad_params.log_sigma_rot_sq, (shifted(0.0, h) - shifted(0.0, -h)) / (2.0 * h));
                Ok(worst)
            }),
        },
        Property {
            suite: "losses",
            name: "fit_matches_closed_form_mle",
            trials: 20,
            tolerance: 1e-3,
            trial: Box::new(|rng| {
                let (st, sr) = (rng.random_range(0.05..2.0), rng.random_range(0.005..0.5));
                let residuals = gaussian_residuals(rng, 2_000, st, sr);
                let fitted = fit_covariance(&residuals, DEFAULT_FIT_LEARNING_RATE, DEFAULT_FIT_ITERATIONS)?;
                let (mle_t, mle_r) = closed_form_mle(&residuals);
                Ok(((fitted.sigma_trans_sq() - mle_t) / mle_t)
                    .abs()
                    .max(((fitted.sigma_rot_sq() - mle_r) / mle_r).abs()))
            }),
        },
        Property {
            suite: "losses",
            name: "fit_recovers_generating_variance",
            trials: 5,
            tolerance: 0.05,
            trial: Box::new(|rng| {
                let (st, sr) = (0.5, 0.05);
                let residuals = gaussian_residuals(rng, 10_000, st, sr);
                let fitted = fit_covariance(&residuals, DEFAULT_FIT_LEARNING_RATE, DEFAULT_FIT_ITERATIONS)?;
                Ok(((fitted.sigma_trans_sq() - st * st) / (st * st))
                    .abs()
                    .max(((fitted.sigma_rot_sq() - sr * sr) / (sr * sr)).abs()))
            }),
        },
    ]
}

/// Zero-mean residuals with isotropic per-block standard deviations.
pub fn gaussian_residuals(rng: &mut ChaCha8Rng, n: usize, sigma_trans: f64, sigma_rot: f64) -> Vec<TangentPose> {
    let nt = Normal::new(0.0, sigma_trans).unwrap();
    let nr = Normal::new(0.0, sigma_rot).unwrap();
    (0..n)
        .map(|_| {
            TangentPose::new(
                Vector3::from_fn(|_, _| nt.sample(rng)),
                Vector3::from_fn(|_, _| nr.sample(rng)),
            )
        })
        .collect()
}

/// Mean squared component per block.
pub fn closed_form_mle(residuals: &[TangentPose]) -> (f64, f64) {
    let n = 3.0 * residuals.len() as f64;
    let t = residuals.iter().map(|r| r.rho.norm_squared()).sum::<f64>() / n;
    let r = residuals.iter().map(|r| r.phi.norm_squared()).sum::<f64>() / n;
    (t, r)
}

fn random_state(rng: &mut ChaCha8Rng) -> Result<PoseGaussian> {
    let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let cov = (a * a.transpose() + Matrix6::identity() * 0.05) * rng.random_range(1e-3..1.0);
    PoseGaussian::new(random_pose(rng), cov, Role::Measurement)
}

fn filter_properties(opts: CheckOptions) -> Vec<Property<'static>> {
    let ad = opts.adjoint;
    vec![
        Property {
            suite: "filter",
            name: "transition_jacobian_vs_numeric",
            trials: 1_000,
            tolerance: 1e-6,
            trial: Box::new(move |rng| {
                let x = random_pose(rng);
                let u = exp(&random_tangent(rng, 1.0, PI - 0.1));
                let base = compose(&x, &u);
                let num = numeric_jacobian(|xi| ominus(&compose(&oplus(&x, xi), &u), &base), &TangentPose::zero(), 1e-6);
                Ok(max_abs(&(num - ad(&inverse(&u)))) / (1.0 + max_abs(&num)))
            }),
        },
        Property {
            suite: "filter",
            name: "measurement_jacobian_is_identity",
            trials: 100,
            tolerance: 0.0,
            trial: Box::new(|rng| {
                let mut state = EkfState::new();
                state.initialize(&random_state(rng)?)?;
                let report = state.correct(&random_state(rng)?)?;
                let h = report.measurement_jacobian.ok_or(Error::NotInitialized)?;
                Ok(max_abs(&(h - Matrix6::identity())))
            }),
        },
        Property {
            suite: "filter",
            name: "correction_matches_grid_posterior",
            trials: 100,
            tolerance: 1e-3,
            trial: Box::new(|rng| {
                let pm = rng.random_range(-2.0..2.0);
                let mm = rng.random_range(-2.0..2.0);
                let pv = rng.random_range(0.05..2.0);
                let mv = rng.random_range(0.05..2.0);
                let (gm, gv) = bayes_grid_oracle(pm, pv, mm, mv, 20.0, 20_001)?;
                let (fm, fv) = translation_axis_correct(pm, pv, mm, mv)?;
                Ok((gm - fm).abs().max((gv - fv).abs()))
            }),
        },
        Property {
            suite: "filter",
            name: "correction_closed_form_case",
            trials: 1,
            tolerance: 1e-12,
            trial: Box::new(|_| {
                let (m, v) = translation_axis_correct(0.0, 1.0, 2.0, 1.0)?;
                Ok((m - 1.0).abs().max((v - 0.5).abs()))
            }),
        },
        Property {
            suite: "filter",
            name: "covariance_symmetric_positive",
            trials: 500,
            tolerance: 1e-12,
            trial: Box::new(|rng| {
                let mut state = EkfState::new();
                state.initialize(&random_state(rng)?)?;
                let mut worst = 0.0f64;
                for _ in 0..10 {
                    let u = random_state(rng)?.with_role(Role::Control)?;
                    let z = random_state(rng)?;
                    let r = state.step(&u, Some(&z))?;
                    for c in [r.prior.covariance(), r.posterior.covariance()] {
                        worst = worst.max(max_abs(&(c - c.transpose())));
                        let min = SymmetricEigen::new(*c).eigenvalues.min();
                        if min < VARIANCE_FLOOR - floor_slack(c) {
                            return Ok(f64::INFINITY);
                        }
                    }
                }
                Ok(worst)
            }),
        },
        Property {
            suite: "filter",
            name: "correction_contracts_covariance",
            trials: 500,
            tolerance: 1e-9,
            trial: Box::new(|rng| {
                let mut state = EkfState::new();
                state.initialize(&random_state(rng)?)?;
                let report = state.correct(&random_state(rng)?)?;
                let diff = report.prior.covariance() - report.posterior.covariance();
                let min = SymmetricEigen::new((diff + diff.transpose()) * 0.5).eigenvalues.min();
                Ok((-min).max(0.0) / (1.0 + report.prior.covariance().amax()))
            }),
        },
        Property {
            suite: "filter",
            name: "nees_calibrated",
            trials: 1,
            tolerance: 1.0,
            trial: Box::new(|_| {
                let mean = mean_nees(&nees_config(1.0), 100)?;
                Ok((mean - 6.0).abs())
            }),
        },
        Property {
            suite: "filter",
            name: "nees_flags_overconfidence",
            trials: 1,
            tolerance: 0.0,
            trial: Box::new(|_| {
                let mean = mean_nees(&nees_config(0.3), 100)?;
                Ok(if mean > 7.0 { 0.0 } else { 7.0 - mean })
            }),
        },
    ]
}

/// First 200 poses of the reference circle, with `reported_scale` applied
/// to both estimators.
pub fn nees_config(reported_scale: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.generator.step_count = 200;
    cfg.absolute.reported_scale = reported_scale;
    cfg.relative.reported_scale = reported_scale;
    cfg.seed = 7;
    cfg
}

/// Mean per-frame NEES of the EKF averaged over `runs` simulated runs.
pub fn mean_nees(cfg: &ScenarioConfig, runs: usize) -> Result<f64> {
    let mut total = 0.0;
    for run in 0..runs {
        total += run_nees(&simulate_run(cfg, run)?)?.mean;
    }
    Ok(total / runs as f64)
}

pub fn run(suite: Suite, opts: &CheckOptions) -> Vec<PropertyOutcome> {
    let mut props = Vec::new();
    if matches!(suite, Suite::Lie | Suite::All) {
        props.extend(lie_properties(*opts));
    }
    if matches!(suite, Suite::Losses | Suite::All) {
        props.extend(loss_properties());
    }
    if matches!(suite, Suite::Filter | Suite::All) {
        props.extend(filter_properties(*opts));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    props.into_iter().map(|p| run_property(p, &mut rng)).collect()
}

pub fn render(outcomes: &[PropertyOutcome]) -> String {
    let mut out = String::new();
    for o in outcomes {
        writeln!(
            out,
            "{} {}/{} {}.{} worst={:.3e} tol={:.1e}",
            if o.ok() { "PASS" } else { "FAIL" },
            o.passed,
            o.trials,
            o.suite,
            o.name,
            o.worst,
            o.tolerance
        )
        .unwrap();
    }
    let failed: Vec<_> = outcomes.iter().filter(|o| !o.ok()).map(|o| o.name).collect();
    if failed.is_empty() {
        writeln!(out, "all {} properties passed", outcomes.len()).unwrap();
    } else {
        writeln!(out, "failed: {}", failed.join(", ")).unwrap();
    }
    out
}
