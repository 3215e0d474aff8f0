//! Acceptance criteria. Each prints one PASS/FAIL line; the process exits
//! non-zero if any fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Matrix6, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use posefuse::ekf::{bayes_grid_oracle, translation_axis_correct, transition_jacobian, EkfState};
use posefuse::eval::{median, translation_error};
use posefuse::lie::{compose, exp, log, ominus, oplus, GroupPose, TangentPose};
use posefuse::pipeline::{fuse, simulate_run, FuseMode, ScenarioConfig, SimulatedRun};
use posefuse::sim::TrajectoryKind;
use posefuse::traj_io::{self, Trajectory, TrajectoryRecord};
use posefuse::uncertainty::{
    fit_covariance, nll_loss, BlockDiagonalCovariance, LogCovarianceParams, PoseGaussian, Role,
    DEFAULT_FIT_ITERATIONS, DEFAULT_FIT_LEARNING_RATE,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn random_tangent(rng: &mut ChaCha8Rng, trans: f64, max_angle: f64) -> TangentPose {
    let axis = Vector3::<f64>::from_fn(|_, _| StandardNormal.sample(rng)).normalize();
    let angle = rng.random_range(0.0..max_angle);
    let rho = Vector3::from_fn(|_, _| rng.random_range(-trans..trans));
    TangentPose::new(rho, axis * angle)
}

fn random_pose(rng: &mut ChaCha8Rng) -> GroupPose {
    exp(&random_tangent(rng, 5.0, PI))
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<TangentPose> = (0..100_000).map(|_| random_tangent(&mut rng, 10.0, PI - 0.1)).collect();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for xi in &samples {
        let err = (log(&exp(xi)) - *xi).norm() / (1.0 + xi.norm());
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    ensure(worst <= 1e-9, format!("worst scaled error {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(2), format!("took {elapsed:?}"))?;
    Ok(format!("worst scaled error {worst:.2e} in {elapsed:.2?}"))
}

/// Central differences of `ξ ↦ (x ⊕ ξ)·u ⊖ x·u`, written independently of
/// the library's numeric Jacobian helper.
fn fd_transition(x: &GroupPose, u: &GroupPose) -> Matrix6<f64> {
    let h = 1e-6;
    let base = compose(x, u);
    let mut jac = Matrix6::zeros();
    for j in 0..6 {
        let mut c = [0.0; 6];
        c[j] = h;
        let plus = ominus(&compose(&oplus(x, &TangentPose::from_components(c)), u), &base);
        c[j] = -h;
        let minus = ominus(&compose(&oplus(x, &TangentPose::from_components(c)), u), &base);
        jac.set_column(j, &((plus.to_vector() - minus.to_vector()) / (2.0 * h)));
    }
    jac
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = random_pose(&mut rng);
        let u = exp(&random_tangent(&mut rng, 2.0, PI - 0.1));
        worst = worst.max((transition_jacobian(&u) - fd_transition(&x, &u)).amax());
    }
    ensure(worst <= 1e-6, format!("F max-abs error {worst:e}"))?;

    let mut h_exact = true;
    for _ in 0..100 {
        let cov = |rng: &mut ChaCha8Rng| {
            let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
            a * a.transpose() + Matrix6::identity() * 0.1
        };
        let mut s = EkfState::new();
        let prior = PoseGaussian::new(random_pose(&mut rng), cov(&mut rng), Role::Measurement).map_err(|e| e.to_string())?;
        s.initialize(&prior).map_err(|e| e.to_string())?;
        let z = PoseGaussian::new(random_pose(&mut rng), cov(&mut rng), Role::Measurement).map_err(|e| e.to_string())?;
        let report = s.correct(&z).map_err(|e| e.to_string())?;
        h_exact &= report.measurement_jacobian == Some(Matrix6::identity());
    }
    ensure(h_exact, "H differs from the identity".into())?;
    Ok(format!("F max-abs error {worst:.2e} over 1000 pairs; H = I exactly"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_grid = 0.0f64;
    let mut worst_product = 0.0f64;
    for _ in 0..100 {
        let (pm, mm) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let (pv, mv) = (rng.random_range(0.05..2.0), rng.random_range(0.05..2.0));
        let (fm, fv) = translation_axis_correct(pm, pv, mm, mv).map_err(|e| e.to_string())?;
        let (gm, gv) = bayes_grid_oracle(pm, pv, mm, mv, 25.0, 50_001).map_err(|e| e.to_string())?;
        worst_grid = worst_grid.max((fm - gm).abs()).max((fv - gv).abs());
        // analytic Gaussian product
        let v = pv * mv / (pv + mv);
        let m = v * (pm / pv + mm / mv);
        worst_product = worst_product.max((fm - m).abs()).max((fv - v).abs());
    }
    ensure(worst_grid <= 1e-3, format!("grid disagreement {worst_grid:e}"))?;
    ensure(worst_product <= 1e-9, format!("analytic disagreement {worst_product:e}"))?;
    let (m, v) = translation_axis_correct(0.0, 1.0, 2.0, 1.0).map_err(|e| e.to_string())?;
    let closed = (m - 1.0).abs().max((v - 0.5).abs());
    ensure(closed <= 1e-12, format!("(0,1)x(2,1) gave ({m}, {v})"))?;
    Ok(format!(
        "grid max error {worst_grid:.2e} over 100 pairs; (0,1)x(2,1) -> ({m}, {v})"
    ))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = random_tangent(&mut rng, 2.0, 1.5);
        let t = random_tangent(&mut rng, 2.0, 1.5);
        let params = LogCovarianceParams::new(rng.random_range(-4.0..2.0), rng.random_range(-6.0..1.0));
        let out = nll_loss(&p, &t, &params);
        let loss_at = |pv: [f64; 8]| {
            let pred = TangentPose::from_components([pv[0], pv[1], pv[2], pv[3], pv[4], pv[5]]);
            nll_loss(&pred, &t, &LogCovarianceParams::new(pv[6], pv[7])).loss
        };
        let pv = p.to_vector();
        let x: [f64; 8] = [pv[0], pv[1], pv[2], pv[3], pv[4], pv[5], params.log_sigma_trans_sq, params.log_sigma_rot_sq];
        let g = out.grad_prediction.to_vector();
        let analytic = [g[0], g[1], g[2], g[3], g[4], g[5], out.grad_params.log_sigma_trans_sq, out.grad_params.log_sigma_rot_sq];
        for i in 0..8 {
            let (mut a, mut b) = (x, x);
            a[i] += h;
            b[i] -= h;
            let fd = (loss_at(a) - loss_at(b)) / (2.0 * h);
            worst = worst.max((analytic[i] - fd).abs() / fd.abs().max(1.0));
        }
    }
    ensure(worst <= 1e-6, format!("worst relative gradient error {worst:e}"))?;
    Ok(format!("worst relative gradient error {worst:.2e} over 1000 points"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (st, sr) = (0.5, 0.05);
    let nt = Normal::new(0.0, st).unwrap();
    let nr = Normal::new(0.0, sr).unwrap();
    let residuals: Vec<TangentPose> = (0..10_000)
        .map(|_| {
            TangentPose::new(
                Vector3::from_fn(|_, _| nt.sample(&mut rng)),
                Vector3::from_fn(|_, _| nr.sample(&mut rng)),
            )
        })
        .collect();
    let fit = fit_covariance(&residuals, DEFAULT_FIT_LEARNING_RATE, DEFAULT_FIT_ITERATIONS).map_err(|e| e.to_string())?;
    let (ft, fr) = (fit.sigma_trans_sq().sqrt(), fit.sigma_rot_sq().sqrt());
    let n = 3.0 * residuals.len() as f64;
    let mle_t = residuals.iter().map(|r| r.rho.norm_squared()).sum::<f64>() / n;
    let mle_r = residuals.iter().map(|r| r.phi.norm_squared()).sum::<f64>() / n;
    let recov = ((ft - st) / st).abs().max(((fr - sr) / sr).abs());
    let vs_mle = ((fit.sigma_trans_sq() - mle_t) / mle_t)
        .abs()
        .max(((fit.sigma_rot_sq() - mle_r) / mle_r).abs());
    ensure(recov <= 0.05, format!("sigma recovery error {recov:e}"))?;
    ensure(vs_mle <= 1e-3, format!("deviation from closed-form MLE {vs_mle:e}"))?;
    Ok(format!(
        "sigma = ({ft:.4}, {fr:.5}), recovery error {recov:.2e}, MLE deviation {vs_mle:.2e}"
    ))
}

fn reference_config() -> ScenarioConfig {
    let cfg = ScenarioConfig::parse(
        "trajectory = circle\nsteps = 1000\nabs_sigma_trans = 0.25\nabs_sigma_rot = 0.05\nrel_sigma_trans = 0.01\nrel_sigma_rot = 0.002\nseed = 2024\n",
    )
    .expect("reference config");
    assert_eq!(cfg.generator.kind, TrajectoryKind::Circle);
    cfg
}

fn median_translation(est: &Trajectory, truth: &Trajectory) -> f64 {
    let errs: Vec<f64> = est.poses().zip(truth.poses()).map(|(a, b)| translation_error(a, b)).collect();
    median(&errs)
}

fn final_translation(est: &Trajectory, truth: &Trajectory) -> f64 {
    translation_error(est.poses().last().unwrap(), truth.poses().last().unwrap())
}

fn criterion_6() -> Outcome {
    let cfg = reference_config();
    let start = Instant::now();
    let (mut beat_apr, mut beat_dr) = (0, 0);
    let mut ekf_medians = Vec::new();
    for run in 0..20 {
        let sim = simulate_run(&cfg, run).map_err(|e| e.to_string())?;
        let ekf = fuse(&sim.absolute, &sim.relative, FuseMode::Ekf).map_err(|e| e.to_string())?;
        let apr = fuse(&sim.absolute, &sim.relative, FuseMode::AprOnly).map_err(|e| e.to_string())?;
        let dr = fuse(&sim.absolute, &sim.relative, FuseMode::DeadReckon).map_err(|e| e.to_string())?;
        let m_ekf = median_translation(&ekf.trajectory, &sim.truth);
        ekf_medians.push(m_ekf);
        if m_ekf < median_translation(&apr.trajectory, &sim.truth) {
            beat_apr += 1;
        }
        if final_translation(&ekf.trajectory, &sim.truth) < final_translation(&dr.trajectory, &sim.truth) {
            beat_dr += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(beat_apr >= 19, format!("ekf beat apr-only in {beat_apr}/20 runs"))?;
    ensure(beat_dr >= 19, format!("ekf beat dead-reckon in {beat_dr}/20 runs"))?;
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!(
        "ekf < apr-only median in {beat_apr}/20, ekf < dead-reckon final in {beat_dr}/20, ekf median-of-medians {:.3} m, {elapsed:.2?}",
        median(&ekf_medians)
    ))
}

/// eᵀ Σ⁻¹ e averaged over every fused state of every run.
fn mean_nees(cfg: &ScenarioConfig, runs: usize) -> Result<f64, String> {
    let mut total = 0.0;
    let mut count = 0usize;
    for run in 0..runs {
        let sim: SimulatedRun = simulate_run(cfg, run).map_err(|e| e.to_string())?;
        let fused = fuse(&sim.absolute, &sim.relative, FuseMode::Ekf).map_err(|e| e.to_string())?;
        for (rec, truth) in fused.trajectory.records().iter().zip(sim.truth.poses()) {
            let e = ominus(truth, &rec.pose).to_vector();
            let inv = rec.covariance.unwrap().try_inverse().ok_or("singular covariance")?;
            total += (e.transpose() * inv * e)[(0, 0)];
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn criterion_7() -> Outcome {
    let mut cfg = reference_config();
    cfg.generator.step_count = 200;
    let calibrated = mean_nees(&cfg, 100)?;
    cfg.absolute.reported_scale = 0.3;
    cfg.relative.reported_scale = 0.3;
    let overconfident = mean_nees(&cfg, 100)?;
    ensure((5.0..=7.0).contains(&calibrated), format!("calibrated mean NEES {calibrated}"))?;
    ensure(overconfident > 7.0, format!("overconfident mean NEES {overconfident}"))?;
    Ok(format!("mean NEES {calibrated:.3} calibrated, {overconfident:.1} at reported_scale 0.3"))
}

fn criterion_8() -> Outcome {
    // rotation noise off: heading errors would add a superlinear lever-arm term
    let mut cfg = ScenarioConfig::parse(
        "trajectory = straight\nstep_length = 0.1\nrel_sigma_trans = 0.01\nrel_sigma_rot = 0\nabs_sigma_trans = 0\nabs_sigma_rot = 0\nseed = 88\n",
    )
    .map_err(|e| e.to_string())?;
    let steps = [100usize, 400, 1600];
    let mut rms = Vec::new();
    let mut monotone = true;
    for &n in &steps {
        cfg.generator.step_count = n + 1;
        let mut sq = 0.0;
        for run in 0..200 {
            let sim = simulate_run(&cfg, run).map_err(|e| e.to_string())?;
            let dr = fuse(&sim.absolute, &sim.relative, FuseMode::DeadReckon).map_err(|e| e.to_string())?;
            sq += final_translation(&dr.trajectory, &sim.truth).powi(2);
            let traces: Vec<f64> = dr.trajectory.records().iter().map(|r| r.covariance.unwrap().trace()).collect();
            monotone &= traces.windows(2).all(|w| w[1] >= w[0]);
        }
        rms.push((sq / 200.0).sqrt());
    }
    // least squares for e = c·√n
    let c = steps.iter().zip(&rms).map(|(&n, e)| (n as f64).sqrt() * e).sum::<f64>()
        / steps.iter().map(|&n| n as f64).sum::<f64>();
    let worst = steps
        .iter()
        .zip(&rms)
        .map(|(&n, e)| ((e - c * (n as f64).sqrt()) / (c * (n as f64).sqrt())).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 0.15, format!("rms {rms:?} deviates {worst:.3} from c·√n, c = {c}"))?;
    ensure(monotone, "predict-only trace decreased".into())?;
    Ok(format!(
        "rms {:.4}/{:.4}/{:.4} m, c = {c:.5}, worst deviation {:.1}%, trace monotone",
        rms[0],
        rms[1],
        rms[2],
        worst * 100.0
    ))
}

fn random_trajectory(rng: &mut ChaCha8Rng, with_cov: bool) -> Trajectory {
    let n = rng.random_range(1..20);
    let mut t = rng.random_range(-10.0..1e6);
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        t += rng.random_range(1e-3..2.0);
        let pose = exp(&random_tangent(rng, 100.0, PI));
        records.push(if with_cov {
            let cov = BlockDiagonalCovariance::new(rng.random_range(1e-6..10.0), rng.random_range(1e-8..1.0)).unwrap();
            TrajectoryRecord::with_covariance(t, pose, cov.to_matrix())
        } else {
            TrajectoryRecord::new(t, pose)
        });
    }
    Trajectory::new(records).unwrap()
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for i in 0..2000 {
        let with_cov = i % 2 == 1;
        let traj = random_trajectory(&mut rng, with_cov);
        let back = if with_cov {
            let text = traj_io::tum_cov_to_string(&traj).map_err(|e| e.to_string())?;
            traj_io::parse_tum_cov(text.as_bytes()).map_err(|e| e.to_string())?
        } else {
            traj_io::parse_tum(traj_io::tum_to_string(&traj).as_bytes()).map_err(|e| e.to_string())?
        };
        ensure(back.len() == traj.len(), "record count changed".into())?;
        for (a, b) in traj.records().iter().zip(back.records()) {
            worst = worst.max((a.timestamp - b.timestamp).abs()).max(a.pose.distance(&b.pose));
            if let (Some(ca), Some(cb)) = (a.covariance, b.covariance) {
                worst = worst.max((ca - cb).amax());
            }
        }
    }
    ensure(worst <= 1e-12, format!("roundtrip error {worst:e}"))?;

    let fixture = "0 -1 0 0.125\n1 0 0 -0.5\n0 0 1 2\n0 0 0 1\n";
    let parsed = traj_io::parse_matrix4(&[fixture], 30.0).map_err(|e| e.to_string())?;
    let pose = parsed.records()[0].pose;
    let expected = GroupPose::from_parts(
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), PI / 2.0),
        Vector3::new(0.125, -0.5, 2.0),
    );
    let (got, want) = (pose.canonical(), expected.canonical());
    let exact = got.rotation().coords == want.rotation().coords
        && got.translation() == want.translation()
        && parsed.records()[0].timestamp == 0.0;
    ensure(exact, format!("fixture parsed to {pose:?}, expected {expected:?}"))?;
    Ok(format!("worst roundtrip error {worst:.2e} over 1000 trajectories per format; 4x4 fixture exact"))
}

fn run_cli(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_posefuse"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)),
    )
}

fn pipeline_outputs(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    fs::write(dir.join("scenario.cfg"), "steps = 300\nruns = 1\n").map_err(|e| e.to_string())?;
    run_cli(&["simulate", "--config", "scenario.cfg", "--seed", "11", "--out", "sim"], dir)?;
    run_cli(&["fuse", "--abs", "sim/absolute.tum", "--rel", "sim/relative.tum", "--mode", "ekf", "--out", "fused/ekf.tum"], dir)?;
    run_cli(&["eval", "--truth", "sim/truth.tum", "--est", "ekf=fused/ekf.tum", "--est", "apr=sim/absolute.tum", "--out", "report"], dir)?;
    let mut files = Vec::new();
    for sub in ["sim", "fused", "report"] {
        let mut entries: Vec<_> = fs::read_dir(dir.join(sub)).map_err(|e| e.to_string())?.map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            files.push((format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), fs::read(&p).map_err(|e| e.to_string())?));
        }
    }
    Ok(files)
}

fn criterion_10() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline_outputs(a.path())?;
    let second = pipeline_outputs(b.path())?;
    ensure(first.len() >= 7, format!("only {} output files", first.len()))?;
    for ((na, da), (nb, db)) in first.iter().zip(&second) {
        ensure(na == nb && da == db, format!("{na} differs between invocations"))?;
    }
    ensure(first.len() == second.len(), "file sets differ".into())?;
    Ok(format!("{} output files byte-identical across two invocations", first.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("Lie exp/log roundtrip", criterion_1),
        ("transition Jacobian cross-check", criterion_2),
        ("correction vs Bayes grid oracle", criterion_3),
        ("NLL gradients vs finite differences", criterion_4),
        ("covariance recovery", criterion_5),
        ("fusion dominance", criterion_6),
        ("NEES consistency", criterion_7),
        ("dead-reckoning drift law", criterion_8),
        ("trajectory I/O roundtrips", criterion_9),
        ("end-to-end determinism", criterion_10),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
