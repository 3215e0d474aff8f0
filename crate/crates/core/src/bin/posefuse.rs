use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use posefuse::check::{self, CheckOptions, Suite};
use posefuse::eval::{self, compare_methods};
use posefuse::pipeline::{self, FuseMode, ScenarioConfig};
use posefuse::traj_io;
use posefuse::Error;

#[derive(Parser)]
#[command(name = "posefuse", version, about = "Fuse absolute and relative pose estimates on SE(3)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate truth and noisy estimator streams
    Simulate {
        /// Scenario file of `key = value` lines
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        /// Output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fuse an absolute stream with a relative stream
    Fuse {
        /// Absolute poses (TUM with covariance)
        #[arg(long = "abs")]
        absolute: Option<PathBuf>,
        /// Relative motions (TUM with covariance)
        #[arg(long = "rel")]
        relative: Option<PathBuf>,
        /// ekf, apr-only or dead-reckon
        #[arg(long, default_value = "ekf")]
        mode: String,
        /// Fused trajectory; step reports go to `<out>.steps`
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare estimates against ground truth
    Eval {
        #[arg(long)]
        truth: PathBuf,
        /// Estimate as `label=path` or `path`; repeatable
        #[arg(long = "est", required = true)]
        estimates: Vec<String>,
        /// Directory for per-method reports, plot dumps and comparison.tsv
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run built-in property checks
    Check {
        /// lie, losses, filter or all
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Lib(Error),
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io(_)
        | Error::Parse { .. }
        | Error::Frame { .. }
        | Error::LengthMismatch { .. }
        | Error::TimestampMismatch { .. } => 3,
        _ => 4,
    }
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

fn read(path: &Path) -> posefuse::Result<posefuse::Trajectory> {
    pipeline::read_any_tum(path).map_err(|e| with_path(path, e))
}

fn simulate(config: Option<PathBuf>, seed: Option<u64>, runs: Option<usize>, out: Option<PathBuf>) -> Result<(), Failure> {
    let mut cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(&path).map_err(|e| with_path(&path, e.into()))?;
            ScenarioConfig::parse(&text)?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = runs {
        cfg.runs = r;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    for path in pipeline::write_simulation(&cfg)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn fuse(absolute: Option<PathBuf>, relative: Option<PathBuf>, mode: &str, out: &Path) -> Result<(), Failure> {
    let mode: FuseMode = mode.parse()?;
    let load = |p: Option<PathBuf>| -> posefuse::Result<posefuse::Trajectory> {
        match p {
            Some(p) => read(&p),
            None => Ok(Default::default()),
        }
    };
    let (abs, rel) = (load(absolute)?, load(relative)?);
    let fused = pipeline::fuse(&abs, &rel, mode)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let text = if fused.trajectory.records().iter().all(|r| r.covariance.is_some()) {
        traj_io::tum_cov_to_string(&fused.trajectory)?
    } else {
        traj_io::tum_to_string(&fused.trajectory)
    };
    fs::write(out, text)?;
    let steps_path = suffixed(out, "steps");
    fs::write(&steps_path, pipeline::render_step_reports(&fused.steps))?;
    let corrected = fused.steps.iter().filter(|(_, r)| r.corrected()).count();
    println!(
        "{} poses, {} steps ({} corrected) -> {}",
        fused.trajectory.len(),
        fused.steps.len(),
        corrected,
        out.display()
    );
    Ok(())
}

fn suffixed(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn evaluate(truth: &Path, estimates: &[String], out: Option<PathBuf>) -> Result<(), Failure> {
    let truth = read(truth)?;
    let mut reports = Vec::new();
    let mut trajectories = Vec::new();
    for arg in estimates {
        let (label, path) = match arg.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(arg);
                let label = p.file_stem().map_or_else(|| arg.clone(), |s| s.to_string_lossy().into_owned());
                (label, p)
            }
        };
        let est = read(&path)?;
        let report = pipeline::evaluate(&est, &truth)?;
        println!("{label}: {}", report.summary());
        reports.push((label, report));
        trajectories.push(est);
    }
    let table = compare_methods(&reports)?;
    print!("{}", table.text);
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        for ((label, report), est) in reports.iter().zip(&trajectories) {
            fs::write(dir.join(format!("{label}.report")), eval::render_report(report, est)?)?;
            fs::write(dir.join(format!("{label}.plot")), eval::render_plot_dump(report, est)?)?;
        }
        fs::write(dir.join("comparison.tsv"), &table.machine)?;
    }
    Ok(())
}

fn run_check(suite: &str, seed: u64) -> Result<(), Failure> {
    let suite: Suite = suite.parse()?;
    let outcomes = check::run(suite, &CheckOptions { seed, ..Default::default() });
    print!("{}", check::render(&outcomes));
    if outcomes.iter().all(|o| o.ok()) {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, seed, runs, out } => simulate(config, seed, runs, out),
        Command::Fuse { absolute, relative, mode, out } => fuse(absolute, relative, &mode, &out),
        Command::Eval { truth, estimates, out } => evaluate(&truth, &estimates, out),
        Command::Check { suite, seed } => run_check(&suite, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(5),
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
