use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn posefuse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posefuse"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn noiseless(dir: &Path, steps: usize) {
    let cfg = format!(
        "steps = {steps}\nabs_sigma_trans = 0\nabs_sigma_rot = 0\nrel_sigma_trans = 0\nrel_sigma_rot = 0\n"
    );
    fs::write(dir.join("clean.cfg"), cfg).unwrap();
    let o = posefuse(&["simulate", "--config", "clean.cfg", "--out", "sim"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn strip_cov(line: &str) -> String {
    line.split_whitespace().take(8).collect::<Vec<_>>().join(" ")
}

#[test]
fn noiseless_absolute_matches_truth() {
    let dir = tempfile::tempdir().unwrap();
    noiseless(dir.path(), 50);
    let truth = fs::read_to_string(dir.path().join("sim/truth.tum")).unwrap();
    let abs = fs::read_to_string(dir.path().join("sim/absolute.tum")).unwrap();
    let abs: Vec<String> = abs.lines().map(strip_cov).collect();
    let truth: Vec<String> = truth.lines().map(String::from).collect();
    assert_eq!(abs, truth);
}

#[test]
fn noiseless_fusion_reports_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    noiseless(dir.path(), 80);
    let o = posefuse(&["fuse", "--abs", "sim/absolute.tum", "--rel", "sim/relative.tum", "--out", "ekf.tum"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = posefuse(&["eval", "--truth", "sim/truth.tum", "--est", "ekf=ekf.tum"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("ekf: 0.00m, 0.00°"), "{}", stdout(&o));

    let steps = fs::read_to_string(dir.path().join("ekf.tum.steps")).unwrap();
    assert_eq!(steps.lines().filter(|l| !l.starts_with('#')).count(), 79);
}

#[test]
fn identical_files_evaluate_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    noiseless(dir.path(), 20);
    let o = posefuse(&["eval", "--truth", "sim/truth.tum", "--est", "sim/truth.tum", "--out", "rep"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("truth: 0.00m, 0.00°"));
    let plot = fs::read_to_string(dir.path().join("rep/truth.plot")).unwrap();
    assert_eq!(plot.lines().filter(|l| !l.starts_with('#')).count(), 20);
    assert!(dir.path().join("rep/truth.report").exists());
    assert!(dir.path().join("rep/comparison.tsv").exists());
}

#[test]
fn batch_runs_are_suffixed() {
    let dir = tempfile::tempdir().unwrap();
    let o = posefuse(&["simulate", "--runs", "3", "--seed", "5", "--out", "batch"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for run in ["000", "001", "002"] {
        for kind in ["truth", "absolute", "relative"] {
            assert!(dir.path().join(format!("batch/{kind}_{run}.tum")).exists());
        }
    }
    let a = fs::read(dir.path().join("batch/absolute_000.tum")).unwrap();
    let b = fs::read(dir.path().join("batch/absolute_001.tum")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.cfg"), "steps = 10\nseed = 1\nout = from_config\n").unwrap();
    let o = posefuse(&["simulate", "--config", "s.cfg", "--out", "from_flag"], dir.path());
    assert!(o.status.success());
    assert!(dir.path().join("from_flag/truth.tum").exists());
    assert!(!dir.path().join("from_config").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();

    fs::write(p.join("bad.cfg"), "rel_sigma_rot = fast\n").unwrap();
    let o = posefuse(&["simulate", "--config", "bad.cfg"], p);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rel_sigma_rot"));

    let o = posefuse(&["simulate", "--config", "missing.cfg"], p);
    assert_eq!(o.status.code(), Some(3));

    noiseless(p, 30);
    let o = posefuse(&["fuse", "--rel", "sim/relative.tum", "--out", "x.tum"], p);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = posefuse(&["fuse", "--abs", "sim/absolute.tum", "--rel", "sim/relative.tum", "--mode", "magic", "--out", "x.tum"], p);
    assert_eq!(o.status.code(), Some(2));

    fs::write(p.join("short.tum"), "0 0 0 0 0 0 0 1\n").unwrap();
    let o = posefuse(&["eval", "--truth", "sim/truth.tum", "--est", "short.tum"], p);
    assert_eq!(o.status.code(), Some(3));

    fs::write(p.join("garbage.tum"), "0 0 0 zero 0 0 0 1\n").unwrap();
    let o = posefuse(&["eval", "--truth", "sim/truth.tum", "--est", "garbage.tum"], p);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));

    // variances below the floor are rejected on read
    let abs = fs::read_to_string(p.join("sim/absolute.tum")).unwrap();
    let mut lines: Vec<String> = abs.lines().map(String::from).collect();
    let mut fields: Vec<&str> = lines[3].split_whitespace().collect();
    fields[8] = "1e-300";
    lines[3] = fields.join(" ");
    fs::write(p.join("degenerate.tum"), lines.join("\n")).unwrap();
    let o = posefuse(&["fuse", "--abs", "degenerate.tum", "--rel", "sim/relative.tum", "--out", "x.tum"], p);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn check_suites() {
    let dir = tempfile::tempdir().unwrap();
    let o = posefuse(&["check", "lie"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("PASS 100000/100000 lie.exp_log_roundtrip"), "{out}");
    assert!(out.contains("all 6 properties passed"));

    let o = posefuse(&["check", "nonsense"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
