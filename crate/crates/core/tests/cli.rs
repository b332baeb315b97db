use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cherrynet"));
    c.env_remove("CHERRYNET_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture { dir: tempfile::tempdir().unwrap() };
        let out = run(&["synth", "--shape", "6,5,4", "--ranks", "2,2,2", "--seed", "1", "--out", s(&f.path("truth.txt"))]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let out = run(&["mask", "--input", s(&f.path("truth.txt")), "--rate", "0.4", "--seed", "2", "--out", s(&f.path("mask.txt"))]);
        assert!(out.status.success());
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

#[test]
fn complete_converges_and_writes_outputs() {
    let f = Fixture::new();
    let out = run(&[
        "complete", "--input", s(&f.path("truth.txt")), "--mask", s(&f.path("mask.txt")), "--ranks", "2,2,2",
        "--out", s(&f.path("x.txt")), "--trace", s(&f.path("trace.csv")),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("rho=0.1 max_iter=1000 eps=1e-5"), "{stdout}");
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    let trace = std::fs::read_to_string(f.path("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("iter,objective,step_norm,rel_change,seconds"));
    assert!(trace.lines().count() > 2);

    let eval = run(&[
        "eval", "--truth", s(&f.path("truth.txt")), "--recovered", s(&f.path("x.txt")),
        "--mask", s(&f.path("mask.txt")), "--metrics", "rse,rmse",
    ]);
    assert!(eval.status.success());
    let text = String::from_utf8_lossy(&eval.stdout);
    assert!(text.starts_with("rse 0.00"), "{text}");
}

#[test]
fn max_iter_exit_code() {
    let f = Fixture::new();
    let out = run(&[
        "complete", "--input", s(&f.path("truth.txt")), "--mask", s(&f.path("mask.txt")), "--ranks", "2,2,2",
        "--max-iter", "2", "--eps", "1e-30", "--out", s(&f.path("x.txt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(f.path("x.txt").exists());
}

#[test]
fn missing_mask_file_is_io_error_without_output() {
    let f = Fixture::new();
    let out = run(&[
        "complete", "--input", s(&f.path("truth.txt")), "--mask", s(&f.path("nope.txt")), "--ranks", "2,2,2",
        "--out", s(&f.path("x.txt")), "--trace", s(&f.path("t.csv")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!f.path("x.txt").exists());
    assert!(!f.path("t.csv").exists());
}

#[test]
fn bad_ranks_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("t.txt");
    let out = run(&["synth", "--shape", "3,3,3", "--ranks", "2,2", "--out", s(&target)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!target.exists());
    let out = run(&["synth", "--shape", "3,3,3", "--ranks", "0,2,2;2,0,2;2,3,0", "--out", s(&target)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("asymmetric"));
    assert!(!target.exists());
}

#[test]
fn eval_identical_inputs() {
    let f = Fixture::new();
    let t = s(&f.path("truth.txt")).to_string();
    let out = run(&["eval", "--truth", &t, "--recovered", &t, "--mask", s(&f.path("mask.txt"))]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text, "psnr INF\nssim 1.0000\nrse 0.0000\nrmse 0.0000\n");
}

#[test]
fn eval_rmse_without_mask_is_an_error() {
    let f = Fixture::new();
    let t = s(&f.path("truth.txt")).to_string();
    let out = run(&["eval", "--truth", &t, "--recovered", &t]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--mask"));
    let out = run(&["eval", "--truth", &t, "--recovered", &t, "--metrics", "rse", "--kv"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "rse=0\n");
}

#[test]
fn eval_shape_mismatch() {
    let f = Fixture::new();
    let other = f.path("other.txt");
    assert!(run(&["synth", "--shape", "6,5,3", "--ranks", "1,1,1", "--out", s(&other)]).status.success());
    let out = run(&["eval", "--truth", s(&f.path("truth.txt")), "--recovered", s(&other), "--metrics", "rse"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn fiber_mask_counts() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.txt");
    let out = run(&["mask", "--shape", "4,5,6", "--kind", "fiber", "--fiber-mode", "3", "--rate", "0.5", "--out", s(&p)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("60 missing"));
}

#[test]
fn threads_env_and_flag() {
    let f = Fixture::new();
    let (t, m, x) = (f.path("truth.txt"), f.path("mask.txt"), f.path("x.txt"));
    let base = ["complete", "--input", s(&t), "--mask", s(&m), "--ranks", "2,2,2", "--max-iter", "3", "--out", s(&x)];
    let out = bin().args(base).env("CHERRYNET_THREADS", "3").output().unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("threads=3"));
    let out = bin().args(base).args(["--threads", "2"]).env("CHERRYNET_THREADS", "3").output().unwrap();
    assert!(String::from_utf8_lossy(&out.stdout).contains("threads=2"));
}

#[test]
fn config_file_supplies_settings() {
    let f = Fixture::new();
    let cfg = f.path("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "# run settings\ninput={}\nmask={}\nranks=2,2,2\nout={}\nmax_iter=4\nrho=0.3\n",
            s(&f.path("truth.txt")),
            s(&f.path("mask.txt")),
            s(&f.path("cfg_out.txt"))
        ),
    )
    .unwrap();
    let out = run(&["complete", "--config", s(&cfg), "--rho", "0.2"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("rho=0.2 max_iter=4"), "{text}");
    assert!(f.path("cfg_out.txt").exists());
}

#[test]
fn unknown_flag_exit_code() {
    let out = run(&["params", "--shape", "2,2", "--bogus"]);
    assert_eq!(out.status.code(), Some(4));
}
