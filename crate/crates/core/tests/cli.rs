use std::path::Path;
use std::process::{Command, Output};

fn precond(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_precond")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_TRAIN: &[&str] = &["train", "--task", "mf", "--dims", "10x8x3", "--steps", "12", "--T", "4"];

#[test]
fn train_writes_a_csv_and_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("run.csv");
    let ckpt = dir.path().join("run.kprc");
    let mut args = SMALL_TRAIN.to_vec();
    args.extend(["--precision", "bf16", "--out", path(&csv), "--ckpt", path(&ckpt)]);
    let out = precond(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,train_loss,eval_loss,mm,smm,qr,eig,offdiag_P1,offdiag_P2,wall_ms");
    assert_eq!(lines.len(), 1 + 13);
    assert!(!text.contains('\r'));
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 10));

    let dump = precond(&["ckpt-dump", path(&ckpt)]);
    assert_eq!(code(&dump), 0);
    let dump = String::from_utf8(dump.stdout).unwrap();
    assert!(dump.contains("2 layer(s)"), "{dump}");
    assert!(dump.contains("step_count=12"));
    assert!(dump.contains("bf16"));
}

#[test]
fn identical_runs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, extra: &[&str]| {
        let csv = dir.path().join(format!("{name}.csv"));
        let ckpt = dir.path().join(format!("{name}.kprc"));
        let mut args = SMALL_TRAIN.to_vec();
        args.extend(["--select", "random", "--B", "1/2", "--out", path(&csv), "--ckpt", path(&ckpt)]);
        args.extend(extra);
        assert_eq!(code(&precond(&args)), 0);
        (std::fs::read(csv).unwrap(), std::fs::read(ckpt).unwrap())
    };
    let a = run("a", &[]);
    assert_eq!(a, run("b", &[]));
    assert_eq!(a, run("c", &["--parallel-layers"]));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# toy run\ntask = quadratic\nsteps = 3\nlr = 0.5\n").unwrap();
    let csv = dir.path().join("out.csv");
    let out = precond(&["train", "--config", path(&cfg), "--steps", "5", "--out", path(&csv)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 6);
}

#[test]
fn unknown_config_keys_are_rejected_with_their_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "steps = 3\nlearning_rate = 0.1\n").unwrap();
    let out = precond(&["train", "--config", path(&cfg)]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("learning_rate") && err.contains(":2"), "{err}");
}

#[test]
fn bad_flag_values_exit_with_the_config_code() {
    for args in [
        &["train", "--method", "adam"][..],
        &["train", "--B", "3/2", "--select", "greedy"],
        &["train", "--precision", "fp8"],
        &["cost-audit", "--T", "3", "--steps", "10"],
        &["train", "--no-such-flag"],
    ] {
        assert_eq!(code(&precond(args)), 2, "{args:?}");
    }
}

#[test]
fn equivalence_check_passes_and_catches_a_missing_sign_fix() {
    let ok = precond(&["check-equivalence", "--dims", "6x7", "--steps", "30", "--T", "3"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("PASS"));
    let broken = precond(&["check-equivalence", "--dims", "6x7", "--steps", "30", "--T", "3", "--no-sign-fix"]);
    assert_eq!(code(&broken), 4);
}

#[test]
fn cost_audit_reports_every_interval() {
    let out = precond(&["cost-audit", "--intervals", "1,2,7"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("new costlier (expected for T=1)"));
    assert_eq!(text.matches("new cheaper").count(), 2);
    assert_eq!(text.matches(" ok").count(), 2);
}

#[test]
fn bench_writes_one_row_per_kernel() {
    let out = precond(&["bench-decomp", "--sizes", "16,32", "--fractions", "1/4,1/2", "--reps", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("kernel,d,B,median_ms"));
    assert_eq!(text.lines().count(), 1 + 2 * 5);
}

#[test]
fn ckpt_dump_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("junk.kprc");
    std::fs::write(&file, b"JUNKJUNKJUNK").unwrap();
    let out = precond(&["ckpt-dump", path(&file)]);
    assert_ne!(code(&out), 0);
    assert!(stderr(&out).contains("magic"));
}
