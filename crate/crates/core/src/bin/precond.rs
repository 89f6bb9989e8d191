use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use precond::harness::checkpoint;
use precond::harness::config::{parse_dims, RunConfig, Settings};
use precond::harness::cost_audit::{cost_audit, AuditOptions};
use precond::harness::equivalence::{check_equivalence, EquivalenceOptions, COMPANION_TOLERANCE, THETA_TOLERANCE};
use precond::harness::record::write_csv;
use precond::harness::{bench, exit, exit_code, train};
use precond::{Error, Result};

#[derive(Parser)]
#[command(name = "precond", version, about = "Shampoo-family optimizer experiments on toy problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a toy task and write one CSV row per step.
    Train(Flags),
    /// Run both state parametrizations in lockstep and compare iterates.
    CheckEquivalence(Flags),
    /// Time QR, subspace QR, eig and mm at several sizes.
    BenchDecomp(Flags),
    /// Check exact operation counts of both parametrizations.
    CostAudit(Flags),
    /// Print the contents of a checkpoint file.
    CkptDump { path: PathBuf },
}

/// Every flag mirrors a config-file key of the same name.
#[derive(Args, Default)]
struct Flags {
    /// Flat `key = value` config file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// kl-shampoo, kl-soap or soap
    #[arg(long)]
    method: Option<String>,
    /// old (store S) or new (store P = QᵀSQ)
    #[arg(long)]
    param: Option<String>,
    /// fp64, fp32 or bf16 state storage
    #[arg(long)]
    precision: Option<String>,
    /// Basis refresh interval
    #[arg(long = "T")]
    t: Option<String>,
    /// Subspace fraction, e.g. 1/4
    #[arg(long = "B")]
    b: Option<String>,
    /// Subspace passes per refresh
    #[arg(long = "K")]
    k: Option<String>,
    /// full, random or greedy
    #[arg(long)]
    select: Option<String>,
    /// qr or eig
    #[arg(long)]
    basis: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long = "lr-min")]
    lr_min: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    damping: Option<String>,
    /// Decoupled weight decay
    #[arg(long)]
    wd: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// quadratic, matrix-factorization, softmax-regression or two-layer-mlp
    #[arg(long)]
    task: Option<String>,
    /// Task or layer shape, e.g. 8x12
    #[arg(long)]
    dims: Option<String>,
    /// Minibatch size (0 = full batch)
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    #[arg(long = "data-seed")]
    data_seed: Option<String>,
    /// constant, cosine or warmup-cooldown
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    warmup: Option<String>,
    #[arg(long)]
    cooldown: Option<String>,
    /// CSV output path (stdout if absent)
    #[arg(long)]
    out: Option<String>,
    /// Checkpoint path written at the end of training
    #[arg(long)]
    ckpt: Option<String>,
    /// none or approx
    #[arg(long = "rotate-v")]
    rotate_v: Option<String>,
    #[arg(long = "refresh-lambda")]
    refresh_lambda: bool,
    #[arg(long = "parallel-layers")]
    parallel_layers: bool,
    /// Record wall-clock milliseconds in the CSV
    #[arg(long)]
    timing: bool,
    /// Benchmark sizes, e.g. 64,512
    #[arg(long)]
    sizes: Option<String>,
    /// Benchmark subspace fractions, e.g. 1/4,1/2
    #[arg(long)]
    fractions: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    /// Refresh intervals swept by cost-audit, e.g. 1,2,5
    #[arg(long)]
    intervals: Option<String>,
    /// Disable the QR sign fix (on the new path only, for check-equivalence).
    #[arg(long = "no-sign-fix", hide = true)]
    no_sign_fix: bool,
}

impl Flags {
    fn settings(&self, defaults: &[(&str, &str)]) -> Result<Settings> {
        let mut s = Settings::new();
        for (k, v) in defaults {
            s.set(k, v, "default")?;
        }
        if let Some(path) = &self.config {
            s.load_file(path)?;
        }
        let values = [
            ("method", &self.method),
            ("param", &self.param),
            ("precision", &self.precision),
            ("T", &self.t),
            ("B", &self.b),
            ("K", &self.k),
            ("select", &self.select),
            ("basis", &self.basis),
            ("lr", &self.lr),
            ("lr-min", &self.lr_min),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("damping", &self.damping),
            ("wd", &self.wd),
            ("steps", &self.steps),
            ("seed", &self.seed),
            ("task", &self.task),
            ("dims", &self.dims),
            ("batch", &self.batch),
            ("noise", &self.noise),
            ("data-seed", &self.data_seed),
            ("schedule", &self.schedule),
            ("warmup", &self.warmup),
            ("cooldown", &self.cooldown),
            ("out", &self.out),
            ("ckpt", &self.ckpt),
            ("rotate-v", &self.rotate_v),
            ("sizes", &self.sizes),
            ("fractions", &self.fractions),
            ("reps", &self.reps),
            ("intervals", &self.intervals),
        ];
        for (key, value) in values {
            if let Some(v) = value {
                s.set(key, v, format!("--{key}"))?;
            }
        }
        for (key, on) in [
            ("refresh-lambda", self.refresh_lambda),
            ("parallel-layers", self.parallel_layers),
            ("timing", self.timing),
        ] {
            if on {
                s.set(key, "true", format!("--{key}"))?;
            }
        }
        if self.no_sign_fix {
            s.set("sign-fix", "false", "--no-sign-fix")?;
        }
        Ok(s)
    }
}

fn two_dims(s: &Settings) -> Result<(usize, usize)> {
    let raw = s.get("dims").unwrap_or("8x12");
    match parse_dims(raw).map_err(|m| Error::Config { location: "--dims".into(), message: m })?[..] {
        [a, b] if a > 0 && b > 0 => Ok((a, b)),
        _ => Err(Error::Config { location: "--dims".into(), message: format!("expected two positive dims, got `{raw}`") }),
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn cmd_train(flags: &Flags) -> Result<i32> {
    let run = RunConfig::from_settings(&flags.settings(&[])?)?;
    let outcome = train(&run)?;
    write_csv(&outcome.records, output(&run.out)?)?;
    if let Some(path) = &run.ckpt {
        checkpoint::save(path, &outcome.layers)?;
    }
    eprintln!(
        "{} {} {} on {} for {} steps: loss {:.6e} -> {:.6e}",
        run.optim.method,
        run.optim.parametrization,
        run.optim.storage,
        run.task.kind,
        run.steps,
        outcome.records[0].train_loss,
        outcome.final_train_loss()
    );
    Ok(exit::OK)
}

fn cmd_check_equivalence(flags: &Flags) -> Result<i32> {
    let s = flags.settings(&[("dims", "8x12"), ("steps", "200"), ("T", "5"), ("damping", "1e-2"), ("precision", "fp64")])?;
    let run = RunConfig::from_settings(&s)?;
    let (d1, d2) = two_dims(&s)?;
    // `--no-sign-fix` only affects the new path; the old path stays canonical.
    let opts = EquivalenceOptions {
        d1,
        d2,
        steps: run.steps,
        optim: precond::OptimConfig { sign_fix: true, ..run.optim.clone() },
        break_sign_fix: !run.optim.sign_fix,
    };
    let r = check_equivalence(&opts)?;
    println!("method {} dims {d1}x{d2} T={} steps {}", run.optim.method, run.optim.interval, r.steps);
    println!("max relative theta deviation {:.3e} (tolerance {THETA_TOLERANCE:e})", r.max_theta_deviation);
    println!("max |P - Q^T S Q|            {:.3e} (tolerance {COMPANION_TOLERANCE:e})", r.max_companion_deviation);
    println!("max |Q_old - Q_new|          {:.3e}", r.max_basis_deviation);
    match r.first_violation {
        None => {
            println!("PASS");
            Ok(exit::OK)
        }
        Some(step) => {
            println!("FAIL: first violation at step {step}");
            Ok(exit::VIOLATION)
        }
    }
}

fn cmd_bench(flags: &Flags) -> Result<i32> {
    let s = flags.settings(&[("precision", "fp64")])?;
    let run = RunConfig::from_settings(&s)?;
    let rows = bench::bench_decomp(&run.sizes, &run.fractions, run.optim.storage, run.reps, run.optim.seed)?;
    bench::write_bench_csv(&rows, output(&run.out)?)?;
    let violations = bench::ordering_violations(&rows);
    for v in &violations {
        eprintln!("ordering violated: {v}");
    }
    Ok(if violations.is_empty() { exit::OK } else { exit::VIOLATION })
}

fn cmd_cost_audit(flags: &Flags) -> Result<i32> {
    let s = flags.settings(&[("dims", "8x8")])?;
    let run = RunConfig::from_settings(&s)?;
    let (d1, d2) = two_dims(&s)?;
    let intervals = if s.get("T").is_some() { vec![run.optim.interval] } else { run.intervals.clone() };
    // Without `--steps` every interval runs five refresh windows.
    let steps = s.get("steps").map(|_| run.steps);
    if let Some(steps) = steps {
        if let Some(t) = intervals.iter().find(|&&t| steps % t != 0) {
            return Err(Error::Config { location: "--steps".into(), message: format!("{steps} steps is not a multiple of T={t}") });
        }
    }
    let mut report = precond::harness::cost_audit::AuditReport::default();
    for &t in &intervals {
        let windows = steps.map_or(5, |n| n / t);
        let fraction = if run.optim.subspace_fraction < 1.0 { run.optim.subspace_fraction } else { 0.5 };
        let opts = AuditOptions {
            d1,
            d2,
            intervals: vec![t],
            windows,
            seed: run.optim.seed,
            subspace: report.subspace.is_empty().then_some((fraction, run.optim.inner_steps)),
        };
        let r = cost_audit(&opts)?;
        report.intervals.extend(r.intervals);
        report.subspace.extend(r.subspace);
    }
    println!("T   steps  old_mm  new_mm  old_mm(2-4)  new_mm(2-4)  result");
    for a in &report.intervals {
        let verdict = if !a.mismatches.is_empty() {
            "FAIL (per-step counts)"
        } else if a.new_mm < a.old_mm {
            "new cheaper"
        } else if a.advantage_required() {
            "FAIL (new not cheaper)"
        } else {
            "new costlier (expected for T=1)"
        };
        println!(
            "{:<3} {:<6} {:<7} {:<7} {:<12} {:<12} {verdict}",
            a.interval, a.steps, a.old_mm, a.new_mm, a.old_mm_without_preconditioning, a.new_mm_without_preconditioning
        );
        for m in &a.mismatches {
            println!("    {m}");
        }
    }
    for sub in &report.subspace {
        println!(
            "subspace {} over {} refreshes: mm {} smm {} qr {} smm-fraction {:.6} (expected mm {} smm {} qr {} smm-fraction {:.6}) {}",
            sub.parametrization,
            sub.refreshes,
            sub.measured.mm,
            sub.measured.smm,
            sub.measured.qr,
            sub.measured.smm_fraction_sum,
            sub.expected.mm,
            sub.expected.smm,
            sub.expected.qr,
            sub.expected.smm_fraction_sum,
            if sub.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(if report.passed() { exit::OK } else { exit::VIOLATION })
}

fn cmd_ckpt_dump(path: &PathBuf) -> Result<i32> {
    print!("{}", checkpoint::dump(&std::fs::read(path)?)?);
    Ok(exit::OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(f) => cmd_train(f),
        Command::CheckEquivalence(f) => cmd_check_equivalence(f),
        Command::BenchDecomp(f) => cmd_bench(f),
        Command::CostAudit(f) => cmd_cost_audit(f),
        Command::CkptDump { path } => cmd_ckpt_dump(path),
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
