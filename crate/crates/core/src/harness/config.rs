//! Run configuration from flat `key = value` files and command-line overrides.
//!
//! Every command-line flag has a config key of the same name (without the
//! leading dashes). Blank lines and lines starting with `#` are ignored.
//! Unknown keys are rejected. Later sources override earlier ones: command
//! defaults, then the file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::{parse_fraction, OptimConfig};
use crate::error::{Error, Result};
use crate::harness::schedule::Schedule;
use crate::harness::tasks::{TaskKind, TaskSpec};

/// Every key a config file may contain.
pub const KNOWN_KEYS: &[&str] = &[
    "method", "param", "precision", "T", "B", "K", "select", "basis", "lr", "lr-min", "beta1",
    "beta2", "damping", "wd", "steps", "seed", "task", "dims", "batch", "noise", "data-seed",
    "schedule", "warmup", "cooldown", "out", "ckpt", "refresh-lambda", "rotate-v",
    "parallel-layers", "timing", "sizes", "fractions", "reps", "intervals", "sign-fix",
];

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    location: String,
}

/// Raw key/value settings with the place each value came from.
#[derive(Clone, Debug, Default)]
pub struct Settings {
    entries: BTreeMap<String, Entry>,
}

impl Settings {
    pub fn new() -> Self {
        Settings::default()
    }

    /// Sets `key`, rejecting unknown keys. `location` is used in diagnostics.
    pub fn set(&mut self, key: &str, value: &str, location: impl Into<String>) -> Result<()> {
        let location = location.into();
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::config(location, format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), Entry { value: value.trim().to_string(), location });
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn parse_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let location = format!("{source}:{}", n + 1);
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(location, format!("expected `key = value`, got `{line}`")));
            };
            self.set(key.trim(), value, location)?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read config: {e}")))?;
        self.parse_text(&text, &path.display().to_string())
    }

    fn parse<T>(&self, key: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => f(&e.value)
                .map(Some)
                .map_err(|msg| Error::config(e.location.clone(), format!("`{key}`: {msg}"))),
        }
    }

    fn parse_from_str<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key, |s| s.parse::<T>().map_err(|e| e.to_string()))
    }

    fn location(&self, key: &str) -> String {
        self.entries.get(key).map(|e| e.location.clone()).unwrap_or_else(|| key.to_string())
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("`{s}` is not a boolean")),
    }
}

/// `8x12`, `8,12` or `64x48x16`.
pub fn parse_dims(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(['x', 'X', ','])
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad dimension `{p}` in `{s}`")))
        .collect()
}

fn parse_list<T>(s: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    s.split(',').map(|p| f(p.trim())).collect()
}

fn parse_schedule(s: &str) -> std::result::Result<Schedule, String> {
    match s.to_ascii_lowercase().as_str() {
        "constant" => Ok(Schedule::Constant),
        "cosine" => Ok(Schedule::Cosine { min_lr: 0.0 }),
        "warmup-cooldown" | "wsd" => Ok(Schedule::WarmupCooldown { warmup: 0, cooldown: 0 }),
        _ => Err(format!("unknown schedule `{s}`")),
    }
}

/// Everything a command needs, fully parsed and validated.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub optim: OptimConfig,
    pub task: TaskSpec,
    pub steps: u64,
    pub schedule: Schedule,
    pub out: Option<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub parallel_layers: bool,
    /// Record wall-clock time per step. Off by default so output is reproducible.
    pub timing: bool,
    pub sizes: Vec<usize>,
    pub fractions: Vec<f64>,
    pub reps: usize,
    /// Refresh intervals swept by the cost audit.
    pub intervals: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            optim: OptimConfig::default(),
            task: TaskSpec::new(TaskKind::Quadratic, &TaskSpec::default_dims(TaskKind::Quadratic)),
            steps: 100,
            schedule: Schedule::Constant,
            out: None,
            ckpt: None,
            parallel_layers: false,
            timing: false,
            sizes: vec![64, 128, 256, 512],
            fractions: vec![0.25, 0.5],
            reps: 3,
            intervals: (2..=10).collect(),
        }
    }
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        let o = &mut c.optim;
        if let Some(v) = s.parse_from_str("method")? { o.method = v; }
        if let Some(v) = s.parse_from_str("param")? { o.parametrization = v; }
        if let Some(v) = s.parse_from_str("precision")? { o.storage = v; }
        if let Some(v) = s.parse_from_str("T")? { o.interval = v; }
        if let Some(v) = s.parse("B", parse_fraction)? { o.subspace_fraction = v; }
        if let Some(v) = s.parse_from_str("K")? { o.inner_steps = v; }
        if let Some(v) = s.parse_from_str("select")? { o.selection = v; }
        if let Some(v) = s.parse_from_str("basis")? { o.basis_solver = v; }
        if let Some(v) = s.parse_from_str("lr")? { o.gamma = v; }
        if let Some(v) = s.parse_from_str("beta1")? { o.beta1 = v; }
        if let Some(v) = s.parse_from_str("beta2")? { o.beta2 = v; }
        if let Some(v) = s.parse_from_str("damping")? { o.damping = v; }
        if let Some(v) = s.parse_from_str("wd")? { o.weight_decay = v; }
        if let Some(v) = s.parse_from_str("seed")? { o.seed = v; }
        if let Some(v) = s.parse("refresh-lambda", parse_bool)? { o.refresh_lambda = v; }
        if let Some(v) = s.parse_from_str("rotate-v")? { o.rotate_v = v; }
        if let Some(v) = s.parse("sign-fix", parse_bool)? { o.sign_fix = v; }
        // Selecting a subspace mode without a fraction means half the basis.
        if s.get("B").is_none() && o.selection != crate::config::Selection::Full {
            o.subspace_fraction = 0.5;
        }

        if let Some(kind) = s.parse_from_str::<TaskKind>("task")? {
            c.task = TaskSpec::new(kind, &TaskSpec::default_dims(kind));
        }
        if let Some(v) = s.parse("dims", parse_dims)? { c.task.dims = v; }
        if let Some(v) = s.parse_from_str("batch")? { c.task.batch_size = v; }
        if let Some(v) = s.parse_from_str("noise")? { c.task.noise_scale = v; }
        if let Some(v) = s.parse_from_str("data-seed")? { c.task.dataset_seed = v; }
        if let Some(v) = s.parse_from_str("steps")? { c.steps = v; }

        if let Some(v) = s.parse("schedule", parse_schedule)? { c.schedule = v; }
        match &mut c.schedule {
            Schedule::Cosine { min_lr } => {
                if let Some(v) = s.parse_from_str("lr-min")? { *min_lr = v; }
            }
            Schedule::WarmupCooldown { warmup, cooldown } => {
                if let Some(v) = s.parse_from_str("warmup")? { *warmup = v; }
                if let Some(v) = s.parse_from_str("cooldown")? { *cooldown = v; }
            }
            Schedule::Constant => {}
        }
        for key in ["lr-min", "warmup", "cooldown"] {
            let applies = matches!(
                (key, c.schedule),
                ("lr-min", Schedule::Cosine { .. }) | ("warmup" | "cooldown", Schedule::WarmupCooldown { .. })
            );
            if s.get(key).is_some() && !applies {
                return Err(Error::config(s.location(key), format!("`{key}` does not apply to the {} schedule", c.schedule)));
            }
        }

        c.out = s.get("out").map(PathBuf::from);
        c.ckpt = s.get("ckpt").map(PathBuf::from);
        if let Some(v) = s.parse("parallel-layers", parse_bool)? { c.parallel_layers = v; }
        if let Some(v) = s.parse("timing", parse_bool)? { c.timing = v; }
        if let Some(v) = s.parse("sizes", |x| parse_list(x, |p| p.parse::<usize>().map_err(|_| format!("bad size `{p}`"))))? {
            c.sizes = v;
        }
        if let Some(v) = s.parse("fractions", |x| parse_list(x, parse_fraction))? { c.fractions = v; }
        if let Some(v) = s.parse_from_str("reps")? { c.reps = v; }
        if let Some(v) = s.parse("intervals", |x| parse_list(x, |p| p.parse::<u64>().map_err(|_| format!("bad interval `{p}`"))))? {
            c.intervals = v;
        }

        c.optim.validate().map_err(|e| relocate(e, s))?;
        Ok(c)
    }
}

/// Maps a validation error on a field name back to where that field was set.
fn relocate(e: Error, s: &Settings) -> Error {
    match e {
        Error::Config { location: key, message } => Error::Config {
            location: s.location(&key),
            message: format!("`{key}`: {message}"),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Method, Parametrization, Selection};
    use crate::matcore::Precision;

    #[test]
    fn file_then_overrides() {
        let mut s = Settings::new();
        s.parse_text("# comment\nmethod = soap\nparam=old\nT = 4\nlr = 0.5\n\nprecision = bf16\n", "run.cfg").unwrap();
        s.set("lr", "0.25", "--lr").unwrap();
        let c = RunConfig::from_settings(&s).unwrap();
        assert_eq!(c.optim.method, Method::Soap);
        assert_eq!(c.optim.parametrization, Parametrization::Old);
        assert_eq!(c.optim.interval, 4);
        assert_eq!(c.optim.gamma, 0.25);
        assert_eq!(c.optim.storage, Precision::Bf16);
    }

    #[test]
    fn unknown_key_reports_line() {
        let mut s = Settings::new();
        let err = s.parse_text("lr = 1\n\nlearning_rate = 2\n", "a.cfg").unwrap_err();
        match err {
            Error::Config { location, message } => {
                assert_eq!(location, "a.cfg:3");
                assert!(message.contains("learning_rate"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_value_reports_line() {
        let mut s = Settings::new();
        s.parse_text("steps = 10\nbeta2 = 1.5\n", "b.cfg").unwrap();
        match RunConfig::from_settings(&s).unwrap_err() {
            Error::Config { location, .. } => assert_eq!(location, "b.cfg:2"),
            other => panic!("{other:?}"),
        }
        let mut s = Settings::new();
        s.parse_text("T = ten\n", "c.cfg").unwrap();
        assert!(matches!(RunConfig::from_settings(&s), Err(Error::Config { location, .. }) if location == "c.cfg:1"));
    }

    #[test]
    fn subspace_defaults_and_lists() {
        let mut s = Settings::new();
        s.parse_text("select = greedy\ndims = 6x5x2\ntask = mf\nsizes = 2,8\nfractions = 1/4, 1/2\n", "d.cfg").unwrap();
        let c = RunConfig::from_settings(&s).unwrap();
        assert_eq!(c.optim.selection, Selection::Greedy);
        assert_eq!(c.optim.subspace_fraction, 0.5);
        assert_eq!(c.task.dims, vec![6, 5, 2]);
        assert_eq!(c.sizes, vec![2, 8]);
        assert_eq!(c.fractions, vec![0.25, 0.5]);
    }

    #[test]
    fn schedule_keys_must_match() {
        let mut s = Settings::new();
        s.parse_text("schedule = cosine\nlr-min = 0.001\n", "e.cfg").unwrap();
        assert_eq!(RunConfig::from_settings(&s).unwrap().schedule, Schedule::Cosine { min_lr: 0.001 });
        let mut s = Settings::new();
        s.parse_text("warmup = 5\n", "f.cfg").unwrap();
        assert!(RunConfig::from_settings(&s).is_err());
    }
}
