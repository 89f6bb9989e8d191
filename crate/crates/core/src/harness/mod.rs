//! Command-line harness: toy training runs, equivalence and cost checks,
//! decomposition benchmarks and checkpoints.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod cost_audit;
pub mod equivalence;
pub mod record;
pub mod schedule;
pub mod tasks;
pub mod train;

pub use config::{RunConfig, Settings};
pub use schedule::Schedule;
pub use tasks::{TaskKind, TaskSpec, ToyTask};
pub use train::{train, TrainOutcome};

use crate::error::Error;

/// Process exit codes of the `precond` binary.
pub mod exit {
    pub const OK: i32 = 0;
    pub const BAD_CONFIG: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const VIOLATION: i32 = 4;
}

/// Exit code for an error that aborted a command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical { .. } | Error::Singular { .. } | Error::Decomposition { .. } | Error::Convergence(_) => exit::NUMERICAL,
        _ => exit::BAD_CONFIG,
    }
}
