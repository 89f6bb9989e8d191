//! Trains the two-layer MLP with KL-Shampoo and greedy subspace refreshes,
//! printing the loss curve.

use precond::harness::{train, RunConfig, Schedule, TaskKind, TaskSpec};
use precond::{OptimConfig, Selection};

fn main() -> precond::Result<()> {
    let mut run = RunConfig {
        task: TaskSpec { batch_size: 64, ..TaskSpec::new(TaskKind::TwoLayerMlp, &[16, 24, 4]) },
        steps: 400,
        schedule: Schedule::WarmupCooldown { warmup: 20, cooldown: 100 },
        ..Default::default()
    };
    run.optim = OptimConfig { gamma: 0.03, selection: Selection::Greedy, subspace_fraction: 0.5, inner_steps: 2, interval: 5, ..Default::default() };
    let out = train(&run)?;
    for r in out.records.iter().step_by(50) {
        println!("step {:>3}  train {:.4}  eval {:.4}", r.step, r.train_loss, r.eval_loss);
    }
    Ok(())
}
