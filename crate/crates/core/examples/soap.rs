//! SOAP and KL-SOAP (Adam in the factor eigenbasis) against KL-Shampoo on a
//! softmax regression.

use precond::harness::{train, RunConfig, Schedule, TaskKind, TaskSpec};
use precond::{Method, OptimConfig};

fn main() -> precond::Result<()> {
    for (method, gamma) in [(Method::KlShampoo, 0.05), (Method::KlSoap, 0.01), (Method::Soap, 0.01)] {
        let mut run = RunConfig {
            task: TaskSpec { batch_size: 64, ..TaskSpec::new(TaskKind::SoftmaxRegression, &[16, 4]) },
            steps: 300,
            schedule: Schedule::Cosine { min_lr: 0.0 },
            ..Default::default()
        };
        run.optim = OptimConfig { method, gamma, interval: 5, ..Default::default() };
        let out = train(&run)?;
        let last = out.records.last().unwrap();
        println!("{method:<10} train {:.4}  eval {:.4}", last.train_loss, last.eval_loss);
    }
    Ok(())
}
