//! Trains the same factorization with FP32 and BF16 optimizer storage under
//! both parametrizations.

use precond::harness::{train, RunConfig, Schedule, TaskKind, TaskSpec};
use precond::matcore::bf16_quantize;
use precond::{OptimConfig, Parametrization, Precision};

fn main() -> precond::Result<()> {
    let x = std::f32::consts::PI;
    println!("pi in bf16: {} (error {:.1e})", bf16_quantize(x), (bf16_quantize(x) - x).abs());

    for p in [Parametrization::Old, Parametrization::New] {
        for storage in [Precision::Fp32, Precision::Bf16] {
            let mut run = RunConfig {
                task: TaskSpec { noise_scale: 0.1, ..TaskSpec::new(TaskKind::MatrixFactorization, &[32, 24, 8]) },
                steps: 800,
                schedule: Schedule::Cosine { min_lr: 0.0 },
                ..Default::default()
            };
            run.optim = OptimConfig { gamma: 0.01, parametrization: p, storage, ..Default::default() };
            println!("{p} {storage}: final loss {:.6e}", train(&run)?.final_train_loss());
        }
    }
    Ok(())
}
