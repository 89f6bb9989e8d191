//! Saves a trained BF16 state, prints the file summary and reloads it.

use precond::harness::checkpoint::{dump, load, save};
use precond::harness::equivalence::GradientStream;
use precond::{init_layer, Method, OptimConfig, Precision};

fn main() -> precond::Result<()> {
    let cfg = OptimConfig { method: Method::KlSoap, storage: Precision::Bf16, ..Default::default() };
    let mut state = init_layer(6, 4, &cfg)?;
    let mut grads = GradientStream::new(6, 4, 3);
    for _ in 0..25 {
        state.step(&grads.next_gradient(), &cfg)?;
    }

    let path = std::env::temp_dir().join(format!("precond-example-{}.kprc", std::process::id()));
    save(&path, std::slice::from_ref(&state))?;
    print!("{}", dump(&std::fs::read(&path)?)?);
    let back = load(&path, Some(Precision::Bf16))?;
    println!("theta restored bit for bit: {}", back[0].theta().bitwise_eq(state.theta()));
    std::fs::remove_file(&path)?;
    Ok(())
}
