//! Per-step matrix-product counts of both parametrizations over one refresh
//! window.

use precond::harness::equivalence::GradientStream;
use precond::{init_layer, OptimConfig, Parametrization};

fn main() -> precond::Result<()> {
    let t = 4;
    for p in [Parametrization::Old, Parametrization::New] {
        let cfg = OptimConfig { parametrization: p, interval: t, ..Default::default() };
        let mut state = init_layer(8, 8, &cfg)?;
        let mut grads = GradientStream::new(8, 8, 0);
        let mut per_step = Vec::new();
        for _ in 0..t {
            per_step.push(state.step(&grads.next_gradient(), &cfg)?.total_cost().mm);
        }
        println!("{p}: mm per step {per_step:?}, window total {}", per_step.iter().sum::<u64>());
    }
    Ok(())
}
