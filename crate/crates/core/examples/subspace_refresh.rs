//! Diagonalizes a fixed factor with repeated subspace passes, comparing
//! greedy and random block selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use precond::matcore::{product, transpose};
use precond::subspace::{off_diagonal_frobenius, select_greedy, select_random, subspace_pass};
use precond::{BasisSolver, CostLedger, OptimConfig, Precision, Selection, StorageMatrix};

fn main() -> precond::Result<()> {
    let d = 12;
    let m = StorageMatrix::from_vec(d, d, (0..d * d).map(|k| ((k * 7919) % 23) as f64 / 23.0 - 0.5).collect(), Precision::Fp64)?;
    let s = product(&m, &transpose(&m))?;
    let cfg = OptimConfig { storage: Precision::Fp64, basis_solver: BasisSolver::Eig, ..Default::default() };

    for selection in [Selection::Greedy, Selection::Random] {
        let (mut q, mut p) = (StorageMatrix::identity(d, Precision::Fp64), s.clone());
        let mut ledger = CostLedger::for_layer(d, d);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let start = off_diagonal_frobenius(&p);
        print!("{selection:?}:");
        for pass in 1..=60 {
            let idx = match selection {
                Selection::Greedy => select_greedy(&p, 4)?,
                _ => select_random(d, 4, &mut rng)?,
            };
            subspace_pass(&mut q, &mut p, &idx, &cfg, &mut ledger)?;
            if pass % 15 == 0 {
                print!("  pass {pass}: {:.1e}", off_diagonal_frobenius(&p) / start);
            }
        }
        println!("  ({} smm, {:.2} mm-equivalent)", ledger.smm_count(), ledger.smm_fraction_sum());
    }
    Ok(())
}
