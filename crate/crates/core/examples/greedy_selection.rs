//! Shows which block the two-phase greedy rule picks on a small matrix.

use precond::subspace::select_greedy;
use precond::{Precision, StorageMatrix};

fn main() -> precond::Result<()> {
    let p = StorageMatrix::from_rows(
        &[
            &[4.0, 0.1, 0.0, 2.0, 0.0, 0.3],
            &[0.1, 3.0, 0.2, 0.0, 0.9, 0.0],
            &[0.0, 0.2, 2.0, 0.1, 0.0, 0.0],
            &[2.0, 0.0, 0.1, 1.0, 0.0, 0.5],
            &[0.0, 0.9, 0.0, 0.0, 1.5, 0.0],
            &[0.3, 0.0, 0.0, 0.5, 0.0, 0.5],
        ],
        Precision::Fp64,
    );
    // (0, 3) holds the largest off-diagonal square; 5 couples to both of them most.
    for b in [2, 3, 4] {
        println!("b={b}: {:?}", select_greedy(&p, b)?.indices());
    }
    Ok(())
}
