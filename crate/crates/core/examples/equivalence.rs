//! Runs the stored-S and stored-P parametrizations side by side on the same
//! gradients and prints how far their iterates drift apart.

use precond::harness::equivalence::{check_equivalence, equivalence_options};
use precond::Method;

fn main() -> precond::Result<()> {
    for method in [Method::KlShampoo, Method::KlSoap, Method::Soap] {
        for t in [1, 5, 10] {
            let r = check_equivalence(&equivalence_options(8, 12, t, 200, method, 0))?;
            println!(
                "{method:<10} T={t:<2}  theta {:.1e}  |P - QᵀSQ| {:.1e}  {}",
                r.max_theta_deviation,
                r.max_companion_deviation,
                if r.passed() { "ok" } else { "MISMATCH" }
            );
        }
    }
    Ok(())
}
