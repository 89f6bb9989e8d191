//! Householder QR leaves column signs arbitrary; the sign fix makes the
//! factorization unique.

use precond::decomp::{qr_householder, qr_sign_fixed};
use precond::{Precision, StorageMatrix};

fn main() -> precond::Result<()> {
    let a = StorageMatrix::from_rows(&[&[2.0, -1.0, 0.5], &[1.0, 3.0, -2.0], &[-0.5, 1.0, 4.0]], Precision::Fp64);
    let raw = qr_householder(&a)?;
    let fixed = qr_sign_fixed(&a)?;
    println!("raw   diag(R) = {:?}", raw.r.diagonal());
    println!("fixed diag(R) = {:?}", fixed.r.diagonal());
    println!("|Q_raw - Q_fixed| = {:.2}", raw.q.max_abs_diff(&fixed.q));
    Ok(())
}
