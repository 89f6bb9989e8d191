use super::ledger::CostLedger;
use super::precision::Precision;
use super::storage::StorageMatrix;
use crate::error::{Error, Result};

/// Plain product without cost accounting. Accumulates in `f64`; the result
/// is held at the operands' combined working precision.
pub fn product(a: &StorageMatrix, b: &StorageMatrix) -> Result<StorageMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0f64; m * n];
    if m > 0 && n > 0 && k > 0 {
        let av = a.values();
        let bv = b.values();
        // SAFETY: the slices are dense row-major buffers of exactly m*k, k*n
        // and m*n elements, matching the strides passed below.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                av.as_ptr(),
                k as isize,
                1,
                bv.as_ptr(),
                n as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    let precision = a.precision().combine(b.precision());
    StorageMatrix::from_vec(m, n, out, precision)
}

/// Matrix product charged to `ledger` (mm or smm depending on the shapes).
pub fn matmul(a: &StorageMatrix, b: &StorageMatrix, ledger: &mut CostLedger) -> Result<StorageMatrix> {
    let out = product(a, b)?;
    ledger.charge_product(a.rows(), a.cols(), b.cols());
    Ok(out)
}

/// Matrix product charged as a subspace product replacing a full product of
/// shape `full` (see [`CostLedger::charge_subspace`]).
pub fn matmul_subspace(
    a: &StorageMatrix,
    b: &StorageMatrix,
    ledger: &mut CostLedger,
    full: (usize, usize, usize),
) -> Result<StorageMatrix> {
    let out = product(a, b)?;
    ledger.charge_subspace(a.rows(), a.cols(), b.cols(), full);
    Ok(out)
}

pub fn transpose(a: &StorageMatrix) -> StorageMatrix {
    let (r, c) = a.shape();
    let v = a.values();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = v[i * c + j];
        }
    }
    StorageMatrix::from_vec(c, r, out, a.precision()).unwrap()
}

/// Entrywise combination `op(a[i,j], b[i,j])` at the combined working precision.
pub fn elemwise(
    a: &StorageMatrix,
    b: &StorageMatrix,
    op: impl Fn(f64, f64) -> f64,
) -> Result<StorageMatrix> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "elemwise",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let out = a
        .values()
        .iter()
        .zip(b.values().iter())
        .map(|(&x, &y)| op(x, y))
        .collect();
    StorageMatrix::from_vec(a.rows(), a.cols(), out, a.precision().combine(b.precision()))
}

/// `a · Diag(v)`: column `j` scaled by `v[j]`. Not charged as an mm.
pub fn scale_cols(a: &StorageMatrix, v: &[f64]) -> Result<StorageMatrix> {
    if v.len() != a.cols() {
        return Err(Error::shape(
            "scale_cols",
            format!("{} scales for {} columns", v.len(), a.cols()),
        ));
    }
    let c = a.cols();
    let out = a
        .values()
        .iter()
        .enumerate()
        .map(|(idx, &x)| x * v[idx % c])
        .collect();
    StorageMatrix::from_vec(a.rows(), c, out, a.precision().working())
}

/// `Diag(v) · a`: row `i` scaled by `v[i]`. Not charged as an mm.
pub fn scale_rows(a: &StorageMatrix, v: &[f64]) -> Result<StorageMatrix> {
    if v.len() != a.rows() {
        return Err(Error::shape(
            "scale_rows",
            format!("{} scales for {} rows", v.len(), a.rows()),
        ));
    }
    let c = a.cols();
    let out = a
        .values()
        .iter()
        .enumerate()
        .map(|(idx, &x)| x * v[idx / c])
        .collect();
    StorageMatrix::from_vec(a.rows(), c, out, a.precision().working())
}

/// `(a ⊙ a) 1`: the sum of squares of every row.
pub fn row_sum_of_squares(a: &StorageMatrix) -> Vec<f64> {
    let c = a.cols();
    let v = a.values();
    (0..a.rows())
        .map(|i| v[i * c..(i + 1) * c].iter().map(|x| x * x).sum())
        .collect()
}

/// `(1 - beta) * current + beta * update`, the EMA convention that weights the
/// new statistic by `beta`. The result keeps the working precision.
pub fn ema(current: &StorageMatrix, update: &StorageMatrix, beta: f64) -> Result<StorageMatrix> {
    elemwise(current, update, |s, d| (1.0 - beta) * s + beta * d)
}

/// `a * s` at working precision.
pub fn scaled(a: &StorageMatrix, s: f64) -> StorageMatrix {
    let out = a.values().iter().map(|&x| x * s).collect();
    StorageMatrix::from_vec(a.rows(), a.cols(), out, a.precision().working()).unwrap()
}

/// Max-norm distance of `qᵀq` from the identity.
pub fn orthogonality_error(q: &StorageMatrix) -> f64 {
    let qtq = product(&transpose(q), q).expect("square product");
    let n = qtq.rows();
    let mut err = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((qtq.get(i, j) - target).abs());
        }
    }
    err
}

/// Working-precision identity of size `n`, matching `like`'s working precision.
pub fn identity_like(n: usize, like: Precision) -> StorageMatrix {
    StorageMatrix::identity(n, like.working())
}
