//! Numerical kernels used by the optimizer steps: a canonical (sign-fixed)
//! Householder QR, a tridiagonal-QL symmetric eigensolver and a deterministic
//! top-k selection.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::matcore::StorageMatrix;

/// Relative threshold below which a diagonal entry of `R` marks the input as
/// singular.
pub const SINGULAR_THRESHOLD: f64 = 1e-30;

/// QL sweeps allowed per eigenvalue before giving up.
pub const QL_MAX_ITERATIONS: usize = 60;

/// A QR factorization `a = q·r`.
#[derive(Clone, Debug)]
pub struct QrResult {
    pub q: StorageMatrix,
    pub r: StorageMatrix,
}

/// A symmetric eigendecomposition with eigenvalues in ascending order.
#[derive(Clone, Debug)]
pub struct EigResult {
    /// Columns are eigenvectors.
    pub vectors: StorageMatrix,
    pub values: Vec<f64>,
}

/// Householder QR without any sign normalization.
///
/// Reflectors are chosen for stability (`R[j,j] = -sign(a_jj)·‖x‖`), so the
/// diagonal of `R` generally has mixed signs. Computed in `f64`; the factors
/// are returned at the input's working precision.
pub fn qr_householder(a: &StorageMatrix) -> Result<QrResult> {
    if !a.is_square() {
        return Err(Error::shape(
            "qr",
            format!("expected a square matrix, got {:?}", a.shape()),
        ));
    }
    let n = a.rows();
    let precision = a.precision().working();
    let mut r = a.values().into_owned();
    let mut reflectors: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n);
    let mut w = vec![0.0; n];

    for j in 0..n {
        // A column already zero below the diagonal needs no reflection.
        let below: f64 = ((j + 1)..n).map(|i| r[i * n + j].powi(2)).sum();
        if below == 0.0 {
            reflectors.push((Vec::new(), 0.0));
            continue;
        }
        let norm = (r[j * n + j].powi(2) + below).sqrt();
        let ajj = r[j * n + j];
        let alpha = if ajj >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..n).map(|i| r[i * n + j]).collect();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv == 0.0 {
            reflectors.push((Vec::new(), 0.0));
            continue;
        }
        let beta = 2.0 / vtv;
        apply_reflector(&mut r, n, j, &v, beta, &mut w);
        r[j * n + j] = alpha;
        for i in (j + 1)..n {
            r[i * n + j] = 0.0;
        }
        reflectors.push((v, beta));
    }

    // Q = H_0 H_1 ... H_{n-1}, accumulated from the right.
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }
    for (j, (v, beta)) in reflectors.iter().enumerate().rev() {
        if *beta != 0.0 {
            apply_reflector(&mut q, n, j, v, *beta, &mut w);
        }
    }

    Ok(QrResult {
        q: StorageMatrix::from_vec(n, n, q, precision)?,
        r: StorageMatrix::from_vec(n, n, r, precision)?,
    })
}

/// Applies `H = I - beta·v·vᵀ` (with `v` supported on rows `j..n`) from the
/// left to the trailing block `m[j.., j..]`.
fn apply_reflector(m: &mut [f64], n: usize, j: usize, v: &[f64], beta: f64, w: &mut [f64]) {
    let w = &mut w[j..n];
    w.iter_mut().for_each(|x| *x = 0.0);
    for (vi, row) in v.iter().zip(m[j * n..].chunks_exact(n)) {
        for (wc, &x) in w.iter_mut().zip(&row[j..]) {
            *wc += vi * x;
        }
    }
    for (vi, row) in v.iter().zip(m[j * n..].chunks_exact_mut(n)) {
        let f = beta * vi;
        for (x, &wc) in row[j..].iter_mut().zip(w.iter()) {
            *x -= f * wc;
        }
    }
}

/// Canonicalizes any QR factorization to the unique one with a positive
/// diagonal of `R`: `Q̄ = Q·D`, `R̄ = D·R` with `D = Diag(sign(diag(R)))`.
pub fn canonicalize_qr(qr: QrResult) -> Result<QrResult> {
    let QrResult { mut q, mut r } = qr;
    let n = r.rows();
    let scale = r.max_abs();
    for j in 0..n {
        let d = r.get(j, j);
        if d.abs() <= SINGULAR_THRESHOLD * scale || d.is_nan() {
            return Err(Error::Singular { index: j, value: d.abs() });
        }
        if d < 0.0 {
            for i in 0..n {
                q.set(i, j, -q.get(i, j));
            }
            for c in 0..n {
                r.set(j, c, -r.get(j, c));
            }
        }
    }
    // Fold -0.0 into +0.0 so the canonical factors are unique bit for bit.
    Ok(QrResult {
        q: q.map(|x| x + 0.0),
        r: r.map(|x| x + 0.0),
    })
}

/// The unique QR factorization of a nonsingular square matrix, with a
/// strictly positive diagonal of `R`.
pub fn qr_sign_fixed(a: &StorageMatrix) -> Result<QrResult> {
    canonicalize_qr(qr_householder(a)?)
}

/// Symmetric eigendecomposition: Householder reduction to tridiagonal form
/// followed by implicit QL iterations.
///
/// The input is symmetrized as `(a + aᵀ)/2` first. Eigenvalues are ascending;
/// each eigenvector is signed so that its largest-magnitude entry (lowest row
/// index on ties) is positive.
pub fn eig_symmetric(a: &StorageMatrix) -> Result<EigResult> {
    if !a.is_square() {
        return Err(Error::shape(
            "eig_symmetric",
            format!("expected a square matrix, got {:?}", a.shape()),
        ));
    }
    let n = a.rows();
    let precision = a.precision().working();
    if n == 0 {
        return Ok(EigResult { vectors: StorageMatrix::zeros(0, 0, precision), values: Vec::new() });
    }
    let src = a.values();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            v[i * n + j] = 0.5 * (src[i * n + j] + src[j * n + i]);
        }
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Convergence("eig_symmetric input has non-finite entries".into()));
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut v, &mut d, &mut e, n);
    // Rows of `vt` are the eigenvectors, so the QL rotations touch contiguous rows.
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            vt[j * n + i] = v[i * n + j];
        }
    }
    tridiagonal_ql(&mut d, &mut e, &mut vt, n)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&k| d[k]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &k) in order.iter().enumerate() {
        let v = &vt[k * n..(k + 1) * n];
        let mut lead = 0;
        for i in 1..n {
            if v[i].abs() > v[lead].abs() {
                lead = i;
            }
        }
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[i * n + col] = sign * v[i];
        }
    }

    Ok(EigResult {
        vectors: StorageMatrix::from_vec(n, n, vectors, precision)?,
        values,
    })
}

/// Householder reduction of the symmetric `v` to tridiagonal form. On return
/// `d` holds the diagonal, `e[1..]` the subdiagonal and `v` the accumulated
/// orthogonal transform.
fn tridiagonalize(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    let at = |i: usize, j: usize| i * n + j;
    d.copy_from_slice(&v[at(n - 1, 0)..at(n - 1, 0) + n]);
    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for x in &mut d[..i] {
                *x /= scale;
                h += *x * *x;
            }
            let f = d[i - 1];
            let g = if f > 0.0 { -h.sqrt() } else { h.sqrt() };
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].fill(0.0);
            for j in 0..i {
                let f = d[j];
                v[at(j, i)] = f;
                let mut g = e[j] + v[at(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let (f, g) = (d[j], e[j]);
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Implicit QL on the tridiagonal `(d, e)`, applying every rotation to the
/// rows of `vt`. Leaves the eigenvalues in `d`, unsorted.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], vt: &mut [f64], n: usize) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n && e[m].abs() > f64::EPSILON * tst1 {
            m += 1;
        }
        // e[n-1] is zero, so m stays in range.
        let m = m.min(n - 1);
        let mut iterations = 0;
        while m > l && e[l].abs() > f64::EPSILON * tst1 {
            iterations += 1;
            if iterations > QL_MAX_ITERATIONS {
                return Err(Error::Convergence(format!(
                    "tridiagonal QL did not converge for eigenvalue {l} of {n}"
                )));
            }
            let g = d[l];
            let mut p = (d[l + 1] - g) / (2.0 * e[l]);
            let mut r = p.hypot(1.0);
            if p < 0.0 {
                r = -r;
            }
            d[l] = e[l] / (p + r);
            d[l + 1] = e[l] * (p + r);
            let dl1 = d[l + 1];
            let h = g - d[l];
            for x in &mut d[l + 2..n] {
                *x -= h;
            }
            f += h;

            p = d[m];
            let (mut c, mut c2, mut c3) = (1.0, 1.0, 1.0);
            let el1 = e[l + 1];
            let (mut s, mut s2) = (0.0, 0.0);
            for i in (l..m).rev() {
                c3 = c2;
                c2 = c;
                s2 = s;
                let g = c * e[i];
                let h = c * p;
                r = p.hypot(e[i]);
                e[i + 1] = s * r;
                s = e[i] / r;
                c = p / r;
                p = c * d[i] - s * g;
                d[i + 1] = h + s * (c * g + s * d[i]);
                let (head, tail) = vt.split_at_mut((i + 1) * n);
                let vi = &mut head[i * n..];
                for (x, y) in vi.iter_mut().zip(tail[..n].iter_mut()) {
                    let (a, b) = (*x, *y);
                    *y = s * a + c * b;
                    *x = c * a - s * b;
                }
            }
            p = -s * s2 * c3 * el1 * e[l] / dl1;
            e[l] = s * p;
            d[l] = c * p;
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Indices of the `k` largest entries, largest first; equal values are
/// ordered by smaller index.
pub fn top_k(values: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > values.len() {
        return Err(Error::Argument(format!(
            "top_k asked for {k} of {} values",
            values.len()
        )));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| match values[b].total_cmp(&values[a]) {
        Ordering::Equal => a.cmp(&b),
        other => other,
    });
    idx.truncate(k);
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{orthogonality_error, product, transpose, Precision::*};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> StorageMatrix {
        let v = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        StorageMatrix::from_vec(n, n, v, Fp64).unwrap()
    }

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> StorageMatrix {
        let mut a = random(n, rng);
        a.symmetrize();
        a
    }

    #[test]
    fn qr_of_identity_is_identity() {
        let qr = qr_sign_fixed(&StorageMatrix::identity(4, Fp64)).unwrap();
        assert!(qr.q.bitwise_eq(&StorageMatrix::identity(4, Fp64)));
        assert!(qr.r.bitwise_eq(&StorageMatrix::identity(4, Fp64)));
    }

    #[test]
    fn qr_sign_fix_on_diagonal() {
        let qr = qr_sign_fixed(&StorageMatrix::diag(&[-2.0, 3.0], Fp64)).unwrap();
        assert_eq!(qr.q.to_vec(), vec![-1.0, 0.0, 0.0, 1.0]);
        assert_eq!(qr.r.to_vec(), vec![2.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn qr_reconstructs_and_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 5, 17] {
            let a = random(n, &mut rng);
            let qr = qr_sign_fixed(&a).unwrap();
            assert!(orthogonality_error(&qr.q) < 1e-13);
            let back = product(&qr.q, &qr.r).unwrap();
            assert!(back.max_abs_diff(&a) < 1e-13);
            for j in 0..n {
                assert!(qr.r.get(j, j) > 0.0);
                for i in (j + 1)..n {
                    assert_eq!(qr.r.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn qr_fp32_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random(64, &mut rng).to_precision(Fp32);
        let qr = qr_sign_fixed(&a).unwrap();
        assert_eq!(qr.q.precision(), Fp32);
        assert!(orthogonality_error(&qr.q) <= 1e-5);
    }

    #[test]
    fn singular_input_is_reported() {
        let a = StorageMatrix::from_rows(&[&[1.0, 2.0], &[0.0, 0.0]], Fp64);
        match qr_sign_fixed(&a) {
            Err(Error::Singular { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected singular error, got {other:?}"),
        }
        assert!(matches!(
            qr_sign_fixed(&StorageMatrix::zeros(3, 3, Fp64)),
            Err(Error::Singular { index: 0, .. })
        ));
    }

    #[test]
    fn qr_rejects_rectangular() {
        assert!(matches!(
            qr_sign_fixed(&StorageMatrix::zeros(2, 3, Fp64)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn eig_of_diagonal() {
        let e = eig_symmetric(&StorageMatrix::diag(&[3.0, 1.0, 2.0], Fp64)).unwrap();
        assert_eq!(e.values, vec![1.0, 2.0, 3.0]);
        let expected = StorageMatrix::from_rows(
            &[&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]],
            Fp64,
        );
        assert!(e.vectors.bitwise_eq(&expected));
    }

    #[test]
    fn eig_of_2x2() {
        let a = StorageMatrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]], Fp64);
        let e = eig_symmetric(&a).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn eig_reconstructs_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let a = random_symmetric(16, &mut rng);
            let e = eig_symmetric(&a).unwrap();
            let vd = crate::matcore::scale_cols(&e.vectors, &e.values).unwrap();
            let back = product(&vd, &transpose(&e.vectors)).unwrap();
            let rel = crate::matcore::elemwise(&back, &a, |x, y| x - y).unwrap().frobenius()
                / a.frobenius();
            assert!(rel <= 1e-10, "relative reconstruction error {rel:e}");
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
            assert!(orthogonality_error(&e.vectors) < 1e-12);
            for k in 0..16 {
                let col = e.vectors.col(k);
                let lead = col
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, x)| if x.abs() > col[best].abs() { i } else { best });
                assert!(col[lead] > 0.0);
            }
        }
    }

    #[test]
    fn top_k_basic_and_ties() {
        let mut got = top_k(&[0.1, 0.9, 0.5], 2).unwrap();
        got.sort();
        assert_eq!(got, vec![1, 2]);
        assert_eq!(top_k(&[1.0, 1.0, 1.0], 2).unwrap(), vec![0, 1]);
        assert!(matches!(top_k(&[1.0], 2), Err(Error::Argument(_))));
    }

    #[test]
    fn top_k_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..1000 {
            let n = rng.random_range(1..40);
            // Coarse values so ties actually occur.
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
            let k = rng.random_range(0..=n);
            let mut oracle: Vec<(f64, usize)> =
                values.iter().enumerate().map(|(i, &v)| (v, i)).collect();
            oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let expected: Vec<usize> = oracle.iter().take(k).map(|p| p.1).collect();
            assert_eq!(top_k(&values, k).unwrap(), expected);
        }
    }
}
