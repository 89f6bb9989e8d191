//! Wall-clock comparison of the decompositions used by basis refreshes.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{OptimConfig, Selection};
use crate::decomp::{eig_symmetric, qr_sign_fixed};
use crate::error::{Error, Result};
use crate::matcore::{product, transpose, CostLedger, Precision, StorageMatrix};
use crate::subspace::{block_size, select_random, subspace_pass};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    FullQr,
    /// One subspace pass: QR of a `b×b` block plus its three strip products.
    SubspaceQr,
    FullEig,
    Matmul,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::FullQr => "qr_full",
            Kernel::SubspaceQr => "qr_subspace",
            Kernel::FullEig => "eig_full",
            Kernel::Matmul => "mm",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub kernel: Kernel,
    pub d: usize,
    /// Subspace fraction; 1 for full-size kernels.
    pub fraction: f64,
    pub median_ms: f64,
}

/// Smallest size at which orderings are asserted; below it timings are
/// dominated by overheads.
pub const ORDERING_MIN_SIZE: usize = 512;

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) }
}

fn time_ms(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(samples))
}

fn random_spd(d: usize, precision: Precision, rng: &mut ChaCha8Rng) -> Result<StorageMatrix> {
    let v = (0..d * d).map(|_| StandardNormal.sample(rng)).collect();
    let a = StorageMatrix::from_vec(d, d, v, Precision::Fp64)?;
    let mut p = product(&a, &transpose(&a))?;
    for i in 0..d {
        p.set(i, i, p.get(i, i) + d as f64);
    }
    p.symmetrize();
    Ok(p.to_precision(precision))
}

/// Median timings per size. Subspace fractions yielding the same block size
/// at a given `d` are measured once.
pub fn bench_decomp(sizes: &[usize], fractions: &[f64], precision: Precision, reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if reps == 0 {
        return Err(Error::Argument("reps must be at least 1".into()));
    }
    if let Some(&d) = sizes.iter().find(|&&d| d < 2) {
        return Err(Error::Argument(format!("sizes must be at least 2, got {d}")));
    }
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &d in sizes {
        let p = random_spd(d, precision, &mut rng)?;
        let q = StorageMatrix::identity(d, precision);
        rows.push(BenchRow { kernel: Kernel::FullQr, d, fraction: 1.0, median_ms: time_ms(reps, || qr_sign_fixed(&p).map(drop))? });
        rows.push(BenchRow { kernel: Kernel::Matmul, d, fraction: 1.0, median_ms: time_ms(reps, || product(&p, &q).map(drop))? });
        rows.push(BenchRow { kernel: Kernel::FullEig, d, fraction: 1.0, median_ms: time_ms(reps, || eig_symmetric(&p).map(drop))? });
        let mut seen = Vec::new();
        for &fraction in fractions {
            let b = block_size(d, fraction).expect("d >= 2");
            if seen.contains(&b) {
                continue;
            }
            seen.push(b);
            let cfg = OptimConfig { selection: Selection::Random, subspace_fraction: fraction, ..Default::default() };
            let idx = select_random(d, b, &mut rng)?;
            let mut samples = Vec::with_capacity(reps);
            for _ in 0..reps {
                let (mut qc, mut pc) = (q.to_working(), p.to_working());
                let start = Instant::now();
                subspace_pass(&mut qc, &mut pc, &idx, &cfg, &mut CostLedger::new())?;
                samples.push(start.elapsed().as_secs_f64() * 1e3);
            }
            rows.push(BenchRow { kernel: Kernel::SubspaceQr, d, fraction, median_ms: median(samples) });
        }
    }
    Ok(rows)
}

fn find(rows: &[BenchRow], kernel: Kernel, d: usize, fraction: Option<f64>) -> Option<f64> {
    rows.iter()
        .find(|r| r.kernel == kernel && r.d == d && fraction.is_none_or(|f| r.fraction == f))
        .map(|r| r.median_ms)
}

/// Ordering claims that failed, for sizes of at least [`ORDERING_MIN_SIZE`]:
/// subspace QR (ascending in B, for B ≤ 1/2) < full QR, mm < full QR < full eig.
pub fn ordering_violations(rows: &[BenchRow]) -> Vec<String> {
    let mut out = Vec::new();
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.d).collect();
    sizes.dedup();
    for d in sizes.into_iter().filter(|&d| d >= ORDERING_MIN_SIZE) {
        let (Some(qr), Some(mm), Some(eig)) =
            (find(rows, Kernel::FullQr, d, None), find(rows, Kernel::Matmul, d, None), find(rows, Kernel::FullEig, d, None))
        else {
            continue;
        };
        let mut chain: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.kernel == Kernel::SubspaceQr && r.d == d && r.fraction <= 0.5)
            .map(|r| (r.fraction, r.median_ms))
            .collect();
        chain.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in chain.windows(2) {
            if !(w[0].1 < w[1].1) {
                out.push(format!("d={d}: subspace QR at B={} ({:.3} ms) not faster than at B={} ({:.3} ms)", w[0].0, w[0].1, w[1].0, w[1].1));
            }
        }
        for (f, t) in &chain {
            if !(*t < qr) {
                out.push(format!("d={d}: subspace QR at B={f} ({t:.3} ms) not faster than full QR ({qr:.3} ms)"));
            }
        }
        if !(mm < qr) {
            out.push(format!("d={d}: mm ({mm:.3} ms) not faster than full QR ({qr:.3} ms)"));
        }
        if !(qr < eig) {
            out.push(format!("d={d}: full QR ({qr:.3} ms) not faster than full eig ({eig:.3} ms)"));
        }
    }
    out
}

pub fn write_bench_csv(rows: &[BenchRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "kernel,d,B,median_ms")?;
    for r in rows {
        writeln!(out, "{},{},{},{:e}", r.kernel.name(), r.d, r.fraction, r.median_ms)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoke_at_d2() {
        let rows = bench_decomp(&[2], &[0.25, 0.5], Precision::Fp32, 1, 0).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(ordering_violations(&rows).is_empty());
        let mut buf = Vec::new();
        write_bench_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn rejects_tiny_sizes() {
        assert!(bench_decomp(&[1], &[0.5], Precision::Fp64, 1, 0).is_err());
    }
}
