//! Exact operation-count audit of both parametrizations.
//!
//! Expected per-step charges (two factors):
//!
//! | stage                   | old | new                       |
//! |-------------------------|-----|---------------------------|
//! | statistics + eigenvalues| 6   | 4                         |
//! | full basis refresh      | 2   | 6                         |
//! | preconditioning         | 4   | 2, or 4 after a refresh   |
//!
//! so a window of `T` steps costs `10T + 2` mm (old) against `6T + 8` (new).

use crate::config::{OptimConfig, Parametrization, Selection};
use crate::error::Result;
use crate::harness::equivalence::GradientStream;
use crate::matcore::{CostCounts, Precision};
use crate::shampoo::{init_layer, StepReport};
use crate::subspace::block_size;

#[derive(Clone, Debug)]
pub struct AuditOptions {
    pub d1: usize,
    pub d2: usize,
    pub intervals: Vec<u64>,
    /// Each run covers this many refresh windows.
    pub windows: u64,
    pub seed: u64,
    /// Subspace fraction and inner passes for the subspace audit.
    pub subspace: Option<(f64, usize)>,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions { d1: 8, d2: 8, intervals: (1..=10).collect(), windows: 5, seed: 0, subspace: Some((0.5, 1)) }
    }
}

/// Ledger totals of one `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalAudit {
    pub interval: u64,
    pub steps: u64,
    pub old_mm: u64,
    pub new_mm: u64,
    /// Totals restricted to statistics, eigenvalues and refreshes.
    pub old_mm_without_preconditioning: u64,
    pub new_mm_without_preconditioning: u64,
    /// Per-step charges that did not match the table above.
    pub mismatches: Vec<String>,
}

impl IntervalAudit {
    /// Whether the new parametrization must win: every `T ≥ 2`.
    pub fn advantage_required(&self) -> bool {
        self.interval >= 2
    }

    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && (!self.advantage_required() || self.new_mm < self.old_mm)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceAudit {
    pub parametrization: Parametrization,
    pub refreshes: u64,
    pub measured: CostCounts,
    pub expected: CostCounts,
}

impl SubspaceAudit {
    pub fn passed(&self) -> bool {
        let m = &self.measured;
        let e = &self.expected;
        m.mm == e.mm && m.smm == e.smm && m.qr == e.qr && m.eig == e.eig
            && (m.smm_fraction_sum - e.smm_fraction_sum).abs() <= 1e-12 * e.smm_fraction_sum.max(1.0)
    }
}

#[derive(Clone, Debug, Default)]
pub struct AuditReport {
    pub intervals: Vec<IntervalAudit>,
    pub subspace: Vec<SubspaceAudit>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.intervals.iter().all(IntervalAudit::passed) && self.subspace.iter().all(SubspaceAudit::passed)
    }
}

fn expected_step(p: Parametrization, refreshed: bool) -> (u64, u64, u64) {
    match (p, refreshed) {
        (Parametrization::Old, r) => (6, if r { 2 } else { 0 }, 4),
        (Parametrization::New, true) => (4, 6, 4),
        (Parametrization::New, false) => (4, 0, 2),
    }
}

fn run_layer(cfg: &OptimConfig, d1: usize, d2: usize, steps: u64, seed: u64) -> Result<Vec<StepReport>> {
    let mut layer = init_layer(d1, d2, cfg)?;
    let mut stream = GradientStream::new(d1, d2, seed);
    (0..steps).map(|_| layer.step(&stream.next_gradient(), cfg)).collect()
}

pub fn cost_audit(opts: &AuditOptions) -> Result<AuditReport> {
    let base = OptimConfig { storage: Precision::Fp64, damping: 1e-2, seed: opts.seed, ..Default::default() };
    let mut report = AuditReport::default();
    for &t in &opts.intervals {
        let steps = t * opts.windows;
        let mut audit = IntervalAudit {
            interval: t,
            steps,
            old_mm: 0,
            new_mm: 0,
            old_mm_without_preconditioning: 0,
            new_mm_without_preconditioning: 0,
            mismatches: Vec::new(),
        };
        for p in [Parametrization::Old, Parametrization::New] {
            let cfg = OptimConfig { parametrization: p, interval: t, ..base.clone() };
            let reports = run_layer(&cfg, opts.d1, opts.d2, steps, opts.seed)?;
            let (mut total, mut partial) = (0, 0);
            for r in &reports {
                let got = (r.covariance_cost.mm, r.refresh_cost.mm, r.precondition_cost.mm);
                let want = expected_step(p, r.refreshed);
                if got != want {
                    audit.mismatches.push(format!("{p} T={t} step {}: charged {got:?}, expected {want:?}", r.step));
                }
                total += r.total_cost().mm;
                partial += r.covariance_cost.mm + r.refresh_cost.mm;
            }
            match p {
                Parametrization::Old => {
                    audit.old_mm = total;
                    audit.old_mm_without_preconditioning = partial;
                }
                Parametrization::New => {
                    audit.new_mm = total;
                    audit.new_mm_without_preconditioning = partial;
                }
            }
        }
        report.intervals.push(audit);
    }

    if let Some((fraction, passes)) = opts.subspace {
        let t = 2;
        let steps = t * opts.windows;
        let refreshes = opts.windows;
        let b1 = block_size(opts.d1, fraction);
        let b2 = block_size(opts.d2, fraction);
        let area: f64 = [(b1, opts.d1), (b2, opts.d2)]
            .iter()
            .filter_map(|&(b, d)| b.map(|b| (b as f64 / d as f64).powi(2)))
            .sum();
        let active = [b1, b2].iter().filter(|b| b.is_some()).count() as u64;
        let k = passes as u64;
        for p in [Parametrization::Old, Parametrization::New] {
            let cfg = OptimConfig {
                parametrization: p,
                interval: t,
                selection: Selection::Random,
                subspace_fraction: fraction,
                inner_steps: passes,
                ..base.clone()
            };
            let reports = run_layer(&cfg, opts.d1, opts.d2, steps, opts.seed)?;
            let measured = reports.iter().fold(CostCounts::default(), |acc, r| acc + r.refresh_cost);
            // New: three strip products per pass. Old: rebuild QᵀSQ (2 mm),
            // then only the basis columns are rotated.
            let (mm, smm, frac) = match p {
                Parametrization::New => (0, 3 * k * active, 3.0 * k as f64 * area),
                Parametrization::Old => (2 * k * active, k * active, k as f64 * area),
            };
            let expected = CostCounts {
                mm: mm * refreshes,
                smm: smm * refreshes,
                qr: k * active * refreshes,
                eig: 0,
                smm_fraction_sum: frac * refreshes as f64,
            };
            report.subspace.push(SubspaceAudit { parametrization: p, refreshes, measured, expected });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_audit_passes() {
        let opts = AuditOptions { d1: 4, d2: 6, intervals: vec![1, 2, 3], windows: 2, ..Default::default() };
        let r = cost_audit(&opts).unwrap();
        assert!(r.passed(), "{r:?}");
        let t1 = &r.intervals[0];
        assert!(t1.new_mm > t1.old_mm);
    }
}
