//! Lockstep comparison of the two state parametrizations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{Method, OptimConfig, Parametrization};
use crate::error::Result;
use crate::matcore::{product, transpose, Precision, StorageMatrix};
use crate::shampoo::LayerState;

/// Largest tolerated `max|Θ_old − Θ_new| / max|Θ_old|`.
pub const THETA_TOLERANCE: f64 = 1e-9;
/// Largest tolerated `max|P − QᵀSQ|`.
pub const COMPANION_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct EquivalenceOptions {
    pub d1: usize,
    pub d2: usize,
    pub steps: u64,
    /// Shared optimizer settings; storage and parametrization are overridden.
    pub optim: OptimConfig,
    /// Disable the QR sign fix on the new path only, to show it is needed.
    pub break_sign_fix: bool,
}

impl Default for EquivalenceOptions {
    fn default() -> Self {
        EquivalenceOptions {
            d1: 8,
            d2: 12,
            steps: 200,
            optim: OptimConfig { interval: 5, damping: 1e-2, ..Default::default() },
            break_sign_fix: false,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct EquivalenceReport {
    pub steps: u64,
    pub max_theta_deviation: f64,
    pub max_companion_deviation: f64,
    pub max_basis_deviation: f64,
    /// First step whose deviations exceed a tolerance.
    pub first_violation: Option<u64>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Gradient stream with fixed row and column correlations, independent of Θ.
pub struct GradientStream {
    left: StorageMatrix,
    right: StorageMatrix,
    rng: ChaCha8Rng,
}

impl GradientStream {
    pub fn new(d1: usize, d2: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mat = |r: usize, c: usize, rng: &mut ChaCha8Rng| {
            let v = (0..r * c).map(|_| StandardNormal.sample(rng)).collect();
            StorageMatrix::from_vec(r, c, v, Precision::Fp64).expect("sizes match")
        };
        let left = crate::matcore::scaled(&mat(d1, d1, &mut rng), 1.0 / (d1 as f64).sqrt());
        let right = crate::matcore::scaled(&mat(d2, d2, &mut rng), 1.0 / (d2 as f64).sqrt());
        GradientStream { left, right, rng }
    }

    pub fn next_gradient(&mut self) -> StorageMatrix {
        let (d1, d2) = (self.left.rows(), self.right.rows());
        let v = (0..d1 * d2).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        let noise = StorageMatrix::from_vec(d1, d2, v, Precision::Fp64).expect("sizes match");
        product(&product(&self.left, &noise).expect("square"), &self.right).expect("square")
    }
}

fn max_rel(a: &StorageMatrix, b: &StorageMatrix) -> f64 {
    let scale = a.max_abs();
    if scale == 0.0 {
        a.max_abs_diff(b)
    } else {
        a.max_abs_diff(b) / scale
    }
}

/// Runs both parametrizations on one FP64 gradient stream and tracks
/// `max|ΔΘ|/max|Θ|`, `max|P_new − Q_oldᵀ S_old Q_old|` and `max|ΔQ|` per step.
pub fn check_equivalence(opts: &EquivalenceOptions) -> Result<EquivalenceReport> {
    let base = OptimConfig { storage: Precision::Fp64, ..opts.optim.clone() };
    let old_cfg = OptimConfig { parametrization: Parametrization::Old, ..base.clone() };
    let new_cfg = OptimConfig {
        parametrization: Parametrization::New,
        sign_fix: base.sign_fix && !opts.break_sign_fix,
        ..base.clone()
    };
    old_cfg.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(base.seed ^ 0xE0_0E);
    let v = (0..opts.d1 * opts.d2).map(|_| StandardNormal.sample(&mut rng)).collect();
    let theta = StorageMatrix::from_vec(opts.d1, opts.d2, v, Precision::Fp64)?;
    let mut old = LayerState::new(theta.clone(), &old_cfg)?;
    let mut new = LayerState::new(theta, &new_cfg)?;
    let mut stream = GradientStream::new(opts.d1, opts.d2, base.seed);

    let mut report = EquivalenceReport::default();
    for step in 0..opts.steps {
        let g = stream.next_gradient();
        old.step(&g, &old_cfg)?;
        new.step(&g, &new_cfg)?;

        let theta_dev = max_rel(old.theta(), new.theta());
        let mut companion_dev: f64 = 0.0;
        let mut basis_dev: f64 = 0.0;
        for i in 0..2 {
            let (fo, fn_) = (old.factor(i), new.factor(i));
            let q = fo.basis();
            let projected = product(&product(&transpose(q), fo.companion())?, q)?;
            companion_dev = companion_dev.max(projected.max_abs_diff(fn_.companion()));
            basis_dev = basis_dev.max(q.max_abs_diff(fn_.basis()));
        }
        report.max_theta_deviation = report.max_theta_deviation.max(theta_dev);
        report.max_companion_deviation = report.max_companion_deviation.max(companion_dev);
        report.max_basis_deviation = report.max_basis_deviation.max(basis_dev);
        report.steps = step + 1;
        let violated = !(theta_dev <= THETA_TOLERANCE && companion_dev <= COMPANION_TOLERANCE);
        if violated && report.first_violation.is_none() {
            report.first_violation = Some(step);
        }
    }
    Ok(report)
}

/// Shortcut used by tests and examples: default options with the given shape, interval and method.
pub fn equivalence_options(d1: usize, d2: usize, interval: u64, steps: u64, method: Method, seed: u64) -> EquivalenceOptions {
    let mut o = EquivalenceOptions { d1, d2, steps, ..Default::default() };
    o.optim.interval = interval;
    o.optim.method = method;
    o.optim.seed = seed;
    o
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_identical() {
        let o = equivalence_options(4, 6, 1, 1, Method::KlShampoo, 0);
        let r = check_equivalence(&o).unwrap();
        // Both paths agree up to summation order in the products.
        assert!(r.max_theta_deviation <= 1e-15);
        assert!(r.max_companion_deviation <= 1e-15);
    }

    #[test]
    fn short_run_passes() {
        let r = check_equivalence(&equivalence_options(5, 7, 3, 40, Method::KlShampoo, 1)).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn missing_sign_fix_is_caught() {
        let mut o = equivalence_options(5, 7, 3, 40, Method::KlShampoo, 1);
        o.break_sign_fix = true;
        let r = check_equivalence(&o).unwrap();
        assert!(!r.passed());
    }
}
