//! SOAP-style variants: Adam run on the gradient expressed in the factor
//! eigenbasis.
//!
//! `SOAP` uses unwhitened factor statistics and never tracks or reads `λ`.
//! `KL-SOAP` keeps the KL-whitened statistics (and so does track `λ`, which
//! the whitening reads). Both keep `m` and `v` in basis coordinates, so the
//! first moment is rotated whenever the basis changes. The second moment is
//! left as is unless [`RotateV::Approx`] is selected.

use crate::config::{Method, OptimConfig, Parametrization, RotateV};
use crate::error::{Error, Result};
use crate::matcore::{ema, matmul, matmul_subspace, transpose, CostLedger, Precision, StorageMatrix};
use crate::shampoo::{covariance_new, covariance_old, LayerState, Rotation};

/// First and second Adam moments in basis coordinates.
#[derive(Clone, Debug)]
pub struct RotatedMoments {
    pub m: StorageMatrix,
    pub v: StorageMatrix,
}

impl RotatedMoments {
    pub fn new(d1: usize, d2: usize, storage: Precision) -> Self {
        RotatedMoments {
            m: StorageMatrix::zeros(d1, d2, storage),
            v: StorageMatrix::zeros(d1, d2, storage),
        }
    }
}

/// Factor statistics for `method` under the state's parametrization.
/// Only the KL methods whiten by `λ`.
pub fn covariance_variant(
    method: Method,
    state: &mut LayerState,
    g: &StorageMatrix,
    config: &OptimConfig,
) -> Result<()> {
    let whiten = method.whitened();
    match state.parametrization() {
        Parametrization::Old => covariance_old(state, g, config, whiten),
        Parametrization::New => covariance_new(state, g, config, whiten),
    }
}

/// `m ← EMA(G̃)`, `v ← EMA(G̃²)`, `Θ ← Θ − γ Q₁[m ⊘ (√v + ε)]Q₂ᵀ − γ·wd·Θ`.
///
/// Moments use `β₁` and `β₂` as weights on the new term, without bias
/// correction. `G̃ = Q₁ᵀGQ₂` comes from the cache when valid (else 2 mm).
pub fn soap_precondition(state: &mut LayerState, g: &StorageMatrix, config: &OptimConfig) -> Result<()> {
    let g = state.working_grad(g)?;
    let rotated = match state.take_cached_rotated_grad() {
        Some(u) => u,
        None => state.rotate_into_basis(&g)?,
    };
    let storage = state.storage();
    let moments = state
        .moments()
        .ok_or_else(|| Error::State(format!("method {} keeps no Adam moments", state.method())))?;
    let m = ema(&moments.m.to_working(), &rotated, config.beta1)?;
    let v = ema(&moments.v.to_working(), &rotated.map(|x| x * x), config.beta2)?;
    let eps = config.damping;
    let u: Vec<f64> = m
        .values()
        .iter()
        .zip(v.values().iter())
        .map(|(&m, &v)| m / (v.max(0.0).sqrt() + eps))
        .collect();
    let u = StorageMatrix::from_vec(m.rows(), m.cols(), u, m.precision())?;
    let moments = state.moments_mut().expect("checked above");
    moments.m = m.to_precision(storage);
    moments.v = v.to_precision(storage);
    state.apply_basis_update(&u, config)
}

/// Re-expresses `x` (in basis coordinates) after `rotation` was applied to
/// the basis: `O₁ᵀx` for factor 0 or `xO₂` for factor 1, restricted to the
/// rotated rows or columns for a subspace rotation.
fn rotate_coordinates(x: &StorageMatrix, rotation: &Rotation, ledger: &mut CostLedger) -> Result<StorageMatrix> {
    let o = &rotation.o;
    let (d1, d2) = x.shape();
    match (rotation.factor, &rotation.indices) {
        (0, None) => matmul(&transpose(o), x, ledger),
        (1, None) => matmul(x, o, ledger),
        (0, Some(idx)) => {
            let rows = matmul_subspace(&transpose(o), &x.gather_rows(idx), ledger, (d1, d1, d2))?;
            let mut out = x.clone();
            out.scatter_rows(idx, &rows)?;
            Ok(out)
        }
        (1, Some(idx)) => {
            let cols = matmul_subspace(&x.gather_cols(idx), o, ledger, (d1, d2, d2))?;
            let mut out = x.clone();
            out.scatter_cols(idx, &cols)?;
            Ok(out)
        }
        (f, _) => Err(Error::Argument(format!("rotation for factor {f} of a two-factor layer"))),
    }
}

/// Carries the moments across a basis rotation. `m` is rotated exactly;
/// with [`RotateV::Approx`], `v ← (rotated √v)²`.
pub fn rotate_moments(
    moments: &mut RotatedMoments,
    rotation: &Rotation,
    rotate_v: RotateV,
    ledger: &mut CostLedger,
) -> Result<()> {
    let storage = moments.m.precision();
    let m = rotate_coordinates(&moments.m.to_working(), rotation, ledger)?;
    moments.m = m.to_precision(storage);
    if rotate_v == RotateV::Approx {
        let root = moments.v.to_working().map(|v| v.max(0.0).sqrt());
        let v = rotate_coordinates(&root, rotation, ledger)?.map(|r| r * r);
        moments.v = v.to_precision(storage);
    }
    Ok(())
}

pub(crate) fn rotate_moments_in_state(state: &mut LayerState, rotation: &Rotation, rotate_v: RotateV) -> Result<()> {
    let mut ledger = std::mem::take(state.ledger_mut());
    let result = match state.moments_mut() {
        Some(m) => rotate_moments(m, rotation, rotate_v, &mut ledger),
        None => Ok(()),
    };
    *state.ledger_mut() = ledger;
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Selection;
    use crate::matcore::Precision::Fp64;
    use crate::shampoo::init_layer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(r: usize, c: usize, rng: &mut ChaCha8Rng) -> StorageMatrix {
        let v = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        StorageMatrix::from_vec(r, c, v, Fp64).unwrap()
    }

    fn soap_cfg(method: Method, p: Parametrization) -> OptimConfig {
        OptimConfig {
            method,
            parametrization: p,
            storage: Fp64,
            interval: 3,
            gamma: 1e-2,
            ..Default::default()
        }
    }

    #[test]
    fn soap_never_reads_lambda() {
        for p in [Parametrization::Old, Parametrization::New] {
            let c = soap_cfg(Method::Soap, p);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut s = init_layer(4, 3, &c).unwrap();
            for _ in 0..7 {
                s.step(&random(4, 3, &mut rng), &c).unwrap();
            }
            assert_eq!(s.factor(0).lambda_reads(), 0);
            assert_eq!(s.factor(1).lambda_reads(), 0);
        }
    }

    #[test]
    fn kl_soap_reads_lambda() {
        let c = soap_cfg(Method::KlSoap, Parametrization::New);
        let mut s = init_layer(3, 3, &c).unwrap();
        s.step(&StorageMatrix::identity(3, Fp64), &c).unwrap();
        assert!(s.factor(0).lambda_reads() > 0);
    }

    #[test]
    fn soap_identity_basis_is_adam_without_bias_correction() {
        // With T large only the first refresh runs; on a zero state it keeps Q = I.
        let c = OptimConfig { interval: 1000, damping: 1e-8, ..soap_cfg(Method::Soap, Parametrization::New) };
        let mut s = init_layer(2, 2, &c).unwrap();
        let g = StorageMatrix::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]], Fp64);
        s.step(&g, &c).unwrap();
        // First refresh sees P = G̃'G̃'ᵀ/2 which is not diagonal, so compare in the basis instead.
        let m = &s.moments().unwrap().m;
        let v = &s.moments().unwrap().v;
        let q1 = s.factor(0).basis();
        let q2 = s.factor(1).basis();
        let rotated = matmul(&matmul(&transpose(q1), &g, &mut CostLedger::new()).unwrap(), q2, &mut CostLedger::new()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let x = rotated.get(i, j);
                assert!((m.get(i, j) - 0.1 * x).abs() < 1e-14);
                assert!((v.get(i, j) - 0.05 * x * x).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn full_rotation_of_m_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut moments = RotatedMoments::new(3, 3, Fp64);
        moments.m = random(3, 3, &mut rng);
        let o = crate::decomp::qr_sign_fixed(&random(3, 3, &mut rng)).unwrap().q;
        let rot = Rotation { factor: 0, indices: None, o: o.clone() };
        let before = moments.m.clone();
        rotate_moments(&mut moments, &rot, RotateV::None, &mut CostLedger::new()).unwrap();
        let want = matmul(&transpose(&o), &before, &mut CostLedger::new()).unwrap();
        assert!(moments.m.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn subspace_rotation_leaves_other_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut moments = RotatedMoments::new(4, 2, Fp64);
        moments.m = random(4, 2, &mut rng);
        moments.v = random(4, 2, &mut rng).map(|x| x * x);
        let o = crate::decomp::qr_sign_fixed(&random(2, 2, &mut rng)).unwrap().q;
        let rot = Rotation { factor: 0, indices: Some(vec![1, 3]), o };
        let before = moments.clone();
        let mut ledger = CostLedger::for_layer(4, 2);
        rotate_moments(&mut moments, &rot, RotateV::Approx, &mut ledger).unwrap();
        for j in 0..2 {
            for i in [0, 2] {
                assert_eq!(moments.m.get(i, j), before.m.get(i, j));
                assert_eq!(moments.v.get(i, j), before.v.get(i, j));
            }
        }
        assert_eq!(ledger.smm_count(), 2);
        assert_eq!(ledger.mm_count(), 0);
    }

    #[test]
    fn soap_parametrizations_agree() {
        for selection in [Selection::Full, Selection::Random] {
            let fraction = if selection == Selection::Full { 1.0 } else { 0.5 };
            let mk = |p| OptimConfig {
                selection,
                subspace_fraction: fraction,
                ..soap_cfg(Method::Soap, p)
            };
            let (co, cn) = (mk(Parametrization::Old), mk(Parametrization::New));
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let theta = random(5, 4, &mut rng);
            let mut so = LayerState::new(theta.clone(), &co).unwrap();
            let mut sn = LayerState::new(theta, &cn).unwrap();
            for _ in 0..12 {
                let g = random(5, 4, &mut rng);
                so.step(&g, &co).unwrap();
                sn.step(&g, &cn).unwrap();
            }
            assert!(so.theta().max_abs_diff(sn.theta()) < 1e-9, "{selection}");
        }
    }
}
