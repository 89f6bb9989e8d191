//! Subspace basis refreshes: rotate only a block `I` of basis columns per pass.
//!
//! Under the new parametrization a pass reads the block `P[I,I]`, finds an
//! orthogonal `O` (QR step or exact eigenvectors) and applies it to the
//! selected strips:
//!
//! ```text
//! Q[:,I] ← Q[:,I]·O    P[:,I] ← P[:,I]·O    P[I,:] ← Oᵀ·P[I,:]
//! ```
//!
//! Each of the three products is a `d×b·b×b` (or transposed) subspace product
//! costing `(b/d)²` of a full mm. The old parametrization has no `P` to read
//! and must rebuild `QᵀSQ` (2 mm) before every pass.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{BasisSolver, OptimConfig, Parametrization, Selection};
use crate::decomp::{eig_symmetric, top_k};
use crate::error::{Error, Result};
use crate::matcore::{matmul, matmul_subspace, transpose, CostLedger, StorageMatrix};
use crate::shampoo::{basis_diagonal, refresh_qr, LayerState, Rotation};

/// Sorted, distinct indices into a factor of size `parent_dim`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockIndexSet {
    indices: Vec<usize>,
    parent_dim: usize,
}

impl BlockIndexSet {
    pub fn new(mut indices: Vec<usize>, parent_dim: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.len() < 2 {
            return Err(Error::Argument(format!(
                "a block needs at least two indices, got {}",
                indices.len()
            )));
        }
        if let Some(&last) = indices.last() {
            if last >= parent_dim {
                return Err(Error::Argument(format!(
                    "index {last} out of range for a factor of size {parent_dim}"
                )));
            }
        }
        Ok(BlockIndexSet { indices, parent_dim })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn parent_dim(&self) -> usize {
        self.parent_dim
    }
}

/// `max(2, round(B·d))` capped at `d`, or `None` when `d < 2`.
/// Rounding is half-to-even.
pub fn block_size(d: usize, fraction: f64) -> Option<usize> {
    if d < 2 {
        return None;
    }
    let b = (fraction * d as f64).round_ties_even() as usize;
    Some(b.max(2).min(d))
}

/// `‖P - Diag(P)‖_F`.
pub fn off_diagonal_frobenius(p: &StorageMatrix) -> f64 {
    let mut s = 0.0;
    for i in 0..p.rows() {
        for j in 0..p.cols() {
            if i != j {
                s += p.get(i, j).powi(2);
            }
        }
    }
    s.sqrt()
}

/// `b` indices drawn uniformly without replacement.
pub fn select_random<R: Rng + ?Sized>(d: usize, b: usize, rng: &mut R) -> Result<BlockIndexSet> {
    if b > d {
        return Err(Error::Argument(format!("block of {b} from a factor of size {d}")));
    }
    let indices = rand::seq::index::sample(rng, d, b).into_vec();
    BlockIndexSet::new(indices, d)
}

/// Greedy block around the largest off-diagonal entry of `P`.
///
/// First picks `(k*, j*) = argmax_{k≠j} P²_kj` (symmetrized, row-major scan,
/// first maximizer wins), then adds the `b-2` indices `x` with the largest
/// coupling `P²_{x,k*} + P²_{x,j*}`, ties going to the smaller index.
pub fn select_greedy(p: &StorageMatrix, b: usize) -> Result<BlockIndexSet> {
    let d = p.rows();
    if !p.is_square() {
        return Err(Error::shape("select_greedy", format!("{:?} is not square", p.shape())));
    }
    if b < 2 || b > d {
        return Err(Error::Argument(format!(
            "greedy block of {b} from a factor of size {d}"
        )));
    }
    let sq = |i: usize, j: usize| (0.5 * (p.get(i, j) + p.get(j, i))).powi(2);
    let mut best: Option<(f64, usize, usize)> = None;
    for k in 0..d {
        for j in 0..d {
            if k == j {
                continue;
            }
            let v = sq(k, j);
            if best.is_none_or(|(bv, _, _)| v > bv) {
                best = Some((v, k, j));
            }
        }
    }
    let (_, ks, js) = best.expect("d >= 2 has an off-diagonal entry");
    let rest: Vec<usize> = (0..d).filter(|&x| x != ks && x != js).collect();
    let scores: Vec<f64> = rest.iter().map(|&x| sq(x, ks) + sq(x, js)).collect();
    let mut indices: Vec<usize> = top_k(&scores, b - 2)?
        .into_iter()
        .map(|r| rest[r])
        .collect();
    indices.push(ks);
    indices.push(js);
    BlockIndexSet::new(indices, d)
}

/// Eigenvectors of a symmetric block, ordered and signed to stay as close to
/// the identity as possible.
///
/// Vector-to-position pairs are matched greedily by decreasing `|V[pos, vec]|`
/// and each vector is signed so that its matched entry is positive. For a
/// diagonal block this returns exactly `I`, so eigenvalue estimates stay
/// attached to their columns.
pub fn aligned_eigenvectors(block: &StorageMatrix) -> Result<StorageMatrix> {
    let e = eig_symmetric(block)?;
    let v = &e.vectors;
    let n = v.rows();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for pos in 0..n {
        for vec in 0..n {
            candidates.push((v.get(pos, vec).abs(), pos, vec));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pos_used = vec![false; n];
    let mut vec_for_pos = vec![usize::MAX; n];
    let mut vec_used = vec![false; n];
    for (_, pos, vec) in candidates {
        if !pos_used[pos] && !vec_used[vec] {
            pos_used[pos] = true;
            vec_used[vec] = true;
            vec_for_pos[pos] = vec;
        }
    }
    let mut out = StorageMatrix::zeros(n, n, v.precision());
    for (pos, &vec) in vec_for_pos.iter().enumerate() {
        let sign = if v.get(pos, vec) < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            out.set(r, pos, sign * v.get(r, vec));
        }
    }
    Ok(out)
}

/// Orthogonal `O` for a block: the Q factor of `block` (one QR-iteration step)
/// or its aligned eigenvectors.
fn block_rotation(
    block: &StorageMatrix,
    config: &OptimConfig,
    ledger: &mut CostLedger,
) -> Result<StorageMatrix> {
    match config.basis_solver {
        BasisSolver::Qr => {
            let o = refresh_qr(block, config)?.q;
            ledger.charge_qr();
            Ok(o)
        }
        BasisSolver::Eig => {
            let o = aligned_eigenvectors(block)?;
            ledger.charge_eig();
            Ok(o)
        }
    }
}

/// One pass on working copies of `(Q, P)` for block `idx`.
/// Returns the block rotation `O`.
pub fn subspace_pass(
    q: &mut StorageMatrix,
    p: &mut StorageMatrix,
    idx: &BlockIndexSet,
    config: &OptimConfig,
    ledger: &mut CostLedger,
) -> Result<StorageMatrix> {
    let d = q.rows();
    let i = idx.indices();
    let full = (d, d, d);
    let o = block_rotation(&p.submatrix(i, i), config, ledger)?;
    let q_cols = matmul_subspace(&q.gather_cols(i), &o, ledger, full)?;
    q.scatter_cols(i, &q_cols)?;
    let p_cols = matmul_subspace(&p.gather_cols(i), &o, ledger, full)?;
    p.scatter_cols(i, &p_cols)?;
    let p_rows = matmul_subspace(&transpose(&o), &p.gather_rows(i), ledger, full)?;
    p.scatter_rows(i, &p_rows)?;
    p.symmetrize_strips(i);
    Ok(o)
}

/// Rotations applied by a subspace refresh, plus factors it had to skip.
#[derive(Clone, Debug, Default)]
pub struct SubspaceOutcome {
    pub rotations: Vec<Rotation>,
    pub skipped_factors: Vec<usize>,
}

/// RNG for random block selection, derived from the run seed and the position
/// in the run so that no generator state needs to be checkpointed.
pub fn selection_rng(seed: u64, stream: u64, step: u64, factor: usize, pass: usize) -> ChaCha8Rng {
    let mut h = seed;
    for part in [stream, step, factor as u64, pass as u64] {
        h = splitmix64(h ^ part.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn select(
    state: &LayerState,
    p: &StorageMatrix,
    b: usize,
    config: &OptimConfig,
    factor: usize,
    pass: usize,
) -> Result<BlockIndexSet> {
    let d = p.rows();
    match config.selection {
        Selection::Greedy => select_greedy(p, b),
        Selection::Random => {
            let mut rng = selection_rng(config.seed, state.stream(), state.step_count(), factor, pass);
            select_random(d, b, &mut rng)
        }
        Selection::Full => BlockIndexSet::new((0..d).collect(), d),
    }
}

/// Runs `K` subspace passes on each factor, reselecting the block every pass.
///
/// State is read once per factor and written back once at the end. Factors
/// with fewer than two rows are skipped and reported.
pub fn subspace_refresh(state: &mut LayerState, config: &OptimConfig) -> Result<SubspaceOutcome> {
    let mut outcome = SubspaceOutcome::default();
    let tag = |factor: usize, pass: usize| {
        move |e: Error| Error::Decomposition {
            factor,
            pass,
            source: Box::new(e),
        }
    };
    for f in 0..2 {
        let d = state.factor(f).dim();
        let Some(b) = block_size(d, config.subspace_fraction) else {
            outcome.skipped_factors.push(f);
            continue;
        };
        let (companion, mut q) = state.working_factor(f);
        match state.parametrization() {
            Parametrization::New => {
                let mut p = companion;
                for pass in 0..config.inner_steps {
                    let idx = select(state, &p, b, config, f, pass)?;
                    let o = subspace_pass(&mut q, &mut p, &idx, config, state.ledger_mut())
                        .map_err(tag(f, pass))?;
                    outcome.rotations.push(Rotation {
                        factor: f,
                        indices: Some(idx.indices().to_vec()),
                        o,
                    });
                }
                let factor = state.factor_mut(f);
                factor.set_basis(&q)?;
                factor.set_companion(&p)?;
                if config.refresh_lambda {
                    factor.set_lambda(&p.diagonal())?;
                }
            }
            Parametrization::Old => {
                let s = companion;
                let full = (d, d, d);
                for pass in 0..config.inner_steps {
                    let ledger = state.ledger_mut();
                    let sq = matmul(&s, &q, ledger)?;
                    let mut p = matmul(&transpose(&q), &sq, ledger)?;
                    p.symmetrize();
                    let idx = select(state, &p, b, config, f, pass)?;
                    let i = idx.indices();
                    let ledger = state.ledger_mut();
                    let o = block_rotation(&p.submatrix(i, i), config, ledger).map_err(tag(f, pass))?;
                    let q_cols = matmul_subspace(&q.gather_cols(i), &o, ledger, full)?;
                    q.scatter_cols(i, &q_cols)?;
                    outcome.rotations.push(Rotation {
                        factor: f,
                        indices: Some(i.to_vec()),
                        o,
                    });
                }
                if config.refresh_lambda {
                    let diag = basis_diagonal(&s, &q, state.ledger_mut())?;
                    state.factor_mut(f).set_lambda(&diag)?;
                }
                state.factor_mut(f).set_basis(&q)?;
            }
        }
    }
    Ok(outcome)
}
