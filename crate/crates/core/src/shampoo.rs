//! KL-Shampoo layer state and its per-step pipeline, in both the original
//! parametrization (companion `S`) and the reparametrization (companion
//! `P = QᵀSQ`).
//!
//! One step runs, in order:
//!
//! 1. factor statistics (`S` or `P` EMA),
//! 2. eigenvalue tracking (`λ` EMA),
//! 3. a basis refresh every `T` steps (full QR, or subspace passes),
//! 4. the preconditioned parameter update.
//!
//! EMAs weight the *new* statistic by `β₂`: `S ← (1-β₂)S + β₂Δ`.

use std::cell::Cell;
use std::time::{Duration, Instant};

use crate::config::{Method, OptimConfig, Parametrization, Selection};
use crate::decomp::{canonicalize_qr, qr_householder, QrResult};
use crate::error::{Error, Result};
use crate::matcore::{
    ema, matmul, row_sum_of_squares, scale_cols, scaled, transpose, CostCounts, CostLedger,
    Precision, StorageBuffer, StorageMatrix,
};
use crate::soap::{self, RotatedMoments};
use crate::subspace::{self, off_diagonal_frobenius};

/// Optimizer state of one Kronecker factor.
#[derive(Clone, Debug)]
pub struct FactorState {
    dim: usize,
    lambda: StorageBuffer,
    basis: StorageMatrix,
    companion: StorageMatrix,
    parametrization: Parametrization,
    lambda_reads: Cell<u64>,
}

impl FactorState {
    /// `Q = I`, companion `= 0`, `λ = 0`.
    pub fn new(dim: usize, parametrization: Parametrization, storage: Precision) -> Self {
        FactorState {
            dim,
            lambda: StorageBuffer::zeros(dim, storage),
            basis: StorageMatrix::identity(dim, storage),
            companion: StorageMatrix::zeros(dim, dim, storage),
            parametrization,
            lambda_reads: Cell::new(0),
        }
    }

    /// Rebuilds a factor from stored tensors, e.g. when loading a checkpoint.
    pub fn from_parts(
        parametrization: Parametrization,
        lambda: StorageBuffer,
        basis: StorageMatrix,
        companion: StorageMatrix,
    ) -> Result<Self> {
        let dim = lambda.len();
        if basis.shape() != (dim, dim) || companion.shape() != (dim, dim) {
            return Err(Error::shape(
                "factor state",
                format!(
                    "lambda of length {dim} with basis {:?} and companion {:?}",
                    basis.shape(),
                    companion.shape()
                ),
            ));
        }
        let storage = lambda.precision();
        if basis.precision() != storage || companion.precision() != storage {
            return Err(Error::State(
                "factor tensors must share one storage precision".into(),
            ));
        }
        Ok(FactorState {
            dim,
            lambda,
            basis,
            companion,
            parametrization,
            lambda_reads: Cell::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn storage(&self) -> Precision {
        self.lambda.precision()
    }

    pub fn parametrization(&self) -> Parametrization {
        self.parametrization
    }

    /// The orthogonal basis `Q`.
    pub fn basis(&self) -> &StorageMatrix {
        &self.basis
    }

    /// `S` under the old parametrization, `P = QᵀSQ` under the new one.
    pub fn companion(&self) -> &StorageMatrix {
        &self.companion
    }

    /// Eigenvalue estimates. Every call is counted, see [`FactorState::lambda_reads`].
    pub fn lambda(&self) -> &StorageBuffer {
        self.lambda_reads.set(self.lambda_reads.get() + 1);
        &self.lambda
    }

    /// Raw `λ` storage for serialization. Not counted as a read.
    pub fn lambda_buffer(&self) -> &StorageBuffer {
        &self.lambda
    }

    pub fn lambda_values(&self) -> Vec<f64> {
        self.lambda().values().into_owned()
    }

    /// Number of times `λ` has been read since construction.
    pub fn lambda_reads(&self) -> u64 {
        self.lambda_reads.get()
    }

    pub fn set_basis(&mut self, q: &StorageMatrix) -> Result<()> {
        self.check_square("basis", q)?;
        self.basis = q.to_precision(self.storage());
        Ok(())
    }

    pub fn set_companion(&mut self, c: &StorageMatrix) -> Result<()> {
        self.check_square("companion", c)?;
        self.companion = c.to_precision(self.storage());
        Ok(())
    }

    /// Stores `λ`, clamping negatives to zero.
    pub fn set_lambda(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::shape(
                "lambda",
                format!("{} values for a factor of size {}", values.len(), self.dim),
            ));
        }
        let clamped: Vec<f64> = values.iter().map(|&x| x.max(0.0)).collect();
        self.lambda = StorageBuffer::from_f64(&clamped, self.storage());
        Ok(())
    }

    fn check_square(&self, what: &'static str, m: &StorageMatrix) -> Result<()> {
        if m.shape() != (self.dim, self.dim) {
            return Err(Error::shape(
                what,
                format!("{:?} for a factor of size {}", m.shape(), self.dim),
            ));
        }
        Ok(())
    }

    /// `(λ + ε)^{-1/2} · scale` for each entry.
    fn whitening(&self, damping: f64, scale: f64) -> Vec<f64> {
        self.lambda()
            .values()
            .iter()
            .map(|&l| scale / (l + damping).sqrt())
            .collect()
    }
}

/// Statistics produced by the factor update and consumed by eigenvalue
/// tracking within the same step.
#[derive(Clone, Debug)]
enum PendingStats {
    /// Whitened factors `G'ᵢ`, still in ambient coordinates.
    Old([StorageMatrix; 2]),
    /// `diag(Δ̃ᵢ)`, already in basis coordinates.
    New([Vec<f64>; 2]),
}

/// An orthogonal rotation applied to one factor's basis during a refresh:
/// `Q ← Q·O` (full) or `Q[:, I] ← Q[:, I]·O` (subspace).
#[derive(Clone, Debug)]
pub struct Rotation {
    pub factor: usize,
    /// `None` for a full-basis rotation.
    pub indices: Option<Vec<usize>>,
    pub o: StorageMatrix,
}

/// Optimizer state for one weight matrix `Θ ∈ R^{d₁×d₂}`.
#[derive(Clone, Debug)]
pub struct LayerState {
    theta: StorageMatrix,
    factors: [FactorState; 2],
    method: Method,
    step_count: u64,
    stream: u64,
    cached_rotated_grad: Option<StorageMatrix>,
    pending: Option<PendingStats>,
    moments: Option<RotatedMoments>,
    ledger: CostLedger,
}

/// Fresh state for a `d1×d2` layer with `Θ = 0`.
pub fn init_layer(d1: usize, d2: usize, config: &OptimConfig) -> Result<LayerState> {
    LayerState::new(StorageMatrix::zeros(d1, d2, config.storage), config)
}

impl LayerState {
    /// Fresh optimizer state around an initial `Θ` (rounded to storage precision).
    pub fn new(theta: StorageMatrix, config: &OptimConfig) -> Result<LayerState> {
        let (d1, d2) = theta.shape();
        if d1 == 0 || d2 == 0 {
            return Err(Error::Argument(format!("empty layer {d1}x{d2}")));
        }
        let storage = config.storage;
        let p = config.parametrization;
        Ok(LayerState {
            theta: theta.to_precision(storage),
            factors: [FactorState::new(d1, p, storage), FactorState::new(d2, p, storage)],
            method: config.method,
            step_count: 0,
            stream: 0,
            cached_rotated_grad: None,
            pending: None,
            moments: config
                .method
                .uses_adam()
                .then(|| RotatedMoments::new(d1, d2, storage)),
            ledger: CostLedger::for_layer(d1, d2),
        })
    }

    /// Reassembles a state from stored parts (see the checkpoint module).
    pub fn from_parts(
        theta: StorageMatrix,
        factors: [FactorState; 2],
        method: Method,
        step_count: u64,
        moments: Option<RotatedMoments>,
    ) -> Result<LayerState> {
        let (d1, d2) = theta.shape();
        if factors[0].dim() != d1 || factors[1].dim() != d2 {
            return Err(Error::shape(
                "layer state",
                format!(
                    "theta {:?} with factors of size {} and {}",
                    theta.shape(),
                    factors[0].dim(),
                    factors[1].dim()
                ),
            ));
        }
        if factors[0].parametrization() != factors[1].parametrization() {
            return Err(Error::State("factors disagree on parametrization".into()));
        }
        if method.uses_adam() != moments.is_some() {
            return Err(Error::State(format!(
                "method {method} {} Adam moments",
                if method.uses_adam() { "needs" } else { "does not take" }
            )));
        }
        if let Some(m) = &moments {
            if m.m.shape() != (d1, d2) || m.v.shape() != (d1, d2) {
                return Err(Error::shape("moments", format!("moments do not match {d1}x{d2}")));
            }
        }
        Ok(LayerState {
            theta,
            factors,
            method,
            step_count,
            stream: 0,
            cached_rotated_grad: None,
            pending: None,
            moments,
            ledger: CostLedger::for_layer(d1, d2),
        })
    }

    /// Distinguishes the random block-selection stream of this layer from
    /// other layers sharing the same seed.
    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn theta(&self) -> &StorageMatrix {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: &StorageMatrix) -> Result<()> {
        if theta.shape() != self.theta.shape() {
            return Err(Error::shape(
                "set_theta",
                format!("{:?} for a {:?} layer", theta.shape(), self.theta.shape()),
            ));
        }
        self.theta = theta.to_precision(self.storage());
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        self.theta.shape()
    }

    pub fn storage(&self) -> Precision {
        self.theta.precision()
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn parametrization(&self) -> Parametrization {
        self.factors[0].parametrization()
    }

    pub fn factor(&self, i: usize) -> &FactorState {
        &self.factors[i]
    }

    pub fn factor_mut(&mut self, i: usize) -> &mut FactorState {
        &mut self.factors[i]
    }

    pub fn factors(&self) -> &[FactorState; 2] {
        &self.factors
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut CostLedger {
        &mut self.ledger
    }

    pub fn moments(&self) -> Option<&RotatedMoments> {
        self.moments.as_ref()
    }

    pub fn moments_mut(&mut self) -> Option<&mut RotatedMoments> {
        self.moments.as_mut()
    }

    /// `Q₁ᵀGQ₂` from the current step's factor update, if still valid.
    pub fn cached_rotated_grad(&self) -> Option<&StorageMatrix> {
        self.cached_rotated_grad.as_ref()
    }

    pub(crate) fn take_cached_rotated_grad(&mut self) -> Option<StorageMatrix> {
        self.cached_rotated_grad.take()
    }

    pub(crate) fn invalidate_cache(&mut self) {
        self.cached_rotated_grad = None;
    }

    /// The gradient at this layer's working precision, after a shape check.
    pub(crate) fn working_grad(&self, g: &StorageMatrix) -> Result<StorageMatrix> {
        if g.shape() != self.theta.shape() {
            return Err(Error::shape(
                "gradient",
                format!("{:?} for a {:?} layer", g.shape(), self.theta.shape()),
            ));
        }
        Ok(g.to_precision(self.storage().working()))
    }

    /// `Q₁ᵀ G Q₂`, charged as two mm.
    pub(crate) fn rotate_into_basis(&mut self, g: &StorageMatrix) -> Result<StorageMatrix> {
        let q1 = self.factors[0].basis.to_working();
        let q2 = self.factors[1].basis.to_working();
        let left = matmul(&transpose(&q1), g, &mut self.ledger)?;
        matmul(&left, &q2, &mut self.ledger)
    }

    /// `Θ ← Θ − γ Q₁ U Q₂ᵀ − γ·wd·Θ`, charged as two mm.
    pub(crate) fn apply_basis_update(&mut self, u: &StorageMatrix, config: &OptimConfig) -> Result<()> {
        let q1 = self.factors[0].basis.to_working();
        let q2 = self.factors[1].basis.to_working();
        let left = matmul(&q1, u, &mut self.ledger)?;
        let update = matmul(&left, &transpose(&q2), &mut self.ledger)?;
        let theta = self.theta.to_working();
        let gamma = config.gamma;
        let decay = config.gamma * config.weight_decay;
        let next: Vec<f64> = theta
            .values()
            .iter()
            .zip(update.values().iter())
            .map(|(&t, &d)| t - gamma * d - decay * t)
            .collect();
        self.theta = StorageMatrix::from_vec(theta.rows(), theta.cols(), next, self.storage())?;
        Ok(())
    }

    /// Companion matrix and basis of factor `i` at working precision.
    pub(crate) fn working_factor(&self, i: usize) -> (StorageMatrix, StorageMatrix) {
        (
            self.factors[i].companion.to_working(),
            self.factors[i].basis.to_working(),
        )
    }

    fn require(&self, p: Parametrization, op: &str) -> Result<()> {
        if self.parametrization() != p {
            return Err(Error::State(format!(
                "{op} needs the {p} parametrization, state uses {}",
                self.parametrization()
            )));
        }
        Ok(())
    }
}

/// Factor statistics under the old parametrization:
/// `G'₁ = G Q₂ W₂`, `G'₂ = Gᵀ Q₁ W₁`, `Δᵢ = G'ᵢG'ᵢᵀ`, `Sᵢ ← EMA`.
///
/// With `whiten`, `Wᵢ = Diag((λᵢ+ε)^{-1/2})/√dⱼ`; otherwise `Wᵢ = I/√dⱼ` and the
/// rotation by `Q` is skipped since it cancels in `G'G'ᵀ`.
pub(crate) fn covariance_old(
    state: &mut LayerState,
    g: &StorageMatrix,
    config: &OptimConfig,
    whiten: bool,
) -> Result<()> {
    state.require(Parametrization::Old, "old-parametrization covariance")?;
    let g = state.working_grad(g)?;
    let gt = transpose(&g);
    let (d1, d2) = state.dims();
    let (g1, g2) = if whiten {
        let q1 = state.factors[0].basis.to_working();
        let q2 = state.factors[1].basis.to_working();
        let w2 = state.factors[1].whitening(config.damping, 1.0 / (d2 as f64).sqrt());
        let w1 = state.factors[0].whitening(config.damping, 1.0 / (d1 as f64).sqrt());
        let g1 = scale_cols(&matmul(&g, &q2, &mut state.ledger)?, &w2)?;
        let g2 = scale_cols(&matmul(&gt, &q1, &mut state.ledger)?, &w1)?;
        (g1, g2)
    } else {
        (scaled(&g, 1.0 / (d2 as f64).sqrt()), scaled(&gt, 1.0 / (d1 as f64).sqrt()))
    };
    for (i, gi) in [&g1, &g2].into_iter().enumerate() {
        let delta = matmul(gi, &transpose(gi), &mut state.ledger)?;
        let s = ema(&state.factors[i].companion.to_working(), &delta, config.beta2)?;
        state.factors[i].set_companion(&s)?;
    }
    state.pending = Some(PendingStats::Old([g1, g2]));
    Ok(())
}

/// Factor statistics under the reparametrization:
/// `G̃' = Q₁ᵀGQ₂`, `G̃'₁ = G̃'W₂`, `G̃'₂ = G̃'ᵀW₁`, `Δ̃ᵢ = G̃'ᵢG̃'ᵢᵀ`, `Pᵢ ← EMA`.
/// Leaves `G̃'` cached for the preconditioning step.
pub(crate) fn covariance_new(
    state: &mut LayerState,
    g: &StorageMatrix,
    config: &OptimConfig,
    whiten: bool,
) -> Result<()> {
    state.require(Parametrization::New, "new-parametrization covariance")?;
    let g = state.working_grad(g)?;
    let (d1, d2) = state.dims();
    let rotated = state.rotate_into_basis(&g)?;
    let rotated_t = transpose(&rotated);
    let (g1, g2) = if whiten {
        let w2 = state.factors[1].whitening(config.damping, 1.0 / (d2 as f64).sqrt());
        let w1 = state.factors[0].whitening(config.damping, 1.0 / (d1 as f64).sqrt());
        (scale_cols(&rotated, &w2)?, scale_cols(&rotated_t, &w1)?)
    } else {
        (
            scaled(&rotated, 1.0 / (d2 as f64).sqrt()),
            scaled(&rotated_t, 1.0 / (d1 as f64).sqrt()),
        )
    };
    let mut diags: [Vec<f64>; 2] = Default::default();
    for (i, gi) in [&g1, &g2].into_iter().enumerate() {
        let delta = matmul(gi, &transpose(gi), &mut state.ledger)?;
        diags[i] = delta.diagonal();
        let p = ema(&state.factors[i].companion.to_working(), &delta, config.beta2)?;
        state.factors[i].set_companion(&p)?;
    }
    state.cached_rotated_grad = Some(rotated);
    state.pending = Some(PendingStats::New(diags));
    Ok(())
}

/// Updates `Sᵢ` from the KL-whitened statistics of `G` (old parametrization).
/// Charges 4 mm.
pub fn step_covariance_old(state: &mut LayerState, g: &StorageMatrix, config: &OptimConfig) -> Result<()> {
    covariance_old(state, g, config, true)
}

/// Updates `Pᵢ` from the KL-whitened statistics of `G` expressed in the
/// current basis (new parametrization). Charges 4 mm.
pub fn step_covariance_new(state: &mut LayerState, g: &StorageMatrix, config: &OptimConfig) -> Result<()> {
    covariance_new(state, g, config, true)
}

/// `λᵢ ← (1-β₂)λᵢ + β₂ diag(Δ̃ᵢ)`.
///
/// The old parametrization rotates its whitened factors first
/// (`G̃'ᵢ = QᵢᵀG'ᵢ`, 2 mm); the new one already has `diag(Δ̃ᵢ)`.
pub fn track_eigenvalues(state: &mut LayerState, config: &OptimConfig) -> Result<()> {
    let pending = state.pending.take().ok_or_else(|| {
        Error::State("eigenvalue tracking requires a factor update earlier in the same step".into())
    })?;
    let diags: [Vec<f64>; 2] = match pending {
        PendingStats::New(d) => d,
        PendingStats::Old(whitened) => {
            let mut out: [Vec<f64>; 2] = Default::default();
            for (i, gi) in whitened.iter().enumerate() {
                let qt = transpose(&state.factors[i].basis.to_working());
                let rotated = matmul(&qt, gi, &mut state.ledger)?;
                out[i] = row_sum_of_squares(&rotated);
            }
            out
        }
    };
    let beta = config.beta2;
    for (i, diag) in diags.iter().enumerate() {
        let next: Vec<f64> = state.factors[i]
            .lambda()
            .values()
            .iter()
            .zip(diag)
            .map(|(&l, &d)| (1.0 - beta) * l + beta * d)
            .collect();
        state.factors[i].set_lambda(&next)?;
    }
    Ok(())
}

/// QR used for basis refreshes: canonical unless the config disables the sign fix.
pub(crate) fn refresh_qr(a: &StorageMatrix, config: &OptimConfig) -> Result<QrResult> {
    let raw = qr_householder(a)?;
    if config.sign_fix {
        canonicalize_qr(raw)
    } else {
        Ok(raw)
    }
}

fn decomposition_error(factor: usize, pass: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Decomposition {
        factor,
        pass,
        source: Box::new(e),
    }
}

/// Full-basis refresh, old parametrization: `Zᵢ = SᵢQᵢ`, `Qᵢ ← qr(Zᵢ)`.
/// Charges 2 mm and 2 qr.
///
/// Returns the equivalent rotations `Oᵢ = Qᵢ(old)ᵀQᵢ(new)` when Adam moments
/// need them (charged as one extra mm per factor), otherwise an empty list.
pub fn refresh_basis_full_old(state: &mut LayerState, config: &OptimConfig) -> Result<Vec<Rotation>> {
    state.require(Parametrization::Old, "refresh_basis_full_old")?;
    let mut rotations = Vec::new();
    for i in 0..2 {
        let (s, q) = state.working_factor(i);
        let z = matmul(&s, &q, &mut state.ledger)?;
        let qr = refresh_qr(&z, config).map_err(decomposition_error(i, 0))?;
        state.ledger.charge_qr();
        if state.moments.is_some() {
            let o = matmul(&transpose(&q), &qr.q, &mut state.ledger)?;
            rotations.push(Rotation { factor: i, indices: None, o });
        }
        if config.refresh_lambda {
            let diag = basis_diagonal(&s, &qr.q, &mut state.ledger)?;
            state.factors[i].set_lambda(&diag)?;
        }
        state.factors[i].set_basis(&qr.q)?;
    }
    Ok(rotations)
}

/// `diag(QᵀSQ)` via one product and a column-wise dot product.
pub(crate) fn basis_diagonal(s: &StorageMatrix, q: &StorageMatrix, ledger: &mut CostLedger) -> Result<Vec<f64>> {
    let sq = matmul(s, q, ledger)?;
    let n = q.cols();
    Ok((0..n)
        .map(|k| (0..q.rows()).map(|r| q.get(r, k) * sq.get(r, k)).sum())
        .collect())
}

/// Full-basis refresh, new parametrization: `Oᵢ = qr(Pᵢ)`, `Qᵢ ← QᵢOᵢ`,
/// `Pᵢ ← Oᵢᵀ(PᵢOᵢ)` re-symmetrized. Charges 6 mm and 2 qr.
pub fn refresh_basis_full_new(state: &mut LayerState, config: &OptimConfig) -> Result<Vec<Rotation>> {
    state.require(Parametrization::New, "refresh_basis_full_new")?;
    let mut rotations = Vec::with_capacity(2);
    for i in 0..2 {
        let (p, q) = state.working_factor(i);
        let o = refresh_qr(&p, config).map_err(decomposition_error(i, 0))?.q;
        state.ledger.charge_qr();
        let q_new = matmul(&q, &o, &mut state.ledger)?;
        let po = matmul(&p, &o, &mut state.ledger)?;
        let mut p_new = matmul(&transpose(&o), &po, &mut state.ledger)?;
        p_new.symmetrize();
        state.factors[i].set_basis(&q_new)?;
        state.factors[i].set_companion(&p_new)?;
        if config.refresh_lambda {
            state.factors[i].set_lambda(&p_new.diagonal())?;
        }
        rotations.push(Rotation { factor: i, indices: None, o });
    }
    Ok(rotations)
}

/// KL-Shampoo update `Θ ← Θ − γ Q₁[(Q₁ᵀGQ₂) ⊘ √((λ₁+ε)(λ₂+ε)ᵀ)]Q₂ᵀ − γ·wd·Θ`.
///
/// Reuses the cached `Q₁ᵀGQ₂` when the basis has not changed since it was
/// computed; otherwise recomputes it (2 mm). The back-rotation costs 2 mm.
pub fn precondition(state: &mut LayerState, g: &StorageMatrix, config: &OptimConfig) -> Result<()> {
    let g = state.working_grad(g)?;
    let rotated = match state.take_cached_rotated_grad() {
        Some(u) => u,
        None => state.rotate_into_basis(&g)?,
    };
    let w1 = state.factors[0].whitening(config.damping, 1.0);
    let w2 = state.factors[1].whitening(config.damping, 1.0);
    let d2 = w2.len();
    let u: Vec<f64> = rotated
        .values()
        .iter()
        .enumerate()
        .map(|(idx, &x)| x * w1[idx / d2] * w2[idx % d2])
        .collect();
    let u = StorageMatrix::from_vec(rotated.rows(), rotated.cols(), u, rotated.precision())?;
    state.apply_basis_update(&u, config)
}

/// Per-stage costs of one step.
#[derive(Clone, Debug, Default)]
pub struct StepReport {
    /// Index of the step that was taken (0 for the first).
    pub step: u64,
    pub refreshed: bool,
    /// Factor statistics and eigenvalue tracking.
    pub covariance_cost: CostCounts,
    /// Basis refresh, including any moment rotations.
    pub refresh_cost: CostCounts,
    /// Parameter update.
    pub precondition_cost: CostCounts,
    /// `off(Pᵢ)_F` after the step; only available under the new parametrization.
    pub offdiag: Option<[f64; 2]>,
    /// Factors too small for a subspace block.
    pub skipped_factors: Vec<usize>,
    pub wall_time: Duration,
}

impl StepReport {
    pub fn total_cost(&self) -> CostCounts {
        self.covariance_cost + self.refresh_cost + self.precondition_cost
    }
}

/// One full optimizer step for a layer with gradient `g`.
pub fn step(state: &mut LayerState, g: &StorageMatrix, config: &OptimConfig) -> Result<StepReport> {
    let start = Instant::now();
    if state.method != config.method || state.parametrization() != config.parametrization {
        return Err(Error::State(format!(
            "state built for {}/{} stepped with {}/{}",
            state.method,
            state.parametrization(),
            config.method,
            config.parametrization
        )));
    }
    let g = state.working_grad(g)?;
    let c0 = state.ledger.counts();

    soap::covariance_variant(config.method, state, &g, config)?;
    if config.method.tracks_eigenvalues() {
        track_eigenvalues(state, config)?;
    } else {
        state.pending = None;
    }
    let c1 = state.ledger.counts();

    let refreshed = state.step_count.is_multiple_of(config.interval);
    let mut skipped_factors = Vec::new();
    if refreshed {
        let rotations = match (config.selection, config.parametrization) {
            (Selection::Full, Parametrization::Old) => refresh_basis_full_old(state, config)?,
            (Selection::Full, Parametrization::New) => refresh_basis_full_new(state, config)?,
            _ => {
                let outcome = subspace::subspace_refresh(state, config)?;
                skipped_factors = outcome.skipped_factors;
                outcome.rotations
            }
        };
        state.invalidate_cache();
        if state.moments.is_some() {
            for rotation in &rotations {
                soap::rotate_moments_in_state(state, rotation, config.rotate_v)?;
            }
        }
    }
    let c2 = state.ledger.counts();

    if config.method.uses_adam() {
        soap::soap_precondition(state, &g, config)?;
    } else {
        precondition(state, &g, config)?;
    }
    state.invalidate_cache();
    let c3 = state.ledger.counts();

    let step = state.step_count;
    state.step_count += 1;
    let offdiag = (state.parametrization() == Parametrization::New).then(|| {
        [
            off_diagonal_frobenius(&state.factors[0].companion),
            off_diagonal_frobenius(&state.factors[1].companion),
        ]
    });
    Ok(StepReport {
        step,
        refreshed,
        covariance_cost: c1.since(&c0),
        refresh_cost: c2.since(&c1),
        precondition_cost: c3.since(&c2),
        offdiag,
        skipped_factors,
        wall_time: start.elapsed(),
    })
}

impl LayerState {
    /// Convenience wrapper for [`step`].
    pub fn step(&mut self, g: &StorageMatrix, config: &OptimConfig) -> Result<StepReport> {
        step(self, g, config)
    }
}
