//! Small synthetic problems with hand-derived gradients.
//!
//! Every task exposes its parameters as a list of matrices, so each one maps
//! onto one optimizer layer.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::decomp::qr_sign_fixed;
use crate::error::{Error, Result};
use crate::matcore::{product, transpose, Precision, StorageMatrix};

type Mat = StorageMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    /// `½ tr((Θ-Θ*)ᵀ A (Θ-Θ*) B) / (d₁d₂)` with SPD `A`, `B`; dims `[d₁, d₂]`.
    Quadratic,
    /// `½ mean (M - XY)²` over observed rows of a noisy rank-`r` matrix; dims `[m, n, r]`.
    MatrixFactorization,
    /// Linear softmax classifier on Gaussian clusters; dims `[features, classes]`.
    SoftmaxRegression,
    /// `tanh` hidden layer then softmax; dims `[features, hidden, classes]`.
    TwoLayerMlp,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Quadratic => "quadratic",
            TaskKind::MatrixFactorization => "matrix-factorization",
            TaskKind::SoftmaxRegression => "softmax-regression",
            TaskKind::TwoLayerMlp => "two-layer-mlp",
        })
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "quadratic" => Ok(TaskKind::Quadratic),
            "matrix-factorization" | "mf" => Ok(TaskKind::MatrixFactorization),
            "softmax-regression" | "softmax" => Ok(TaskKind::SoftmaxRegression),
            "two-layer-mlp" | "mlp" => Ok(TaskKind::TwoLayerMlp),
            _ => Err(format!("unknown task `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub dims: Vec<usize>,
    pub dataset_seed: u64,
    /// Rows (or samples) per minibatch; `0` means full batch.
    pub batch_size: usize,
    /// Observation noise (factorization) or additive gradient noise (quadratic).
    pub noise_scale: f64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, dims: &[usize]) -> Self {
        TaskSpec {
            kind,
            dims: dims.to_vec(),
            dataset_seed: 0,
            batch_size: 0,
            noise_scale: 0.0,
        }
    }

    pub fn default_dims(kind: TaskKind) -> Vec<usize> {
        match kind {
            TaskKind::Quadratic => vec![8, 12],
            TaskKind::MatrixFactorization => vec![64, 48, 16],
            TaskKind::SoftmaxRegression => vec![16, 4],
            TaskKind::TwoLayerMlp => vec![16, 24, 4],
        }
    }
}

/// Which rows or samples a gradient is computed on, plus the seed of any
/// gradient noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub rows: Option<Vec<usize>>,
    pub noise_seed: u64,
}

impl Batch {
    pub fn full() -> Self {
        Batch { rows: None, noise_seed: 0 }
    }
}

#[derive(Clone, Debug)]
enum TaskData {
    Quadratic { a: Mat, b: Mat, target: Mat },
    Factorization { clean: Mat, observed: Mat },
    Classification { x_train: Mat, y_train: Vec<usize>, x_eval: Mat, y_eval: Vec<usize>, classes: usize },
}

#[derive(Clone, Debug)]
pub struct ToyTask {
    spec: TaskSpec,
    data: TaskData,
}

const TRAIN_SAMPLES: usize = 512;
const EVAL_SAMPLES: usize = 256;

fn gaussian(r: usize, c: usize, scale: f64, rng: &mut ChaCha8Rng) -> Mat {
    let v = (0..r * c).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Mat::from_vec(r, c, v, Precision::Fp64).expect("sizes match")
}

/// Random SPD matrix with eigenvalues log-spaced in `[lo, hi]`.
fn spd(d: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Result<Mat> {
    let q = qr_sign_fixed(&gaussian(d, d, 1.0, rng))?.q;
    let eig: Vec<f64> = (0..d)
        .map(|k| {
            let t = if d == 1 { 0.0 } else { k as f64 / (d - 1) as f64 };
            lo * (hi / lo).powf(t)
        })
        .collect();
    let scaled = crate::matcore::scale_cols(&q, &eig)?;
    let mut a = product(&scaled, &transpose(&q))?;
    a.symmetrize();
    Ok(a)
}

fn mm(a: &Mat, b: &Mat) -> Result<Mat> {
    product(a, b)
}

fn sub(a: &Mat, b: &Mat) -> Result<Mat> {
    crate::matcore::elemwise(a, b, |x, y| x - y)
}

fn half_mean_square(r: &Mat) -> f64 {
    let v = r.values();
    0.5 * v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
}

fn classification_data(features: usize, classes: usize, n: usize, means: &Mat, rng: &mut ChaCha8Rng) -> (Mat, Vec<usize>) {
    let mut x = gaussian(n, features, 1.0, rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    for (i, &c) in labels.iter().enumerate() {
        for f in 0..features {
            x.set(i, f, x.get(i, f) + means.get(c, f));
        }
    }
    (x, labels)
}

/// Row-wise softmax cross-entropy. Returns the mean loss and `(softmax - onehot)/n`.
fn softmax_xent(logits: &Mat, labels: &[usize]) -> Result<(f64, Mat)> {
    let (n, c) = logits.shape();
    let mut grad = Mat::zeros(n, c, Precision::Fp64);
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
        let log_z = max + z.ln();
        loss += log_z - row[labels[i]];
        for k in 0..c {
            let p = (row[k] - log_z).exp();
            let t = if k == labels[i] { 1.0 } else { 0.0 };
            grad.set(i, k, (p - t) / n as f64);
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numerical { step: 0, message: "non-finite cross-entropy".into() });
    }
    Ok((loss / n as f64, grad))
}

impl ToyTask {
    pub fn build(spec: &TaskSpec) -> Result<ToyTask> {
        let want = match spec.kind {
            TaskKind::Quadratic | TaskKind::SoftmaxRegression => 2,
            TaskKind::MatrixFactorization | TaskKind::TwoLayerMlp => 3,
        };
        if spec.dims.len() != want || spec.dims.contains(&0) {
            return Err(Error::Argument(format!(
                "task {} takes {want} positive dims, got {:?}",
                spec.kind, spec.dims
            )));
        }
        if !(spec.noise_scale >= 0.0 && spec.noise_scale.is_finite()) {
            return Err(Error::Argument(format!("noise scale {} is invalid", spec.noise_scale)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.dataset_seed);
        let d = &spec.dims;
        let data = match spec.kind {
            TaskKind::Quadratic => TaskData::Quadratic {
                a: spd(d[0], 0.1, 1.0, &mut rng)?,
                b: spd(d[1], 0.1, 1.0, &mut rng)?,
                target: gaussian(d[0], d[1], 1.0, &mut rng),
            },
            TaskKind::MatrixFactorization => {
                let (m, n, r) = (d[0], d[1], d[2]);
                let mut u = gaussian(m, r, 1.0, &mut rng);
                for k in 0..r {
                    let s = 10f64.powf(-(k as f64) / r.max(1) as f64);
                    for i in 0..m {
                        u.set(i, k, u.get(i, k) * s);
                    }
                }
                let v = gaussian(r, n, 1.0 / (r as f64).sqrt(), &mut rng);
                let clean = mm(&u, &v)?;
                let noise = gaussian(m, n, spec.noise_scale, &mut rng);
                let observed = crate::matcore::elemwise(&clean, &noise, |x, y| x + y)?;
                TaskData::Factorization { clean, observed }
            }
            TaskKind::SoftmaxRegression | TaskKind::TwoLayerMlp => {
                let features = d[0];
                let classes = *d.last().expect("dims checked");
                if classes < 2 {
                    return Err(Error::Argument("classification needs at least two classes".into()));
                }
                let means = gaussian(classes, features, 1.5 / (features as f64).sqrt() * 2.0, &mut rng);
                let (x_train, y_train) = classification_data(features, classes, TRAIN_SAMPLES, &means, &mut rng);
                let (x_eval, y_eval) = classification_data(features, classes, EVAL_SAMPLES, &means, &mut rng);
                TaskData::Classification { x_train, y_train, x_eval, y_eval, classes }
            }
        };
        Ok(ToyTask { spec: spec.clone(), data })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let d = &self.spec.dims;
        match self.spec.kind {
            TaskKind::Quadratic | TaskKind::SoftmaxRegression => vec![(d[0], d[1])],
            TaskKind::MatrixFactorization => vec![(d[0], d[2]), (d[2], d[1])],
            TaskKind::TwoLayerMlp => vec![(d[0], d[1]), (d[1], d[2])],
        }
    }

    /// Deterministic starting point for the given seed.
    pub fn init_params(&self, seed: u64) -> Vec<Mat> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F1A17);
        match self.spec.kind {
            TaskKind::Quadratic => {
                let (d1, d2) = self.param_shapes()[0];
                vec![Mat::zeros(d1, d2, Precision::Fp64)]
            }
            TaskKind::MatrixFactorization => {
                let r = self.spec.dims[2] as f64;
                self.param_shapes()
                    .into_iter()
                    .map(|(a, b)| gaussian(a, b, 0.5 / r.sqrt(), &mut rng))
                    .collect()
            }
            TaskKind::SoftmaxRegression | TaskKind::TwoLayerMlp => self
                .param_shapes()
                .into_iter()
                .map(|(a, b)| gaussian(a, b, 1.0 / (a as f64).sqrt(), &mut rng))
                .collect(),
        }
    }

    /// Loss at the global minimum when it is known in closed form.
    pub fn optimum_loss(&self) -> Option<f64> {
        match (&self.data, self.spec.noise_scale) {
            (TaskData::Quadratic { .. }, _) => Some(0.0),
            (TaskData::Factorization { .. }, n) if n == 0.0 => Some(0.0),
            _ => None,
        }
    }

    fn sample_count(&self) -> usize {
        match &self.data {
            TaskData::Quadratic { .. } => 0,
            TaskData::Factorization { observed, .. } => observed.rows(),
            TaskData::Classification { x_train, .. } => x_train.rows(),
        }
    }

    /// Minibatch for `step`, drawn from `(dataset_seed, seed, step)` only.
    pub fn batch(&self, seed: u64, step: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.spec.dataset_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ seed.rotate_left(17) ^ step,
        );
        let noise_seed = rng.random();
        let n = self.sample_count();
        let rows = (self.spec.batch_size > 0 && self.spec.batch_size < n).then(|| {
            let mut rows = sample(&mut rng, n, self.spec.batch_size).into_vec();
            rows.sort_unstable();
            rows
        });
        Batch { rows, noise_seed }
    }

    fn check_params(&self, params: &[Mat]) -> Result<()> {
        let shapes = self.param_shapes();
        if params.len() != shapes.len() || params.iter().zip(&shapes).any(|(p, s)| p.shape() != *s) {
            return Err(Error::shape(
                "task parameters",
                format!("expected {shapes:?}, got {:?}", params.iter().map(|p| p.shape()).collect::<Vec<_>>()),
            ));
        }
        Ok(())
    }

    /// Loss on the given batch, without gradient noise.
    pub fn batch_loss(&self, params: &[Mat], batch: &Batch) -> Result<f64> {
        Ok(self.evaluate(params, batch, false)?.0)
    }

    /// Loss and exact gradient on `batch`. The quadratic task adds
    /// `noise_scale`-scaled Gaussian noise to its gradient.
    pub fn gradient(&self, params: &[Mat], batch: &Batch) -> Result<(f64, Vec<Mat>)> {
        let (loss, grads) = self.evaluate(params, batch, true)?;
        Ok((loss, grads.expect("requested")))
    }

    /// Loss over the whole training set.
    pub fn train_loss(&self, params: &[Mat]) -> Result<f64> {
        self.batch_loss(params, &Batch::full())
    }

    /// Held-out loss: clean target for factorization, eval split for the
    /// classifiers, the objective itself for the quadratic.
    pub fn eval_loss(&self, params: &[Mat]) -> Result<f64> {
        self.check_params(params)?;
        match &self.data {
            TaskData::Quadratic { .. } => self.train_loss(params),
            TaskData::Factorization { clean, .. } => {
                Ok(half_mean_square(&sub(clean, &mm(&params[0], &params[1])?)?))
            }
            TaskData::Classification { x_eval, y_eval, .. } => {
                Ok(self.classify(params, x_eval, y_eval, false)?.0)
            }
        }
    }

    fn evaluate(&self, params: &[Mat], batch: &Batch, want_grad: bool) -> Result<(f64, Option<Vec<Mat>>)> {
        self.check_params(params)?;
        match &self.data {
            TaskData::Quadratic { a, b, target } => {
                let (d1, d2) = target.shape();
                let scale = 1.0 / (d1 * d2) as f64;
                let diff = sub(&params[0], target)?;
                let grad = crate::matcore::scaled(&mm(&mm(a, &diff)?, b)?, scale);
                let loss = 0.5 * diff.values().iter().zip(grad.values().iter()).map(|(x, g)| x * g).sum::<f64>();
                if !want_grad {
                    return Ok((loss, None));
                }
                let grad = if self.spec.noise_scale > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(batch.noise_seed);
                    let noise = gaussian(d1, d2, self.spec.noise_scale * scale, &mut rng);
                    crate::matcore::elemwise(&grad, &noise, |x, y| x + y)?
                } else {
                    grad
                };
                Ok((loss, Some(vec![grad])))
            }
            TaskData::Factorization { observed, .. } => {
                let (x, y) = (&params[0], &params[1]);
                let rows: Vec<usize> = batch.rows.clone().unwrap_or_else(|| (0..observed.rows()).collect());
                let xb = x.gather_rows(&rows);
                let resid = sub(&mm(&xb, y)?, &observed.gather_rows(&rows))?;
                let loss = half_mean_square(&resid);
                if !want_grad {
                    return Ok((loss, None));
                }
                let norm = 1.0 / resid.values().len() as f64;
                let gxb = crate::matcore::scaled(&mm(&resid, &transpose(y))?, norm);
                let mut gx = Mat::zeros(x.rows(), x.cols(), Precision::Fp64);
                gx.scatter_rows(&rows, &gxb)?;
                let gy = crate::matcore::scaled(&mm(&transpose(&xb), &resid)?, norm);
                Ok((loss, Some(vec![gx, gy])))
            }
            TaskData::Classification { x_train, y_train, .. } => {
                let (x, y) = match &batch.rows {
                    Some(rows) => (x_train.gather_rows(rows), rows.iter().map(|&r| y_train[r]).collect()),
                    None => (x_train.clone(), y_train.clone()),
                };
                self.classify(params, &x, &y, want_grad)
            }
        }
    }

    fn classify(&self, params: &[Mat], x: &Mat, labels: &[usize], want_grad: bool) -> Result<(f64, Option<Vec<Mat>>)> {
        match self.spec.kind {
            TaskKind::SoftmaxRegression => {
                let (loss, dlogits) = softmax_xent(&mm(x, &params[0])?, labels)?;
                let grads = want_grad.then(|| mm(&transpose(x), &dlogits)).transpose()?;
                Ok((loss, grads.map(|g| vec![g])))
            }
            _ => {
                let h = mm(x, &params[0])?.map(f64::tanh);
                let (loss, dlogits) = softmax_xent(&mm(&h, &params[1])?, labels)?;
                if !want_grad {
                    return Ok((loss, None));
                }
                let g2 = mm(&transpose(&h), &dlogits)?;
                let dh = mm(&dlogits, &transpose(&params[1]))?;
                let dpre = crate::matcore::elemwise(&dh, &h, |g, t| g * (1.0 - t * t))?;
                let g1 = mm(&transpose(x), &dpre)?;
                Ok((loss, Some(vec![g1, g2])))
            }
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match &self.data {
            TaskData::Classification { classes, .. } => Some(*classes),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// max |g - g_fd| / max |g_fd| with central differences, h = 1e-6.
    fn fd_error(task: &ToyTask, params: &[Mat], batch: &Batch) -> f64 {
        let (_, grads) = task.gradient(params, batch).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (l, p) in params.iter().enumerate() {
            for i in 0..p.rows() {
                for j in 0..p.cols() {
                    let mut plus = params.to_vec();
                    plus[l].set(i, j, p.get(i, j) + h);
                    let mut minus = params.to_vec();
                    minus[l].set(i, j, p.get(i, j) - h);
                    let fd = (task.batch_loss(&plus, batch).unwrap() - task.batch_loss(&minus, batch).unwrap()) / (2.0 * h);
                    worst = worst.max((fd - grads[l].get(i, j)).abs());
                    scale = scale.max(fd.abs());
                }
            }
        }
        worst / scale
    }

    fn check(kind: TaskKind, dims: &[usize], batch_size: usize) {
        let spec = TaskSpec { batch_size, dataset_seed: 3, noise_scale: 0.1, ..TaskSpec::new(kind, dims) };
        let spec = if kind == TaskKind::Quadratic { TaskSpec { noise_scale: 0.0, ..spec } } else { spec };
        let task = ToyTask::build(&spec).unwrap();
        let mut params = task.init_params(1);
        if kind == TaskKind::Quadratic {
            params[0] = params[0].map(|_| 0.3);
        }
        let err = fd_error(&task, &params, &task.batch(1, 4));
        assert!(err <= 1e-4, "{kind}: {err}");
    }

    #[test]
    fn quadratic_gradient() {
        check(TaskKind::Quadratic, &[4, 5], 0);
    }

    #[test]
    fn factorization_gradient() {
        check(TaskKind::MatrixFactorization, &[6, 5, 3], 4);
    }

    #[test]
    fn softmax_gradient() {
        check(TaskKind::SoftmaxRegression, &[5, 3], 32);
    }

    #[test]
    fn mlp_gradient() {
        check(TaskKind::TwoLayerMlp, &[4, 6, 3], 32);
    }

    #[test]
    fn quadratic_optimum_is_zero() {
        let spec = TaskSpec::new(TaskKind::Quadratic, &[3, 4]);
        let task = ToyTask::build(&spec).unwrap();
        let TaskData::Quadratic { target, .. } = &task.data else { unreachable!() };
        assert!(task.train_loss(std::slice::from_ref(&target)).unwrap().abs() < 1e-30);
        assert!(task.train_loss(&task.init_params(0)).unwrap() > 0.0);
    }

    #[test]
    fn batches_are_deterministic() {
        let spec = TaskSpec { batch_size: 8, ..TaskSpec::new(TaskKind::SoftmaxRegression, &[4, 3]) };
        let task = ToyTask::build(&spec).unwrap();
        assert_eq!(task.batch(2, 10), task.batch(2, 10));
        assert_ne!(task.batch(2, 10), task.batch(2, 11));
        assert_eq!(task.batch(2, 10).rows.unwrap().len(), 8);
    }

    #[test]
    fn bad_dims_are_rejected() {
        assert!(ToyTask::build(&TaskSpec::new(TaskKind::TwoLayerMlp, &[4, 3])).is_err());
        assert!(ToyTask::build(&TaskSpec::new(TaskKind::SoftmaxRegression, &[4, 1])).is_err());
    }
}
