use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use precond::decomp::{eig_symmetric, qr_sign_fixed, top_k};
use precond::harness::tasks::Batch;
use precond::harness::{Schedule, TaskKind, TaskSpec, ToyTask};
use precond::matcore::{bf16_quantize, bf16_round, orthogonality_error, product, transpose};
use precond::subspace::{block_size, select_greedy, select_random, subspace_pass};
use precond::{CostLedger, OptimConfig, Precision, StorageMatrix};

fn matrix(d: usize) -> impl Strategy<Value = StorageMatrix> {
    prop::collection::vec(-1.0f64..1.0, d * d)
        .prop_map(move |v| StorageMatrix::from_vec(d, d, v, Precision::Fp64).unwrap())
}

fn psd(d: usize) -> impl Strategy<Value = StorageMatrix> {
    matrix(d).prop_map(|m| {
        let mut p = product(&m, &transpose(&m)).unwrap();
        p.symmetrize();
        p
    })
}

fn normal_f32() -> impl Strategy<Value = f32> {
    any::<f32>().prop_filter("normal", |x| x.is_normal() && x.abs() < 1e38)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bf16_matches_reference_conversion(x in normal_f32()) {
        prop_assert_eq!(bf16_round(x), half::bf16::from_f32(x).to_bits());
    }

    #[test]
    fn bf16_rounding_is_close_and_idempotent(x in normal_f32()) {
        let y = bf16_quantize(x);
        prop_assert!((y - x).abs() <= x.abs() * 2f32.powi(-8));
        prop_assert_eq!(bf16_quantize(y).to_bits(), y.to_bits());
    }

    #[test]
    fn qr_reconstructs_with_positive_diagonal(a in matrix(6)) {
        prop_assume!(a.frobenius() > 1e-3);
        let Ok(f) = qr_sign_fixed(&a) else { return Ok(()) };
        prop_assert!(orthogonality_error(&f.q) <= 1e-13);
        prop_assert!(product(&f.q, &f.r).unwrap().max_abs_diff(&a) <= 1e-13);
        for i in 0..6 {
            prop_assert!(f.r.get(i, i) > 0.0);
            for j in 0..i {
                prop_assert_eq!(f.r.get(i, j), 0.0);
            }
        }
    }

    #[test]
    fn eig_satisfies_the_eigen_equation(s in psd(7)) {
        let e = eig_symmetric(&s).unwrap();
        prop_assert!(orthogonality_error(&e.vectors) <= 1e-12);
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        let av = product(&s, &e.vectors).unwrap();
        let scale = s.max_abs().max(1.0);
        for j in 0..7 {
            for i in 0..7 {
                prop_assert!((av.get(i, j) - e.values[j] * e.vectors.get(i, j)).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn top_k_agrees_with_a_stable_sort(values in prop::collection::vec(-3i32..3, 1..20), k in 0usize..20) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let k = k.min(values.len());
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
        prop_assert_eq!(top_k(&values, k).unwrap(), order[..k].to_vec());
    }

    #[test]
    fn block_size_stays_in_range(d in 0usize..300, b in 0.01f64..=1.0) {
        match block_size(d, b) {
            None => prop_assert!(d < 2),
            Some(size) => prop_assert!(size >= 2 && size <= d),
        }
    }

    #[test]
    fn random_selection_is_a_sorted_distinct_block(d in 2usize..40, frac in 0.05f64..=1.0, seed: u64) {
        let b = block_size(d, frac).unwrap();
        let pick = |seed| select_random(d, b, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().indices().to_vec();
        let idx = pick(seed);
        prop_assert_eq!(idx.len(), b);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&i| i < d));
        prop_assert_eq!(idx, pick(seed));
    }

    /// A subspace pass keeps `Q` orthogonal and keeps `P = QᵀSQ` for the
    /// factor `S` it started from.
    #[test]
    fn subspace_pass_preserves_the_represented_factor(s in psd(9), g in matrix(9), b in 2usize..9, greedy: bool) {
        let cfg = OptimConfig { storage: Precision::Fp64, ..Default::default() };
        let Ok(f) = qr_sign_fixed(&g) else { return Ok(()) };
        let mut q = f.q;
        let mut p = product(&transpose(&q), &product(&s, &q).unwrap()).unwrap();
        p.symmetrize();
        let before = orthogonality_error(&q);
        let idx = if greedy {
            select_greedy(&p, b).unwrap()
        } else {
            select_random(9, b, &mut ChaCha8Rng::seed_from_u64(b as u64)).unwrap()
        };
        let mut ledger = CostLedger::for_layer(9, 9);
        if subspace_pass(&mut q, &mut p, &idx, &cfg, &mut ledger).is_err() {
            // Rank-deficient blocks are reported as singular, not mangled.
            return Ok(());
        }
        prop_assert!(orthogonality_error(&q) <= before + 10.0 * 9.0 * f64::EPSILON);
        let represented = product(&transpose(&q), &product(&s, &q).unwrap()).unwrap();
        prop_assert!(p.max_abs_diff(&represented) <= 1e-12 * s.max_abs().max(1.0));
        prop_assert!(p.bitwise_eq(&transpose(&p)));
    }

    #[test]
    fn cosine_schedule_hits_both_endpoints(base in 1e-6f64..1.0, min_frac in 0.0f64..1.0, total in 2u64..5000) {
        let min_lr = base * min_frac;
        let s = Schedule::Cosine { min_lr };
        prop_assert_eq!(s.lr(base, 0, total), base);
        prop_assert_eq!(s.lr(base, total - 1, total), min_lr);
    }

    #[test]
    fn warmup_is_linear(base in 1e-6f64..1.0, warmup in 1u64..200) {
        let s = Schedule::WarmupCooldown { warmup, cooldown: 0 };
        for k in 0..warmup {
            let want = base * (k + 1) as f64 / warmup as f64;
            prop_assert!((s.lr(base, k, 10_000) - want).abs() <= 4.0 * f64::EPSILON * base);
        }
    }
}

fn central_difference_error(task: &ToyTask, params: &[StorageMatrix], batch: &Batch) -> f64 {
    let (_, grads) = task.gradient(params, batch).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (l, g) in grads.iter().enumerate() {
        let (r, c) = g.shape();
        for i in 0..r {
            for j in 0..c {
                let mut plus = params.to_vec();
                let mut minus = params.to_vec();
                plus[l].set(i, j, params[l].get(i, j) + h);
                minus[l].set(i, j, params[l].get(i, j) - h);
                let fd = (task.batch_loss(&plus, batch).unwrap() - task.batch_loss(&minus, batch).unwrap()) / (2.0 * h);
                let scale = fd.abs().max(g.get(i, j).abs()).max(1e-6);
                worst = worst.max((fd - g.get(i, j)).abs() / scale);
            }
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn task_gradients_match_finite_differences(kind_index in 0usize..4, seed in 0u64..1000, step in 0u64..50) {
        let (kind, dims): (TaskKind, &[usize]) = [
            (TaskKind::Quadratic, &[4, 5][..]),
            (TaskKind::MatrixFactorization, &[6, 5, 3][..]),
            (TaskKind::SoftmaxRegression, &[5, 3][..]),
            (TaskKind::TwoLayerMlp, &[4, 5, 3][..]),
        ][kind_index];
        let spec = TaskSpec { dataset_seed: seed, batch_size: 4, noise_scale: 0.0, ..TaskSpec::new(kind, dims) };
        let task = ToyTask::build(&spec).unwrap();
        let mut params = task.init_params(seed);
        if kind == TaskKind::Quadratic {
            params[0] = params[0].map(|_| 0.3);
        }
        let err = central_difference_error(&task, &params, &task.batch(seed, step));
        prop_assert!(err <= 1e-4, "{kind}: {err}");
    }
}
