mod common;

use airfl::data::{gen_synthetic, partition_iid, Dataset};
use airfl::model::{evaluate, gradient, local_comp, loss, param_dim, Batch, ModelParams};
use common::{gaussian_vec, neumaier_sum};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-sample cross entropy from the textbook formula, class-major layout
/// with the bias last in each class block.
fn naive_loss(w: &[f64], data: &Dataset, rows: &[usize]) -> f64 {
    let p = data.n_features();
    let classes = data.n_classes();
    let per_sample = rows.iter().map(|&i| {
        let x = data.row(i);
        let logits: Vec<f64> = (0..classes)
            .map(|c| {
                let block = &w[c * (p + 1)..(c + 1) * (p + 1)];
                neumaier_sum(block[..p].iter().zip(x).map(|(a, b)| a * b)) + block[p]
            })
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = top + neumaier_sum(logits.iter().map(|l| (l - top).exp())).ln();
        log_z - logits[data.label(i)]
    });
    neumaier_sum(per_sample) / rows.len() as f64
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize, classes: usize) -> Dataset {
    let features = (0..n * p).map(|_| rng.random_range(0.0..=1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::new(features, labels, p, classes).unwrap()
}

#[test]
fn loss_matches_naive_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data = gen_synthetic(300, 20, 10, 4).unwrap();
    for _ in 0..20 {
        let w = gaussian_vec(&mut rng, param_dim(20, 10), 0.5);
        let rows: Vec<usize> = (0..data.len()).filter(|_| rng.random_bool(0.3)).collect();
        let batch = Batch::new(&data, rows.clone()).unwrap();
        let got = loss(&w, &batch).unwrap();
        let expected = naive_loss(&w, &data, &rows);
        assert!((got - expected).abs() <= 1e-10 * expected.max(1.0), "{got} vs {expected}");
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for case in 0..20 {
        let p = rng.random_range(1..8);
        let classes = rng.random_range(2..6);
        let data = random_dataset(&mut rng, 40, p, classes);
        let rows: Vec<usize> = (0..rng.random_range(1..40)).collect();
        let batch = Batch::new(&data, rows).unwrap();
        let w = gaussian_vec(&mut rng, param_dim(p, classes), 1.0);
        let analytic = gradient(&w, &batch).unwrap();
        let h = 1e-6;
        let numeric: Vec<f64> = (0..w.len())
            .map(|i| {
                let mut plus = w.clone();
                let mut minus = w.clone();
                plus[i] += h;
                minus[i] -= h;
                (loss(&plus, &batch).unwrap() - loss(&minus, &batch).unwrap()) / (2.0 * h)
            })
            .collect();
        let err = common::rel_err(&analytic, &numeric, 1e-8);
        assert!(err < 1e-4, "case {case}: relative error {err}");
    }
}

#[test]
fn synthetic_task_is_learnable() {
    let all = gen_synthetic(1000, 20, 10, 1).unwrap();
    let (train, test) = all.split_at(800);
    let mut w = ModelParams::zeros(param_dim(20, 10));
    let batch = Batch::full(&train).unwrap();
    for _ in 0..200 {
        let g = gradient(&w, &batch).unwrap();
        w.iter_mut().zip(g.iter()).for_each(|(a, b)| *a -= 0.5 * b);
    }
    let acc = evaluate(&w, &test).unwrap().accuracy;
    assert!(acc > 0.1, "test accuracy {acc}");
}

#[test]
fn zero_model_loss_is_log_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for classes in [2, 3, 10] {
        let data = random_dataset(&mut rng, 50, 7, classes);
        let w = ModelParams::zeros(param_dim(7, classes));
        let got = loss(&w, &Batch::full(&data).unwrap()).unwrap();
        assert!((got - (classes as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn local_step_is_one_sgd_step_on_the_sampled_rows() {
    let data = gen_synthetic(200, 5, 4, 9).unwrap();
    let shards = partition_iid(&data, 4, 3).unwrap();
    let w = ModelParams::from(gaussian_vec(&mut ChaCha8Rng::seed_from_u64(1), param_dim(5, 4), 0.1));
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let out = local_comp(&w, &shards[2], 10, 0.3, &mut rng).unwrap();
    // replay the same draw
    let rows = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(77), shards[2].len(), 10).into_vec();
    let g = gradient(&w, &Batch::new(&shards[2].data, rows).unwrap()).unwrap();
    for i in 0..w.dim() {
        assert!((out[i] - (w[i] - 0.3 * g[i])).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn partition_is_disjoint_and_equal(n in 10usize..400, k in 1usize..10, seed in 0u64..500) {
        prop_assume!(k <= n);
        let data = gen_synthetic(n.max(3), 2, 3, 5).unwrap();
        let shards = partition_iid(&data, k, seed).unwrap();
        let mut seen = vec![false; data.len()];
        for s in &shards {
            prop_assert_eq!(s.len(), data.len() / k);
            for &i in &s.indices {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
    }

    #[test]
    fn synthetic_features_in_unit_interval(n in 10usize..200, p in 1usize..10, classes in 2usize..6, seed in 0u64..1000) {
        prop_assume!(n >= classes);
        let data = gen_synthetic(n, p, classes, seed).unwrap();
        prop_assert!(data.features().iter().all(|v| (0.0..=1.0).contains(v)));
        for c in 0..classes {
            let count = data.labels().iter().filter(|&&y| y == c).count();
            prop_assert!(count == n / classes || count == n / classes + 1);
        }
    }
}
