use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gramnas::features::FeatureVector;
use gramnas::metrics::kendall_tau;
use gramnas::surrogate::{draw_bootstraps, fit_forest, fit_forest_with_bootstraps, ForestModel, ForestParams};

fn schema(d: usize) -> Arc<Vec<String>> {
    Arc::new((0..d).map(|j| format!("x{j}")).collect())
}

fn rows(xs: &[Vec<f64>]) -> Vec<FeatureVector> {
    let s = schema(xs[0].len());
    xs.iter()
        .map(|x| FeatureVector::new(x.clone(), Arc::clone(&s)).unwrap())
        .collect()
}

fn params(n_trees: usize) -> ForestParams {
    ForestParams {
        n_trees,
        min_samples_leaf: 1,
    }
}

fn dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (2usize..40, 1usize..4).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec((0i32..6).prop_map(f64::from), d), n),
            prop::collection::vec(-5.0f64..5.0, n),
        )
    })
}

/// Best single split of 1-D data by exhaustive search: threshold and training MSE.
fn best_stump(x: &[f64], y: &[f64]) -> (f64, f64) {
    let sse = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
        v.iter().map(|a| (a - m) * (a - m)).sum::<f64>()
    };
    let mut best = (f64::NAN, f64::INFINITY);
    for &t in x {
        let l: Vec<f64> = x.iter().zip(y).filter(|(xi, _)| **xi <= t).map(|(_, yi)| *yi).collect();
        let r: Vec<f64> = x.iter().zip(y).filter(|(xi, _)| **xi > t).map(|(_, yi)| *yi).collect();
        let err = (sse(&l) + sse(&r)) / x.len() as f64;
        if err < best.1 {
            best = (t, err);
        }
    }
    best
}

#[test]
fn threshold_function_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let step = |x: f64| if x > 0.5 { 1.0 } else { 0.0 };
    let train_x: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    let train_y: Vec<f64> = train_x.iter().map(|&x| step(x)).collect();
    let (t, err) = best_stump(&train_x, &train_y);
    assert_eq!(err, 0.0);
    let model = fit_forest(
        &rows(&train_x.iter().map(|x| vec![*x]).collect::<Vec<_>>()),
        &train_y,
        params(100),
        1,
    )
    .unwrap();
    let test_x: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
    let mse = test_x
        .iter()
        .map(|&x| (model.predict_row(&[x]) - step(x)).powi(2))
        .sum::<f64>()
        / 1000.0;
    assert!(mse < 0.01, "forest mse {mse}");
    // The oracle stump's threshold splits the training data the same way the learned trees do.
    let agree = train_x.iter().all(|&x| (model.predict_row(&[x]) > 0.5) == (x > t));
    assert!(agree);
}

#[test]
fn single_tree_reproduces_training_targets() {
    let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i % 7) as f64]).collect();
    let ys: Vec<f64> = (0..30).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
    let all: Vec<usize> = (0..30).collect();
    let model = fit_forest_with_bootstraps(&rows(&xs), &ys, params(1), 0, vec![all]).unwrap();
    for (x, y) in xs.iter().zip(&ys) {
        assert_eq!(model.predict_row(x), *y);
    }
}

#[test]
fn model_json_round_trip() {
    let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
    let ys: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
    let model = fit_forest(&rows(&xs), &ys, params(10), 5).unwrap();
    let back = ForestModel::from_json(&model.to_json()).unwrap();
    assert!(back == model, "model changed in the JSON round trip");
    assert!(model.to_json().contains("\"schema\""));
}

#[test]
fn more_trees_rank_at_least_as_well() {
    // Noiseless smooth target: averaged over seeds, a larger forest ranks held-out rows no worse.
    let mut small = 0.0;
    let mut large = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut draw = |n| {
            (0..n)
                .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
                .collect::<Vec<_>>()
        };
        let (train, test) = (draw(200), draw(200));
        let f = |x: &Vec<f64>| x[0] + 0.5 * x[1] * x[1];
        let ys: Vec<f64> = train.iter().map(f).collect();
        let truth: Vec<f64> = test.iter().map(f).collect();
        for (n, acc) in [(1, &mut small), (50, &mut large)] {
            let m = fit_forest(&rows(&train), &ys, params(n), seed).unwrap();
            let p: Vec<f64> = test.iter().map(|x| m.predict_row(x)).collect();
            *acc += kendall_tau(&p, &truth).unwrap() / 5.0;
        }
    }
    assert!(large >= small, "1 tree {small}, 50 trees {large}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictions_stay_within_target_range((xs, ys) in dataset(), seed in any::<u64>()) {
        let model = fit_forest(&rows(&xs), &ys, params(8), seed).unwrap();
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let probe: Vec<f64> = (0..xs[0].len()).map(|_| rng.random_range(-2.0..8.0)).collect();
            let p = model.predict_row(&probe);
            prop_assert!(p >= lo && p <= hi, "{} outside [{}, {}]", p, lo, hi);
        }
    }

    #[test]
    fn row_order_does_not_matter_given_the_draws((xs, ys) in dataset(), seed in any::<u64>()) {
        let n = xs.len();
        let draws = draw_bootstraps(n, 6, seed);
        let a = fit_forest_with_bootstraps(&rows(&xs), &ys, params(6), seed, draws.clone()).unwrap();
        // new position of each original row
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let mut xs2 = vec![Vec::new(); n];
        let mut ys2 = vec![0.0; n];
        for (old, &new) in perm.iter().enumerate() {
            xs2[new] = xs[old].clone();
            ys2[new] = ys[old];
        }
        let mapped: Vec<Vec<usize>> = draws.iter().map(|d| d.iter().map(|&i| perm[i]).collect()).collect();
        let b = fit_forest_with_bootstraps(&rows(&xs2), &ys2, params(6), seed, mapped).unwrap();
        for x in &xs {
            prop_assert!((a.predict_row(x) - b.predict_row(x)).abs() < 1e-12);
        }
    }
}
