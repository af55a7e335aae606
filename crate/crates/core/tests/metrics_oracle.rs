mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gramnas::metrics::{kendall_tau, spearman_rho, CorrelationReport, MetricError};
use support::{kendall_pairs, spearman_by_ranks, tied_vectors};

fn agree(fast: Result<f64, MetricError>, slow: Option<f64>) -> bool {
    match (fast, slow) {
        (Ok(a), Some(b)) => (a - b).abs() <= 1e-12,
        (Err(MetricError::Degenerate), None) => true,
        _ => false,
    }
}

#[test]
fn kendall_matches_pair_counting_on_tied_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let (x, y) = tied_vectors(&mut rng);
        assert!(agree(kendall_tau(&x, &y), kendall_pairs(&x, &y)), "{x:?} {y:?}");
    }
}

#[test]
fn spearman_matches_rank_then_pearson() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let (x, y) = tied_vectors(&mut rng);
        assert!(agree(spearman_rho(&x, &y), spearman_by_ranks(&x, &y)), "{x:?} {y:?}");
    }
}

#[test]
fn rank_difference_example() {
    let rho = spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert!((rho - 0.8).abs() < 1e-12);
}

#[test]
fn report_marks_constant_input() {
    let r = CorrelationReport::compute(&[0.5, 0.5, 0.5], &[0.1, 0.2, 0.3]).unwrap();
    assert!(r.degenerate);
    assert_eq!((r.spearman, r.kendall, r.n), (None, None, 3));
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec((0i32..8).prop_map(f64::from), n),
            prop::collection::vec((0i32..8).prop_map(f64::from), n),
        )
    })
}

proptest! {
    #[test]
    fn symmetric_and_bounded((x, y) in pair()) {
        for f in [kendall_tau, spearman_rho] {
            match (f(&x, &y), f(&y, &x)) {
                (Ok(a), Ok(b)) => {
                    prop_assert!((a - b).abs() < 1e-12);
                    prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
                }
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                other => prop_assert!(false, "asymmetric result {:?}", other),
            }
        }
    }

    #[test]
    fn invariant_under_increasing_maps((x, y) in pair()) {
        let warped: Vec<f64> = x.iter().map(|v| (v * 0.7).exp() - 3.0).collect();
        prop_assert_eq!(kendall_tau(&x, &y), kendall_tau(&warped, &y));
        let a = spearman_rho(&x, &y);
        let b = spearman_rho(&warped, &y);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }
}
