mod support;

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gramnas::arch::Architecture;
use gramnas::evaluator::{Evaluator, EvaluatorConfig};
use gramnas::evolution::{run_search, tournament_select, warm_start, Individual, Population, SearchConfig};
use gramnas::grammar::Grammar;
use gramnas::surrogate::{ForestParams, ForestSurrogate, NormalizationMethod, SurrogateKind};
use support::{early_candidate_tau, labelled_history, IMAGE};

fn member(g: &Grammar, fitness: f64, birth: u64) -> Individual {
    Individual {
        arch: Arc::new(Architecture::build(
            g,
            gramnas::encoder::parse(g, "identity").unwrap(),
            IMAGE,
            None,
        )),
        accuracy: Some(fitness),
        prediction: None,
        birth_index: birth,
    }
}

fn small(surrogate: SurrogateKind, seed: u64) -> SearchConfig {
    SearchConfig {
        population_size: 30,
        n_candidates: 10,
        k: 3,
        tournament_size: 5,
        iterations: 25,
        surrogate,
        seed,
        ..Default::default()
    }
}

#[test]
fn size_one_tournaments_pick_uniformly() {
    let g = Grammar::mini_einspace();
    let mut pop = Population::new(5);
    for i in 0..5 {
        pop.push(member(&g, i as f64 / 10.0, i));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut counts = [0usize; 5];
    for _ in 0..10_000 {
        counts[tournament_select(&pop, 1, &mut rng).unwrap().birth_index as usize] += 1;
    }
    for c in counts {
        let f = c as f64 / 10_000.0;
        assert!((0.18..=0.22).contains(&f), "{counts:?}");
    }
}

#[test]
fn full_tournament_returns_the_best_and_ties_go_to_the_elder() {
    let g = Grammar::mini_einspace();
    let mut pop = Population::new(4);
    for (i, f) in [0.3, 0.9, 0.5, 0.9].into_iter().enumerate() {
        pop.push(member(&g, f, i as u64));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    for _ in 0..50 {
        assert_eq!(tournament_select(&pop, 4, &mut rng).unwrap().birth_index, 1);
    }
}

#[test]
fn every_offspring_is_accepted_when_k_equals_n() {
    let g = Grammar::mini_einspace();
    let e = Evaluator::new(EvaluatorConfig::synthetic_linear(3, 0.02), &g, IMAGE).unwrap();
    let cfg = SearchConfig {
        k: 10,
        ..small(SurrogateKind::None, 63)
    };
    let r = run_search(&cfg, &g, &e, None, None).unwrap();
    for it in &r.iterations {
        let cands: BTreeSet<_> = it.candidates.iter().map(|c| &c.encoding).collect();
        let accepted: BTreeSet<_> = it.accepted.iter().collect();
        assert_eq!(cands, accepted);
        assert_eq!(it.evaluated.len(), 10);
        assert!(it.candidates.iter().all(|c| c.prediction.is_none()));
    }
    assert_eq!(r.true_evaluations, 30 + 25 * 10);
}

#[test]
fn running_best_never_drops_and_counts_add_up() {
    let g = Grammar::mini_einspace();
    let e = Evaluator::new(EvaluatorConfig::synthetic_linear(4, 0.02), &g, IMAGE).unwrap();
    let cfg = small(SurrogateKind::Forest, 64);
    let mut f = ForestSurrogate::new(ForestParams::default());
    let r = run_search(&cfg, &g, &e, Some(&mut f), None).unwrap();
    assert!(r.iterations.windows(2).all(|w| w[1].best >= w[0].best));
    assert!(r
        .iterations
        .iter()
        .all(|it| it.accepted.len() == 3 && it.candidates.len() == 10));
    assert_eq!(r.true_evaluations, 30 + 25 * 3);
    assert!(r
        .iterations
        .iter()
        .all(|it| it.candidates.iter().all(|c| c.prediction.is_some())));
    let refits: Vec<usize> = r.iterations.iter().filter(|it| it.refit).map(|it| it.iter).collect();
    assert_eq!(refits, vec![19]);
}

#[test]
fn zero_iterations_returns_the_initial_best() {
    let g = Grammar::mini_einspace();
    let e = Evaluator::new(EvaluatorConfig::synthetic_linear(5, 0.0), &g, IMAGE).unwrap();
    let cfg = SearchConfig {
        iterations: 0,
        ..small(SurrogateKind::None, 65)
    };
    let r = run_search(&cfg, &g, &e, None, None).unwrap();
    let max = r.initial.iter().map(|x| x.accuracy).fold(f64::MIN, f64::max);
    assert_eq!(r.best.fitness, max);
    assert!(r.iterations.is_empty());
}

#[test]
fn transfer_helps_when_oracles_match_and_hurts_when_they_oppose() {
    let g = Grammar::mini_einspace();
    let target = Evaluator::new(EvaluatorConfig::synthetic_linear(7, 0.0), &g, IMAGE).unwrap();
    let opposite = Evaluator::new(
        EvaluatorConfig::SyntheticLinear {
            seed: 7,
            sigma: 0.0,
            gain: -1.0,
            bias: 0.0,
        },
        &g,
        IMAGE,
    )
    .unwrap();
    let cfg = SearchConfig {
        iterations: 5,
        ..SearchConfig {
            surrogate: SurrogateKind::Forest,
            seed: 66,
            ..Default::default()
        }
    };
    let tau_with = |history: Option<&gramnas::surrogate::TrainingSet>| {
        let warm = history.map(|h| {
            let nrm = h.fit_normalizer(NormalizationMethod::Percentile).unwrap();
            warm_start(h, &nrm).unwrap()
        });
        let mut f = ForestSurrogate::new(ForestParams::default());
        let r = run_search(&cfg, &g, &target, Some(&mut f), warm.as_ref()).unwrap();
        early_candidate_tau(&g, &target, &r, 100)
    };
    let cold = tau_with(None);
    let matched = tau_with(Some(&labelled_history(&g, &target, 500, 67, "other")));
    let anti = tau_with(Some(&labelled_history(&g, &opposite, 500, 67, "other")));
    assert!(matched >= cold, "matched {matched}, cold {cold}");
    assert!(anti <= 0.0, "anti {anti}");
}
