mod support;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gramnas::augment::{expand_dataset, AugmentKind};
use gramnas::grammar::Grammar;
use support::{check_rewrites, compiling_trees, label_noise_std};

#[test]
fn rewrites_preserve_what_they_promise() {
    let g = Grammar::mini_einspace();
    let seen = check_rewrites(&g, 1000, 41).unwrap();
    assert!(seen.iter().all(|n| *n > 50), "{seen:?}");
}

#[test]
fn label_noise_has_the_configured_spread() {
    let sd = label_noise_std(10_000, 42);
    assert!((0.0045..=0.0055).contains(&sd), "{sd}");
}

#[test]
fn expansion_cycles_kinds_and_keeps_originals() {
    let g = Grammar::mini_einspace();
    let samples: Vec<_> = compiling_trees(&g, 50, 9, 43)
        .into_iter()
        .map(|(t, _)| (t, 0.5))
        .collect();
    let out = expand_dataset(&g, &samples, 3, &mut ChaCha8Rng::seed_from_u64(44));
    let mut by_kind: BTreeMap<String, usize> = BTreeMap::new();
    for s in &out {
        *by_kind.entry(format!("{:?}", s.source_kind)).or_default() += 1;
    }
    assert_eq!(by_kind["Original"], 50);
    assert!(out.len() <= 50 * 4);
    let originals: Vec<_> = out
        .iter()
        .filter(|s| s.source_kind == AugmentKind::Original)
        .map(|s| &s.tree)
        .collect();
    assert!(samples.iter().zip(originals).all(|((t, _), o)| t == o));
}
