use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gramnas::grammar::{mutate_subtree, sample_tree, Grammar};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn samples_are_valid_and_within_depth(seed in any::<u64>(), depth in 1usize..14) {
        let g = Grammar::mini_einspace();
        let t = sample_tree(&g, depth, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(t.depth() <= depth);
        prop_assert!(g.check_tree(&t, Some(depth)).is_ok());
        prop_assert_eq!(&t.nonterminal, g.start());
    }

    #[test]
    fn mutants_stay_valid(seed in any::<u64>()) {
        let g = Grammar::mini_einspace();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = sample_tree(&g, 8, &mut rng).unwrap();
        for _ in 0..10 {
            t = mutate_subtree(&g, &t, 8, 10, &mut rng).unwrap();
            prop_assert!(t.depth() <= 8);
            prop_assert!(g.check_tree(&t, Some(8)).is_ok());
        }
    }

    #[test]
    fn sampling_is_seed_deterministic(seed in any::<u64>()) {
        let g = Grammar::mini_einspace();
        let a = sample_tree(&g, 10, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = sample_tree(&g, 10, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}
