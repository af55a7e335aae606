use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use thiserror::Error;

use super::{DerivationTree, Grammar, Production};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SampleError {
    #[error("max_depth must be at least 1")]
    ZeroDepth,
    #[error("no production of `{nonterminal}` fits within depth budget {budget}")]
    Exhausted { nonterminal: String, budget: usize },
    #[error("tree has no node at index {0}")]
    NoSuchNode(usize),
}

/// Samples a derivation of the start symbol with depth at most `max_depth`.
///
/// Productions are drawn uniformly among those that can still terminate within
/// the remaining budget; parameters uniformly from their domains.
pub fn sample_tree<R: Rng + ?Sized>(g: &Grammar, max_depth: usize, rng: &mut R) -> Result<DerivationTree, SampleError> {
    if max_depth == 0 {
        return Err(SampleError::ZeroDepth);
    }
    sample_nonterminal(g, g.start(), max_depth, rng)
}

pub(crate) fn sample_nonterminal<R: Rng + ?Sized>(
    g: &Grammar,
    nonterminal: &str,
    budget: usize,
    rng: &mut R,
) -> Result<DerivationTree, SampleError> {
    let feasible: Vec<&Production> = g
        .productions(nonterminal)
        .iter()
        .filter(|p| g.production_min_depth(p).is_some_and(|d| d <= budget))
        .collect();
    let prod = feasible.choose(rng).ok_or_else(|| SampleError::Exhausted {
        nonterminal: nonterminal.to_string(),
        budget,
    })?;
    let mut params = BTreeMap::new();
    for (name, domain) in &prod.param_domains {
        params.insert(name.clone(), domain.choose(rng).expect("non-empty domain").clone());
    }
    let children = prod
        .nonterminals()
        .map(|nt| sample_nonterminal(g, nt, budget - 1, rng))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DerivationTree::new(nonterminal, prod.name.clone(), params, children))
}

/// Result of a subtree mutation: the new tree and the pre-order index of the replaced node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mutation {
    pub tree: DerivationTree,
    pub site: usize,
}

/// Replaces one uniformly chosen subtree with a fresh sample of its nonterminal.
pub fn mutate_subtree<R: Rng + ?Sized>(
    g: &Grammar,
    tree: &DerivationTree,
    max_depth: usize,
    retries: usize,
    rng: &mut R,
) -> Result<DerivationTree, SampleError> {
    mutate_subtree_with_site(g, tree, max_depth, retries, rng).map(|m| m.tree)
}

pub fn mutate_subtree_with_site<R: Rng + ?Sized>(
    g: &Grammar,
    tree: &DerivationTree,
    max_depth: usize,
    retries: usize,
    rng: &mut R,
) -> Result<Mutation, SampleError> {
    if max_depth == 0 {
        return Err(SampleError::ZeroDepth);
    }
    let nodes = tree.preorder();
    let mut last_err = None;
    for _ in 0..retries.max(1) {
        let site = rng.random_range(0..nodes.len());
        let (node, depth) = nodes[site];
        let budget = max_depth.saturating_sub(depth);
        let fresh = if budget == 0 {
            Err(SampleError::Exhausted {
                nonterminal: node.nonterminal.clone(),
                budget,
            })
        } else {
            sample_nonterminal(g, &node.nonterminal, budget, rng)
        };
        match fresh {
            Ok(sub) => {
                let tree = tree.replace_at(site, sub).ok_or(SampleError::NoSuchNode(site))?;
                return Ok(Mutation { tree, site });
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

#[cfg(test)]
mod tests {
    use super::super::load_grammar;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const RECURSIVE_ONLY: &str = r#"{"start":"NET","rules":{"NET":[
        {"name":"sequential","module":"sequential","rhs":[{"nt":"NET"},{"nt":"NET"}]}]}}"#;

    /// Number of complete derivations of `nt` with depth at most `depth`, by exhaustive expansion.
    fn count_derivations(g: &Grammar, nt: &str, depth: usize) -> u128 {
        if depth == 0 {
            return 0;
        }
        g.productions(nt)
            .iter()
            .map(|p| {
                let params: u128 = p.param_domains.values().map(|d| d.len() as u128).product();
                let children: u128 = p.nonterminals().map(|c| count_derivations(g, c, depth - 1)).product();
                params * children
            })
            .sum()
    }

    #[test]
    fn depth_one_uses_terminal_productions() {
        let g = Grammar::mini_einspace();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let t = sample_tree(&g, 1, &mut rng).unwrap();
            assert!(t.children.is_empty());
            assert!(g.production(&t.nonterminal, &t.production).unwrap().is_terminal_only());
            assert!(["norm", "relu", "identity"].contains(&t.production.as_str()));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = Grammar::mini_einspace();
        let a = sample_tree(&g, 10, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample_tree(&g, 10, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn recursive_only_grammar_is_exhausted() {
        let g = load_grammar(RECURSIVE_ONLY).unwrap();
        for depth in 1..=8 {
            assert_eq!(count_derivations(&g, "NET", depth), 0);
            let err = sample_tree(&g, depth, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
            assert!(matches!(err, SampleError::Exhausted { .. }));
        }
    }

    #[test]
    fn zero_depth_rejected() {
        let g = Grammar::mini_einspace();
        assert_eq!(
            sample_tree(&g, 0, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(SampleError::ZeroDepth)
        );
    }

    #[test]
    fn single_node_mutation_picks_root() {
        let g = Grammar::mini_einspace();
        let t = DerivationTree::leaf("NET_IM", "identity");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let m = mutate_subtree_with_site(&g, &t, 12, 10, &mut rng).unwrap();
            assert_eq!(m.site, 0);
            assert_eq!(m.tree.nonterminal, "NET_IM");
        }
    }

    #[test]
    fn mutation_respects_global_depth() {
        let g = Grammar::mini_einspace();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut t = sample_tree(&g, 6, &mut rng).unwrap();
        for _ in 0..500 {
            let before = t.clone();
            t = mutate_subtree(&g, &t, 6, 10, &mut rng).unwrap();
            assert!(t.depth() <= 6);
            g.check_tree(&t, Some(6)).unwrap();
            g.check_tree(&before, Some(6)).unwrap();
        }
    }
}
