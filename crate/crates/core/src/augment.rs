//! Training-set augmentation by architecture rewrites and label noise.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{DerivationTree, Grammar, ModuleKind, OpKind, ParamBinding, ParamValue, Production, Symbol};

/// Output dimensions a `linear` may be moved between.
pub const LINEAR_DIMS: [i64; 8] = [16, 32, 64, 128, 256, 512, 1024, 2048];

/// Standard deviation of the accuracy noise added to augmented samples.
pub const LABEL_NOISE_STD: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    /// Unmodified input sample.
    Original,
    SwapSequential,
    SwapBranches,
    InsertIdentity,
    PerturbDim,
}

impl AugmentKind {
    pub const REWRITES: [AugmentKind; 4] = [
        AugmentKind::SwapSequential,
        AugmentKind::SwapBranches,
        AugmentKind::InsertIdentity,
        AugmentKind::PerturbDim,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSample {
    pub tree: DerivationTree,
    pub accuracy: f64,
    pub source_kind: AugmentKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AugmentError {
    #[error("no site for {0:?} in this tree")]
    NotApplicable(AugmentKind),
}

/// `N -> N N` with no parameters, used for reassociation and identity wrapping.
fn sequential_production<'g>(g: &'g Grammar, nt: &str) -> Option<&'g Production> {
    g.productions(nt).iter().find(|p| {
        p.module == Some(ModuleKind::Sequential)
            && p.param_domains.is_empty()
            && p.rhs.len() == 2
            && p.rhs.iter().all(|s| matches!(s, Symbol::Nt(n) if n == nt))
    })
}

fn identity_production<'g>(g: &'g Grammar, nt: &str) -> Option<&'g Production> {
    g.productions(nt)
        .iter()
        .find(|p| p.module.is_none() && matches!(&p.rhs[..], [Symbol::Op(spec)] if spec.kind == OpKind::Identity))
}

/// Rewrite sites for one kind, as pre-order indices plus a kind-specific tag.
fn sites(g: &Grammar, t: &DerivationTree, kind: AugmentKind) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (idx, (node, _)) in t.preorder().into_iter().enumerate() {
        match kind {
            AugmentKind::Original => {}
            AugmentKind::SwapSequential => {
                let Some(seq) = sequential_production(g, &node.nonterminal) else {
                    continue;
                };
                if node.production != seq.name {
                    continue;
                }
                // tag 0: right child is sequential (rotate left); tag 1: left child (rotate right)
                if node.children[1].production == seq.name {
                    out.push((idx, 0));
                }
                if node.children[0].production == seq.name {
                    out.push((idx, 1));
                }
            }
            AugmentKind::SwapBranches => {
                let prod = g.production(&node.nonterminal, &node.production);
                let two_branches = prod.is_some_and(|p| {
                    p.branch_count(&node.params) == Some(2) && matches!(&p.rhs[1..3], [Symbol::Nt(_), Symbol::Nt(_)])
                });
                if two_branches {
                    out.push((idx, 0));
                }
            }
            AugmentKind::InsertIdentity => {
                if sequential_production(g, &node.nonterminal).is_some()
                    && identity_production(g, &node.nonterminal).is_some()
                {
                    out.push((idx, 0));
                }
            }
            AugmentKind::PerturbDim => {
                let Some(prod) = g.production(&node.nonterminal, &node.production) else {
                    continue;
                };
                for (param, value) in &node.params {
                    if linear_dim_param(prod, param) && !dim_neighbours(prod, param, value).is_empty() {
                        out.push((idx, prod.param_domains.keys().position(|k| k == param).unwrap()));
                    }
                }
            }
        }
    }
    out
}

fn linear_dim_param(prod: &Production, param: &str) -> bool {
    prod.rhs.iter().any(|s| {
        matches!(s, Symbol::Op(spec) if spec.kind == OpKind::Linear
            && matches!(&spec.params[0], ParamBinding::Bound(n) if n == param))
    })
}

/// Adjacent entries of the dimension list that are also in the parameter's domain.
fn dim_neighbours(prod: &Production, param: &str, value: &ParamValue) -> Vec<ParamValue> {
    let Some(pos) = value.as_int().and_then(|v| LINEAR_DIMS.iter().position(|d| *d == v)) else {
        return Vec::new();
    };
    let domain = &prod.param_domains[param];
    [pos.checked_sub(1), Some(pos + 1)]
        .into_iter()
        .flatten()
        .filter_map(|i| LINEAR_DIMS.get(i))
        .map(|d| ParamValue::Int(*d))
        .filter(|v| domain.contains(v))
        .collect()
}

/// Kinds with at least one rewrite site in `t`.
pub fn applicable_kinds(g: &Grammar, t: &DerivationTree) -> Vec<AugmentKind> {
    AugmentKind::REWRITES
        .into_iter()
        .filter(|k| !sites(g, t, *k).is_empty())
        .collect()
}

/// Applies one rewrite of `kind` at a uniformly chosen site, without label noise.
pub fn rewrite<R: Rng + ?Sized>(
    g: &Grammar,
    t: &DerivationTree,
    kind: AugmentKind,
    rng: &mut R,
) -> Result<DerivationTree, AugmentError> {
    if kind == AugmentKind::Original {
        return Ok(t.clone());
    }
    let candidates = sites(g, t, kind);
    let &(idx, tag) = candidates.choose(rng).ok_or(AugmentError::NotApplicable(kind))?;
    let mut out = t.clone();
    let node = out.node_mut(idx).expect("site index is in range");
    match kind {
        AugmentKind::SwapSequential => {
            let seq_name = node.production.clone();
            let nt = node.nonterminal.clone();
            let [a, b] = std::mem::take(&mut node.children)
                .try_into()
                .expect("binary sequential");
            let (x, y, z, grouped_left) = if tag == 0 {
                // s(a, s(b, c)) -> s(s(a, b), c)
                let [b1, c] = b.children.try_into().expect("binary sequential");
                (a, b1, c, true)
            } else {
                // s(s(a, b), c) -> s(a, s(b, c))
                let [a1, b1] = a.children.try_into().expect("binary sequential");
                (a1, b1, b, false)
            };
            let pair = |l, r| DerivationTree::new(nt.clone(), seq_name.clone(), BTreeMap::new(), vec![l, r]);
            node.children = if grouped_left {
                vec![pair(x, y), z]
            } else {
                vec![x, pair(y, z)]
            };
        }
        AugmentKind::SwapBranches => node.children.swap(0, 1),
        AugmentKind::InsertIdentity => {
            let nt = node.nonterminal.clone();
            let seq = sequential_production(g, &nt).expect("site requires sequential");
            let ident = identity_production(g, &nt).expect("site requires identity");
            let inner = std::mem::replace(node, DerivationTree::leaf(nt.clone(), ident.name.clone()));
            let ident_leaf = DerivationTree::leaf(nt.clone(), ident.name.clone());
            *node = DerivationTree::new(nt, seq.name.clone(), BTreeMap::new(), vec![inner, ident_leaf]);
        }
        AugmentKind::PerturbDim => {
            let prod = g.production(&node.nonterminal, &node.production).expect("valid tree");
            let param = prod.param_domains.keys().nth(tag).expect("site tag").clone();
            let choices = dim_neighbours(prod, &param, &node.params[&param]);
            let next = choices.choose(rng).expect("site has a neighbour").clone();
            node.params.insert(param, next);
        }
        AugmentKind::Original => unreachable!(),
    }
    Ok(out)
}

/// `acc + N(0, 0.005^2)` clamped to `[0, 1]`.
pub fn noisy_label<R: Rng + ?Sized>(acc: f64, rng: &mut R) -> f64 {
    let noise = Normal::new(0.0, LABEL_NOISE_STD).expect("valid std");
    (acc + noise.sample(rng)).clamp(0.0, 1.0)
}

/// One augmented sample: a rewrite of `kind` plus label noise.
pub fn augment<R: Rng + ?Sized>(
    g: &Grammar,
    t: &DerivationTree,
    acc: f64,
    kind: AugmentKind,
    rng: &mut R,
) -> Result<AugmentedSample, AugmentError> {
    let tree = rewrite(g, t, kind, rng)?;
    Ok(AugmentedSample {
        tree,
        accuracy: noisy_label(acc, rng),
        source_kind: kind,
    })
}

/// Keeps every original and adds up to `factor` augmentations per sample,
/// cycling over the applicable kinds from a random starting kind.
pub fn expand_dataset<R: Rng + ?Sized>(
    g: &Grammar,
    samples: &[(DerivationTree, f64)],
    factor: usize,
    rng: &mut R,
) -> Vec<AugmentedSample> {
    let mut out = Vec::with_capacity(samples.len() * (factor + 1));
    for (tree, acc) in samples {
        out.push(AugmentedSample {
            tree: tree.clone(),
            accuracy: *acc,
            source_kind: AugmentKind::Original,
        });
        let kinds = applicable_kinds(g, tree);
        if kinds.is_empty() {
            continue;
        }
        let offset = rng.random_range(0..kinds.len());
        for i in 0..factor {
            let kind = kinds[(offset + i) % kinds.len()];
            if let Ok(s) = augment(g, tree, *acc, kind, rng) {
                out.push(s);
            }
        }
    }
    out
}
