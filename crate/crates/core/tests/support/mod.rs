//! Brute-force reference implementations and sampling helpers shared by the
//! integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gramnas::compiler::{compile, ArchGraph, NodeKind, TensorShape};
use gramnas::features::MISSING_PATH;
use gramnas::grammar::{sample_tree, DerivationTree, Grammar, OpKind};

pub const IMAGE: TensorShape = TensorShape::Im { c: 3, h: 32, w: 32 };

/// Random trees that compile on `IMAGE`, together with their graphs.
pub fn compiling_trees(g: &Grammar, count: usize, max_depth: usize, seed: u64) -> Vec<(DerivationTree, ArchGraph)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let t = sample_tree(g, max_depth, &mut rng).expect("grammar terminates");
        if let Ok(graph) = compile(g, &t, IMAGE) {
            out.push((t, graph));
        }
    }
    out
}

/// Tau-b by counting every pair.
pub fn kendall_pairs(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut concordant, mut discordant, mut tied_x, mut tied_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tied_x += 1;
            }
            if dy == 0.0 {
                tied_y += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denom = (((pairs - tied_x) * (pairs - tied_y)) as f64).sqrt();
    (denom > 0.0).then(|| (concordant - discordant) as f64 / denom)
}

/// Average ranks by counting smaller and equal values.
pub fn ranks_by_counting(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let less = x.iter().filter(|u| *u < v).count() as f64;
            let equal = x.iter().filter(|u| *u == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn pearson_direct(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn spearman_by_ranks(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson_direct(&ranks_by_counting(x), &ranks_by_counting(y))
}

/// A random pair of equal-length vectors drawn from a small value set, so ties are common.
pub fn tied_vectors(rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.random_range(2..=60);
    let levels = rng.random_range(2..=12);
    let mut draw = || {
        (0..n)
            .map(|_| rng.random_range(0..levels) as f64 * 0.5)
            .collect::<Vec<_>>()
    };
    (draw(), draw())
}

/// Every input-to-output path, as node sequences.
pub fn all_paths(g: &ArchGraph) -> Vec<Vec<usize>> {
    let succ = g.successors();
    let mut out = Vec::new();
    let mut stack = vec![vec![g.input_id]];
    while let Some(path) = stack.pop() {
        let last = *path.last().unwrap();
        if last == g.output_id {
            out.push(path);
            continue;
        }
        for &s in &succ[last] {
            let mut next = path.clone();
            next.push(s);
            stack.push(next);
        }
    }
    out
}

/// Graph descriptor computed by enumerating every path, in `graf_schema` order.
pub fn graf_by_enumeration(g: &ArchGraph, kinds: &[OpKind]) -> Vec<f64> {
    let paths = all_paths(g);
    let mut out = Vec::new();
    for &kind in kinds {
        let members: Vec<usize> = g
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Op(kind))
            .map(|n| n.id)
            .collect();
        let lengths: Vec<usize> = paths
            .iter()
            .filter(|p| p.iter().any(|v| members.contains(v)))
            .map(|p| p.len() - 1)
            .collect();
        let in_deg = |v: usize| g.edges.iter().filter(|e| e.1 == v).count();
        let out_deg = |v: usize| g.edges.iter().filter(|e| e.0 == v).count();
        out.push(members.len() as f64);
        out.push(lengths.iter().min().map_or(MISSING_PATH, |l| *l as f64));
        out.push(lengths.iter().max().map_or(MISSING_PATH, |l| *l as f64));
        out.push(members.iter().map(|&v| in_deg(v)).max().unwrap_or(0) as f64);
        out.push(members.iter().map(|&v| out_deg(v)).max().unwrap_or(0) as f64);
    }
    out
}

/// Operations of a graph as sorted `kind(args)` strings.
pub fn op_multiset(g: &ArchGraph) -> Vec<String> {
    let mut ops: Vec<String> = g
        .nodes
        .iter()
        .filter_map(|n| n.op())
        .map(|op| format!("{:?}{:?}", op.kind, op.args))
        .collect();
    ops.sort();
    ops
}

/// Leaves of the tree, left to right.
pub fn terminal_sequence(t: &DerivationTree) -> Vec<String> {
    t.preorder()
        .into_iter()
        .filter(|(n, _)| n.children.is_empty())
        .map(|(n, _)| format!("{}:{}:{:?}", n.nonterminal, n.production, n.params))
        .collect()
}

pub fn output_shape(g: &ArchGraph) -> TensorShape {
    g.nodes[g.output_id].out_shape
}

/// Applies `count` random rewrites to compiling trees and checks what each form
/// must preserve. Returns how often each form was exercised.
pub fn check_rewrites(g: &Grammar, count: usize, seed: u64) -> Result<[usize; 4], String> {
    use gramnas::augment::{applicable_kinds, rewrite, AugmentKind, LINEAR_DIMS};
    use rand::seq::IndexedRandom;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = compiling_trees(g, 400, 9, seed);
    let mut seen = [0usize; 4];
    for done in 0..count {
        // Round-robin over the forms so each is exercised about equally.
        let kind = AugmentKind::REWRITES[done % 4];
        let sites: Vec<_> = pool
            .iter()
            .filter(|(t, _)| applicable_kinds(g, t).contains(&kind))
            .collect();
        let Some(&(tree, graph)) = sites.choose(&mut rng) else {
            return Err(format!("no sampled tree admits {kind:?}"));
        };
        let out = rewrite(g, tree, kind, &mut rng).map_err(|e| e.to_string())?;
        let fail = |what: &str| Err(format!("{kind:?} {what}: {tree:?} -> {out:?}"));
        let compiled = compile(g, &out, IMAGE);
        match kind {
            AugmentKind::SwapSequential | AugmentKind::SwapBranches => {
                let Ok(new_graph) = compiled else {
                    return fail("no longer compiles");
                };
                if op_multiset(&new_graph) != op_multiset(graph) {
                    return fail("changed the operation multiset");
                }
                if output_shape(&new_graph) != output_shape(graph) {
                    return fail("changed the output shape");
                }
                if kind == AugmentKind::SwapSequential && terminal_sequence(&out) != terminal_sequence(tree) {
                    return fail("changed the terminal sequence");
                }
            }
            AugmentKind::InsertIdentity => {
                let count_identity = |t: &DerivationTree| {
                    t.preorder()
                        .iter()
                        .filter(|(n, _)| n.children.is_empty() && n.production == "identity")
                        .count()
                };
                if count_identity(&out) != count_identity(tree) + 1 || out.size() != tree.size() + 2 {
                    return fail("did not add exactly one identity");
                }
            }
            AugmentKind::PerturbDim => {
                let before = tree.preorder();
                let after = out.preorder();
                let changes: Vec<(i64, i64)> = before
                    .iter()
                    .zip(&after)
                    .flat_map(|((a, _), (b, _))| {
                        a.params
                            .iter()
                            .zip(&b.params)
                            .filter(|(x, y)| x != y)
                            .map(|((_, x), (_, y))| (x.as_int().unwrap_or(-1), y.as_int().unwrap_or(-1)))
                    })
                    .collect();
                let [(from, to)] = changes[..] else {
                    return fail("did not change exactly one parameter");
                };
                let pos = |d| LINEAR_DIMS.iter().position(|x| *x == d);
                match (pos(from), pos(to)) {
                    (Some(i), Some(j)) if i.abs_diff(j) == 1 => {}
                    _ => return fail("did not move to an adjacent dimension"),
                }
            }
            AugmentKind::Original => unreachable!(),
        }
        seen[done % 4] += 1;
    }
    Ok(seen)
}

/// Sample standard deviation of `draws` label-noise offsets around 0.5.
pub fn label_noise_std(draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..draws)
        .map(|_| gramnas::augment::noisy_label(0.5, &mut rng) - 0.5)
        .collect();
    let m = xs.iter().sum::<f64>() / draws as f64;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (draws - 1) as f64).sqrt()
}

/// `count` compiling random architectures labelled by `evaluator`, tagged `dataset`.
pub fn labelled_history(
    g: &Grammar,
    evaluator: &gramnas::evaluator::Evaluator,
    count: usize,
    seed: u64,
    dataset: &str,
) -> gramnas::surrogate::TrainingSet {
    use gramnas::arch::Architecture;
    use gramnas::surrogate::{TrainingRow, TrainingSet};

    let rows = compiling_trees(g, count, gramnas::grammar::DEFAULT_MAX_DEPTH, seed)
        .into_iter()
        .map(|(t, _)| {
            let arch = Architecture::build(g, t, IMAGE, None);
            let target = evaluator.evaluate(&arch).expect("synthetic evaluators do not fail");
            TrainingRow {
                arch,
                target,
                dataset: dataset.to_string(),
            }
        })
        .collect();
    TrainingSet { rows }
}

/// Kendall tau between the logged predictions of the first `count` candidates and their true fitness.
pub fn early_candidate_tau(
    g: &Grammar,
    evaluator: &gramnas::evaluator::Evaluator,
    result: &gramnas::evolution::SearchResult,
    count: usize,
) -> f64 {
    use gramnas::arch::Architecture;
    use gramnas::encoder::parse;

    let (mut predicted, mut actual) = (Vec::new(), Vec::new());
    for c in result.iterations.iter().flat_map(|r| &r.candidates).take(count) {
        let arch = Architecture::build(g, parse(g, &c.encoding).unwrap(), IMAGE, None);
        predicted.push(c.prediction.expect("surrogate was fitted"));
        actual.push(evaluator.evaluate(&arch).unwrap());
    }
    gramnas::metrics::kendall_tau(&predicted, &actual).unwrap()
}
