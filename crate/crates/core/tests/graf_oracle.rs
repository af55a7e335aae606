mod support;

use gramnas::features::{extract_graf, graf_schema};
use gramnas::grammar::{Grammar, OpKind};
use support::{compiling_trees, graf_by_enumeration};

#[test]
fn path_features_match_enumeration_on_small_graphs() {
    let g = Grammar::mini_einspace();
    let small: Vec<_> = compiling_trees(&g, 4000, 6, 21)
        .into_iter()
        .filter(|(_, graph)| graph.len() <= 8)
        .take(500)
        .collect();
    assert_eq!(small.len(), 500);
    for (tree, graph) in &small {
        let fast = extract_graf(graph, &OpKind::ALL);
        assert_eq!(fast.values, graf_by_enumeration(graph, &OpKind::ALL), "{tree:?}");
    }
}

#[test]
fn larger_branching_graphs_agree_too() {
    let g = Grammar::mini_einspace();
    let mut checked = 0;
    for (_, graph) in compiling_trees(&g, 300, 9, 22) {
        if graph.len() > 40 {
            continue;
        }
        assert_eq!(
            extract_graf(&graph, &OpKind::ALL).values,
            graf_by_enumeration(&graph, &OpKind::ALL)
        );
        checked += 1;
    }
    assert!(checked > 100, "only {checked} graphs were small enough");
}

#[test]
fn schema_has_five_columns_per_kind() {
    let s = graf_schema(&OpKind::ALL);
    assert_eq!(s.len(), 70);
    assert!(s.contains(&"max_path:linear".to_string()) && s.contains(&"count:norm".to_string()));
}
