//! Topological descriptors of compiled graphs and the surrogate input vector.
//!
//! For each operation kind `t` the descriptor holds five values: the number of
//! nodes of kind `t`; the lengths (in edges) of the shortest and longest
//! input-to-output paths passing through at least one node of kind `t`; and
//! the largest in- and out-degree over nodes of kind `t`. Path lengths are
//! `-1` when the kind does not occur.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::{ArchGraph, NodeKind};
use crate::grammar::OpKind;

/// Sentinel for path features of an absent operation kind.
pub const MISSING_PATH: f64 = -1.0;

pub const FEATURES_PER_KIND: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema: Arc<Vec<String>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("feature `{0}` appears in both vectors")]
    SchemaCollision(String),
    #[error("{values} values for a schema of {schema} names")]
    LengthMismatch { values: usize, schema: usize },
    #[error("feature `{0}` is not finite")]
    NonFinite(String),
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, schema: Arc<Vec<String>>) -> Result<Self, FeatureError> {
        if values.len() != schema.len() {
            return Err(FeatureError::LengthMismatch {
                values: values.len(),
                schema: schema.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(schema[i].clone()));
        }
        Ok(FeatureVector { values, schema })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.schema.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

/// Feature names for the given kinds, in extraction order.
pub fn graf_schema(op_kinds: &[OpKind]) -> Vec<String> {
    op_kinds
        .iter()
        .flat_map(|k| {
            ["count", "min_path", "max_path", "max_in_degree", "max_out_degree"]
                .into_iter()
                .map(move |f| format!("{f}:{k}"))
        })
        .collect()
}

/// Shortest/longest distances from the input and to the output for every node.
struct PathTables {
    from_min: Vec<i64>,
    from_max: Vec<i64>,
    to_min: Vec<i64>,
    to_max: Vec<i64>,
}

fn path_tables(g: &ArchGraph) -> PathTables {
    let n = g.len();
    let order = g.topological_order().expect("compiled graphs are acyclic");
    let preds = g.predecessors();
    let succ = g.successors();
    let unset_min = i64::MAX;
    let unset_max = i64::MIN;
    let mut t = PathTables {
        from_min: vec![unset_min; n],
        from_max: vec![unset_max; n],
        to_min: vec![unset_min; n],
        to_max: vec![unset_max; n],
    };
    t.from_min[g.input_id] = 0;
    t.from_max[g.input_id] = 0;
    for &v in &order {
        for &p in &preds[v] {
            if t.from_min[p] != unset_min {
                t.from_min[v] = t.from_min[v].min(t.from_min[p] + 1);
                t.from_max[v] = t.from_max[v].max(t.from_max[p] + 1);
            }
        }
    }
    t.to_min[g.output_id] = 0;
    t.to_max[g.output_id] = 0;
    for &v in order.iter().rev() {
        for &s in &succ[v] {
            if t.to_min[s] != unset_min {
                t.to_min[v] = t.to_min[v].min(t.to_min[s] + 1);
                t.to_max[v] = t.to_max[v].max(t.to_max[s] + 1);
            }
        }
    }
    t
}

/// Extracts the per-kind descriptor from a compiled graph.
pub fn extract_graf(g: &ArchGraph, op_kinds: &[OpKind]) -> FeatureVector {
    let tables = path_tables(g);
    let mut indeg = vec![0usize; g.len()];
    let mut outdeg = vec![0usize; g.len()];
    for &(a, b) in &g.edges {
        outdeg[a] += 1;
        indeg[b] += 1;
    }

    let mut values = Vec::with_capacity(op_kinds.len() * FEATURES_PER_KIND);
    for &kind in op_kinds {
        let mut count = 0usize;
        let mut min_path = i64::MAX;
        let mut max_path = i64::MIN;
        let mut max_in = 0usize;
        let mut max_out = 0usize;
        for node in g.nodes.iter().filter(|n| n.kind == NodeKind::Op(kind)) {
            let v = node.id;
            count += 1;
            if tables.from_min[v] != i64::MAX && tables.to_min[v] != i64::MAX {
                min_path = min_path.min(tables.from_min[v] + tables.to_min[v]);
                max_path = max_path.max(tables.from_max[v] + tables.to_max[v]);
            }
            max_in = max_in.max(indeg[v]);
            max_out = max_out.max(outdeg[v]);
        }
        let (min_path, max_path) = if min_path == i64::MAX {
            (MISSING_PATH, MISSING_PATH)
        } else {
            (min_path as f64, max_path as f64)
        };
        values.extend([count as f64, min_path, max_path, max_in as f64, max_out as f64]);
    }
    FeatureVector {
        values,
        schema: Arc::new(graf_schema(op_kinds)),
    }
}

/// Concatenates the graph descriptor with optional extra columns, graph features first.
pub fn assemble_input(graf: &FeatureVector, extra: Option<&FeatureVector>) -> Result<FeatureVector, FeatureError> {
    let Some(extra) = extra else {
        return Ok(graf.clone());
    };
    if let Some(dup) = extra.schema.iter().find(|n| graf.schema.contains(n)) {
        return Err(FeatureError::SchemaCollision(dup.clone()));
    }
    let mut schema = graf.schema.as_ref().clone();
    schema.extend(extra.schema.iter().cloned());
    let mut values = graf.values.clone();
    values.extend_from_slice(&extra.values);
    Ok(FeatureVector {
        values,
        schema: Arc::new(schema),
    })
}
