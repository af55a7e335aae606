//! An architecture together with everything derived from its tree.

use serde::{Deserialize, Serialize};

use crate::compiler::{compile, ArchGraph, TensorShape};
use crate::encoder::{encode_plain, encode_with_shapes};
use crate::features::{assemble_input, extract_graf, FeatureVector};
use crate::grammar::{DerivationTree, Grammar, OpKind};

/// A derivation tree with its encodings, compiled graph descriptor and
/// surrogate input. `features` and `shaped` are absent when compilation fails.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub tree: DerivationTree,
    pub encoding: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shaped: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compile_error: Option<String>,
}

impl Architecture {
    /// Compiles `tree` once and derives encodings and features.
    ///
    /// Extra feature columns are appended after the graph descriptor; a
    /// schema collision is reported as a compile error.
    pub fn build(
        grammar: &Grammar,
        tree: DerivationTree,
        input_shape: TensorShape,
        extra: Option<&FeatureVector>,
    ) -> Self {
        let encoding = encode_plain(grammar, &tree).text;
        let (shaped, features, compile_error) = match compile(grammar, &tree, input_shape) {
            Ok(graph) => {
                let shaped = encode_with_shapes(grammar, &tree, input_shape).map(|s| s.text).ok();
                match assemble_input(&graf(&graph), extra) {
                    Ok(f) => (shaped, Some(f), None),
                    Err(e) => (shaped, None, Some(e.to_string())),
                }
            }
            Err(e) => (None, None, Some(e.to_string())),
        };
        Architecture {
            tree,
            encoding,
            shaped,
            features,
            compile_error,
        }
    }

    pub fn compiles(&self) -> bool {
        self.compile_error.is_none()
    }
}

/// The graph descriptor over every operation kind, in `OpKind::ALL` order.
pub fn graf(graph: &ArchGraph) -> FeatureVector {
    extract_graf(graph, &OpKind::ALL)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failing_tree_has_no_features() {
        let g = Grammar::mini_einspace();
        let bad = crate::encoder::parse(
            &g,
            "branching(2)[clone(2), routing[im2col(3,2,1), computation<linear(64)>, col2im], identity, add]",
        )
        .unwrap();
        let a = Architecture::build(&g, bad, TensorShape::im(3, 32, 32), None);
        assert!(!a.compiles());
        assert!(a.features.is_none() && a.shaped.is_none());

        let ok = crate::encoder::parse(&g, "computation<relu>").unwrap();
        let a = Architecture::build(&g, ok, TensorShape::im(3, 32, 32), None);
        assert!(a.compiles());
        assert_eq!(a.features.unwrap().len(), OpKind::ALL.len() * 5);
        assert_eq!(
            a.shaped.unwrap(),
            "computation<relu> {'out_feature_shape': [3, 32, 32]}"
        );
    }
}
