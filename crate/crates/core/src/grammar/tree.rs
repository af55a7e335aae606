use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ParamValue;

/// A derivation of one nonterminal: which production fired, with which parameter
/// values, and the derivations of the nonterminals on its right-hand side.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DerivationTree {
    pub nonterminal: String,
    pub production: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, ParamValue>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<DerivationTree>,
}

impl DerivationTree {
    pub fn new(
        nonterminal: impl Into<String>,
        production: impl Into<String>,
        params: BTreeMap<String, ParamValue>,
        children: Vec<DerivationTree>,
    ) -> Self {
        DerivationTree {
            nonterminal: nonterminal.into(),
            production: production.into(),
            params,
            children,
        }
    }

    pub fn leaf(nonterminal: impl Into<String>, production: impl Into<String>) -> Self {
        Self::new(nonterminal, production, BTreeMap::new(), Vec::new())
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(DerivationTree::size).sum::<usize>()
    }

    /// Depth counted in nodes: a single node has depth 1.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(DerivationTree::depth).max().unwrap_or(0)
    }

    /// Nodes in pre-order paired with their depth (root at 0).
    pub fn preorder(&self) -> Vec<(&DerivationTree, usize)> {
        let mut out = Vec::with_capacity(self.size());
        let mut stack = vec![(self, 0usize)];
        while let Some((node, d)) = stack.pop() {
            out.push((node, d));
            for child in node.children.iter().rev() {
                stack.push((child, d + 1));
            }
        }
        out
    }

    /// The subtree at pre-order position `index`.
    pub fn node(&self, index: usize) -> Option<&DerivationTree> {
        self.preorder().get(index).map(|(n, _)| *n)
    }

    /// Returns a copy with the subtree at pre-order `index` replaced by `replacement`.
    pub fn replace_at(&self, index: usize, replacement: DerivationTree) -> Option<DerivationTree> {
        let mut out = self.clone();
        let slot = out.node_mut(index)?;
        *slot = replacement;
        Some(out)
    }

    pub fn node_mut(&mut self, index: usize) -> Option<&mut DerivationTree> {
        fn walk<'a>(node: &'a mut DerivationTree, index: usize, seen: &mut usize) -> Option<&'a mut DerivationTree> {
            if *seen == index {
                return Some(node);
            }
            *seen += 1;
            for child in node.children.iter_mut() {
                let size = child.size();
                if index < *seen + size {
                    return walk(child, index, seen);
                }
                *seen += size;
            }
            None
        }
        let mut seen = 0;
        walk(self, index, &mut seen)
    }
}
