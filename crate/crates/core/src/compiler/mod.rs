//! Compilation of derivation trees into shape-checked operation graphs.
//!
//! Node ids are assigned in creation order: the input marker is node 0, the
//! terminal operations follow in the left-to-right order in which they appear
//! in the tree (the same order the string encoder visits them), and the output
//! marker is last.

mod shape;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{DerivationTree, Grammar, ModuleKind, OpKind, ResolvedOp, Symbol, TreeError};

pub use shape::{infer_shape, Mode, ShapeViolation, TensorShape};

/// What a graph node computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Input,
    Output,
    Op(OpKind),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<crate::grammar::ParamValue>,
    pub out_shape: TensorShape,
}

impl GraphNode {
    pub fn op(&self) -> Option<ResolvedOp> {
        match self.kind {
            NodeKind::Op(kind) => Some(ResolvedOp::new(kind, self.args.clone())),
            _ => None,
        }
    }
}

/// A directed acyclic graph of operations with inferred output shapes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchGraph {
    pub nodes: Vec<GraphNode>,
    /// Edges in insertion order; a node's inputs are its in-edges in this order.
    pub edges: Vec<(usize, usize)>,
    pub input_id: usize,
    pub output_id: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("shape error at node {node} ({op}): {violation}")]
pub struct ShapeError {
    pub node: usize,
    pub op: OpKind,
    pub violation: ShapeViolation,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompileError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) references a missing node")]
    DanglingEdge(usize, usize),
    #[error("graph contains a cycle")]
    Cycle,
    #[error("expected exactly one source (the input) and one sink (the output)")]
    Endpoints,
    #[error("node {0} is not on an input-to-output path")]
    Unreachable(usize),
    #[error("node {0} ids must equal positions")]
    BadId(usize),
    #[error("node {node}: stored shape {stored} differs from inferred {inferred}")]
    StaleShape {
        node: usize,
        stored: TensorShape,
        inferred: TensorShape,
    },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

impl ArchGraph {
    /// Builds a graph from parts and checks the structural invariants.
    pub fn from_parts(
        nodes: Vec<GraphNode>,
        edges: Vec<(usize, usize)>,
        input_id: usize,
        output_id: usize,
    ) -> Result<Self, GraphError> {
        let g = ArchGraph {
            nodes,
            edges,
            input_id,
            output_id,
        };
        g.check_structure()?;
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Predecessors of every node, in edge order.
    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut preds = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            preds[b].push(a);
        }
        preds
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut succ = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            succ[a].push(b);
        }
        succ
    }

    /// Kahn's algorithm; `None` if the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        for &(_, b) in &self.edges {
            indeg[b] += 1;
        }
        let succ = self.successors();
        let mut ready: Vec<usize> = (0..n).rev().filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = ready.pop() {
            order.push(v);
            for &s in succ[v].iter().rev() {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.push(s);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn check_structure(&self) -> Result<(), GraphError> {
        let n = self.nodes.len();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(GraphError::BadId(i));
            }
        }
        for &(a, b) in &self.edges {
            if a >= n || b >= n {
                return Err(GraphError::DanglingEdge(a, b));
            }
        }
        let order = self.topological_order().ok_or(GraphError::Cycle)?;
        let preds = self.predecessors();
        let succ = self.successors();
        let sources: Vec<usize> = (0..n).filter(|&i| preds[i].is_empty()).collect();
        let sinks: Vec<usize> = (0..n).filter(|&i| succ[i].is_empty()).collect();
        if sources != [self.input_id] || sinks != [self.output_id] {
            return Err(GraphError::Endpoints);
        }
        let mut reach = vec![false; n];
        reach[self.input_id] = true;
        for &v in &order {
            if reach[v] {
                for &s in &succ[v] {
                    reach[s] = true;
                }
            }
        }
        let mut coreach = vec![false; n];
        coreach[self.output_id] = true;
        for &v in order.iter().rev() {
            if succ[v].iter().any(|&s| coreach[s]) {
                coreach[v] = true;
            }
        }
        if let Some(bad) = (0..n).find(|&i| !reach[i] || !coreach[i]) {
            return Err(GraphError::Unreachable(bad));
        }
        Ok(())
    }

    /// Re-runs shape inference over the graph and compares against stored shapes.
    pub fn verify_shapes(&self) -> Result<(), GraphError> {
        let order = self.topological_order().ok_or(GraphError::Cycle)?;
        let preds = self.predecessors();
        for v in order {
            let node = &self.nodes[v];
            let inputs: Vec<TensorShape> = preds[v].iter().map(|&p| self.nodes[p].out_shape).collect();
            let inferred = match node.kind {
                NodeKind::Input => continue,
                NodeKind::Output => inputs.first().copied().ok_or(GraphError::Endpoints)?,
                NodeKind::Op(kind) => {
                    let op = ResolvedOp::new(kind, node.args.clone());
                    infer_shape(&op, &inputs).map_err(|violation| ShapeError {
                        node: v,
                        op: kind,
                        violation,
                    })?
                }
            };
            if inferred != node.out_shape {
                return Err(GraphError::StaleShape {
                    node: v,
                    stored: node.out_shape,
                    inferred,
                });
            }
        }
        Ok(())
    }

    /// Nodes that are operations (excluding the input/output markers).
    pub fn op_nodes(&self) -> impl Iterator<Item = &GraphNode> {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Op(_)))
    }
}

struct Builder<'g> {
    grammar: &'g Grammar,
    nodes: Vec<GraphNode>,
    edges: Vec<(usize, usize)>,
}

impl Builder<'_> {
    fn add(
        &mut self,
        kind: NodeKind,
        args: Vec<crate::grammar::ParamValue>,
        preds: &[usize],
    ) -> Result<usize, ShapeError> {
        let id = self.nodes.len();
        let inputs: Vec<TensorShape> = preds.iter().map(|&p| self.nodes[p].out_shape).collect();
        let out_shape = match kind {
            NodeKind::Op(op) => {
                let resolved = ResolvedOp::new(op, args.clone());
                infer_shape(&resolved, &inputs).map_err(|violation| ShapeError {
                    node: id,
                    op,
                    violation,
                })?
            }
            NodeKind::Output => inputs[0],
            NodeKind::Input => unreachable!("input marker is created directly"),
        };
        for &p in preds {
            self.edges.push((p, id));
        }
        self.nodes.push(GraphNode {
            id,
            kind,
            args,
            out_shape,
        });
        Ok(id)
    }

    fn op(&mut self, op: ResolvedOp, preds: &[usize]) -> Result<usize, ShapeError> {
        self.add(NodeKind::Op(op.kind), op.args, preds)
    }

    /// Compiles `tree` hanging off `entry`; returns the id of its exit node.
    fn build(&mut self, tree: &DerivationTree, entry: usize) -> Result<usize, CompileError> {
        let grammar = self.grammar;
        let prod =
            grammar
                .production(&tree.nonterminal, &tree.production)
                .ok_or_else(|| TreeError::UnknownProduction {
                    nonterminal: tree.nonterminal.clone(),
                    production: tree.production.clone(),
                })?;
        let expected = prod.nonterminals().count();
        if expected != tree.children.len() {
            return Err(TreeError::Arity {
                production: prod.name.clone(),
                expected,
                found: tree.children.len(),
            }
            .into());
        }
        let mut children = tree.children.iter();
        let mut item = |b: &mut Self, sym: &Symbol, from: usize| -> Result<usize, CompileError> {
            match sym {
                Symbol::Op(spec) => Ok(b.op(prod.resolve(spec, &tree.params), &[from])?),
                Symbol::Nt(_) => b.build(children.next().expect("arity checked"), from),
            }
        };

        if prod.module == Some(ModuleKind::Branching) {
            let n = prod.rhs.len();
            let Symbol::Op(split) = &prod.rhs[0] else {
                unreachable!("validated at load")
            };
            let Symbol::Op(merge) = &prod.rhs[n - 1] else {
                unreachable!("validated at load")
            };
            let fork = self.op(prod.resolve(split, &tree.params), &[entry])?;
            let mut exits = Vec::with_capacity(n - 2);
            for sym in &prod.rhs[1..n - 1] {
                exits.push(item(self, sym, fork)?);
            }
            Ok(self.op(prod.resolve(merge, &tree.params), &exits)?)
        } else {
            let mut cur = entry;
            for sym in &prod.rhs {
                cur = item(self, sym, cur)?;
            }
            Ok(cur)
        }
    }
}

/// Compiles a derivation tree into a shape-checked graph.
pub fn compile(grammar: &Grammar, tree: &DerivationTree, input_shape: TensorShape) -> Result<ArchGraph, CompileError> {
    let mut b = Builder {
        grammar,
        nodes: vec![GraphNode {
            id: 0,
            kind: NodeKind::Input,
            args: Vec::new(),
            out_shape: input_shape,
        }],
        edges: Vec::new(),
    };
    let exit = b.build(tree, 0)?;
    let output_id = b.add(NodeKind::Output, Vec::new(), &[exit])?;
    Ok(ArchGraph {
        nodes: b.nodes,
        edges: b.edges,
        input_id: 0,
        output_id,
    })
}
