//! Context-free grammar over architecture operations.
//!
//! A grammar maps nonterminals to parameterized productions. Every production
//! is either a single terminal operation (`relu`, `linear($dim)`) or a module
//! (`sequential`, `branching`, `routing`) whose right-hand side mixes terminal
//! operations and nonterminals. Derivation trees record which production fired
//! at each nonterminal and the parameter values drawn for it.

mod op;
mod sample;
mod tree;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Deserialize;
use thiserror::Error;

pub use op::{OpClass, OpKind, OpSpec, ParamBinding, ParamType, ParamValue, ResolvedOp};
pub use sample::{mutate_subtree, mutate_subtree_with_site, sample_tree, Mutation, SampleError};
pub use tree::DerivationTree;

/// Default maximum derivation depth.
pub const DEFAULT_MAX_DEPTH: usize = 12;
/// Default number of node re-draws before mutation gives up.
pub const DEFAULT_MUTATION_RETRIES: usize = 10;

/// Source text of the shipped grammar.
pub const MINI_EINSPACE: &str = include_str!("../../../../grammars/mini_einspace.json");

/// Structural class of a multi-symbol production.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Sequential,
    Branching,
    Routing,
}

impl ModuleKind {
    pub fn keyword(self) -> &'static str {
        match self {
            ModuleKind::Sequential => "sequential",
            ModuleKind::Branching => "branching",
            ModuleKind::Routing => "routing",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Symbol {
    Op(OpSpec),
    Nt(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Production {
    pub name: String,
    /// `None` for a bare single-terminal production.
    pub module: Option<ModuleKind>,
    pub rhs: Vec<Symbol>,
    pub param_domains: BTreeMap<String, Vec<ParamValue>>,
}

impl Production {
    pub fn nonterminals(&self) -> impl Iterator<Item = &str> {
        self.rhs.iter().filter_map(|s| match s {
            Symbol::Nt(n) => Some(n.as_str()),
            Symbol::Op(_) => None,
        })
    }

    pub fn is_terminal_only(&self) -> bool {
        self.nonterminals().next().is_none()
    }

    /// Resolves an operation's parameters against the values chosen for this production.
    pub fn resolve(&self, spec: &OpSpec, params: &BTreeMap<String, ParamValue>) -> ResolvedOp {
        let args = spec
            .params
            .iter()
            .map(|b| match b {
                ParamBinding::Literal(v) => v.clone(),
                ParamBinding::Bound(name) => params
                    .get(name)
                    .cloned()
                    .unwrap_or_else(|| panic!("unbound parameter `${name}` in `{}`", self.name)),
            })
            .collect();
        ResolvedOp::new(spec.kind, args)
    }

    /// Number of branches for a branching production, given chosen parameters.
    pub fn branch_count(&self, params: &BTreeMap<String, ParamValue>) -> Option<usize> {
        if self.module != Some(ModuleKind::Branching) {
            return None;
        }
        match self.rhs.first()? {
            Symbol::Op(spec) => self.resolve(spec, params).int_arg("b").map(|b| b as usize),
            Symbol::Nt(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Grammar {
    start: String,
    rules: BTreeMap<String, Vec<Production>>,
    /// Smallest derivable depth per nonterminal; `None` when no finite derivation exists.
    min_depth: BTreeMap<String, Option<usize>>,
}

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("grammar parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("undefined nonterminal `{name}` referenced by {referenced_by}")]
    UndefinedNonterminal { name: String, referenced_by: String },
    #[error("nonterminal `{0}` has no productions")]
    EmptyRuleSet(String),
    #[error("{path}: parameter `{param}` has an empty domain")]
    EmptyDomain { path: String, param: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl fmt::Display, message: impl Into<String>) -> GrammarError {
    GrammarError::Invalid {
        path: path.to_string(),
        message: message.into(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrammar {
    start: String,
    rules: BTreeMap<String, Vec<RawProduction>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProduction {
    name: String,
    #[serde(default)]
    module: Option<ModuleKind>,
    rhs: Vec<RawSymbol>,
    #[serde(default)]
    param_domains: BTreeMap<String, Vec<ParamValue>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSymbol {
    #[serde(default)]
    op: Option<RawOp>,
    #[serde(default)]
    nt: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOp {
    kind: String,
    #[serde(default)]
    params: BTreeMap<String, serde_json::Value>,
}

/// Parses and validates a grammar file.
pub fn load_grammar(text: &str) -> Result<Grammar, GrammarError> {
    let raw: RawGrammar = serde_json::from_str(text).map_err(|e| GrammarError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Grammar::from_raw(raw)
}

impl Grammar {
    /// The shipped mini-einspace grammar.
    pub fn mini_einspace() -> Grammar {
        load_grammar(MINI_EINSPACE).expect("shipped grammar is valid")
    }

    pub fn start(&self) -> &str {
        &self.start
    }

    pub fn nonterminals(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(String::as_str)
    }

    pub fn productions(&self, nonterminal: &str) -> &[Production] {
        self.rules.get(nonterminal).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn production(&self, nonterminal: &str, name: &str) -> Option<&Production> {
        self.productions(nonterminal).iter().find(|p| p.name == name)
    }

    pub fn min_depth(&self, nonterminal: &str) -> Option<usize> {
        self.min_depth.get(nonterminal).copied().flatten()
    }

    /// Smallest depth of any derivation starting with `p`.
    pub fn production_min_depth(&self, p: &Production) -> Option<usize> {
        let mut deepest = 0;
        for nt in p.nonterminals() {
            deepest = deepest.max(self.min_depth(nt)?);
        }
        Some(1 + deepest)
    }

    /// Checks every derivation-tree invariant against this grammar.
    pub fn check_tree(&self, tree: &DerivationTree, max_depth: Option<usize>) -> Result<(), TreeError> {
        if let Some(max) = max_depth {
            let depth = tree.depth();
            if depth > max {
                return Err(TreeError::TooDeep { depth, max });
            }
        }
        self.check_node(tree)
    }

    fn check_node(&self, tree: &DerivationTree) -> Result<(), TreeError> {
        let p = self
            .production(&tree.nonterminal, &tree.production)
            .ok_or_else(|| TreeError::UnknownProduction {
                nonterminal: tree.nonterminal.clone(),
                production: tree.production.clone(),
            })?;
        if tree.params.len() != p.param_domains.len() {
            return Err(TreeError::Params(format!(
                "`{}` expects {} parameters, found {}",
                p.name,
                p.param_domains.len(),
                tree.params.len()
            )));
        }
        for (name, domain) in &p.param_domains {
            match tree.params.get(name) {
                Some(v) if domain.contains(v) => {}
                Some(v) => {
                    return Err(TreeError::Params(format!(
                        "`{}`: value {v} for `{name}` is outside its domain",
                        p.name
                    )))
                }
                None => return Err(TreeError::Params(format!("`{}`: missing `{name}`", p.name))),
            }
        }
        let expected: Vec<&str> = p.nonterminals().collect();
        if expected.len() != tree.children.len() {
            return Err(TreeError::Arity {
                production: p.name.clone(),
                expected: expected.len(),
                found: tree.children.len(),
            });
        }
        for (nt, child) in expected.iter().zip(&tree.children) {
            if child.nonterminal != *nt {
                return Err(TreeError::UnknownProduction {
                    nonterminal: child.nonterminal.clone(),
                    production: format!("{} (expected nonterminal {nt})", child.production),
                });
            }
            self.check_node(child)?;
        }
        Ok(())
    }

    fn from_raw(raw: RawGrammar) -> Result<Grammar, GrammarError> {
        if !raw.rules.contains_key(&raw.start) {
            return Err(GrammarError::UndefinedNonterminal {
                name: raw.start.clone(),
                referenced_by: "start".into(),
            });
        }
        let mut rules = BTreeMap::new();
        for (nt, raw_prods) in &raw.rules {
            if raw_prods.is_empty() {
                return Err(GrammarError::EmptyRuleSet(nt.clone()));
            }
            let mut seen = BTreeSet::new();
            let mut prods = Vec::with_capacity(raw_prods.len());
            for (i, rp) in raw_prods.iter().enumerate() {
                let path = format!("rules.{nt}[{i}]");
                if !seen.insert(rp.name.as_str()) {
                    return Err(invalid(path, format!("duplicate production name `{}`", rp.name)));
                }
                let prod = convert_production(&path, rp)?;
                for child in prod.nonterminals() {
                    if !raw.rules.contains_key(child) {
                        return Err(GrammarError::UndefinedNonterminal {
                            name: child.to_string(),
                            referenced_by: format!("{nt}.{}", prod.name),
                        });
                    }
                }
                prods.push(prod);
            }
            rules.insert(nt.clone(), prods);
        }
        let min_depth = compute_min_depths(&rules);
        Ok(Grammar {
            start: raw.start,
            rules,
            min_depth,
        })
    }
}

/// Least fixpoint of `depth(N) = min over productions of 1 + max(depth(children))`.
fn compute_min_depths(rules: &BTreeMap<String, Vec<Production>>) -> BTreeMap<String, Option<usize>> {
    let mut depth: BTreeMap<String, Option<usize>> = rules.keys().map(|k| (k.clone(), None)).collect();
    loop {
        let mut changed = false;
        for (nt, prods) in rules {
            for p in prods {
                let mut deepest = Some(0);
                for child in p.nonterminals() {
                    deepest = match (deepest, depth[child]) {
                        (Some(a), Some(b)) => Some(a.max(b)),
                        _ => None,
                    };
                }
                if let Some(d) = deepest.map(|d| d + 1) {
                    if depth[nt].is_none_or(|cur| d < cur) {
                        depth.insert(nt.clone(), Some(d));
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return depth;
        }
    }
}

fn convert_production(path: &str, rp: &RawProduction) -> Result<Production, GrammarError> {
    if rp.rhs.is_empty() {
        return Err(invalid(path, "empty right-hand side"));
    }
    for (param, domain) in &rp.param_domains {
        if domain.is_empty() {
            return Err(GrammarError::EmptyDomain {
                path: path.to_string(),
                param: param.clone(),
            });
        }
    }

    let mut rhs = Vec::with_capacity(rp.rhs.len());
    let mut referenced = BTreeSet::new();
    for (j, sym) in rp.rhs.iter().enumerate() {
        let spath = format!("{path}.rhs[{j}]");
        match (&sym.op, &sym.nt) {
            (Some(op), None) => {
                let spec = convert_op(&spath, op, &rp.param_domains)?;
                for b in &spec.params {
                    if let ParamBinding::Bound(name) = b {
                        referenced.insert(name.clone());
                    }
                }
                rhs.push(Symbol::Op(spec));
            }
            (None, Some(nt)) => rhs.push(Symbol::Nt(nt.clone())),
            _ => return Err(invalid(spath, "symbol must have exactly one of `op` or `nt`")),
        }
    }
    if let Some(unused) = rp.param_domains.keys().find(|k| !referenced.contains(*k)) {
        return Err(invalid(
            path,
            format!("parameter `{unused}` is declared but never used"),
        ));
    }

    let single_terminal = rhs.len() == 1 && matches!(rhs[0], Symbol::Op(_));
    let module = match rp.module {
        Some(m) => Some(m),
        None if single_terminal => None,
        None => Some(infer_module(&rhs)),
    };
    let prod = Production {
        name: rp.name.clone(),
        module,
        rhs,
        param_domains: rp.param_domains.clone(),
    };
    if prod.module == Some(ModuleKind::Branching) {
        check_branching(path, &prod)?;
    }
    Ok(prod)
}

fn infer_module(rhs: &[Symbol]) -> ModuleKind {
    let kinds = || {
        rhs.iter().filter_map(|s| match s {
            Symbol::Op(o) => Some(o.kind.class()),
            Symbol::Nt(_) => None,
        })
    };
    if kinds().any(|c| c == OpClass::Branching) {
        ModuleKind::Branching
    } else if kinds().any(|c| c == OpClass::Routing) {
        ModuleKind::Routing
    } else {
        ModuleKind::Sequential
    }
}

/// `[clone|group, branch_1 .. branch_b, aggregation]` with `b` matching the branch count.
fn check_branching(path: &str, p: &Production) -> Result<(), GrammarError> {
    let n = p.rhs.len();
    let first = match &p.rhs[0] {
        Symbol::Op(o) if o.kind.class() == OpClass::Branching => o,
        _ => return Err(invalid(path, "branching module must start with clone or group")),
    };
    match &p.rhs[n - 1] {
        Symbol::Op(o) if o.kind.class() == OpClass::Aggregation && n >= 3 => {}
        _ => return Err(invalid(path, "branching module must end with an aggregation")),
    }
    let branches = (n - 2) as i64;
    let values: Vec<ParamValue> = match &first.params[0] {
        ParamBinding::Literal(v) => vec![v.clone()],
        ParamBinding::Bound(name) => p.param_domains[name].clone(),
    };
    if values.iter().any(|v| v.as_int() != Some(branches)) {
        return Err(invalid(
            path,
            format!("branch count parameter must equal the number of branches ({branches})"),
        ));
    }
    Ok(())
}

fn convert_op(path: &str, op: &RawOp, domains: &BTreeMap<String, Vec<ParamValue>>) -> Result<OpSpec, GrammarError> {
    let kind: OpKind = op.kind.parse().map_err(|e: String| invalid(path, e))?;
    let expected = kind.params();
    if let Some(extra) = op.params.keys().find(|k| !expected.iter().any(|(n, _)| n == k)) {
        return Err(invalid(path, format!("`{kind}` has no parameter `{extra}`")));
    }
    let mut params = Vec::with_capacity(expected.len());
    for (name, ty) in expected {
        let value = op
            .params
            .get(*name)
            .ok_or_else(|| invalid(path, format!("`{kind}` requires parameter `{name}`")))?;
        let binding = match value {
            serde_json::Value::String(s) if s.starts_with('$') => {
                let bound = &s[1..];
                let domain = domains
                    .get(bound)
                    .ok_or_else(|| invalid(path, format!("`${bound}` is not declared in param_domains")))?;
                if domain.iter().any(|v| v.param_type() != *ty) {
                    return Err(invalid(
                        path,
                        format!("domain of `${bound}` has the wrong type for `{kind}.{name}`"),
                    ));
                }
                ParamBinding::Bound(bound.to_string())
            }
            serde_json::Value::String(s) if *ty == ParamType::Sym => ParamBinding::Literal(ParamValue::Sym(s.clone())),
            serde_json::Value::Number(n) if *ty == ParamType::Int && n.is_i64() => {
                ParamBinding::Literal(ParamValue::Int(n.as_i64().unwrap()))
            }
            other => return Err(invalid(path, format!("invalid value {other} for `{kind}.{name}`"))),
        };
        params.push(binding);
    }
    Ok(OpSpec { kind, params })
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("tree depth {depth} exceeds maximum {max}")]
    TooDeep { depth: usize, max: usize },
    #[error("unknown production `{production}` for nonterminal `{nonterminal}`")]
    UnknownProduction { nonterminal: String, production: String },
    #[error("`{production}` expects {expected} children, found {found}")]
    Arity {
        production: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid parameters: {0}")]
    Params(String),
}
