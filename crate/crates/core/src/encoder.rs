//! Derivation-string encodings and their parser.
//!
//! ```text
//! item    := module | op
//! module  := ("sequential" | "routing" | "branching(" INT ")") "[" item (", " item)* "]"
//! op      := "computation<" name args? ">" | name args?
//! args    := "(" value ("," value)* ")"
//! ```
//!
//! Computation operations (`linear`, `norm`, `relu`, `softmax`, `pos_enc`) are
//! always wrapped in `computation<...>`. The shape-annotated variant appends
//! ` {'out_feature_shape': [d1, d2, ...]}` after every operation token; the
//! parser skips such annotations.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compiler::{compile, CompileError, TensorShape};
use crate::grammar::{
    DerivationTree, Grammar, ModuleKind, OpClass, OpKind, OpSpec, ParamBinding, ParamType, ParamValue, Production,
    ResolvedOp, Symbol,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Plain,
    WithShapes,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchString {
    pub text: String,
    pub variant: Variant,
}

impl fmt::Display for ArchString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("parse error at {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown operation `{name}` at {pos}")]
    UnknownOp { pos: usize, name: String },
    #[error("no production of `{nonterminal}` matches the text at {pos}")]
    NoMatch { pos: usize, nonterminal: String },
}

fn render_op(out: &mut String, op: &ResolvedOp) {
    if op.kind.class() == OpClass::Computation {
        out.push_str("computation<");
        out.push_str(&op.to_string());
        out.push('>');
    } else {
        out.push_str(&op.to_string());
    }
}

fn render_shape(out: &mut String, shape: &TensorShape) {
    let dims: Vec<String> = shape.dims().iter().map(usize::to_string).collect();
    out.push_str(" {'out_feature_shape': [");
    out.push_str(&dims.join(", "));
    out.push_str("]}");
}

struct Renderer<'a, I> {
    grammar: &'a Grammar,
    shapes: Option<I>,
    out: String,
}

impl<I: Iterator<Item = TensorShape>> Renderer<'_, I> {
    fn op(&mut self, op: &ResolvedOp) {
        render_op(&mut self.out, op);
        if let Some(shapes) = self.shapes.as_mut() {
            let shape = shapes.next().expect("one shape per operation token");
            render_shape(&mut self.out, &shape);
        }
    }

    fn tree(&mut self, t: &DerivationTree) {
        let prod = self
            .grammar
            .production(&t.nonterminal, &t.production)
            .unwrap_or_else(|| panic!("unknown production {}.{}", t.nonterminal, t.production));
        let Some(module) = prod.module else {
            let Symbol::Op(spec) = &prod.rhs[0] else {
                unreachable!("bare productions are terminals")
            };
            self.op(&prod.resolve(spec, &t.params));
            return;
        };
        self.out.push_str(module.keyword());
        if let Some(b) = prod.branch_count(&t.params) {
            self.out.push_str(&format!("({b})"));
        }
        self.out.push('[');
        let mut children = t.children.iter();
        for (i, sym) in prod.rhs.iter().enumerate() {
            if i > 0 {
                self.out.push_str(", ");
            }
            match sym {
                Symbol::Op(spec) => self.op(&prod.resolve(spec, &t.params)),
                Symbol::Nt(_) => self.tree(children.next().expect("valid tree")),
            }
        }
        self.out.push(']');
    }
}

/// Canonical derivation string of a valid tree.
pub fn encode_plain(grammar: &Grammar, t: &DerivationTree) -> ArchString {
    let mut r = Renderer::<std::iter::Empty<TensorShape>> {
        grammar,
        shapes: None,
        out: String::new(),
    };
    r.tree(t);
    ArchString {
        text: r.out,
        variant: Variant::Plain,
    }
}

/// Derivation string with the compiled output shape after every operation token.
pub fn encode_with_shapes(
    grammar: &Grammar,
    t: &DerivationTree,
    input_shape: TensorShape,
) -> Result<ArchString, CompileError> {
    let graph = compile(grammar, t, input_shape)?;
    let shapes: Vec<TensorShape> = graph.op_nodes().map(|n| n.out_shape).collect();
    let mut r = Renderer {
        grammar,
        shapes: Some(shapes.into_iter()),
        out: String::new(),
    };
    r.tree(t);
    Ok(ArchString {
        text: r.out,
        variant: Variant::WithShapes,
    })
}

/// Removes every ` {...}` annotation.
pub fn strip_annotations(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut depth = 0usize;
    for c in text.chars() {
        match c {
            '{' => {
                if depth == 0 && out.ends_with(' ') {
                    out.pop();
                }
                depth += 1;
            }
            '}' if depth > 0 => depth -= 1,
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

#[derive(Debug)]
enum Syn {
    Op {
        op: ResolvedOp,
        pos: usize,
    },
    Module {
        kind: ModuleKind,
        branches: Option<i64>,
        items: Vec<Syn>,
        pos: usize,
    },
}

impl Syn {
    fn pos(&self) -> usize {
        match self {
            Syn::Op { pos, .. } | Syn::Module { pos, .. } => *pos,
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            pos: self.pos,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn word(&mut self) -> &'a str {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                self.pos += 1;
            } else {
                break;
            }
        }
        &self.src[start..self.pos]
    }

    /// Skips `{ ... }` annotations, honoring nesting and quoted strings.
    fn skip_annotations(&mut self) -> Result<(), ParseError> {
        loop {
            self.skip_ws();
            if self.peek() != Some('{') {
                return Ok(());
            }
            let start = self.pos;
            let mut depth = 0usize;
            let mut quote: Option<char> = None;
            for (i, c) in self.src[start..].char_indices() {
                match (quote, c) {
                    (Some(q), c) if c == q => quote = None,
                    (Some(_), _) => {}
                    (None, '\'' | '"') => quote = Some(c),
                    (None, '{') => depth += 1,
                    (None, '}') => {
                        depth -= 1;
                        if depth == 0 {
                            self.pos = start + i + 1;
                            break;
                        }
                    }
                    _ => {}
                }
            }
            if depth != 0 {
                self.pos = start;
                return self.err("unterminated annotation");
            }
        }
    }

    fn args(&mut self) -> Result<Vec<(&'a str, usize)>, ParseError> {
        let mut out = Vec::new();
        if !self.eat('(') {
            return Ok(out);
        }
        loop {
            let pos = {
                self.skip_ws();
                self.pos
            };
            let w = self.word();
            if w.is_empty() {
                return self.err("expected argument");
            }
            out.push((w, pos));
            if self.eat(')') {
                return Ok(out);
            }
            self.expect(',')?;
        }
    }

    fn op(&mut self, name: &'a str, pos: usize, wrapped: bool) -> Result<Syn, ParseError> {
        let kind: OpKind = name.parse().map_err(|_| ParseError::UnknownOp {
            pos,
            name: name.to_string(),
        })?;
        let is_comp = kind.class() == OpClass::Computation;
        if is_comp != wrapped {
            return Err(ParseError::Syntax {
                pos,
                message: if is_comp {
                    format!("`{name}` must be written as computation<{name}>")
                } else {
                    format!("`{name}` is not a computation operation")
                },
            });
        }
        let raw = self.args()?;
        let expected = kind.params();
        if raw.len() != expected.len() {
            return Err(ParseError::Syntax {
                pos,
                message: format!("`{name}` takes {} argument(s), found {}", expected.len(), raw.len()),
            });
        }
        let mut args = Vec::with_capacity(raw.len());
        for ((text, apos), (pname, ty)) in raw.iter().zip(expected) {
            let value = match ty {
                ParamType::Int => ParamValue::Int(text.parse().map_err(|_| ParseError::Syntax {
                    pos: *apos,
                    message: format!("non-integer argument `{text}` for `{name}.{pname}`"),
                })?),
                ParamType::Sym => ParamValue::Sym(text.to_string()),
            };
            args.push(value);
        }
        Ok(Syn::Op {
            op: ResolvedOp::new(kind, args),
            pos,
        })
    }

    fn item(&mut self) -> Result<Syn, ParseError> {
        self.skip_ws();
        let pos = self.pos;
        let name = self.word();
        if name.is_empty() {
            return self.err("expected an operation or module");
        }
        let syn = if name == "computation" {
            self.expect('<')?;
            let ipos = {
                self.skip_ws();
                self.pos
            };
            let inner = self.word();
            let op = self.op(inner, ipos, true)?;
            self.expect('>')?;
            op
        } else {
            let module = match name {
                "sequential" => Some(ModuleKind::Sequential),
                "routing" => Some(ModuleKind::Routing),
                "branching" => Some(ModuleKind::Branching),
                _ => None,
            };
            match module {
                Some(kind) => {
                    let args = self.args()?;
                    let branches = match (kind, args.as_slice()) {
                        (ModuleKind::Branching, [(b, bpos)]) => {
                            Some(b.parse::<i64>().map_err(|_| ParseError::Syntax {
                                pos: *bpos,
                                message: format!("non-integer branch count `{b}`"),
                            })?)
                        }
                        (ModuleKind::Branching, _) => return self.err("branching takes one argument"),
                        (_, []) => None,
                        _ => return self.err(format!("`{name}` takes no arguments")),
                    };
                    self.skip_annotations()?;
                    self.expect('[')?;
                    let mut items = vec![self.item()?];
                    while self.eat(',') {
                        items.push(self.item()?);
                    }
                    self.expect(']')?;
                    Syn::Module {
                        kind,
                        branches,
                        items,
                        pos,
                    }
                }
                None => self.op(name, pos, false)?,
            }
        };
        self.skip_annotations()?;
        Ok(syn)
    }
}

fn bind(prod: &Production, spec: &OpSpec, op: &ResolvedOp, bindings: &mut BTreeMap<String, ParamValue>) -> bool {
    if spec.kind != op.kind {
        return false;
    }
    for (b, arg) in spec.params.iter().zip(&op.args) {
        match b {
            ParamBinding::Literal(v) => {
                if v != arg {
                    return false;
                }
            }
            ParamBinding::Bound(name) => {
                if !prod.param_domains[name].contains(arg) {
                    return false;
                }
                match bindings.get(name) {
                    Some(prev) if prev != arg => return false,
                    Some(_) => {}
                    None => {
                        bindings.insert(name.clone(), arg.clone());
                    }
                }
            }
        }
    }
    true
}

fn match_production(g: &Grammar, nonterminal: &str, prod: &Production, syn: &Syn) -> Option<DerivationTree> {
    let mut params = BTreeMap::new();
    let mut children = Vec::new();
    match (prod.module, syn) {
        (None, Syn::Op { op, .. }) => {
            let Symbol::Op(spec) = &prod.rhs[0] else { return None };
            if !bind(prod, spec, op, &mut params) {
                return None;
            }
        }
        (
            Some(m),
            Syn::Module {
                kind, branches, items, ..
            },
        ) if m == *kind && items.len() == prod.rhs.len() => {
            for (sym, item) in prod.rhs.iter().zip(items) {
                match (sym, item) {
                    (Symbol::Op(spec), Syn::Op { op, .. }) => {
                        if !bind(prod, spec, op, &mut params) {
                            return None;
                        }
                    }
                    (Symbol::Op(_), Syn::Module { .. }) => return None,
                    (Symbol::Nt(nt), item) => children.push(match_nonterminal(g, nt, item).ok()?),
                }
            }
            if *branches != prod.branch_count(&params).map(|b| b as i64) {
                return None;
            }
        }
        _ => return None,
    }
    Some(DerivationTree::new(nonterminal, prod.name.clone(), params, children))
}

fn match_nonterminal(g: &Grammar, nonterminal: &str, syn: &Syn) -> Result<DerivationTree, ParseError> {
    g.productions(nonterminal)
        .iter()
        .find_map(|p| match_production(g, nonterminal, p, syn))
        .ok_or_else(|| ParseError::NoMatch {
            pos: syn.pos(),
            nonterminal: nonterminal.to_string(),
        })
}

/// Parses a derivation string (annotations ignored) into a tree of `grammar`'s start symbol.
pub fn parse(grammar: &Grammar, text: &str) -> Result<DerivationTree, ParseError> {
    let mut lex = Lexer { src: text, pos: 0 };
    let syn = lex.item()?;
    lex.skip_ws();
    if lex.pos != text.len() {
        return lex.err("trailing input");
    }
    match_nonterminal(grammar, grammar.start(), &syn)
}

/// Number of operation tokens in an encoding.
pub fn count_op_tokens(text: &str) -> usize {
    let plain = strip_annotations(text);
    let mut count = 0;
    let mut i = 0;
    let bytes = plain.as_bytes();
    while i < bytes.len() {
        if bytes[i].is_ascii_alphabetic() {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &plain[start..i];
            if word.parse::<OpKind>().is_ok() {
                count += 1;
            }
        } else {
            i += 1;
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_block() -> DerivationTree {
        let params = BTreeMap::from([
            ("kernel".to_string(), ParamValue::Int(3)),
            ("stride".to_string(), ParamValue::Int(2)),
            ("padding".to_string(), ParamValue::Int(1)),
        ]);
        let lin = DerivationTree::new(
            "NET_COL",
            "linear",
            BTreeMap::from([("dim".into(), ParamValue::Int(128))]),
            vec![],
        );
        DerivationTree::new("NET_IM", "conv-block", params, vec![lin])
    }

    #[test]
    fn identity_encodings() {
        let g = Grammar::mini_einspace();
        let t = DerivationTree::leaf("NET_IM", "identity");
        assert_eq!(encode_plain(&g, &t).text, "identity");
        assert_eq!(
            encode_with_shapes(&g, &t, TensorShape::im(3, 32, 32)).unwrap().text,
            "identity {'out_feature_shape': [3, 32, 32]}"
        );
        assert_eq!(parse(&g, "identity").unwrap(), t);
    }

    #[test]
    fn conv_block_encodings() {
        let g = Grammar::mini_einspace();
        let t = conv_block();
        assert_eq!(
            encode_plain(&g, &t).text,
            "routing[im2col(3,2,1), computation<linear(128)>, col2im]"
        );
        let shaped = encode_with_shapes(&g, &t, TensorShape::im(3, 32, 32)).unwrap().text;
        assert_eq!(
            shaped,
            "routing[im2col(3,2,1) {'out_feature_shape': [256, 27]}, \
             computation<linear(128)> {'out_feature_shape': [256, 128]}, \
             col2im {'out_feature_shape': [128, 16, 16]}]"
        );
        assert_eq!(strip_annotations(&shaped), encode_plain(&g, &t).text);
        assert_eq!(count_op_tokens(&shaped), 3);
        assert_eq!(parse(&g, &shaped).unwrap(), t);
    }

    #[test]
    fn branching_of_two_relus() {
        let g = Grammar::mini_einspace();
        let relu = DerivationTree::leaf("NET_IM", "relu");
        let t = DerivationTree::new("NET_IM", "branching2-add", BTreeMap::new(), vec![relu.clone(), relu]);
        let text = encode_plain(&g, &t).text;
        assert_eq!(
            text,
            "branching(2)[clone(2), computation<relu>, computation<relu>, add]"
        );
        assert_eq!(parse(&g, &text).unwrap(), t);
    }

    #[test]
    fn parse_errors() {
        let g = Grammar::mini_einspace();
        let err = parse(&g, "routing[im2col(3,2,1), computation<linear(abc)>, col2im]").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { pos: 42, .. }), "{err:?}");
        assert!(err.to_string().contains("non-integer"));
        assert!(matches!(
            parse(&g, "conv(3)"),
            Err(ParseError::UnknownOp { pos: 0, .. })
        ));
        assert!(matches!(parse(&g, "relu"), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse(&g, "identity extra"), Err(ParseError::Syntax { .. })));
        // linear is a NET_COL production, not derivable from NET_IM directly
        assert!(matches!(
            parse(&g, "computation<linear(128)>"),
            Err(ParseError::NoMatch { .. })
        ));
        // 100 is not in the dimension domain
        assert!(matches!(
            parse(&g, "routing[im2col(3,2,1), computation<linear(100)>, col2im]"),
            Err(ParseError::NoMatch { .. })
        ));
        assert!(matches!(parse(&g, "identity {'x': [1"), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn nested_sequential_is_not_flattened() {
        let g = Grammar::mini_einspace();
        let t = parse(
            &g,
            "sequential[computation<relu>, sequential[computation<norm>, identity]]",
        )
        .unwrap();
        assert_eq!(t.children[1].production, "sequential");
        assert_eq!(
            encode_plain(&g, &t).text,
            "sequential[computation<relu>, sequential[computation<norm>, identity]]"
        );
    }
}
