use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The four classes of fundamental operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpClass {
    Branching,
    Aggregation,
    Routing,
    Computation,
}

/// Terminal operation kinds that compile to graph nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Clone,
    Group,
    Add,
    Concat,
    DotProduct,
    Im2col,
    Col2im,
    Permute,
    Identity,
    Linear,
    Norm,
    Relu,
    Softmax,
    PosEnc,
}

/// Whether a parameter takes integer values or symbolic enumerations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamType {
    Int,
    Sym,
}

impl OpKind {
    pub const ALL: [OpKind; 14] = [
        OpKind::Clone,
        OpKind::Group,
        OpKind::Add,
        OpKind::Concat,
        OpKind::DotProduct,
        OpKind::Im2col,
        OpKind::Col2im,
        OpKind::Permute,
        OpKind::Identity,
        OpKind::Linear,
        OpKind::Norm,
        OpKind::Relu,
        OpKind::Softmax,
        OpKind::PosEnc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Clone => "clone",
            OpKind::Group => "group",
            OpKind::Add => "add",
            OpKind::Concat => "concat",
            OpKind::DotProduct => "dot_product",
            OpKind::Im2col => "im2col",
            OpKind::Col2im => "col2im",
            OpKind::Permute => "permute",
            OpKind::Identity => "identity",
            OpKind::Linear => "linear",
            OpKind::Norm => "norm",
            OpKind::Relu => "relu",
            OpKind::Softmax => "softmax",
            OpKind::PosEnc => "pos_enc",
        }
    }

    pub fn class(self) -> OpClass {
        match self {
            OpKind::Clone | OpKind::Group => OpClass::Branching,
            OpKind::Add | OpKind::Concat | OpKind::DotProduct => OpClass::Aggregation,
            OpKind::Im2col | OpKind::Col2im | OpKind::Permute | OpKind::Identity => OpClass::Routing,
            OpKind::Linear | OpKind::Norm | OpKind::Relu | OpKind::Softmax | OpKind::PosEnc => OpClass::Computation,
        }
    }

    /// Parameter names in rendering order.
    pub fn params(self) -> &'static [(&'static str, ParamType)] {
        use ParamType::*;
        match self {
            OpKind::Clone => &[("b", Int)],
            OpKind::Group => &[("b", Int), ("dim", Int)],
            OpKind::Concat => &[("b", Int), ("dim", Int)],
            OpKind::DotProduct => &[("scaled", Sym)],
            OpKind::Im2col => &[("k", Int), ("s", Int), ("p", Int)],
            OpKind::Permute => &[("o", Sym)],
            OpKind::Linear => &[("d", Int)],
            OpKind::Add
            | OpKind::Col2im
            | OpKind::Identity
            | OpKind::Norm
            | OpKind::Relu
            | OpKind::Softmax
            | OpKind::PosEnc => &[],
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown operation `{s}`"))
    }
}

/// A concrete parameter value.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Sym(String),
}

impl ParamValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            ParamValue::Sym(_) => None,
        }
    }

    pub fn param_type(&self) -> ParamType {
        match self {
            ParamValue::Int(_) => ParamType::Int,
            ParamValue::Sym(_) => ParamType::Sym,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Sym(s) => f.write_str(s),
        }
    }
}

/// An operation parameter as written in a production: a literal or a `$name` binding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParamBinding {
    Literal(ParamValue),
    Bound(String),
}

/// A terminal operation on a production's right-hand side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpSpec {
    pub kind: OpKind,
    /// One binding per entry of `kind.params()`, same order.
    pub params: Vec<ParamBinding>,
}

/// An operation with every parameter resolved.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResolvedOp {
    pub kind: OpKind,
    pub args: Vec<ParamValue>,
}

impl ResolvedOp {
    pub fn new(kind: OpKind, args: Vec<ParamValue>) -> Self {
        ResolvedOp { kind, args }
    }

    pub fn int_arg(&self, name: &str) -> Option<i64> {
        let idx = self.kind.params().iter().position(|(n, _)| *n == name)?;
        self.args.get(idx).and_then(ParamValue::as_int)
    }

    pub fn sym_arg(&self, name: &str) -> Option<&str> {
        let idx = self.kind.params().iter().position(|(n, _)| *n == name)?;
        match self.args.get(idx)? {
            ParamValue::Sym(s) => Some(s),
            ParamValue::Int(_) => None,
        }
    }
}

impl fmt::Display for ResolvedOp {
    /// `linear(128)`, `im2col(3,2,1)`, `add`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.name())?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}
