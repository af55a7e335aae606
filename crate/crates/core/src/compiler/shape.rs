use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{OpKind, ResolvedOp};

/// Tensor layout flowing along a graph edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TensorShape {
    /// Channels, height, width.
    Im { c: usize, h: usize, w: usize },
    /// Sequence length, token dimension.
    Col { s: usize, d: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Im,
    Col,
}

impl TensorShape {
    pub fn im(c: usize, h: usize, w: usize) -> Self {
        TensorShape::Im { c, h, w }
    }

    pub fn col(s: usize, d: usize) -> Self {
        TensorShape::Col { s, d }
    }

    pub fn mode(&self) -> Mode {
        match self {
            TensorShape::Im { .. } => Mode::Im,
            TensorShape::Col { .. } => Mode::Col,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            TensorShape::Im { c, h, w } => vec![c, h, w],
            TensorShape::Col { s, d } => vec![s, d],
        }
    }

    fn with_dims(mode: Mode, dims: &[usize]) -> Self {
        match mode {
            Mode::Im => TensorShape::im(dims[0], dims[1], dims[2]),
            Mode::Col => TensorShape::col(dims[0], dims[1]),
        }
    }

    /// Builds a shape from 3 (Im) or 2 (Col) positive dimensions.
    pub fn from_dims(dims: &[usize]) -> Option<Self> {
        if dims.contains(&0) {
            return None;
        }
        match dims.len() {
            3 => Some(Self::with_dims(Mode::Im, dims)),
            2 => Some(Self::with_dims(Mode::Col, dims)),
            _ => None,
        }
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims = self.dims();
        let parts: Vec<String> = dims.iter().map(usize::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Im => "im",
            Mode::Col => "col",
        })
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ShapeViolation {
    #[error("expected {expected} input(s), got {got}")]
    Arity { expected: String, got: usize },
    #[error("requires {expected} mode input, got {got}")]
    ModeMismatch { expected: Mode, got: TensorShape },
    #[error("non-positive spatial output {h}x{w}")]
    NonPositiveSpatial { h: i64, w: i64 },
    #[error("sequence length {0} is not a perfect square")]
    NotSquare(usize),
    #[error("requires equal shapes, got {0} and {1}")]
    Mismatch(TensorShape, TensorShape),
    #[error("size {size} along dim {dim} is not divisible by {parts}")]
    Indivisible { size: usize, dim: usize, parts: usize },
    #[error("dim {dim} out of range for rank {rank}")]
    BadDim { dim: i64, rank: usize },
    #[error("`{0}` is not a permutation of the tensor axes")]
    BadPermutation(String),
    #[error("invalid argument: {0}")]
    BadArgument(String),
}

fn arity(inputs: &[TensorShape], expected: usize) -> Result<(), ShapeViolation> {
    if inputs.len() == expected {
        Ok(())
    } else {
        Err(ShapeViolation::Arity {
            expected: expected.to_string(),
            got: inputs.len(),
        })
    }
}

fn positive_arg(op: &ResolvedOp, name: &str) -> Result<usize, ShapeViolation> {
    match op.int_arg(name) {
        Some(v) if v >= 1 => Ok(v as usize),
        other => Err(ShapeViolation::BadArgument(format!("{name}={other:?} in {op}"))),
    }
}

fn dim_arg(op: &ResolvedOp, rank: usize) -> Result<usize, ShapeViolation> {
    let dim = op.int_arg("dim").unwrap_or(-1);
    if dim < 0 || dim as usize >= rank {
        return Err(ShapeViolation::BadDim { dim, rank });
    }
    Ok(dim as usize)
}

/// Output shape of one operation applied to its input shapes.
///
/// `clone` and `group` report the shape of a single output copy.
pub fn infer_shape(op: &ResolvedOp, inputs: &[TensorShape]) -> Result<TensorShape, ShapeViolation> {
    match op.kind {
        OpKind::Identity | OpKind::Norm | OpKind::Relu | OpKind::Softmax | OpKind::PosEnc => {
            arity(inputs, 1)?;
            Ok(inputs[0])
        }
        OpKind::Clone => {
            arity(inputs, 1)?;
            positive_arg(op, "b")?;
            Ok(inputs[0])
        }
        OpKind::Group => {
            arity(inputs, 1)?;
            let parts = positive_arg(op, "b")?;
            let mut dims = inputs[0].dims();
            let dim = dim_arg(op, dims.len())?;
            if !dims[dim].is_multiple_of(parts) {
                return Err(ShapeViolation::Indivisible {
                    size: dims[dim],
                    dim,
                    parts,
                });
            }
            dims[dim] /= parts;
            Ok(TensorShape::with_dims(inputs[0].mode(), &dims))
        }
        OpKind::Add => {
            if inputs.is_empty() {
                return Err(ShapeViolation::Arity {
                    expected: "at least 1".into(),
                    got: 0,
                });
            }
            if let Some(other) = inputs.iter().find(|s| **s != inputs[0]) {
                return Err(ShapeViolation::Mismatch(inputs[0], *other));
            }
            Ok(inputs[0])
        }
        OpKind::Concat => {
            let b = positive_arg(op, "b")?;
            arity(inputs, b)?;
            let mode = inputs[0].mode();
            let mut dims = inputs[0].dims();
            let dim = dim_arg(op, dims.len())?;
            for other in &inputs[1..] {
                let od = other.dims();
                let compatible =
                    other.mode() == mode && dims.iter().zip(&od).enumerate().all(|(i, (a, b))| i == dim || a == b);
                if !compatible {
                    return Err(ShapeViolation::Mismatch(inputs[0], *other));
                }
                dims[dim] += od[dim];
            }
            Ok(TensorShape::with_dims(mode, &dims))
        }
        OpKind::DotProduct => {
            arity(inputs, 2)?;
            match (inputs[0], inputs[1]) {
                (TensorShape::Col { s: s1, d: d1 }, TensorShape::Col { s: s2, d: d2 }) if s1 == s2 && d1 == d2 => {
                    Ok(TensorShape::col(s1, s1))
                }
                (a @ TensorShape::Col { .. }, b @ TensorShape::Col { .. }) => Err(ShapeViolation::Mismatch(a, b)),
                (TensorShape::Col { .. }, other) | (other, _) => Err(ShapeViolation::ModeMismatch {
                    expected: Mode::Col,
                    got: other,
                }),
            }
        }
        OpKind::Permute => {
            arity(inputs, 1)?;
            let order = op.sym_arg("o").unwrap_or_default();
            let dims = inputs[0].dims();
            let idx: Option<Vec<usize>> = order.chars().map(|c| c.to_digit(10).map(|d| d as usize)).collect();
            let idx = idx.ok_or_else(|| ShapeViolation::BadPermutation(order.to_string()))?;
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            if sorted != (0..dims.len()).collect::<Vec<_>>() {
                return Err(ShapeViolation::BadPermutation(order.to_string()));
            }
            let permuted: Vec<usize> = idx.iter().map(|&i| dims[i]).collect();
            Ok(TensorShape::with_dims(inputs[0].mode(), &permuted))
        }
        OpKind::Im2col => {
            arity(inputs, 1)?;
            let TensorShape::Im { c, h, w } = inputs[0] else {
                return Err(ShapeViolation::ModeMismatch {
                    expected: Mode::Im,
                    got: inputs[0],
                });
            };
            let k = positive_arg(op, "k")? as i64;
            let s = positive_arg(op, "s")? as i64;
            let p = op
                .int_arg("p")
                .filter(|p| *p >= 0)
                .ok_or_else(|| ShapeViolation::BadArgument(format!("p in {op}")))?;
            let out = |n: usize| (n as i64 + 2 * p - k).div_euclid(s) + 1;
            let (oh, ow) = (out(h), out(w));
            if oh <= 0 || ow <= 0 {
                return Err(ShapeViolation::NonPositiveSpatial { h: oh, w: ow });
            }
            Ok(TensorShape::col((oh * ow) as usize, c * (k * k) as usize))
        }
        OpKind::Col2im => {
            arity(inputs, 1)?;
            let TensorShape::Col { s, d } = inputs[0] else {
                return Err(ShapeViolation::ModeMismatch {
                    expected: Mode::Col,
                    got: inputs[0],
                });
            };
            let side = s.isqrt();
            if side * side != s {
                return Err(ShapeViolation::NotSquare(s));
            }
            Ok(TensorShape::im(d, side, side))
        }
        OpKind::Linear => {
            arity(inputs, 1)?;
            let TensorShape::Col { s, .. } = inputs[0] else {
                return Err(ShapeViolation::ModeMismatch {
                    expected: Mode::Col,
                    got: inputs[0],
                });
            };
            Ok(TensorShape::col(s, positive_arg(op, "d")?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::ParamValue::{Int, Sym};

    fn op(kind: OpKind, args: Vec<crate::grammar::ParamValue>) -> ResolvedOp {
        ResolvedOp::new(kind, args)
    }

    #[test]
    fn im2col_standard_arithmetic() {
        // H' = floor((32 + 2 - 3) / 2) + 1 = 16, S = 256, D = 3 * 9 = 27
        let out = infer_shape(
            &op(OpKind::Im2col, vec![Int(3), Int(2), Int(1)]),
            &[TensorShape::im(3, 32, 32)],
        );
        assert_eq!(out, Ok(TensorShape::col(256, 27)));
    }

    #[test]
    fn im2col_non_positive_is_error() {
        let out = infer_shape(
            &op(OpKind::Im2col, vec![Int(5), Int(1), Int(0)]),
            &[TensorShape::im(3, 3, 3)],
        );
        assert!(matches!(out, Err(ShapeViolation::NonPositiveSpatial { .. })));
        // exactly fits: (4 - 5 + 2*0)... k=4 on 4x4 gives 1x1
        let ok = infer_shape(
            &op(OpKind::Im2col, vec![Int(4), Int(3), Int(0)]),
            &[TensorShape::im(2, 4, 4)],
        );
        assert_eq!(ok, Ok(TensorShape::col(1, 32)));
    }

    #[test]
    fn shape_preserving_ops() {
        for kind in [
            OpKind::Identity,
            OpKind::Norm,
            OpKind::Relu,
            OpKind::Softmax,
            OpKind::PosEnc,
        ] {
            assert_eq!(
                infer_shape(&op(kind, vec![]), &[TensorShape::im(5, 7, 9)]),
                Ok(TensorShape::im(5, 7, 9))
            );
        }
    }

    #[test]
    fn col2im_square() {
        assert_eq!(
            infer_shape(&op(OpKind::Col2im, vec![]), &[TensorShape::col(100, 64)]),
            Ok(TensorShape::im(64, 10, 10))
        );
        assert_eq!(
            infer_shape(&op(OpKind::Col2im, vec![]), &[TensorShape::col(99, 64)]),
            Err(ShapeViolation::NotSquare(99))
        );
    }

    #[test]
    fn linear_requires_col() {
        assert_eq!(
            infer_shape(&op(OpKind::Linear, vec![Int(128)]), &[TensorShape::col(256, 27)]),
            Ok(TensorShape::col(256, 128))
        );
        assert!(matches!(
            infer_shape(&op(OpKind::Linear, vec![Int(128)]), &[TensorShape::im(3, 8, 8)]),
            Err(ShapeViolation::ModeMismatch {
                expected: Mode::Col,
                ..
            })
        ));
    }

    #[test]
    fn aggregations() {
        let a = TensorShape::im(3, 32, 32);
        let b = TensorShape::im(8, 16, 16);
        assert_eq!(infer_shape(&op(OpKind::Add, vec![]), &[a, a]), Ok(a));
        assert_eq!(
            infer_shape(&op(OpKind::Add, vec![]), &[a, b]),
            Err(ShapeViolation::Mismatch(a, b))
        );
        let c = TensorShape::im(5, 32, 32);
        assert_eq!(
            infer_shape(&op(OpKind::Concat, vec![Int(2), Int(0)]), &[a, c]),
            Ok(TensorShape::im(8, 32, 32))
        );
        assert!(infer_shape(&op(OpKind::Concat, vec![Int(2), Int(1)]), &[a, c]).is_err());
        let q = TensorShape::col(10, 4);
        assert_eq!(
            infer_shape(&op(OpKind::DotProduct, vec![Sym("true".into())]), &[q, q]),
            Ok(TensorShape::col(10, 10))
        );
    }

    #[test]
    fn branching_ops() {
        let a = TensorShape::col(10, 6);
        assert_eq!(infer_shape(&op(OpKind::Clone, vec![Int(3)]), &[a]), Ok(a));
        assert_eq!(
            infer_shape(&op(OpKind::Group, vec![Int(3), Int(1)]), &[a]),
            Ok(TensorShape::col(10, 2))
        );
        assert!(matches!(
            infer_shape(&op(OpKind::Group, vec![Int(3), Int(0)]), &[a]),
            Err(ShapeViolation::Indivisible { .. })
        ));
    }

    #[test]
    fn permute_reorders() {
        let out = infer_shape(
            &op(OpKind::Permute, vec![Sym("021".into())]),
            &[TensorShape::im(3, 4, 5)],
        );
        assert_eq!(out, Ok(TensorShape::im(3, 5, 4)));
        assert!(infer_shape(
            &op(OpKind::Permute, vec![Sym("01".into())]),
            &[TensorShape::im(3, 4, 5)]
        )
        .is_err());
    }

    #[test]
    fn unit_im2col_col2im_round_trip() {
        for (c, hw) in [(1, 1), (3, 32), (64, 7), (5, 12)] {
            let x = TensorShape::im(c, hw, hw);
            let col = infer_shape(&op(OpKind::Im2col, vec![Int(1), Int(1), Int(0)]), &[x]).unwrap();
            assert_eq!(infer_shape(&op(OpKind::Col2im, vec![]), &[col]), Ok(x));
        }
    }
}
