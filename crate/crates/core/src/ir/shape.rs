use super::{Opcode, TensorShape};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeRuleError {
    #[error("{opcode} takes {expected} operand(s), got {found}")]
    Arity {
        opcode: Opcode,
        expected: usize,
        found: usize,
    },
    #[error("{opcode} operands must share one type, got {lhs} and {rhs}")]
    ElementwiseMismatch {
        opcode: Opcode,
        lhs: TensorShape,
        rhs: TensorShape,
    },
    #[error("{opcode} needs rank >= 2, got {shape}")]
    RankTooLow { opcode: Opcode, shape: TensorShape },
    #[error("xpu.matmul cannot contract {lhs} with {rhs}")]
    MatmulMismatch { lhs: TensorShape, rhs: TensorShape },
    #[error("xpu.reshape cannot turn {from} into {to}")]
    ReshapeMismatch { from: TensorShape, to: TensorShape },
    #[error("{opcode} produces {expected}, declared {declared}")]
    ResultMismatch {
        opcode: Opcode,
        expected: TensorShape,
        declared: TensorShape,
    },
}

fn shape(dims: Vec<u64>, like: &TensorShape) -> TensorShape {
    // Rules only permute, drop, or copy existing dims, so the element-count
    // bound still holds.
    TensorShape::new(dims, like.dtype()).expect("shape rule preserves validity")
}

/// Result shape an opcode produces from its operands.
///
/// `Ok(None)` means the rule does not determine the result (reshape); use
/// [`check_result_shape`] against a declared type instead.
pub fn infer_result_shape(
    opcode: Opcode,
    operands: &[TensorShape],
) -> Result<Option<TensorShape>, ShapeRuleError> {
    if operands.len() != opcode.arity() {
        return Err(ShapeRuleError::Arity {
            opcode,
            expected: opcode.arity(),
            found: operands.len(),
        });
    }
    let first = &operands[0];
    let result = match opcode {
        _ if opcode.is_elementwise() => {
            if let Some(other) = operands[1..].iter().find(|s| *s != first) {
                return Err(ShapeRuleError::ElementwiseMismatch {
                    opcode,
                    lhs: first.clone(),
                    rhs: other.clone(),
                });
            }
            first.clone()
        }
        Opcode::Matmul => {
            let (lhs, rhs) = (first, &operands[1]);
            if lhs.rank() < 2 {
                return Err(ShapeRuleError::RankTooLow {
                    opcode,
                    shape: lhs.clone(),
                });
            }
            let r = lhs.rank();
            let compatible = rhs.rank() == r
                && lhs.dtype() == rhs.dtype()
                && lhs.dims()[..r - 2] == rhs.dims()[..r - 2]
                && lhs.dims()[r - 1] == rhs.dims()[r - 2];
            if !compatible {
                return Err(ShapeRuleError::MatmulMismatch {
                    lhs: lhs.clone(),
                    rhs: rhs.clone(),
                });
            }
            let mut dims = lhs.dims()[..r - 1].to_vec();
            dims.push(rhs.dims()[r - 1]);
            shape(dims, lhs)
        }
        Opcode::ReduceSum => {
            let dims = match first.dims() {
                [_] => vec![1],
                [init @ .., _] => init.to_vec(),
                [] => unreachable!("tensor shapes are never rank 0"),
            };
            shape(dims, first)
        }
        Opcode::Transpose => {
            if first.rank() < 2 {
                return Err(ShapeRuleError::RankTooLow {
                    opcode,
                    shape: first.clone(),
                });
            }
            let mut dims = first.dims().to_vec();
            let r = dims.len();
            dims.swap(r - 2, r - 1);
            shape(dims, first)
        }
        Opcode::Reshape => return Ok(None),
        _ => unreachable!("elementwise opcodes handled above"),
    };
    Ok(Some(result))
}

/// Checks a declared result type against the opcode's shape rule.
pub fn check_result_shape(
    opcode: Opcode,
    operands: &[TensorShape],
    declared: &TensorShape,
) -> Result<(), ShapeRuleError> {
    match infer_result_shape(opcode, operands)? {
        Some(expected) if &expected != declared => Err(ShapeRuleError::ResultMismatch {
            opcode,
            expected,
            declared: declared.clone(),
        }),
        Some(_) => Ok(()),
        None => {
            let from = &operands[0];
            if from.dtype() == declared.dtype() && from.num_elements() == declared.num_elements() {
                Ok(())
            } else {
                Err(ShapeRuleError::ReshapeMismatch {
                    from: from.clone(),
                    to: declared.clone(),
                })
            }
        }
    }
}
