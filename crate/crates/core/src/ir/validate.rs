use std::collections::HashMap;
use std::fmt;

use super::{check_result_shape, Def, GraphFunction, ValueId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    EmptyBody,
    Ssa,
    Arity,
    ShapeRule,
}

/// Where in the function a violation sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    Function,
    Arg(usize),
    Op(usize),
    Return(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: Location,
    pub message: String,
}

impl Violation {
    pub fn op_index(&self) -> Option<usize> {
        match self.location {
            Location::Op(i) => Some(i),
            _ => None,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.location {
            Location::Function => write!(f, "{}", self.message),
            Location::Arg(i) => write!(f, "argument {i}: {}", self.message),
            Location::Op(i) => write!(f, "op {i}: {}", self.message),
            Location::Return(i) => write!(f, "return value {i}: {}", self.message),
        }
    }
}

/// Reports every invariant violation in `f`; an empty list means it is valid.
pub fn validate(f: &GraphFunction) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, location, message: String| {
        out.push(Violation {
            kind,
            location,
            message,
        })
    };

    if f.body.is_empty() {
        push(ViolationKind::EmptyBody, Location::Function, "function body is empty".into());
    }

    let mut defined: HashMap<ValueId, Def> = HashMap::new();
    for (i, (id, _)) in f.args.iter().enumerate() {
        if !matches!(id, ValueId::Arg(_)) {
            push(ViolationKind::Ssa, Location::Arg(i), format!("argument named {id}, expected %arg<k>"));
        }
        if defined.insert(*id, Def::Arg(i)).is_some() {
            push(ViolationKind::Ssa, Location::Arg(i), format!("{id} defined more than once"));
        }
    }

    for (i, op) in f.body.iter().enumerate() {
        let loc = Location::Op(i);
        let mut operands_ok = true;
        if op.operands.len() != op.opcode.arity() {
            push(
                ViolationKind::Arity,
                loc,
                format!(
                    "{} takes {} operand(s), got {}",
                    op.opcode,
                    op.opcode.arity(),
                    op.operands.len()
                ),
            );
            operands_ok = false;
        }
        if op.operand_shapes.len() != op.operands.len() {
            push(
                ViolationKind::Arity,
                loc,
                format!(
                    "{} operand(s) but {} operand type(s)",
                    op.operands.len(),
                    op.operand_shapes.len()
                ),
            );
            operands_ok = false;
        }
        for (j, id) in op.operands.iter().enumerate() {
            match defined.get(id) {
                None => {
                    push(ViolationKind::Ssa, loc, format!("{id} used before definition"));
                    operands_ok = false;
                }
                Some(def) => {
                    if let Some(declared) = op.operand_shapes.get(j) {
                        let actual = f.shape_of(*def);
                        if actual != declared {
                            push(
                                ViolationKind::ShapeRule,
                                loc,
                                format!("{id} has type {actual}, annotated {declared}"),
                            );
                            operands_ok = false;
                        }
                    }
                }
            }
        }
        if operands_ok {
            if let Err(e) = check_result_shape(op.opcode, &op.operand_shapes, &op.result_shape) {
                push(ViolationKind::ShapeRule, loc, e.to_string());
            }
        }
        if !matches!(op.result, ValueId::Result(_)) {
            push(ViolationKind::Ssa, loc, format!("result named {}, expected %<n>", op.result));
        }
        if defined.insert(op.result, Def::Op(i)).is_some() {
            push(ViolationKind::Ssa, loc, format!("{} defined more than once", op.result));
        }
    }

    for (i, id) in f.returns.iter().enumerate() {
        if !defined.contains_key(id) {
            push(ViolationKind::Ssa, Location::Return(i), format!("{id} returned but never defined"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_function, OperationNode, Opcode, TensorShape};

    fn t(s: &str) -> TensorShape {
        s.parse().unwrap()
    }

    fn add_fn() -> GraphFunction {
        parse_function(
            "func @f(%arg0: tensor<4xf32>, %arg1: tensor<4xf32>) -> (tensor<4xf32>) {\n\
             %0 = xpu.add %arg0, %arg1 : (tensor<4xf32>, tensor<4xf32>) -> tensor<4xf32>\n\
             return %0\n}",
        )
        .unwrap()
    }

    #[test]
    fn parsed_function_is_valid() {
        assert!(validate(&add_fn()).is_empty());
    }

    #[test]
    fn duplicate_definition_is_one_ssa_violation() {
        let mut f = add_fn();
        let mut dup = f.body[0].clone();
        dup.operands = vec![ValueId::Result(0), ValueId::Arg(0)];
        f.body.push(dup);
        let v = validate(&f);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].kind, ViolationKind::Ssa);
        assert_eq!(v[0].op_index(), Some(1));
    }

    #[test]
    fn matmul_inner_dim_mismatch_is_one_shape_violation() {
        let a = t("tensor<4x8xf32>");
        let f = GraphFunction {
            name: "mm".into(),
            args: vec![(ValueId::Arg(0), a.clone()), (ValueId::Arg(1), a.clone())],
            body: vec![OperationNode {
                result: ValueId::Result(0),
                opcode: Opcode::Matmul,
                operands: vec![ValueId::Arg(0), ValueId::Arg(1)],
                operand_shapes: vec![a.clone(), a.clone()],
                result_shape: t("tensor<4x8xf32>"),
            }],
            returns: vec![ValueId::Result(0)],
        };
        let v = validate(&f);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].kind, ViolationKind::ShapeRule);
        assert_eq!(v[0].op_index(), Some(0));
    }

    #[test]
    fn reports_every_problem() {
        let mut f = add_fn();
        f.body[0].operands.push(ValueId::Result(9));
        f.returns.push(ValueId::Result(7));
        let kinds: Vec<_> = validate(&f).into_iter().map(|v| (v.kind, v.location)).collect();
        assert!(kinds.contains(&(ViolationKind::Arity, Location::Op(0))));
        assert!(kinds.contains(&(ViolationKind::Ssa, Location::Op(0))));
        assert!(kinds.contains(&(ViolationKind::Ssa, Location::Return(1))));
    }

    #[test]
    fn empty_body_and_misnamed_values() {
        let mut f = add_fn();
        f.body[0].result = ValueId::Arg(5);
        let v = validate(&f);
        assert!(v.iter().any(|v| v.kind == ViolationKind::Ssa && v.location == Location::Op(0)));
        f.body.clear();
        f.returns.clear();
        let v = validate(&f);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::EmptyBody);
    }
}
