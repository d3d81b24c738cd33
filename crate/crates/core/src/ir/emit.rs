use std::collections::HashMap;
use std::fmt::Write;

use super::{validate, GraphFunction, ValueId, Violation};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EmitError {
    #[error("cannot emit invalid function ({} violation(s), first: {})", .0.len(), .0[0])]
    InvalidFunction(Vec<Violation>),
}

/// Renames arguments to `%arg<position>` and results to `%<body index>`.
///
/// `f` must be valid; otherwise names that do not resolve are left as-is.
pub fn canonicalize(f: &GraphFunction) -> GraphFunction {
    let mut rename: HashMap<ValueId, ValueId> = HashMap::new();
    for (i, (id, _)) in f.args.iter().enumerate() {
        rename.insert(*id, ValueId::Arg(i as u32));
    }
    for (i, op) in f.body.iter().enumerate() {
        rename.insert(op.result, ValueId::Result(i as u32));
    }
    let map = |id: &ValueId| rename.get(id).copied().unwrap_or(*id);
    GraphFunction {
        name: f.name.clone(),
        args: f.args.iter().map(|(id, s)| (map(id), s.clone())).collect(),
        body: f
            .body
            .iter()
            .map(|op| {
                let mut op = op.clone();
                op.result = map(&op.result);
                op.operands = op.operands.iter().map(map).collect();
                op
            })
            .collect(),
        returns: f.returns.iter().map(map).collect(),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// Renders `f` in canonical form: dense names, one op per line, two-space
/// indent, trailing newline.
pub fn emit_text(f: &GraphFunction) -> Result<String, EmitError> {
    let violations = validate(f);
    if !violations.is_empty() {
        return Err(EmitError::InvalidFunction(violations));
    }
    emit_text_with_names(&canonicalize(f))
}

/// Same layout as [`emit_text`] but keeps the function's own SSA names.
pub fn emit_text_with_names(f: &GraphFunction) -> Result<String, EmitError> {
    let violations = validate(f);
    if !violations.is_empty() {
        return Err(EmitError::InvalidFunction(violations));
    }
    let mut out = String::new();
    let args = f
        .args
        .iter()
        .map(|(id, s)| format!("{id}: {s}"))
        .collect::<Vec<_>>()
        .join(", ");
    let _ = writeln!(out, "func @{}({}) -> ({}) {{", f.name, args, join(&f.return_shapes()));
    for op in &f.body {
        let _ = write!(out, "  {} = {}", op.result, op.opcode);
        if !op.operands.is_empty() {
            let _ = write!(out, " {}", join(&op.operands));
        }
        let _ = writeln!(out, " : ({}) -> {}", join(&op.operand_shapes), op.result_shape);
    }
    if f.returns.is_empty() {
        out.push_str("  return\n");
    } else {
        let _ = writeln!(out, "  return {}", join(&f.returns));
    }
    out.push_str("}\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_function;

    #[test]
    fn single_op_emission() {
        let f = parse_function(
            "func @one(%arg0: tensor<1xf32>) -> (tensor<1xf32>) { %0 = xpu.copy %arg0 : (tensor<1xf32>) -> tensor<1xf32> return %0 }",
        )
        .unwrap();
        assert_eq!(
            emit_text(&f).unwrap(),
            "func @one(%arg0: tensor<1xf32>) -> (tensor<1xf32>) {\n  \
             %0 = xpu.copy %arg0 : (tensor<1xf32>) -> tensor<1xf32>\n  \
             return %0\n}\n"
        );
    }

    #[test]
    fn renumbers_densely() {
        let src = "func @f(%arg7: tensor<2xi8>, %arg3: tensor<2xi8>) -> (tensor<2xi8>) {\n\
                   %40 = xpu.sub %arg3, %arg7 : (tensor<2xi8>, tensor<2xi8>) -> tensor<2xi8>\n\
                   %2 = xpu.tanh %40 : (tensor<2xi8>) -> tensor<2xi8>\n\
                   return %2\n}";
        let f = parse_function(src).unwrap();
        let text = emit_text(&f).unwrap();
        assert!(text.contains("%0 = xpu.sub %arg1, %arg0"), "{text}");
        assert!(text.contains("%1 = xpu.tanh %0"), "{text}");
        let again = parse_function(&text).unwrap();
        assert_eq!(again, canonicalize(&f));
        assert_eq!(emit_text(&again).unwrap(), text);
    }

    #[test]
    fn refuses_invalid_function() {
        let mut f = parse_function(
            "func @one(%arg0: tensor<1xf32>) -> (tensor<1xf32>) { %0 = xpu.copy %arg0 : (tensor<1xf32>) -> tensor<1xf32> return %0 }",
        )
        .unwrap();
        f.returns.push(ValueId::Result(3));
        assert!(matches!(emit_text(&f), Err(EmitError::InvalidFunction(v)) if v.len() == 1));
    }
}
