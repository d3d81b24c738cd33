use super::validate::{Location, ViolationKind};
use super::{validate, GraphFunction, Opcode, OperationNode, TensorShape, ValueId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("{line}:{col}: expected {expected}, found {found}")]
    Syntax {
        line: usize,
        col: usize,
        expected: String,
        found: String,
    },
    #[error("{line}:{col}: unknown opcode `{name}`")]
    UnknownOpcode {
        line: usize,
        col: usize,
        name: String,
    },
    #[error("line {line}: {message}")]
    ArityMismatch { line: usize, message: String },
    #[error("line {line}: {message}")]
    ShapeRuleViolation { line: usize, message: String },
    #[error("line {line}: {message}")]
    SsaViolation { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Value(String),
    Symbol(String),
    Ident(String),
    Type(String),
    Punct(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Value(s) | Tok::Symbol(s) | Tok::Ident(s) | Tok::Type(s) => format!("`{s}`"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$'
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (tline, tcol) = (line, col);
        let start = i;
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let tok = match c {
            '(' | ')' | '{' | '}' | ',' | ':' | '=' => {
                i += 1;
                Tok::Punct(match c {
                    '(' => "(",
                    ')' => ")",
                    '{' => "{",
                    '}' => "}",
                    ',' => ",",
                    ':' => ":",
                    _ => "=",
                })
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                i += 2;
                Tok::Punct("->")
            }
            '%' | '@' => {
                i += 1;
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                if c == '%' {
                    Tok::Value(s)
                } else {
                    Tok::Symbol(s)
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                if word == "tensor" && chars.get(i) == Some(&'<') {
                    while i < chars.len() && chars[i] != '>' && chars[i] != '\n' {
                        i += 1;
                    }
                    if chars.get(i) != Some(&'>') {
                        return Err(ParseError::Syntax {
                            line: tline,
                            col: tcol,
                            expected: "`>` closing tensor type".into(),
                            found: "end of line".into(),
                        });
                    }
                    i += 1;
                    Tok::Type(chars[start..i].iter().collect())
                } else {
                    Tok::Ident(word)
                }
            }
            other => {
                return Err(ParseError::Syntax {
                    line: tline,
                    col: tcol,
                    expected: "a token".into(),
                    found: format!("`{other}`"),
                })
            }
        };
        col += i - start;
        out.push(Spanned {
            tok,
            line: tline,
            col: tcol,
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, at: &Spanned, expected: &str) -> ParseError {
        ParseError::Syntax {
            line: at.line,
            col: at.col,
            expected: expected.into(),
            found: at.tok.describe(),
        }
    }

    fn punct(&mut self, p: &'static str) -> Result<(), ParseError> {
        let t = self.next();
        if t.tok == Tok::Punct(p) {
            Ok(())
        } else {
            Err(self.error(&t, &format!("`{p}`")))
        }
    }

    fn eat_punct(&mut self, p: &'static str) -> bool {
        if self.peek().tok == Tok::Punct(p) {
            self.next();
            true
        } else {
            false
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if s == kw => Ok(()),
            _ => Err(self.error(&t, &format!("`{kw}`"))),
        }
    }

    fn value(&mut self) -> Result<ValueId, ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Value(s) => s
                .parse()
                .map_err(|_| self.error(&t, "SSA name `%<n>` or `%arg<k>`")),
            _ => Err(self.error(&t, "SSA value")),
        }
    }

    fn tensor_type(&mut self) -> Result<TensorShape, ParseError> {
        let t = self.next();
        match &t.tok {
            Tok::Type(s) => s.parse().map_err(|e| ParseError::Syntax {
                line: t.line,
                col: t.col,
                expected: "valid tensor type".into(),
                found: format!("`{s}` ({e})"),
            }),
            _ => Err(self.error(&t, "tensor type")),
        }
    }

    fn type_list(&mut self) -> Result<Vec<TensorShape>, ParseError> {
        self.punct("(")?;
        let mut types = Vec::new();
        if self.eat_punct(")") {
            return Ok(types);
        }
        loop {
            types.push(self.tensor_type()?);
            if self.eat_punct(")") {
                return Ok(types);
            }
            self.punct(",")?;
        }
    }
}

/// Parses one xpu-dialect function and checks all of its invariants.
pub fn parse_function(text: &str) -> Result<GraphFunction, ParseError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let f = parse_one(&mut p)?;
    let t = p.next();
    if t.tok != Tok::Eof {
        return Err(p.error(&t, "end of input"));
    }
    f.check()
}

/// Parses one or more functions written back to back.
pub fn parse_functions(text: &str) -> Result<Vec<GraphFunction>, ParseError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let mut out = vec![parse_one(&mut p)?];
    while p.peek().tok != Tok::Eof {
        out.push(parse_one(&mut p)?);
    }
    out.into_iter().map(Parsed::check).collect()
}

/// A syntactically complete function and the source lines needed to report
/// its semantic violations.
struct Parsed {
    f: GraphFunction,
    func_line: usize,
    op_lines: Vec<usize>,
    return_line: usize,
    declared_returns: Vec<TensorShape>,
}

fn parse_one(p: &mut Parser) -> Result<Parsed, ParseError> {
    let func_line = p.peek().line;
    p.keyword("func")?;
    let t = p.next();
    let name = match &t.tok {
        Tok::Symbol(s) if s.len() > 1 => s[1..].to_string(),
        _ => return Err(p.error(&t, "function name `@<name>`")),
    };

    p.punct("(")?;
    let mut args = Vec::new();
    if !p.eat_punct(")") {
        loop {
            let at = p.peek().clone();
            let id = p.value()?;
            if !matches!(id, ValueId::Arg(_)) {
                return Err(p.error(&at, "argument name `%arg<k>`"));
            }
            p.punct(":")?;
            args.push((id, p.tensor_type()?));
            if p.eat_punct(")") {
                break;
            }
            p.punct(",")?;
        }
    }
    p.punct("->")?;
    let declared_returns = if matches!(p.peek().tok, Tok::Type(_)) {
        vec![p.tensor_type()?]
    } else {
        p.type_list()?
    };
    p.punct("{")?;

    let mut body = Vec::new();
    let mut op_lines = Vec::new();
    loop {
        let head = p.peek().clone();
        match &head.tok {
            Tok::Ident(s) if s == "return" => break,
            Tok::Value(_) => {}
            _ => return Err(p.error(&head, "operation or `return`")),
        }
        let result = p.value()?;
        p.punct("=")?;
        let op_tok = p.next();
        let opcode = match &op_tok.tok {
            Tok::Ident(s) => {
                Opcode::from_qualified(s).ok_or_else(|| ParseError::UnknownOpcode {
                    line: op_tok.line,
                    col: op_tok.col,
                    name: s.clone(),
                })?
            }
            _ => return Err(p.error(&op_tok, "opcode `xpu.<name>`")),
        };
        let mut operands = Vec::new();
        if matches!(p.peek().tok, Tok::Value(_)) {
            loop {
                operands.push(p.value()?);
                if !p.eat_punct(",") {
                    break;
                }
            }
        }
        p.punct(":")?;
        let operand_shapes = p.type_list()?;
        p.punct("->")?;
        let result_shape = p.tensor_type()?;
        body.push(OperationNode {
            result,
            opcode,
            operands,
            operand_shapes,
            result_shape,
        });
        op_lines.push(head.line);
    }

    let return_line = p.peek().line;
    p.keyword("return")?;
    let mut returns = Vec::new();
    if matches!(p.peek().tok, Tok::Value(_)) {
        loop {
            returns.push(p.value()?);
            if !p.eat_punct(",") {
                break;
            }
        }
    }
    p.punct("}")?;

    Ok(Parsed {
        f: GraphFunction {
            name,
            args,
            body,
            returns,
        },
        func_line,
        op_lines,
        return_line,
        declared_returns,
    })
}

impl Parsed {
    fn check(self) -> Result<GraphFunction, ParseError> {
        let Parsed {
            f,
            func_line,
            op_lines,
            return_line,
            declared_returns,
        } = self;
        if let Some(v) = validate(&f).into_iter().next() {
            let line = match v.location {
                Location::Op(i) => op_lines[i],
                Location::Return(_) => return_line,
                Location::Function | Location::Arg(_) => func_line,
            };
            let message = v.to_string();
            return Err(match v.kind {
                ViolationKind::Arity => ParseError::ArityMismatch { line, message },
                ViolationKind::ShapeRule => ParseError::ShapeRuleViolation { line, message },
                ViolationKind::Ssa | ViolationKind::EmptyBody => {
                    ParseError::SsaViolation { line, message }
                }
            });
        }
        let actual_returns = f.return_shapes();
        if actual_returns != declared_returns {
            let fmt = |v: &[TensorShape]| {
                v.iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            return Err(ParseError::ShapeRuleViolation {
                line: return_line,
                message: format!(
                    "signature returns ({}), body returns ({})",
                    fmt(&declared_returns),
                    fmt(&actual_returns)
                ),
            });
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG2: &str = "\
// two inputs feeding a mult/add/relu chain
func @subgraph(%arg0: tensor<1x128x128xf32>, %arg1: tensor<1x128x128xf32>) -> (tensor<1x128x128xf32>) {
  %0 = xpu.mult %arg0, %arg1 : (tensor<1x128x128xf32>, tensor<1x128x128xf32>) -> tensor<1x128x128xf32>
  %1 = xpu.add %0, %arg1 : (tensor<1x128x128xf32>, tensor<1x128x128xf32>) -> tensor<1x128x128xf32>
  %2 = xpu.relu %1 : (tensor<1x128x128xf32>) -> tensor<1x128x128xf32>
  %3 = xpu.add %2, %0 : (tensor<1x128x128xf32>, tensor<1x128x128xf32>) -> tensor<1x128x128xf32>
  return %3
}
";

    #[test]
    fn parses_four_op_chain() {
        let f = parse_function(FIG2).unwrap();
        assert_eq!(f.name, "subgraph");
        assert_eq!(f.args.len(), 2);
        assert_eq!(f.body.len(), 4);
        let ops: Vec<_> = f.body.iter().map(|o| o.opcode).collect();
        assert_eq!(ops, [Opcode::Mult, Opcode::Add, Opcode::Relu, Opcode::Add]);
        assert_eq!(f.body[1].operands, [ValueId::Result(0), ValueId::Arg(1)]);
        assert_eq!(f.body[3].operands, [ValueId::Result(2), ValueId::Result(0)]);
        assert_eq!(f.returns, [ValueId::Result(3)]);
    }

    #[test]
    fn parses_several_functions() {
        let one = "func @one(%arg0: tensor<1xf32>) -> (tensor<1xf32>) { %0 = xpu.copy %arg0 : (tensor<1xf32>) -> tensor<1xf32> return %0 }";
        let fs = parse_functions(&format!("{FIG2}\n{one}\n")).unwrap();
        assert_eq!(fs.len(), 2);
        assert_eq!(fs[1].name, "one");
        assert!(parse_function(&format!("{FIG2}\n{one}")).is_err());
        assert!(parse_functions("").is_err());
    }

    #[test]
    fn parses_single_op_function() {
        let f = parse_function(
            "func @one(%arg0: tensor<1xf32>) -> (tensor<1xf32>) { %0 = xpu.copy %arg0 : (tensor<1xf32>) -> tensor<1xf32> return %0 }",
        )
        .unwrap();
        assert_eq!(f.body.len(), 1);
        assert_eq!(f.returns, [ValueId::Result(0)]);
    }

    #[test]
    fn use_before_def_is_ssa_violation() {
        let err = parse_function(
            "func @f(%arg0: tensor<1xf32>) -> (tensor<1xf32>) {\n\
             %0 = xpu.copy %5 : (tensor<1xf32>) -> tensor<1xf32>\n\
             return %0\n}",
        )
        .unwrap_err();
        assert!(
            matches!(err, ParseError::SsaViolation { line: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn error_kinds() {
        let wrap = |op: &str| {
            format!("func @f(%arg0: tensor<2x2xf32>) -> (tensor<2x2xf32>) {{\n{op}\nreturn %0\n}}")
        };
        assert!(matches!(
            parse_function(&wrap(
                "%0 = xpu.conv %arg0 : (tensor<2x2xf32>) -> tensor<2x2xf32>"
            )),
            Err(ParseError::UnknownOpcode {
                line: 2,
                col: 6,
                ..
            })
        ));
        assert!(matches!(
            parse_function(&wrap(
                "%0 = xpu.add %arg0 : (tensor<2x2xf32>) -> tensor<2x2xf32>"
            )),
            Err(ParseError::ArityMismatch { line: 2, .. })
        ));
        assert!(matches!(
            parse_function(&wrap(
                "%0 = xpu.reduce_sum %arg0 : (tensor<2x2xf32>) -> tensor<2x2xf32>"
            )),
            Err(ParseError::ShapeRuleViolation { line: 2, .. })
        ));
        assert!(matches!(
            parse_function(&wrap("%0 = xpu.relu %arg0 (tensor<2x2xf32>) -> tensor<2x2xf32>")),
            Err(ParseError::Syntax { line: 2, expected, .. }) if expected == "`:`"
        ));
        let err = parse_function(&wrap(
            "%0 = xpu.reduce_sum %arg0 : (tensor<2x2xf32>) -> tensor<2xf32>",
        ))
        .unwrap_err();
        assert!(
            matches!(err, ParseError::ShapeRuleViolation { line: 3, .. }),
            "{err}"
        );
    }

    #[test]
    fn redefinition_is_ssa_violation() {
        let err = parse_function(
            "func @f(%arg0: tensor<1xf32>) -> (tensor<1xf32>) {\n\
             %0 = xpu.copy %arg0 : (tensor<1xf32>) -> tensor<1xf32>\n\
             %0 = xpu.copy %arg0 : (tensor<1xf32>) -> tensor<1xf32>\n\
             return %0\n}",
        )
        .unwrap_err();
        assert!(
            matches!(err, ParseError::SsaViolation { line: 3, .. }),
            "{err}"
        );
    }

    #[test]
    fn syntax_errors_carry_positions() {
        assert!(matches!(
            parse_function(""),
            Err(ParseError::Syntax {
                line: 1,
                col: 1,
                ..
            })
        ));
        assert!(matches!(
            parse_function("func @f() -> () {\n  return\n} trailing"),
            Err(ParseError::Syntax {
                line: 3,
                col: 3,
                ..
            })
        ));
        assert!(matches!(
            parse_function("func @f(%arg0: tensor<1xf32) -> () {}"),
            Err(ParseError::Syntax { .. })
        ));
        assert!(parse_function("func @f(%arg0: tensor<1xf32>) -> ( { ").is_err());
    }

    #[test]
    fn whitespace_and_comments_are_insignificant() {
        let squeezed = FIG2
            .lines()
            .filter(|l| !l.starts_with("//"))
            .map(|l| format!("{l} // note"))
            .collect::<Vec<_>>()
            .join("\n   ");
        assert_eq!(
            parse_function(&squeezed).unwrap(),
            parse_function(FIG2).unwrap()
        );
    }
}
