//! A minimal xpu-dialect IR: straight-line SSA functions over tensor values.
//!
//! Text goes through [`parse_function`], comes back out through [`emit_text`],
//! and [`validate`] reports every broken invariant of a hand-built
//! [`GraphFunction`].

mod emit;
mod parse;
mod shape;
mod validate;

use std::fmt;
use std::str::FromStr;

pub use emit::{canonicalize, emit_text, emit_text_with_names, EmitError};
pub use parse::{parse_function, parse_functions, ParseError};
pub use shape::{check_result_shape, infer_result_shape, ShapeRuleError};
pub use validate::{validate, Violation, ViolationKind};

/// Upper bound on the element count of a single tensor.
pub const MAX_ELEMENTS: u64 = 1 << 48;

/// Element types understood by the dialect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DType {
    F32,
    F16,
    BF16,
    I32,
    I8,
}

impl DType {
    pub const ALL: [DType; 5] = [DType::F32, DType::F16, DType::BF16, DType::I32, DType::I8];

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F16 => "f16",
            DType::BF16 => "bf16",
            DType::I32 => "i32",
            DType::I8 => "i8",
        }
    }

    pub fn byte_width(self) -> u64 {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F16 | DType::BF16 => 2,
            DType::I8 => 1,
        }
    }

    pub fn from_name(name: &str) -> Option<DType> {
        DType::ALL.into_iter().find(|d| d.name() == name)
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("tensor type has no dimensions")]
    NoDims,
    #[error("tensor dimension {0} is zero")]
    ZeroDim(usize),
    #[error("tensor has more than 2^48 elements")]
    TooLarge,
    #[error("malformed tensor type `{0}`")]
    Malformed(String),
    #[error("unknown element type `{0}`")]
    UnknownDType(String),
}

/// A ranked tensor type such as `tensor<1x128x128xf32>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorShape {
    dims: Vec<u64>,
    dtype: DType,
}

impl TensorShape {
    pub fn new(dims: Vec<u64>, dtype: DType) -> Result<Self, ShapeError> {
        if dims.is_empty() {
            return Err(ShapeError::NoDims);
        }
        let mut count: u64 = 1;
        for (i, &d) in dims.iter().enumerate() {
            if d == 0 {
                return Err(ShapeError::ZeroDim(i));
            }
            count = count
                .checked_mul(d)
                .filter(|&c| c <= MAX_ELEMENTS)
                .ok_or(ShapeError::TooLarge)?;
        }
        Ok(TensorShape { dims, dtype })
    }

    pub fn dims(&self) -> &[u64] {
        &self.dims
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn num_elements(&self) -> u64 {
        self.dims.iter().product()
    }

    pub fn size_bytes(&self) -> u64 {
        self.num_elements() * self.dtype.byte_width()
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("tensor<")?;
        for d in &self.dims {
            write!(f, "{d}x")?;
        }
        write!(f, "{}>", self.dtype)
    }
}

impl FromStr for TensorShape {
    type Err = ShapeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || ShapeError::Malformed(s.to_string());
        let inner = s
            .trim()
            .strip_prefix("tensor<")
            .and_then(|r| r.strip_suffix('>'))
            .ok_or_else(malformed)?;
        let mut parts: Vec<&str> = inner.split('x').map(str::trim).collect();
        let dtype_name = parts.pop().ok_or_else(malformed)?;
        let dtype =
            DType::from_name(dtype_name).ok_or_else(|| ShapeError::UnknownDType(dtype_name.into()))?;
        let dims = parts
            .iter()
            .map(|p| {
                if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(malformed());
                }
                p.parse::<u64>().map_err(|_| ShapeError::TooLarge)
            })
            .collect::<Result<Vec<_>, _>>()?;
        TensorShape::new(dims, dtype)
    }
}

/// The closed set of xpu operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Mult,
    Add,
    Sub,
    Matmul,
    Relu,
    Sigmoid,
    Tanh,
    ReduceSum,
    Transpose,
    Reshape,
    Copy,
    Load,
    Store,
}

impl Opcode {
    pub const ALL: [Opcode; 13] = [
        Opcode::Mult,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Matmul,
        Opcode::Relu,
        Opcode::Sigmoid,
        Opcode::Tanh,
        Opcode::ReduceSum,
        Opcode::Transpose,
        Opcode::Reshape,
        Opcode::Copy,
        Opcode::Load,
        Opcode::Store,
    ];

    /// Short name without the dialect prefix.
    pub fn name(self) -> &'static str {
        match self {
            Opcode::Mult => "mult",
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Matmul => "matmul",
            Opcode::Relu => "relu",
            Opcode::Sigmoid => "sigmoid",
            Opcode::Tanh => "tanh",
            Opcode::ReduceSum => "reduce_sum",
            Opcode::Transpose => "transpose",
            Opcode::Reshape => "reshape",
            Opcode::Copy => "copy",
            Opcode::Load => "load",
            Opcode::Store => "store",
        }
    }

    /// Qualified name, e.g. `xpu.mult`.
    pub fn qualified_name(self) -> String {
        format!("xpu.{}", self.name())
    }

    pub fn from_name(name: &str) -> Option<Opcode> {
        Opcode::ALL.into_iter().find(|o| o.name() == name)
    }

    pub fn from_qualified(name: &str) -> Option<Opcode> {
        name.strip_prefix("xpu.").and_then(Opcode::from_name)
    }

    pub fn arity(self) -> usize {
        match self {
            Opcode::Mult | Opcode::Add | Opcode::Sub | Opcode::Matmul => 2,
            _ => 1,
        }
    }

    pub fn is_elementwise(self) -> bool {
        matches!(
            self,
            Opcode::Mult
                | Opcode::Add
                | Opcode::Sub
                | Opcode::Relu
                | Opcode::Sigmoid
                | Opcode::Tanh
                | Opcode::Copy
                | Opcode::Load
                | Opcode::Store
        )
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "xpu.{}", self.name())
    }
}

/// An SSA value name: `%arg<k>` for arguments, `%<n>` for op results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValueId {
    Arg(u32),
    Result(u32),
}

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueId::Arg(k) => write!(f, "%arg{k}"),
            ValueId::Result(n) => write!(f, "%{n}"),
        }
    }
}

impl FromStr for ValueId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let rest = s.strip_prefix('%').ok_or(())?;
        let (digits, is_arg) = match rest.strip_prefix("arg") {
            Some(d) => (d, true),
            None => (rest, false),
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(());
        }
        let n: u32 = digits.parse().map_err(|_| ())?;
        Ok(if is_arg { ValueId::Arg(n) } else { ValueId::Result(n) })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OperationNode {
    pub result: ValueId,
    pub opcode: Opcode,
    pub operands: Vec<ValueId>,
    pub operand_shapes: Vec<TensorShape>,
    pub result_shape: TensorShape,
}

/// One dataflow function: the unit a cost model predicts for.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GraphFunction {
    pub name: String,
    pub args: Vec<(ValueId, TensorShape)>,
    pub body: Vec<OperationNode>,
    pub returns: Vec<ValueId>,
}

/// Where a value comes from within its function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Def {
    Arg(usize),
    Op(usize),
}

impl GraphFunction {
    /// Maps every defined value to its definition site. Later definitions of a
    /// duplicated name win; callers that care run [`validate`] first.
    pub fn def_sites(&self) -> std::collections::HashMap<ValueId, Def> {
        let mut sites = std::collections::HashMap::new();
        for (i, (id, _)) in self.args.iter().enumerate() {
            sites.insert(*id, Def::Arg(i));
        }
        for (i, op) in self.body.iter().enumerate() {
            sites.insert(op.result, Def::Op(i));
        }
        sites
    }

    pub fn shape_of(&self, def: Def) -> &TensorShape {
        match def {
            Def::Arg(i) => &self.args[i].1,
            Def::Op(i) => &self.body[i].result_shape,
        }
    }

    /// Shapes of the returned values, in return order.
    pub fn return_shapes(&self) -> Vec<TensorShape> {
        let sites = self.def_sites();
        self.returns
            .iter()
            .filter_map(|r| sites.get(r).map(|d| self.shape_of(*d).clone()))
            .collect()
    }
}
