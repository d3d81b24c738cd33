//! Random straight-line dataflow functions.
//!
//! Each function gets its own ChaCha stream keyed by `(seed, index)`, so any
//! single function can be regenerated without the ones before it.

use std::ops::RangeInclusive;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, Sample, TargetKind};
use crate::ir::{infer_result_shape, DType, GraphFunction, OperationNode, Opcode, TensorShape, ValueId};
use crate::oracle::MachineConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    /// Number of functions; each yields one sample per target kind.
    pub num_samples: usize,
    pub op_count_range: RangeInclusive<usize>,
    pub shape_pool: Vec<TensorShape>,
    pub opcode_weights: Vec<(Opcode, f64)>,
    pub seed: u64,
}

/// 8 dimension tuples in each of f32, f16 and i8.
pub fn default_shape_pool() -> Vec<TensorShape> {
    let dims: [&[u64]; 8] = [
        &[256],
        &[8, 32],
        &[16, 16],
        &[32, 64],
        &[64, 64],
        &[8, 16, 32],
        &[1, 64, 128],
        &[1, 128, 128],
    ];
    let mut pool = Vec::new();
    for dtype in [DType::F32, DType::F16, DType::I8] {
        for d in dims {
            pool.push(TensorShape::new(d.to_vec(), dtype).expect("static shape"));
        }
    }
    pool
}

pub fn default_opcode_weights() -> Vec<(Opcode, f64)> {
    use Opcode::*;
    vec![
        (Mult, 3.0),
        (Add, 3.0),
        (Sub, 2.0),
        (Matmul, 2.0),
        (Relu, 2.0),
        (Sigmoid, 1.0),
        (Tanh, 1.0),
        (ReduceSum, 1.0),
        (Transpose, 1.0),
        (Reshape, 1.0),
        (Copy, 1.0),
        (Load, 1.0),
        (Store, 1.0),
    ]
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_samples: 1000,
            op_count_range: 3..=40,
            shape_pool: default_shape_pool(),
            opcode_weights: default_opcode_weights(),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn check(&self) -> Result<(), DatasetError> {
        let err = |m: &str| Err(DatasetError::Config(m.into()));
        if self.op_count_range.is_empty() || *self.op_count_range.start() == 0 {
            return err("op_count_range must be a non-empty range of positive counts");
        }
        if self.shape_pool.is_empty() {
            return err("shape_pool is empty");
        }
        if self.opcode_weights.is_empty() {
            return err("opcode_weights is empty");
        }
        if self.opcode_weights.iter().any(|(_, w)| !(w.is_finite() && *w > 0.0)) {
            return err("opcode weights must be positive and finite");
        }
        Ok(())
    }
}

struct Builder<'a, R: Rng> {
    rng: &'a mut R,
    pool: &'a [TensorShape],
    args: Vec<TensorShape>,
    body: Vec<OperationNode>,
    /// Every value currently in scope, with its type.
    scope: Vec<(ValueId, TensorShape)>,
}

impl<R: Rng> Builder<'_, R> {
    fn fresh_arg(&mut self, shape: TensorShape) -> (ValueId, TensorShape) {
        let id = ValueId::Arg(self.args.len() as u32);
        self.args.push(shape.clone());
        self.scope.push((id, shape.clone()));
        (id, shape)
    }

    fn pick(&mut self, candidates: &[(ValueId, TensorShape)]) -> Option<(ValueId, TensorShape)> {
        if candidates.is_empty() {
            None
        } else {
            Some(candidates[self.rng.random_range(0..candidates.len())].clone())
        }
    }

    fn pick_where(&mut self, pred: impl Fn(&TensorShape) -> bool) -> Option<(ValueId, TensorShape)> {
        let c: Vec<_> = self.scope.iter().filter(|(_, s)| pred(s)).cloned().collect();
        self.pick(&c)
    }

    fn any_value(&mut self) -> (ValueId, TensorShape) {
        self.pick_where(|_| true).expect("scope always holds an argument")
    }

    fn pool_shape_where(&mut self, pred: impl Fn(&TensorShape) -> bool) -> Option<TensorShape> {
        let c: Vec<_> = self.pool.iter().filter(|s| pred(s)).cloned().collect();
        if c.is_empty() {
            None
        } else {
            Some(c[self.rng.random_range(0..c.len())].clone())
        }
    }

    fn rank2_value(&mut self) -> (ValueId, TensorShape) {
        match self.pick_where(|s| s.rank() >= 2) {
            Some(v) => v,
            None => {
                let shape = self
                    .pool_shape_where(|s| s.rank() >= 2)
                    .unwrap_or_else(|| TensorShape::new(vec![8, 8], DType::F32).expect("static"));
                self.fresh_arg(shape)
            }
        }
    }

    fn push_op(&mut self, opcode: Opcode, operands: Vec<(ValueId, TensorShape)>, result_shape: TensorShape) {
        let id = ValueId::Result(self.body.len() as u32);
        self.scope.push((id, result_shape.clone()));
        self.body.push(OperationNode {
            result: id,
            opcode,
            operands: operands.iter().map(|(id, _)| *id).collect(),
            operand_shapes: operands.into_iter().map(|(_, s)| s).collect(),
            result_shape,
        });
    }

    fn add_op(&mut self, opcode: Opcode) {
        let operands = match opcode {
            Opcode::Matmul => {
                let lhs = self.rank2_value();
                let r = lhs.1.rank();
                let k = lhs.1.dims()[r - 1];
                let batch = lhs.1.dims()[..r - 2].to_vec();
                let dtype = lhs.1.dtype();
                let rhs = match self.pick_where(|s| {
                    s.rank() == r && s.dtype() == dtype && s.dims()[..r - 2] == batch[..] && s.dims()[r - 2] == k
                }) {
                    Some(v) => v,
                    None => {
                        let mut dims = batch.clone();
                        dims.extend([k, k]);
                        self.fresh_arg(TensorShape::new(dims, dtype).expect("square of existing dims"))
                    }
                };
                vec![lhs, rhs]
            }
            Opcode::Transpose => vec![self.rank2_value()],
            _ if opcode.arity() == 2 => {
                let a = self.any_value();
                let others: Vec<_> = self
                    .scope
                    .iter()
                    .filter(|(id, s)| *id != a.0 && *s == a.1)
                    .cloned()
                    .collect();
                let b = match self.pick(&others) {
                    Some(b) => b,
                    None => self.fresh_arg(a.1.clone()),
                };
                vec![a, b]
            }
            _ => vec![self.any_value()],
        };
        let shapes: Vec<TensorShape> = operands.iter().map(|(_, s)| s.clone()).collect();
        let result = match infer_result_shape(opcode, &shapes).expect("operands chosen to fit the rule") {
            Some(s) => s,
            None => {
                let from = &shapes[0];
                self.pool_shape_where(|s| {
                    s.dtype() == from.dtype() && s.num_elements() == from.num_elements() && s != from
                })
                .unwrap_or_else(|| {
                    let dims = if from.rank() > 1 {
                        vec![from.num_elements()]
                    } else {
                        vec![1, from.num_elements()]
                    };
                    TensorShape::new(dims, from.dtype()).expect("same element count")
                })
            }
        };
        self.push_op(opcode, operands, result);
    }
}

/// Generates function number `index` of the corpus described by `config`.
pub fn generate_one(config: &GeneratorConfig, index: u64) -> GraphFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    let weights = WeightedIndex::new(config.opcode_weights.iter().map(|(_, w)| *w))
        .expect("weights checked positive");
    let n_ops = rng.random_range(config.op_count_range.clone());
    let n_args = rng.random_range(1..=2usize);
    let mut b = Builder {
        rng: &mut rng,
        pool: &config.shape_pool,
        args: Vec::new(),
        body: Vec::new(),
        scope: Vec::new(),
    };
    for _ in 0..n_args {
        let shape = b.pool[b.rng.random_range(0..b.pool.len())].clone();
        b.fresh_arg(shape);
    }
    for _ in 0..n_ops {
        let opcode = config.opcode_weights[weights.sample(b.rng)].0;
        b.add_op(opcode);
    }
    let (args, body) = (b.args, b.body);

    let mut used = vec![false; args.len()];
    let mut result_used = vec![false; body.len()];
    for op in &body {
        for id in &op.operands {
            match id {
                ValueId::Arg(k) => used[*k as usize] = true,
                ValueId::Result(n) => result_used[*n as usize] = true,
            }
        }
    }
    // Drop arguments nothing reads and return every sink.
    let mut remap = vec![0u32; args.len()];
    let mut kept = Vec::new();
    for (k, shape) in args.into_iter().enumerate() {
        if used[k] {
            remap[k] = kept.len() as u32;
            kept.push((ValueId::Arg(kept.len() as u32), shape));
        }
    }
    let body = body
        .into_iter()
        .map(|mut op| {
            for id in op.operands.iter_mut() {
                if let ValueId::Arg(k) = id {
                    *id = ValueId::Arg(remap[*k as usize]);
                }
            }
            op
        })
        .collect::<Vec<_>>();
    let returns = (0..body.len())
        .filter(|&i| !result_used[i])
        .map(|i| ValueId::Result(i as u32))
        .collect();
    GraphFunction {
        name: format!("f{index}"),
        args: kept,
        body,
        returns,
    }
}

pub fn generate_functions(config: &GeneratorConfig) -> Result<Vec<GraphFunction>, DatasetError> {
    config.check()?;
    Ok((0..config.num_samples as u64).map(|i| generate_one(config, i)).collect())
}

/// Two samples per generated function: register pressure, then utilization.
pub fn generate(config: &GeneratorConfig, machine: &MachineConfig) -> Result<Vec<Sample>, DatasetError> {
    let mut out = Vec::with_capacity(config.num_samples * 2);
    for f in generate_functions(config)? {
        for kind in TargetKind::ALL {
            out.push(Sample::labelled(&f, kind, machine).expect("generated functions are valid"));
        }
    }
    Ok(out)
}
