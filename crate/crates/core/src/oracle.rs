//! Analytical ground truth for the two prediction targets.
//!
//! Register pressure is the peak, over program points, of the summed register
//! footprint of live values. A value's footprint is its byte size divided by
//! the register width, rounded up. Each op is one program point. Arguments are
//! live from function entry, results from their defining op, and both stay
//! live through their last use (returned values through the end of the body).
//! A value that is never used or returned occupies nothing.
//!
//! Vector-ALU utilization is the share of instruction slots spent on opcodes
//! the machine executes on its vector ALU.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::ir::{validate, Def, GraphFunction, Opcode, TensorShape, Violation};
use crate::kv::{self, KvError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("function is invalid: {}", .0[0])]
    InvalidFunction(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MachineConfigError {
    #[error(transparent)]
    Syntax(#[from] KvError),
    #[error("unknown machine config key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: {message}")]
    BadValue { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineConfig {
    pub register_width_bytes: u64,
    pub vector_alu_ops: BTreeSet<Opcode>,
    slot_cost: HashMap<Opcode, u64>,
}

impl Default for MachineConfig {
    fn default() -> Self {
        use Opcode::*;
        let slot_cost = Opcode::ALL
            .into_iter()
            .map(|op| (op, if op == Matmul { 4 } else { 1 }))
            .collect();
        MachineConfig {
            register_width_bytes: 64,
            vector_alu_ops: [Mult, Add, Sub, Relu, Sigmoid, Tanh, ReduceSum].into_iter().collect(),
            slot_cost,
        }
    }
}

impl MachineConfig {
    pub fn slot_cost(&self, op: Opcode) -> u64 {
        self.slot_cost[&op]
    }

    pub fn set_slot_cost(&mut self, op: Opcode, cost: u64) {
        assert!(cost > 0, "slot costs are positive");
        self.slot_cost.insert(op, cost);
    }

    /// Registers needed to hold one value of this type.
    pub fn footprint(&self, shape: &TensorShape) -> u64 {
        shape.size_bytes().div_ceil(self.register_width_bytes)
    }

    /// Parses `key = value` text. Keys not given keep their defaults.
    ///
    /// Recognized keys: `register_width_bytes`, `vector_alu_ops` (comma list of
    /// op names) and `slot_cost.<op>`.
    pub fn from_text(text: &str) -> Result<Self, MachineConfigError> {
        let mut m = MachineConfig::default();
        for (key, value) in kv::parse(text)? {
            let bad = |message: String| MachineConfigError::BadValue {
                key: key.clone(),
                message,
            };
            let positive = |v: &str| match v.parse::<u64>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(bad(format!("expected a positive integer, got `{v}`"))),
            };
            if key == "register_width_bytes" {
                m.register_width_bytes = positive(&value)?;
            } else if key == "vector_alu_ops" {
                m.vector_alu_ops = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        Opcode::from_name(s.strip_prefix("xpu.").unwrap_or(s))
                            .ok_or_else(|| bad(format!("unknown opcode `{s}`")))
                    })
                    .collect::<Result<_, _>>()?;
            } else if let Some(op) = key.strip_prefix("slot_cost.") {
                let op = Opcode::from_name(op.strip_prefix("xpu.").unwrap_or(op))
                    .ok_or_else(|| bad(format!("unknown opcode `{op}`")))?;
                m.slot_cost.insert(op, positive(&value)?);
            } else {
                return Err(MachineConfigError::UnknownKey(key));
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let alu = self
            .vector_alu_ops
            .iter()
            .map(|o| o.name())
            .collect::<Vec<_>>()
            .join(", ");
        let mut pairs = vec![
            ("register_width_bytes".to_string(), self.register_width_bytes.to_string()),
            ("vector_alu_ops".to_string(), alu),
        ];
        for op in Opcode::ALL {
            pairs.push((format!("slot_cost.{}", op.name()), self.slot_cost(op).to_string()));
        }
        kv::render(pairs)
    }
}

/// Vector-ALU slots over total slots, kept as integers so the ratio is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Utilization {
    pub vector_slots: u64,
    pub total_slots: u64,
}

impl Utilization {
    pub fn value(self) -> f64 {
        if self.total_slots == 0 {
            0.0
        } else {
            self.vector_slots as f64 / self.total_slots as f64
        }
    }
}

impl fmt::Display for Utilization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.vector_slots, self.total_slots)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostReport {
    pub register_pressure: u64,
    pub xpu_utilization: Utilization,
}

fn check(f: &GraphFunction) -> Result<(), OracleError> {
    let v = validate(f);
    if v.is_empty() {
        Ok(())
    } else {
        Err(OracleError::InvalidFunction(v))
    }
}

/// Per-value live interval `[start, end]` over op indices plus footprint.
/// Dead values are omitted.
pub(crate) fn live_intervals(f: &GraphFunction, m: &MachineConfig) -> Vec<(usize, usize, u64)> {
    let n = f.body.len();
    let sites = f.def_sites();
    let mut last_use: HashMap<Def, usize> = HashMap::new();
    for (i, op) in f.body.iter().enumerate() {
        for id in &op.operands {
            let e = last_use.entry(sites[id]).or_insert(i);
            *e = (*e).max(i);
        }
    }
    for id in &f.returns {
        last_use.insert(sites[id], n);
    }
    let mut out = Vec::new();
    let defs = (0..f.args.len()).map(Def::Arg).chain((0..n).map(Def::Op));
    for def in defs {
        if let Some(&end) = last_use.get(&def) {
            let start = match def {
                Def::Arg(_) => 0,
                Def::Op(i) => i,
            };
            out.push((start, end.min(n - 1), m.footprint(f.shape_of(def))));
        }
    }
    out
}

/// Peak footprint-weighted count of simultaneously live values.
pub fn register_pressure(f: &GraphFunction, m: &MachineConfig) -> Result<u64, OracleError> {
    check(f)?;
    let n = f.body.len();
    let mut delta = vec![0i128; n + 1];
    for (start, end, fp) in live_intervals(f, m) {
        delta[start] += fp as i128;
        delta[end + 1] -= fp as i128;
    }
    let mut live = 0i128;
    let mut peak = 0i128;
    for d in &delta[..n] {
        live += d;
        peak = peak.max(live);
    }
    Ok(peak as u64)
}

pub fn vector_alu_utilization(f: &GraphFunction, m: &MachineConfig) -> Result<Utilization, OracleError> {
    check(f)?;
    let mut u = Utilization {
        vector_slots: 0,
        total_slots: 0,
    };
    for op in &f.body {
        let cost = m.slot_cost(op.opcode);
        u.total_slots += cost;
        if m.vector_alu_ops.contains(&op.opcode) {
            u.vector_slots += cost;
        }
    }
    Ok(u)
}

pub fn cost_report(f: &GraphFunction, m: &MachineConfig) -> Result<CostReport, OracleError> {
    Ok(CostReport {
        register_pressure: register_pressure(f, m)?,
        xpu_utilization: vector_alu_utilization(f, m)?,
    })
}
