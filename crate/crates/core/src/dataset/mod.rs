//! Samples, CSV files, synthetic corpora, augmentation and splits.

mod augment;
mod csvio;
mod generate;
mod split;

use std::fmt;
use std::str::FromStr;

pub use augment::{augment, AugmentPolicy};
pub use csvio::{load_csv, read_csv, write_csv, write_csv_to, CSV_HEADER};
pub use generate::{generate, generate_functions, generate_one, GeneratorConfig};
pub use split::{holdout, split};

use crate::ir::{emit_text, parse_function, GraphFunction, ParseError};
use crate::oracle::{self, MachineConfig, OracleError};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv row {row}, column {column}: {message}")]
    CsvFormat {
        row: usize,
        column: String,
        message: String,
    },
    #[error("row {row}: {message}")]
    Validation { row: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// The hardware characteristic a sample is labelled with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TargetKind {
    RegisterPressure,
    XpuUtilization,
}

impl TargetKind {
    pub const ALL: [TargetKind; 2] = [TargetKind::RegisterPressure, TargetKind::XpuUtilization];

    /// Name used in CSV files.
    pub fn name(self) -> &'static str {
        match self {
            TargetKind::RegisterPressure => "RegisterPressure",
            TargetKind::XpuUtilization => "XpuUtilization",
        }
    }

    /// Name used on the command line.
    pub fn flag_name(self) -> &'static str {
        match self {
            TargetKind::RegisterPressure => "register-pressure",
            TargetKind::XpuUtilization => "xpu-utilization",
        }
    }

    /// Oracle label for `f`.
    pub fn label(self, f: &GraphFunction, m: &MachineConfig) -> Result<f64, OracleError> {
        Ok(match self {
            TargetKind::RegisterPressure => oracle::register_pressure(f, m)? as f64,
            TargetKind::XpuUtilization => oracle::vector_alu_utilization(f, m)?.value(),
        })
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TargetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        TargetKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.flag_name() == s)
            .ok_or_else(|| format!("unknown target kind `{s}`"))
    }
}

/// One CSV row: IR text, its boundary shapes, and a label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub ir_text: String,
    pub shape_summary: String,
    pub target_kind: TargetKind,
    pub target_value: f64,
}

/// `in,in,...->out,...` over the tensor types at the function boundary.
pub fn shape_summary(f: &GraphFunction) -> String {
    let join = |v: Vec<String>| v.join(",");
    format!(
        "{}->{}",
        join(f.args.iter().map(|(_, s)| s.to_string()).collect()),
        join(f.return_shapes().iter().map(ToString::to_string).collect())
    )
}

impl Sample {
    /// Labels `f` with the oracle and renders it canonically.
    pub fn labelled(f: &GraphFunction, kind: TargetKind, m: &MachineConfig) -> Result<Self, OracleError> {
        let target_value = kind.label(f, m)?;
        Ok(Sample {
            ir_text: emit_text(f).map_err(|crate::ir::EmitError::InvalidFunction(v)| OracleError::InvalidFunction(v))?,
            shape_summary: shape_summary(f),
            target_kind: kind,
            target_value,
        })
    }

    pub fn function(&self) -> Result<GraphFunction, ParseError> {
        parse_function(&self.ir_text)
    }

    /// Checks the sample invariants: parseable IR, matching shape summary,
    /// label in range.
    pub fn check(&self) -> Result<GraphFunction, String> {
        let f = self.function().map_err(|e| format!("ir_text does not parse: {e}"))?;
        let expected = shape_summary(&f);
        if self.shape_summary != expected {
            return Err(format!(
                "shape_summary `{}` does not match ir_text (`{expected}`)",
                self.shape_summary
            ));
        }
        if !self.target_value.is_finite() || self.target_value < 0.0 {
            return Err(format!("target_value {} must be finite and >= 0", self.target_value));
        }
        if self.target_kind == TargetKind::XpuUtilization && self.target_value > 1.0 {
            return Err(format!("utilization {} exceeds 1", self.target_value));
        }
        Ok(f)
    }

    /// True when the stored label equals a fresh oracle computation.
    pub fn label_matches(&self, m: &MachineConfig) -> bool {
        match self.function() {
            Ok(f) => self.target_kind.label(&f, m).is_ok_and(|v| v == self.target_value),
            Err(_) => false,
        }
    }
}

/// Keeps only samples of `kind`.
pub fn of_kind(samples: &[Sample], kind: TargetKind) -> Vec<Sample> {
    samples.iter().filter(|s| s.target_kind == kind).cloned().collect()
}
