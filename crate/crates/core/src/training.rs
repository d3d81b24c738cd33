//! Mini-batch training with early stopping, evaluation metrics and
//! architecture comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Sample, TargetKind};
use crate::kv;
use crate::models::{round_prediction, Model, ModelConfig, ModelError, TargetNorm};
use crate::nn::{adam_step, mse_loss, sgd_step, AdamConfig, AdamState, Optimizer};
use crate::tokenizer::{pad_or_truncate, tokenize, TokenSequence, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("samples mix target kinds {0} and {1}")]
    MixedTargets(TargetKind, TargetKind),
    #[error("model predicts {model} but the samples are labelled {data}")]
    TargetMismatch { model: TargetKind, data: TargetKind },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("sample {index}: {message}")]
    Sample { index: usize, message: String },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {0} (non-finite loss)")]
    Diverged(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Epochs without a validation improvement before stopping.
    pub early_stop_patience: usize,
    /// Z-score the targets; `None` picks by target kind (on for register
    /// pressure, off for utilization).
    pub normalize: Option<bool>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 32,
            optimizer: Optimizer::Adam(AdamConfig::default()),
            seed: 0,
            early_stop_patience: 10,
            normalize: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(TrainError::Config("epochs, batch size and patience must be positive".into()));
        }
        let lr = self.optimizer.lr();
        if !(lr.is_finite() && lr > 0.0) {
            return Err(TrainError::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// In normalized target units.
    pub train_rmse: f64,
    /// In physical units, on final (clamped) predictions.
    pub val_rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_rmse: f64,
}

impl History {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let mark = if e.epoch == self.best_epoch { " *" } else { "" };
            let _ = writeln!(
                out,
                "epoch {:>3}  train_rmse {:.6}  val_rmse {:.6}{mark}",
                e.epoch, e.train_rmse, e.val_rmse
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: History,
    /// Optimizer state matching the returned (best) parameters; empty for SGD.
    pub adam: Vec<AdamState>,
}

fn common_kind(samples: &[Sample]) -> Result<TargetKind, TrainError> {
    let first = samples.first().ok_or(TrainError::EmptyDataset)?.target_kind;
    match samples.iter().find(|s| s.target_kind != first) {
        Some(s) => Err(TrainError::MixedTargets(first, s.target_kind)),
        None => Ok(first),
    }
}

/// Parses and tokenizes samples to the model's mode and length.
pub fn encode_samples(samples: &[Sample], vocab: &Vocabulary, config: &ModelConfig) -> Result<Vec<TokenSequence>, TrainError> {
    samples
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let f = s.function().map_err(|e| TrainError::Sample {
                index,
                message: e.to_string(),
            })?;
            Ok(pad_or_truncate(&tokenize(&f, vocab, config.mode), config.max_len))
        })
        .collect()
}

fn rmse(pred: &[f64], labels: &[f64]) -> f64 {
    let se: f64 = pred.iter().zip(labels).map(|(p, l)| (p - l) * (p - l)).sum();
    (se / labels.len().max(1) as f64).sqrt()
}

fn check_kind(model: &Model, samples: &[Sample]) -> Result<(), TrainError> {
    let kind = common_kind(samples)?;
    if kind != model.config().target {
        return Err(TrainError::TargetMismatch {
            model: model.config().target,
            data: kind,
        });
    }
    Ok(())
}

/// Trains `model` in place and leaves it holding the parameters of the
/// epoch with the lowest validation RMSE. With no validation samples the
/// training RMSE is used instead.
pub fn train(
    model: &mut Model,
    train_samples: &[Sample],
    val_samples: &[Sample],
    cfg: &TrainConfig,
    vocab: &Vocabulary,
) -> Result<TrainOutcome, TrainError> {
    train_with_progress(model, train_samples, val_samples, cfg, vocab, &mut |_| {})
}

/// [`train`], calling `on_epoch` after every epoch.
pub fn train_with_progress(
    model: &mut Model,
    train_samples: &[Sample],
    val_samples: &[Sample],
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    check_kind(model, train_samples)?;
    if !val_samples.is_empty() {
        check_kind(model, val_samples)?;
    }
    let kind = model.config().target;
    let labels: Vec<f64> = train_samples.iter().map(|s| s.target_value).collect();
    let normalize = cfg.normalize.unwrap_or(kind == TargetKind::RegisterPressure);
    model.set_target_norm(if normalize {
        TargetNorm::zscore_of(&labels)
    } else {
        TargetNorm::None
    });
    let norm = model.config().target_norm;
    let targets: Vec<f64> = labels.iter().map(|&y| norm.normalize(y)).collect();
    let seqs = encode_samples(train_samples, vocab, model.config())?;
    let val_seqs = encode_samples(val_samples, vocab, model.config())?;
    let val_labels: Vec<f64> = val_samples.iter().map(|s| s.target_value).collect();

    let mut adam: Vec<AdamState> = match cfg.optimizer {
        Optimizer::Adam(_) => model.params().iter().map(|(_, t)| AdamState::new(t.len())).collect(),
        Optimizer::Sgd { .. } => Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut history = History {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_rmse: f64::INFINITY,
    };
    let mut best = (model.clone(), adam.clone());
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut se = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let ids: Vec<&[u32]> = chunk.iter().map(|&i| seqs[i].ids.as_slice()).collect();
            let y: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            model.zero_grad();
            let (pred, trace) = model.forward(&ids)?;
            let (loss, grad) = mse_loss(&pred, &y).map_err(ModelError::from)?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged(epoch));
            }
            se += loss * chunk.len() as f64;
            model.backward(&trace, &grad);
            for (i, p) in model.params_mut().into_iter().enumerate() {
                let g = p.grad.take().expect("parameters carry gradients");
                match &cfg.optimizer {
                    Optimizer::Sgd { lr } => sgd_step(&mut p.values, &g, *lr),
                    Optimizer::Adam(c) => adam_step(&mut p.values, &mut adam[i], &g, c),
                }
                .map_err(ModelError::from)?;
                p.grad = Some(g);
            }
        }
        let train_rmse = (se / seqs.len() as f64).sqrt();
        let val_rmse = if val_seqs.is_empty() {
            train_rmse
        } else {
            rmse(&model.predict_batch(&val_seqs)?, &val_labels)
        };
        let record = EpochRecord {
            epoch,
            train_rmse,
            val_rmse,
        };
        on_epoch(&record);
        history.epochs.push(record);
        if val_rmse < history.best_val_rmse {
            history.best_val_rmse = val_rmse;
            history.best_epoch = epoch;
            best = (model.clone(), adam.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    *model = best.0;
    Ok(TrainOutcome { history, adam: best.1 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub target: TargetKind,
    pub n: usize,
    pub rmse: f64,
    /// RMSE over the label range of the evaluated samples, in percent.
    pub rmse_pct_of_range: f64,
    /// Share of rounded predictions equal to the label; register pressure only.
    pub exact_match_pct: Option<f64>,
    /// Absolute rounded error to count. Register pressure errors are in
    /// registers; utilization errors in whole percentage points.
    pub error_histogram: BTreeMap<u64, usize>,
}

impl EvalReport {
    pub fn from_predictions(target: TargetKind, pred: &[f64], labels: &[f64]) -> Result<EvalReport, TrainError> {
        if labels.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        assert_eq!(pred.len(), labels.len(), "one prediction per label");
        let rmse = rmse(pred, labels);
        let (lo, hi) = labels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)));
        let range = hi - lo;
        let rmse_pct_of_range = if range > 0.0 {
            rmse / range * 100.0
        } else if rmse == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        let mut error_histogram = BTreeMap::new();
        for (p, y) in pred.iter().zip(labels) {
            let err = match target {
                TargetKind::RegisterPressure => round_prediction(*p).abs_diff(round_prediction(*y)),
                TargetKind::XpuUtilization => round_prediction((p - y).abs() * 100.0),
            };
            *error_histogram.entry(err).or_insert(0) += 1;
        }
        let exact_match_pct = match target {
            TargetKind::RegisterPressure => {
                Some(*error_histogram.get(&0).unwrap_or(&0) as f64 / labels.len() as f64 * 100.0)
            }
            TargetKind::XpuUtilization => None,
        };
        Ok(EvalReport {
            target,
            n: labels.len(),
            rmse,
            rmse_pct_of_range,
            exact_match_pct,
            error_histogram,
        })
    }

    /// `name = value` lines.
    pub fn to_kv(&self) -> String {
        let mut pairs: Vec<(String, String)> = vec![
            ("target".into(), self.target.flag_name().into()),
            ("n".into(), self.n.to_string()),
            ("rmse".into(), format!("{:.6}", self.rmse)),
            ("rmse_pct_of_range".into(), format!("{:.4}", self.rmse_pct_of_range)),
        ];
        if let Some(e) = self.exact_match_pct {
            pairs.push(("exact_match_pct".into(), format!("{e:.4}")));
        }
        for (k, v) in &self.error_histogram {
            pairs.push((format!("error_histogram.{k}"), v.to_string()));
        }
        kv::render(pairs)
    }

    /// Short human-readable summary with the first histogram buckets.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} over {} samples: rmse {:.4} ({:.2}% of range)",
            self.target.flag_name(),
            self.n,
            self.rmse,
            self.rmse_pct_of_range
        );
        if let Some(e) = self.exact_match_pct {
            let _ = write!(out, ", exact match {e:.2}%");
        }
        out.push('\n');
        let unit = match self.target {
            TargetKind::RegisterPressure => "",
            TargetKind::XpuUtilization => " pp",
        };
        for (k, v) in self.error_histogram.iter().take(10) {
            let _ = writeln!(out, "  |error| = {k}{unit}: {v}");
        }
        if self.error_histogram.len() > 10 {
            let rest: usize = self.error_histogram.values().skip(10).sum();
            let _ = writeln!(out, "  larger errors: {rest}");
        }
        out
    }
}

pub fn evaluate(model: &Model, samples: &[Sample], vocab: &Vocabulary) -> Result<EvalReport, TrainError> {
    check_kind(model, samples)?;
    let seqs = encode_samples(samples, vocab, model.config())?;
    let pred = model.predict_batch(&seqs)?;
    let labels: Vec<f64> = samples.iter().map(|s| s.target_value).collect();
    EvalReport::from_predictions(model.config().target, &pred, &labels)
}

/// One entry of an architecture comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub params: usize,
    pub epochs_run: usize,
    pub best_val_rmse: f64,
    pub test: EvalReport,
}

/// Trains each `(config, vocabulary)` pair on the same splits with the same
/// training config and returns rows ordered by test RMSE.
pub fn compare_architectures(
    train_samples: &[Sample],
    val_samples: &[Sample],
    test_samples: &[Sample],
    configs: &[(ModelConfig, &Vocabulary)],
    cfg: &TrainConfig,
) -> Result<Vec<ComparisonRow>, TrainError> {
    if configs.is_empty() {
        return Err(TrainError::Config("nothing to compare".into()));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for (config, vocab) in configs {
        let mut model = Model::build(config.clone())?;
        let outcome = train(&mut model, train_samples, val_samples, cfg, vocab)?;
        rows.push(ComparisonRow {
            label: format!("{} ({})", config.architecture, config.mode),
            params: model.param_count(),
            epochs_run: outcome.history.epochs.len(),
            best_val_rmse: outcome.history.best_val_rmse,
            test: evaluate(&model, test_samples, vocab)?,
        });
    }
    rows.sort_by(|a, b| a.test.rmse.total_cmp(&b.test.rmse));
    Ok(rows)
}

/// Aligned text table of comparison rows.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let header = ["model", "params", "epochs", "val_rmse", "test_rmse", "rmse_%range", "exact_%"];
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                r.params.to_string(),
                r.epochs_run.to_string(),
                format!("{:.4}", r.best_val_rmse),
                format!("{:.4}", r.test.rmse),
                format!("{:.2}", r.test.rmse_pct_of_range),
                r.test.exact_match_pct.map_or("-".into(), |e| format!("{e:.2}")),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    for row in &body {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}
