use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hwcost::dataset::{
    augment, generate, holdout, load_csv, of_kind, split, write_csv, AugmentPolicy, GeneratorConfig, Sample,
    TargetKind,
};
use hwcost::ir::{parse_functions, GraphFunction};
use hwcost::kv;
use hwcost::models::{parse_conv_layers, parse_list, Architecture, Model, ModelConfig, ModelError, Pooling};
use hwcost::nn::{AdamConfig, Optimizer};
use hwcost::oracle::{cost_report, MachineConfig};
use hwcost::tokenizer::{build_vocab, pad_or_truncate, tokenize, TokenMode, Vocabulary};
use hwcost::training::{compare_architectures, evaluate, render_table, train_with_progress, TrainConfig, TrainError};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

fn data<E: Display>(context: impl Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

fn internal<E: Display>(context: impl Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Internal(format!("{context}: {e}"))
}

fn from_model(e: ModelError) -> CliError {
    match e {
        ModelError::Config(m) => CliError::Usage(format!("invalid model config: {m}")),
        other => CliError::Data(other.to_string()),
    }
}

fn from_train(e: TrainError) -> CliError {
    match e {
        TrainError::Config(m) => CliError::Usage(format!("invalid training config: {m}")),
        TrainError::Model(m) => from_model(m),
        other => CliError::Data(other.to_string()),
    }
}

/// Learned hardware cost models for xpu-dialect IR.
///
/// Exit codes: 0 success, 1 usage error, 2 data or validation error,
/// 3 internal error.
#[derive(Parser, Debug)]
#[command(name = "hwcost", version)]
struct Cli {
    /// `key = value` file supplying any long flag of the subcommand;
    /// flags given on the command line win.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Rename,
    Reorder,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic labelled corpus (two rows per function).
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Number of functions to generate.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        min_ops: usize,
        #[arg(long, default_value_t = 40)]
        max_ops: usize,
        #[arg(long)]
        machine_config: Option<PathBuf>,
    },
    /// Add renamed or rescheduled variants of every row.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "rename")]
        policy: PolicyArg,
        #[arg(long, default_value_t = 2)]
        factor: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        machine_config: Option<PathBuf>,
    },
    /// Shuffle a CSV into train, validation and test files.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        val_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
        /// Three comma-separated fractions summing to 1.
        #[arg(long, default_value = "0.8,0.1,0.1")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a token vocabulary from a CSV corpus.
    BuildVocab {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "ops-only")]
        mode: TokenMode,
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print token ids, one line per function.
    Tokenize {
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value = "ops-only")]
        mode: TokenMode,
        /// Pad or truncate to this length.
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value = "convstack")]
        arch: Architecture,
        #[arg(long, default_value = "register-pressure")]
        target: TargetKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "ops-only")]
        mode: TokenMode,
        /// Validation CSV; without it a fraction of --data is held out.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, value_enum, default_value = "adam")]
        optimizer: OptimizerArg,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        patience: usize,
        /// Defaults to 112 for ops-only and 256 for ops-operands.
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long, default_value_t = 64)]
        embed_dim: usize,
        /// Convolutions as `channels:kernel,...`.
        #[arg(long, default_value = "64:2,64:2,64:2,64:2,64:2,64:2")]
        conv_layers: String,
        #[arg(long, default_value = "128,64,1")]
        fc_sizes: String,
        #[arg(long, default_value_t = 128)]
        recurrent_hidden: usize,
        /// `global` or `windowed:<window>:<stride>`.
        #[arg(long, default_value = "windowed:2:2")]
        pooling: Pooling,
        /// Write per-epoch history here.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Store optimizer moments in the checkpoint.
        #[arg(long)]
        save_optimizer: bool,
    },
    /// Evaluate a checkpoint on a CSV and print the report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the `name = value` report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train several architectures on the same split and print a table.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "register-pressure")]
        target: TargetKind,
        #[arg(long, default_value = "bagfc,recurrent,convstack")]
        archs: String,
        /// Comma-separated tokenization modes, crossed with --archs.
        #[arg(long, default_value = "ops-only")]
        modes: String,
        #[arg(long, default_value = "0.8,0.1,0.1")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 10)]
        patience: usize,
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print one prediction per function.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required_unless_present = "ir_list", conflicts_with = "ir_list")]
        ir: Option<PathBuf>,
        /// File with one IR path per line.
        #[arg(long)]
        ir_list: Option<PathBuf>,
        /// Print register-pressure predictions as rounded integers.
        #[arg(long)]
        rounded: bool,
    },
    /// Print `register_pressure utilization` for each function.
    Oracle {
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        machine_config: Option<PathBuf>,
    },
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(data(path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(internal(path.display()))
}

fn load_samples(path: &Path) -> Result<Vec<Sample>, CliError> {
    load_csv(path).map_err(data(path.display()))
}

fn save_samples(samples: &[Sample], path: &Path) -> Result<(), CliError> {
    write_csv(samples, path).map_err(internal(path.display()))
}

fn load_functions(path: &Path) -> Result<Vec<GraphFunction>, CliError> {
    parse_functions(&read_text(path)?).map_err(data(path.display()))
}

fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    Vocabulary::from_text(&read_text(path)?).map_err(data(path.display()))
}

fn machine(path: &Option<PathBuf>) -> Result<MachineConfig, CliError> {
    match path {
        None => Ok(MachineConfig::default()),
        Some(p) => MachineConfig::from_text(&read_text(p)?).map_err(data(p.display())),
    }
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad --ratios `{s}`")))?;
    match parts.as_slice() {
        [a, b, c] => Ok((*a, *b, *c)),
        _ => Err(CliError::Usage(format!("--ratios needs three values, got `{s}`"))),
    }
}

fn targeted(samples: Vec<Sample>, target: TargetKind, path: &Path) -> Result<Vec<Sample>, CliError> {
    let picked = of_kind(&samples, target);
    if picked.is_empty() {
        return Err(CliError::Data(format!("{}: no {} rows", path.display(), target.flag_name())));
    }
    Ok(picked)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData {
            out,
            n,
            seed,
            min_ops,
            max_ops,
            machine_config,
        } => {
            let m = machine(&machine_config)?;
            let cfg = GeneratorConfig {
                num_samples: n,
                op_count_range: min_ops..=max_ops,
                seed,
                ..GeneratorConfig::default()
            };
            let samples = generate(&cfg, &m).map_err(|e| CliError::Usage(e.to_string()))?;
            save_samples(&samples, &out)?;
            eprintln!("wrote {} rows ({n} functions) to {}", samples.len(), out.display());
        }
        Command::Augment {
            data: input,
            out,
            policy,
            factor,
            seed,
            machine_config,
        } => {
            let m = machine(&machine_config)?;
            let samples = load_samples(&input)?;
            let policy = match policy {
                PolicyArg::Rename => AugmentPolicy::RenameOnly,
                PolicyArg::Reorder => AugmentPolicy::ReorderRecompute,
            };
            if factor == 0 {
                return Err(CliError::Usage("--factor must be at least 1".into()));
            }
            let outv = augment(&samples, policy, factor, &m, seed).map_err(data(input.display()))?;
            save_samples(&outv, &out)?;
            eprintln!("{} rows in, {} rows out", samples.len(), outv.len());
        }
        Command::Split {
            data: input,
            train_out,
            val_out,
            test_out,
            ratios,
            seed,
        } => {
            let samples = load_samples(&input)?;
            let (tr, va, te) =
                split(&samples, parse_ratios(&ratios)?, seed).map_err(|e| CliError::Usage(e.to_string()))?;
            save_samples(&tr, &train_out)?;
            save_samples(&va, &val_out)?;
            save_samples(&te, &test_out)?;
            eprintln!("train {} / val {} / test {}", tr.len(), va.len(), te.len());
        }
        Command::BuildVocab {
            data: input,
            mode,
            min_freq,
            out,
        } => {
            if min_freq == 0 {
                return Err(CliError::Usage("--min-freq must be at least 1".into()));
            }
            let samples = load_samples(&input)?;
            let fs: Vec<GraphFunction> = samples
                .iter()
                .map(|s| s.function())
                .collect::<Result<_, _>>()
                .map_err(data(input.display()))?;
            let v = build_vocab(&fs, mode, min_freq).map_err(data(input.display()))?;
            write_text(&out, &v.to_text())?;
            eprintln!("{} tokens ({} mode)", v.len(), mode);
        }
        Command::Tokenize {
            ir,
            vocab,
            mode,
            max_len,
        } => {
            let v = load_vocab(&vocab)?;
            if max_len.is_some_and(|l| l < 2) {
                return Err(CliError::Usage("--max-len must be at least 2".into()));
            }
            for f in load_functions(&ir)? {
                let mut s = tokenize(&f, &v, mode);
                if let Some(l) = max_len {
                    s = pad_or_truncate(&s, l);
                }
                let ids: Vec<String> = s.ids.iter().map(|i| i.to_string()).collect();
                println!("{}", ids.join(" "));
            }
        }
        Command::Train {
            data: input,
            vocab,
            arch,
            target,
            out,
            mode,
            val,
            val_fraction,
            epochs,
            batch_size,
            optimizer,
            lr,
            seed,
            patience,
            max_len,
            embed_dim,
            conv_layers,
            fc_sizes,
            recurrent_hidden,
            pooling,
            history,
            save_optimizer,
        } => {
            let v = load_vocab(&vocab)?;
            let all = targeted(load_samples(&input)?, target, &input)?;
            let (train_set, val_set) = match &val {
                Some(p) => (all, targeted(load_samples(p)?, target, p)?),
                None => holdout(&all, val_fraction, seed).map_err(|e| CliError::Usage(e.to_string()))?,
            };
            let config = ModelConfig {
                embed_dim,
                max_len: max_len.unwrap_or(mode.default_max_len()),
                conv_layers: parse_conv_layers(&conv_layers).map_err(from_model)?,
                fc_sizes: parse_list("fc_sizes", &fc_sizes).map_err(from_model)?,
                recurrent_hidden,
                pooling,
                seed,
                ..ModelConfig::new(arch, mode, target, v.len())
            };
            let mut model = Model::build(config).map_err(from_model)?;
            let cfg = TrainConfig {
                epochs,
                batch_size,
                optimizer: match optimizer {
                    OptimizerArg::Adam => Optimizer::Adam(AdamConfig {
                        lr,
                        ..AdamConfig::default()
                    }),
                    OptimizerArg::Sgd => Optimizer::Sgd { lr },
                },
                seed,
                early_stop_patience: patience,
                normalize: None,
            };
            eprintln!(
                "training {arch} ({} parameters) on {} rows, validating on {}",
                model.param_count(),
                train_set.len(),
                val_set.len()
            );
            let outcome = train_with_progress(&mut model, &train_set, &val_set, &cfg, &v, &mut |e| {
                eprintln!("epoch {:>3}  train_rmse {:.6}  val_rmse {:.6}", e.epoch, e.train_rmse, e.val_rmse)
            })
            .map_err(from_train)?;
            eprintln!(
                "best epoch {} (val_rmse {:.6})",
                outcome.history.best_epoch, outcome.history.best_val_rmse
            );
            if let Some(h) = history {
                write_text(&h, &outcome.history.to_text())?;
            }
            let adam = save_optimizer.then_some(outcome.adam);
            model.save(&out, &v, adam).map_err(internal(out.display()))?;
        }
        Command::Eval {
            model,
            data: input,
            report,
        } => {
            let (m, v) = Model::load(&model).map_err(data(model.display()))?;
            let samples = targeted(load_samples(&input)?, m.config().target, &input)?;
            let r = evaluate(&m, &samples, &v).map_err(from_train)?;
            eprint!("{}", r.to_text());
            print!("{}", r.to_kv());
            if let Some(p) = report {
                write_text(&p, &r.to_kv())?;
            }
        }
        Command::Compare {
            data: input,
            target,
            archs,
            modes,
            ratios,
            seed,
            epochs,
            batch_size,
            lr,
            patience,
            min_freq,
            report,
        } => {
            let all = targeted(load_samples(&input)?, target, &input)?;
            let (tr, va, te) = split(&all, parse_ratios(&ratios)?, seed).map_err(|e| CliError::Usage(e.to_string()))?;
            let archs: Vec<Architecture> = archs
                .split(',')
                .map(|a| a.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(CliError::Usage)?;
            let modes: Vec<TokenMode> = modes
                .split(',')
                .map(|a| a.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(CliError::Usage)?;
            let fs: Vec<GraphFunction> = tr
                .iter()
                .map(|s| s.function())
                .collect::<Result<_, _>>()
                .map_err(data(input.display()))?;
            let mut vocabs = Vec::new();
            for &mode in &modes {
                vocabs.push(build_vocab(&fs, mode, min_freq).map_err(data(input.display()))?);
            }
            let mut configs = Vec::new();
            for (mode, v) in modes.iter().zip(&vocabs) {
                for &arch in &archs {
                    let c = ModelConfig {
                        seed,
                        ..ModelConfig::new(arch, *mode, target, v.len())
                    };
                    configs.push((c, v));
                }
            }
            let cfg = TrainConfig {
                epochs,
                batch_size,
                optimizer: Optimizer::Adam(AdamConfig {
                    lr,
                    ..AdamConfig::default()
                }),
                seed,
                early_stop_patience: patience,
                normalize: None,
            };
            let rows = compare_architectures(&tr, &va, &te, &configs, &cfg).map_err(from_train)?;
            let table = render_table(&rows);
            print!("{table}");
            if let Some(p) = report {
                write_text(&p, &table)?;
            }
        }
        Command::Predict {
            model,
            ir,
            ir_list,
            rounded,
        } => {
            let (m, v) = Model::load(&model).map_err(data(model.display()))?;
            let paths: Vec<PathBuf> = match (ir, ir_list) {
                (Some(p), _) => vec![p],
                (None, Some(list)) => read_text(&list)?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(PathBuf::from)
                    .collect(),
                (None, None) => return Err(CliError::Usage("--ir or --ir-list is required".into())),
            };
            let c = m.config();
            let mut seqs = Vec::new();
            for p in &paths {
                for f in load_functions(p)? {
                    seqs.push(pad_or_truncate(&tokenize(&f, &v, c.mode), c.max_len));
                }
            }
            let preds = m.predict_batch(&seqs).map_err(from_model)?;
            let mut out = String::new();
            for p in preds {
                if rounded {
                    out.push_str(&format!("{}\n", hwcost::models::round_prediction(p)));
                } else {
                    out.push_str(&format!("{p}\n"));
                }
            }
            print!("{out}");
        }
        Command::Oracle { ir, machine_config } => {
            let m = machine(&machine_config)?;
            for f in load_functions(&ir)? {
                let r = cost_report(&f, &m).map_err(data(ir.display()))?;
                println!("{} {}", r.register_pressure, r.xpu_utilization.value());
            }
        }
    }
    Ok(())
}

fn flag_present(args: &[String], flag: &str) -> bool {
    args.iter().any(|a| a == flag || a.starts_with(&format!("{flag}=")))
}

/// Appends flags from a `--config` file that the command line did not set.
fn apply_config_file(mut args: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(i) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let path = match args[i].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => match args.get(i + 1) {
            Some(p) => p.clone(),
            None => return Ok(args),
        },
    };
    let text = read_text(Path::new(&path))?;
    let pairs = kv::parse(&text).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
    for (key, value) in pairs {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" || flag_present(&args, &flag) {
            continue;
        }
        match value.as_str() {
            "true" => args.push(flag),
            "false" => {}
            _ => {
                args.push(flag);
                args.push(value);
            }
        }
    }
    Ok(args)
}

fn main() -> ExitCode {
    let args = match apply_config_file(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
