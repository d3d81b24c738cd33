//! The three sequence-to-scalar regressors: a bag-of-tokens MLP, a gated
//! recurrent network and a stacked 1-D convolutional network.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::TargetKind;
use crate::kv;
use crate::nn::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, embedding_backward, embedding_forward,
    maxpool1d_backward, maxpool1d_forward, relu_backward, relu_forward, AdamState, Checkpoint, CheckpointError,
    Conv1d, Dense, DenseTensor, Embedding, NamedTensor, NnError, Pooled,
};
use crate::tokenizer::{TokenMode, TokenSequence, Vocabulary, PAD};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("model expects {expected} tokens, got {found}")]
    ModeMismatch { expected: TokenMode, found: TokenMode },
    #[error("model expects sequences of length {expected}, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint vocabulary: {0}")]
    Vocab(String),
}

fn config_err(msg: impl Into<String>) -> ModelError {
    ModelError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    BagFc,
    Recurrent,
    ConvStack,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::BagFc, Architecture::Recurrent, Architecture::ConvStack];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::BagFc => "bagfc",
            Architecture::Recurrent => "recurrent",
            Architecture::ConvStack => "convstack",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "bagfc" | "bag-fc" => Ok(Architecture::BagFc),
            "recurrent" | "gru" => Ok(Architecture::Recurrent),
            "convstack" | "conv-stack" => Ok(Architecture::ConvStack),
            other => Err(format!("unknown architecture `{other}` (bagfc, recurrent, convstack)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Global,
    Windowed { window: usize, stride: usize },
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pooling::Global => f.write_str("global"),
            Pooling::Windowed { window, stride } => write!(f, "windowed:{window}:{stride}"),
        }
    }
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "global" {
            return Ok(Pooling::Global);
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["windowed", w, st] => Ok(Pooling::Windowed {
                window: w.parse().map_err(|_| format!("bad pooling window `{w}`"))?,
                stride: st.parse().map_err(|_| format!("bad pooling stride `{st}`"))?,
            }),
            _ => Err(format!("unknown pooling `{s}` (global or windowed:<window>:<stride>)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetNorm {
    None,
    ZScore { mean: f64, std: f64 },
}

impl TargetNorm {
    pub fn normalize(&self, y: f64) -> f64 {
        match self {
            TargetNorm::None => y,
            TargetNorm::ZScore { mean, std } => (y - mean) / std,
        }
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        match self {
            TargetNorm::None => y,
            TargetNorm::ZScore { mean, std } => y * std + mean,
        }
    }

    /// Z-score statistics of `values`; a zero spread falls back to 1.
    pub fn zscore_of(values: &[f64]) -> TargetNorm {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        TargetNorm::ZScore {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }
}

impl fmt::Display for TargetNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetNorm::None => f.write_str("none"),
            TargetNorm::ZScore { mean, std } => write!(f, "zscore:{mean}:{std}"),
        }
    }
}

impl FromStr for TargetNorm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "none" {
            return Ok(TargetNorm::None);
        }
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["zscore", m, sd] => Ok(TargetNorm::ZScore {
                mean: m.parse().map_err(|_| format!("bad mean `{m}`"))?,
                std: sd.parse().map_err(|_| format!("bad std `{sd}`"))?,
            }),
            _ => Err(format!("unknown target normalization `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub mode: TokenMode,
    pub target: TargetKind,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub max_len: usize,
    /// `(out_channels, kernel_size)` per convolution.
    pub conv_layers: Vec<(usize, usize)>,
    pub fc_sizes: Vec<usize>,
    pub recurrent_hidden: usize,
    pub pooling: Pooling,
    pub target_norm: TargetNorm,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, mode: TokenMode, target: TargetKind, vocab_size: usize) -> Self {
        ModelConfig {
            architecture,
            mode,
            target,
            vocab_size,
            embed_dim: 64,
            max_len: mode.default_max_len(),
            conv_layers: vec![(64, 2); 6],
            fc_sizes: vec![128, 64, 1],
            recurrent_hidden: 128,
            pooling: Pooling::Windowed { window: 2, stride: 2 },
            target_norm: TargetNorm::None,
            seed: 0,
        }
    }

    /// Rows left after the convolution stack.
    fn shrink(&self) -> usize {
        self.conv_layers.iter().fold(0usize, |a, (_, k)| a.saturating_add(k.saturating_sub(1)))
    }

    pub fn conv_out_len(&self) -> usize {
        self.max_len.saturating_sub(self.shrink())
    }

    fn pooled_len(&self) -> usize {
        let len = self.conv_out_len();
        match self.pooling {
            Pooling::Global => 1,
            Pooling::Windowed { window, stride } => len.saturating_sub(window) / stride.max(1) + 1,
        }
    }

    /// Width of the input to the first fully connected layer.
    pub fn features(&self) -> usize {
        match self.architecture {
            Architecture::BagFc => self.embed_dim,
            Architecture::Recurrent => self.recurrent_hidden,
            Architecture::ConvStack => {
                let channels = self.conv_layers.last().map_or(self.embed_dim, |(c, _)| *c);
                channels.saturating_mul(self.pooled_len())
            }
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size == 0 || self.embed_dim == 0 {
            return Err(config_err("vocab_size and embed_dim must be positive"));
        }
        if self.max_len < 2 {
            return Err(config_err("max_len must be at least 2"));
        }
        if self.fc_sizes.is_empty() || self.fc_sizes.contains(&0) {
            return Err(config_err("fc_sizes must be non-empty and positive"));
        }
        if self.fc_sizes.last() != Some(&1) {
            return Err(config_err("the last fully connected layer must have one output"));
        }
        if let TargetNorm::ZScore { mean, std } = self.target_norm {
            if !(mean.is_finite() && std.is_finite() && std > 0.0) {
                return Err(config_err("z-score normalization needs a finite mean and positive std"));
            }
        }
        match self.architecture {
            Architecture::BagFc => {}
            Architecture::Recurrent => {
                if self.recurrent_hidden == 0 {
                    return Err(config_err("recurrent_hidden must be positive"));
                }
            }
            Architecture::ConvStack => {
                if self.conv_layers.is_empty() {
                    return Err(config_err("a conv stack needs at least one convolution"));
                }
                if self.conv_layers.iter().any(|&(c, k)| c == 0 || k == 0) {
                    return Err(config_err("conv channels and kernel sizes must be positive"));
                }
                let shrink = self.shrink();
                if shrink >= self.max_len {
                    return Err(config_err(format!(
                        "convolutions shrink the sequence by {shrink}, leaving nothing of max_len {}",
                        self.max_len
                    )));
                }
                if let Pooling::Windowed { window, stride } = self.pooling {
                    if window == 0 || stride == 0 || window > self.conv_out_len() {
                        return Err(config_err(format!(
                            "pooling window {window} / stride {stride} does not fit {} rows",
                            self.conv_out_len()
                        )));
                    }
                }
            }
        }
        if self.param_count() == usize::MAX {
            return Err(config_err("model is too large"));
        }
        Ok(())
    }

    /// Number of learned scalars, from the config alone. Saturates at
    /// `usize::MAX`.
    pub fn param_count(&self) -> usize {
        let dense = |o: usize, i: usize| o.saturating_mul(i).saturating_add(o);
        let mut n = self.vocab_size.saturating_mul(self.embed_dim);
        match self.architecture {
            Architecture::BagFc => {}
            Architecture::Recurrent => {
                let h = self.recurrent_hidden;
                n = n.saturating_add(dense(3usize.saturating_mul(h), self.embed_dim));
                n = n.saturating_add(dense(3usize.saturating_mul(h), h));
            }
            Architecture::ConvStack => {
                let mut inc = self.embed_dim;
                for &(c, k) in &self.conv_layers {
                    n = n.saturating_add(dense(c, inc.saturating_mul(k)));
                    inc = c;
                }
            }
        }
        let mut inputs = self.features();
        for &o in &self.fc_sizes {
            n = n.saturating_add(dense(o, inputs));
            inputs = o;
        }
        n
    }

    pub fn to_text(&self) -> String {
        let conv: Vec<String> = self.conv_layers.iter().map(|(c, k)| format!("{c}:{k}")).collect();
        let fc: Vec<String> = self.fc_sizes.iter().map(|s| s.to_string()).collect();
        kv::render([
            ("architecture", self.architecture.to_string()),
            ("mode", self.mode.to_string()),
            ("target", self.target.flag_name().to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("max_len", self.max_len.to_string()),
            ("conv_layers", conv.join(",")),
            ("fc_sizes", fc.join(",")),
            ("recurrent_hidden", self.recurrent_hidden.to_string()),
            ("pooling", self.pooling.to_string()),
            ("target_norm", self.target_norm.to_string()),
            ("seed", self.seed.to_string()),
        ])
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let pairs = kv::parse(text).map_err(|e| config_err(e.to_string()))?;
        let get = |k: &str| pairs.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let need = |k: &str| get(k).ok_or_else(|| config_err(format!("missing `{k}`")));
        let architecture: Architecture = need("architecture")?.parse().map_err(config_err)?;
        let mode: TokenMode = need("mode")?.parse().map_err(config_err)?;
        let target: TargetKind = need("target")?.parse().map_err(|e: String| config_err(e))?;
        let vocab_size = parse_usize("vocab_size", need("vocab_size")?)?;
        let mut c = ModelConfig::new(architecture, mode, target, vocab_size);
        for (k, v) in &pairs {
            match k.as_str() {
                "architecture" | "mode" | "target" | "vocab_size" => {}
                "embed_dim" => c.embed_dim = parse_usize(k, v)?,
                "max_len" => c.max_len = parse_usize(k, v)?,
                "conv_layers" => c.conv_layers = parse_conv_layers(v)?,
                "fc_sizes" => c.fc_sizes = parse_list(k, v)?,
                "recurrent_hidden" => c.recurrent_hidden = parse_usize(k, v)?,
                "pooling" => c.pooling = v.parse().map_err(config_err)?,
                "target_norm" => c.target_norm = v.parse().map_err(config_err)?,
                "seed" => c.seed = v.parse().map_err(|_| config_err(format!("bad seed `{v}`")))?,
                other => return Err(config_err(format!("unknown key `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ModelError> {
    v.trim().parse().map_err(|_| config_err(format!("`{key}` must be a non-negative integer, got `{v}`")))
}

pub fn parse_list(key: &str, v: &str) -> Result<Vec<usize>, ModelError> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_usize(key, s)).collect()
}

/// `"64:2,64:2"` as `(channels, kernel)` pairs.
pub fn parse_conv_layers(v: &str) -> Result<Vec<(usize, usize)>, ModelError> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let (c, k) = item
                .split_once(':')
                .ok_or_else(|| config_err(format!("conv layer `{item}` is not <channels>:<kernel>")))?;
            Ok((parse_usize("conv_layers", c)?, parse_usize("conv_layers", k)?))
        })
        .collect()
}

/// Single-layer gated recurrent cell with gates stacked `[r; z; n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub input: Dense,
    pub hidden: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    embedding: Embedding,
    convs: Vec<Conv1d>,
    gru: Option<Gru>,
    fcs: Vec<Dense>,
}

struct GruStep {
    active: Vec<bool>,
    h_prev: DenseTensor,
    hn: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
}

/// Intermediate values kept by a training forward pass.
pub struct Trace {
    ids: Vec<u32>,
    batch: usize,
    embedded: DenseTensor,
    conv_inputs: Vec<DenseTensor>,
    conv_pre: Vec<DenseTensor>,
    pooled: Vec<Pooled>,
    bag_counts: Vec<usize>,
    gru_steps: Vec<GruStep>,
    fc_inputs: Vec<DenseTensor>,
    fc_pre: Vec<DenseTensor>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Rounds half away from zero and floors at 0.
pub fn round_prediction(x: f64) -> u64 {
    let r = x.round();
    if r > 0.0 {
        r as u64
    } else {
        0
    }
}

impl Model {
    pub fn build(config: ModelConfig) -> Result<Model, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let embedding = Embedding::new(config.vocab_size, config.embed_dim, &mut rng);
        let mut convs = Vec::new();
        let mut gru = None;
        match config.architecture {
            Architecture::BagFc => {}
            Architecture::ConvStack => {
                let mut inc = config.embed_dim;
                for &(c, k) in &config.conv_layers {
                    convs.push(Conv1d::new(inc, c, k, &mut rng));
                    inc = c;
                }
            }
            Architecture::Recurrent => {
                let h = config.recurrent_hidden;
                let input = Dense::new(config.embed_dim, 3 * h, &mut rng);
                let hidden = Dense::new(h, 3 * h, &mut rng);
                gru = Some(Gru { input, hidden });
            }
        }
        let mut fcs = Vec::new();
        let mut inputs = config.features();
        for &o in &config.fc_sizes {
            fcs.push(Dense::new(inputs, o, &mut rng));
            inputs = o;
        }
        Ok(Model {
            config,
            embedding,
            convs,
            gru,
            fcs,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_target_norm(&mut self, norm: TargetNorm) {
        self.config.target_norm = norm;
    }

    /// Parameter tensors in a fixed order with stable names.
    pub fn params(&self) -> Vec<(String, &DenseTensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding.table)];
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.kernel"), &c.kernel));
            out.push((format!("conv{i}.bias"), &c.bias));
        }
        if let Some(g) = &self.gru {
            out.push(("gru.input.weight".into(), &g.input.weight));
            out.push(("gru.input.bias".into(), &g.input.bias));
            out.push(("gru.hidden.weight".into(), &g.hidden.weight));
            out.push(("gru.hidden.bias".into(), &g.hidden.bias));
        }
        for (i, d) in self.fcs.iter().enumerate() {
            out.push((format!("fc{i}.weight"), &d.weight));
            out.push((format!("fc{i}.bias"), &d.bias));
        }
        out
    }

    /// Same order as [`Model::params`].
    pub fn params_mut(&mut self) -> Vec<&mut DenseTensor> {
        let mut out = vec![&mut self.embedding.table];
        for c in self.convs.iter_mut() {
            out.push(&mut c.kernel);
            out.push(&mut c.bias);
        }
        if let Some(g) = &mut self.gru {
            out.push(&mut g.input.weight);
            out.push(&mut g.input.bias);
            out.push(&mut g.hidden.weight);
            out.push(&mut g.hidden.bias);
        }
        for d in self.fcs.iter_mut() {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_batch(&self, batch: &[&[u32]]) -> Result<(), ModelError> {
        for ids in batch {
            if ids.len() != self.config.max_len {
                return Err(ModelError::LengthMismatch {
                    expected: self.config.max_len,
                    found: ids.len(),
                });
            }
        }
        Ok(())
    }

    /// Normalized-space outputs for a batch of equal-length id sequences,
    /// plus the trace needed by [`Model::backward`].
    pub fn forward(&self, batch: &[&[u32]]) -> Result<(Vec<f64>, Trace), ModelError> {
        self.check_batch(batch)?;
        let len = self.config.max_len;
        let ids: Vec<u32> = batch.iter().flat_map(|s| s.iter().copied()).collect();
        let embedded = embedding_forward(&ids, &self.embedding)?;
        let mut trace = Trace {
            ids,
            batch: batch.len(),
            embedded: DenseTensor::zeros(&[0, 0]),
            conv_inputs: Vec::new(),
            conv_pre: Vec::new(),
            pooled: Vec::new(),
            bag_counts: Vec::new(),
            gru_steps: Vec::new(),
            fc_inputs: Vec::new(),
            fc_pre: Vec::new(),
        };
        let features = match self.config.architecture {
            Architecture::BagFc => self.bag_forward(&embedded, &mut trace),
            Architecture::ConvStack => self.conv_forward(&embedded, &mut trace)?,
            Architecture::Recurrent => self.gru_forward(&embedded, &mut trace, len)?,
        };
        trace.embedded = embedded;
        let mut x = features;
        let last = self.fcs.len() - 1;
        for (i, d) in self.fcs.iter().enumerate() {
            let y = dense_forward(&x, d)?;
            trace.fc_inputs.push(x);
            if i < last {
                x = relu_forward(&y);
                trace.fc_pre.push(y);
            } else {
                x = y;
            }
        }
        Ok((x.values, trace))
    }

    fn bag_forward(&self, embedded: &DenseTensor, trace: &mut Trace) -> DenseTensor {
        let (len, dim) = (self.config.max_len, self.config.embed_dim);
        let mut feats = DenseTensor::zeros(&[trace.batch, dim]);
        for b in 0..trace.batch {
            let mut count = 0;
            let row = &mut feats.values[b * dim..(b + 1) * dim];
            for t in 0..len {
                if trace.ids[b * len + t] == PAD {
                    continue;
                }
                count += 1;
                let src = (b * len + t) * dim;
                for (acc, v) in row.iter_mut().zip(&embedded.values[src..src + dim]) {
                    *acc += v;
                }
            }
            if count > 0 {
                row.iter_mut().for_each(|v| *v /= count as f64);
            }
            trace.bag_counts.push(count);
        }
        feats
    }

    // The batch is stacked into one tall matrix; rows that straddle two
    // sequences are computed but never pooled, so they get no gradient.
    fn conv_forward(&self, embedded: &DenseTensor, trace: &mut Trace) -> Result<DenseTensor, ModelError> {
        let len = self.config.max_len;
        let mut x = embedded.clone();
        for c in &self.convs {
            let z = conv1d_forward(&x, c)?;
            trace.conv_inputs.push(x);
            x = relu_forward(&z);
            trace.conv_pre.push(z);
        }
        let valid = self.config.conv_out_len();
        let (_, ch) = x.dims2();
        let (window, stride) = match self.config.pooling {
            Pooling::Global => (valid, 1),
            Pooling::Windowed { window, stride } => (window, stride),
        };
        let width = self.config.features();
        let mut feats = Vec::with_capacity(trace.batch * width);
        for b in 0..trace.batch {
            let rows = &x.values[b * len * ch..(b * len + valid) * ch];
            let seg = DenseTensor::from_vec(&[valid, ch], rows.to_vec())?;
            let p = maxpool1d_forward(&seg, window, stride)?;
            feats.extend_from_slice(&p.out.values);
            trace.pooled.push(p);
        }
        Ok(DenseTensor::from_vec(&[trace.batch, width], feats)?)
    }

    fn gru_forward(&self, embedded: &DenseTensor, trace: &mut Trace, len: usize) -> Result<DenseTensor, ModelError> {
        let g = self.gru.as_ref().expect("recurrent model has a cell");
        let h = self.config.recurrent_hidden;
        let gx = dense_forward(embedded, &g.input)?;
        let lengths: Vec<usize> = (0..trace.batch)
            .map(|b| {
                trace.ids[b * len..(b + 1) * len]
                    .iter()
                    .rposition(|&id| id != PAD)
                    .map_or(0, |p| p + 1)
            })
            .collect();
        let steps = lengths.iter().copied().max().unwrap_or(0);
        let mut state = DenseTensor::zeros(&[trace.batch, h]);
        for t in 0..steps {
            let gh = dense_forward(&state, &g.hidden)?;
            let active: Vec<bool> = lengths.iter().map(|&l| t < l).collect();
            let size = trace.batch * h;
            let (mut r, mut z, mut n, mut hn) = (vec![0.0; size], vec![0.0; size], vec![0.0; size], vec![0.0; size]);
            let mut next = state.clone();
            for b in 0..trace.batch {
                if !active[b] {
                    continue;
                }
                let xrow = &gx.values[(b * len + t) * 3 * h..(b * len + t + 1) * 3 * h];
                let hrow = &gh.values[b * 3 * h..(b + 1) * 3 * h];
                for u in 0..h {
                    let i = b * h + u;
                    r[i] = sigmoid(xrow[u] + hrow[u]);
                    z[i] = sigmoid(xrow[h + u] + hrow[h + u]);
                    hn[i] = hrow[2 * h + u];
                    n[i] = (xrow[2 * h + u] + r[i] * hn[i]).tanh();
                    next.values[i] = (1.0 - z[i]) * n[i] + z[i] * state.values[i];
                }
            }
            trace.gru_steps.push(GruStep {
                active,
                h_prev: std::mem::replace(&mut state, next),
                hn,
                r,
                z,
                n,
            });
        }
        Ok(state)
    }

    /// Accumulates parameter gradients for `d loss / d output`.
    pub fn backward(&mut self, trace: &Trace, dy: &[f64]) {
        assert_eq!(dy.len(), trace.batch, "one output gradient per sequence");
        let mut d = DenseTensor::from_vec(&[trace.batch, 1], dy.to_vec()).expect("batch x 1");
        let last = self.fcs.len() - 1;
        for i in (0..self.fcs.len()).rev() {
            if i < last {
                d = relu_backward(&trace.fc_pre[i], &d);
            }
            d = dense_backward(&trace.fc_inputs[i], &mut self.fcs[i], &d);
        }
        let d_embedded = match self.config.architecture {
            Architecture::BagFc => self.bag_backward(trace, &d),
            Architecture::ConvStack => self.conv_backward(trace, &d),
            Architecture::Recurrent => self.gru_backward(trace, &d),
        };
        embedding_backward(&trace.ids, &d_embedded, &mut self.embedding);
    }

    fn bag_backward(&self, trace: &Trace, d: &DenseTensor) -> DenseTensor {
        let (len, dim) = (self.config.max_len, self.config.embed_dim);
        let mut de = DenseTensor::zeros(&trace.embedded.shape);
        for b in 0..trace.batch {
            let count = trace.bag_counts[b];
            if count == 0 {
                continue;
            }
            let g = &d.values[b * dim..(b + 1) * dim];
            for t in 0..len {
                if trace.ids[b * len + t] == PAD {
                    continue;
                }
                let dst = (b * len + t) * dim;
                for (acc, v) in de.values[dst..dst + dim].iter_mut().zip(g) {
                    *acc += v / count as f64;
                }
            }
        }
        de
    }

    fn conv_backward(&mut self, trace: &Trace, d: &DenseTensor) -> DenseTensor {
        let len = self.config.max_len;
        let width = self.config.features();
        let last_pre = trace.conv_pre.last().expect("at least one conv");
        let (_, ch) = last_pre.dims2();
        let mut dx = DenseTensor::zeros(&last_pre.shape);
        for (b, p) in trace.pooled.iter().enumerate() {
            let dp = DenseTensor::from_vec(&p.out.shape, d.values[b * width..(b + 1) * width].to_vec())
                .expect("pooled width");
            let seg = maxpool1d_backward(p, &dp);
            let start = b * len * ch;
            for (acc, v) in dx.values[start..start + seg.len()].iter_mut().zip(&seg.values) {
                *acc += v;
            }
        }
        for i in (0..self.convs.len()).rev() {
            let dz = relu_backward(&trace.conv_pre[i], &dx);
            dx = conv1d_backward(&trace.conv_inputs[i], &mut self.convs[i], &dz);
        }
        dx
    }

    fn gru_backward(&mut self, trace: &Trace, d: &DenseTensor) -> DenseTensor {
        let len = self.config.max_len;
        let h = self.config.recurrent_hidden;
        let g = self.gru.as_mut().expect("recurrent model has a cell");
        let mut dgx = DenseTensor::zeros(&[trace.batch * len, 3 * h]);
        let mut dh = d.clone();
        for (t, step) in trace.gru_steps.iter().enumerate().rev() {
            let mut dgh = DenseTensor::zeros(&[trace.batch, 3 * h]);
            let mut dprev = DenseTensor::zeros(&[trace.batch, h]);
            for b in 0..trace.batch {
                if !step.active[b] {
                    dprev.values[b * h..(b + 1) * h].copy_from_slice(&dh.values[b * h..(b + 1) * h]);
                    continue;
                }
                let xrow = (b * len + t) * 3 * h;
                for u in 0..h {
                    let i = b * h + u;
                    let (r, z, n, hn) = (step.r[i], step.z[i], step.n[i], step.hn[i]);
                    let dhi = dh.values[i];
                    let dn = dhi * (1.0 - z);
                    let dz = dhi * (step.h_prev.values[i] - n);
                    dprev.values[i] = dhi * z;
                    let dn_pre = dn * (1.0 - n * n);
                    let dr_pre = dn_pre * hn * r * (1.0 - r);
                    let dz_pre = dz * z * (1.0 - z);
                    dgx.values[xrow + u] = dr_pre;
                    dgx.values[xrow + h + u] = dz_pre;
                    dgx.values[xrow + 2 * h + u] = dn_pre;
                    dgh.values[b * 3 * h + u] = dr_pre;
                    dgh.values[b * 3 * h + h + u] = dz_pre;
                    dgh.values[b * 3 * h + 2 * h + u] = dn_pre * r;
                }
            }
            let through = dense_backward(&step.h_prev, &mut g.hidden, &dgh);
            for (acc, v) in dprev.values.iter_mut().zip(&through.values) {
                *acc += v;
            }
            dh = dprev;
        }
        dense_backward(&trace.embedded, &mut g.input, &dgx)
    }

    pub fn check_input(&self, s: &TokenSequence) -> Result<(), ModelError> {
        if s.mode != self.config.mode {
            return Err(ModelError::ModeMismatch {
                expected: self.config.mode,
                found: s.mode,
            });
        }
        if s.ids.len() != self.config.max_len {
            return Err(ModelError::LengthMismatch {
                expected: self.config.max_len,
                found: s.ids.len(),
            });
        }
        Ok(())
    }

    /// Maps a raw network output to physical units: denormalizes, then
    /// clamps utilization to `[0, 1]`.
    pub fn finish(&self, raw: f64) -> f64 {
        let y = self.config.target_norm.denormalize(raw);
        match self.config.target {
            TargetKind::XpuUtilization => y.clamp(0.0, 1.0),
            TargetKind::RegisterPressure => y,
        }
    }

    pub fn predict(&self, s: &TokenSequence) -> Result<f64, ModelError> {
        Ok(self.predict_batch(std::slice::from_ref(s))?[0])
    }

    pub fn predict_batch(&self, seqs: &[TokenSequence]) -> Result<Vec<f64>, ModelError> {
        for s in seqs {
            self.check_input(s)?;
        }
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(64) {
            let ids: Vec<&[u32]> = chunk.iter().map(|s| s.ids.as_slice()).collect();
            let (raw, _) = self.forward(&ids)?;
            out.extend(raw.into_iter().map(|r| self.finish(r)));
        }
        Ok(out)
    }

    pub fn predict_rounded(&self, s: &TokenSequence) -> Result<u64, ModelError> {
        Ok(round_prediction(self.predict(s)?))
    }

    pub fn to_checkpoint(&self, vocab: &Vocabulary, adam: Option<Vec<AdamState>>) -> Checkpoint {
        Checkpoint {
            config: self.config.to_text(),
            vocab: vocab.to_text(),
            tensors: self
                .params()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape.clone(),
                    values: t.values.clone(),
                })
                .collect(),
            adam,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Model, Vocabulary), ModelError> {
        let config = ModelConfig::from_text(&ck.config)?;
        let vocab = Vocabulary::from_text(&ck.vocab).map_err(|e| ModelError::Vocab(e.to_string()))?;
        if vocab.len() != config.vocab_size {
            return Err(ModelError::Vocab(format!(
                "{} tokens but the model was built for {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let stored: usize = ck.tensors.iter().map(|t| t.values.len()).sum();
        config.validate()?;
        if config.param_count() != stored {
            return Err(ModelError::Config(format!(
                "checkpoint holds {stored} parameters, config needs {}",
                config.param_count()
            )));
        }
        let mut model = Model::build(config)?;
        let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        if names.len() != ck.tensors.len() {
            return Err(ModelError::Config(format!(
                "checkpoint has {} tensors, model needs {}",
                ck.tensors.len(),
                names.len()
            )));
        }
        for ((name, p), t) in names.iter().zip(model.params_mut()).zip(&ck.tensors) {
            if *name != t.name || p.shape != t.shape {
                return Err(ModelError::Config(format!(
                    "tensor `{}` {:?} does not match expected `{name}` {:?}",
                    t.name, t.shape, p.shape
                )));
            }
            p.values.copy_from_slice(&t.values);
        }
        Ok((model, vocab))
    }

    pub fn save(&self, path: &Path, vocab: &Vocabulary, adam: Option<Vec<AdamState>>) -> Result<(), ModelError> {
        Ok(self.to_checkpoint(vocab, adam).save(path)?)
    }

    pub fn load(path: &Path) -> Result<(Model, Vocabulary), ModelError> {
        Model::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use crate::tokenizer::{BOS, EOS};

    fn seq(ids: &[u32], mode: TokenMode) -> TokenSequence {
        TokenSequence {
            ids: ids.to_vec(),
            mode,
            source_len: ids.len(),
        }
    }

    fn small(arch: Architecture) -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            max_len: 10,
            conv_layers: vec![(3, 2), (5, 3)],
            fc_sizes: vec![6, 1],
            recurrent_hidden: 5,
            seed: 11,
            ..ModelConfig::new(arch, TokenMode::OpsOnly, TargetKind::RegisterPressure, 9)
        }
    }

    #[test]
    fn default_convstack_parameter_count() {
        let c = ModelConfig::new(Architecture::ConvStack, TokenMode::OpsOnly, TargetKind::RegisterPressure, 500);
        // embedding + six 64-channel k=2 convs + pool 106 rows to 53 + FC 3392->128->64->1
        let expected = 500 * 64 + 6 * (64 * 64 * 2 + 64) + (53 * 64 * 128 + 128) + (128 * 64 + 64) + (64 + 1);
        assert_eq!(expected, 524_161);
        assert_eq!(c.param_count(), expected);
        assert_eq!(Model::build(c).unwrap().param_count(), expected);
        for arch in Architecture::ALL {
            let c = small(arch);
            assert_eq!(Model::build(c.clone()).unwrap().param_count(), c.param_count(), "{arch}");
        }
    }

    #[test]
    fn convs_cannot_consume_the_sequence() {
        let c = ModelConfig {
            max_len: 6,
            ..ModelConfig::new(Architecture::ConvStack, TokenMode::OpsOnly, TargetKind::RegisterPressure, 50)
        };
        assert!(matches!(Model::build(c), Err(ModelError::Config(_))));
        let c = ModelConfig {
            fc_sizes: vec![8, 2],
            ..ModelConfig::new(Architecture::BagFc, TokenMode::OpsOnly, TargetKind::RegisterPressure, 50)
        };
        assert!(matches!(Model::build(c), Err(ModelError::Config(_))));
    }

    #[test]
    fn per_layer_kernel_sizes() {
        let c = ModelConfig {
            conv_layers: vec![(64, 3), (64, 3), (64, 2), (64, 2), (64, 2), (64, 2)],
            ..ModelConfig::new(Architecture::ConvStack, TokenMode::OpsAndOperands, TargetKind::RegisterPressure, 300)
        };
        assert_eq!(c.conv_out_len(), 256 - 8);
        let m = Model::build(c).unwrap();
        let mut ids = vec![PAD; 256];
        ids[..3].copy_from_slice(&[BOS, 7, EOS]);
        assert!(m.predict(&seq(&ids, TokenMode::OpsAndOperands)).unwrap().is_finite());
    }

    #[test]
    fn bagfc_single_token_and_padding_invariance() {
        let mut c = small(Architecture::BagFc);
        let m = Model::build(c.clone()).unwrap();
        let mut ids = vec![PAD; 10];
        ids[3] = 5;
        let a = m.predict(&seq(&ids, TokenMode::OpsOnly)).unwrap();
        ids.swap(3, 8);
        assert_eq!(a, m.predict(&seq(&ids, TokenMode::OpsOnly)).unwrap());

        let body = [BOS, 4, 5, 6, EOS];
        let mut ids = body.to_vec();
        ids.resize(10, PAD);
        let padded_more = m.predict(&seq(&ids, TokenMode::OpsOnly)).unwrap();
        c.max_len = 5;
        let short = Model::build(c).unwrap();
        let short_out = short.predict(&seq(&body, TokenMode::OpsOnly)).unwrap();
        assert!((padded_more - short_out).abs() < 1e-12);
        let mut perm = vec![BOS, 6, 5, EOS, 4];
        perm.resize(10, PAD);
        assert!((m.predict(&seq(&perm, TokenMode::OpsOnly)).unwrap() - padded_more).abs() < 1e-12);
    }

    #[test]
    fn order_sensitive_architectures() {
        let a = [BOS, 4, 5, 6, 7, 8, EOS, PAD, PAD, PAD];
        let b = [BOS, 8, 7, 6, 5, 4, EOS, PAD, PAD, PAD];
        for arch in [Architecture::ConvStack, Architecture::Recurrent] {
            let m = Model::build(small(arch)).unwrap();
            let (pa, pb) = (
                m.predict(&seq(&a, TokenMode::OpsOnly)).unwrap(),
                m.predict(&seq(&b, TokenMode::OpsOnly)).unwrap(),
            );
            assert_ne!(pa, pb, "{arch}");
            assert_eq!(pa, m.predict(&seq(&a, TokenMode::OpsOnly)).unwrap());
        }
    }

    #[test]
    fn input_checks() {
        let m = Model::build(small(Architecture::ConvStack)).unwrap();
        assert!(matches!(
            m.predict(&seq(&[BOS; 10], TokenMode::OpsAndOperands)),
            Err(ModelError::ModeMismatch { .. })
        ));
        assert!(matches!(
            m.predict(&seq(&[BOS; 9], TokenMode::OpsOnly)),
            Err(ModelError::LengthMismatch { expected: 10, found: 9 })
        ));
        assert!(matches!(m.predict(&seq(&[99; 10], TokenMode::OpsOnly)), Err(ModelError::Nn(_))));
    }

    #[test]
    fn rounding_and_clamping() {
        assert_eq!(round_prediction(4.4), 4);
        assert_eq!(round_prediction(4.5), 5);
        assert_eq!(round_prediction(-0.3), 0);
        assert_eq!(round_prediction(-0.5), 0);
        let mut c = small(Architecture::BagFc);
        c.target = TargetKind::XpuUtilization;
        let m = Model::build(c).unwrap();
        assert_eq!(m.finish(1.2), 1.0);
        assert_eq!(m.finish(-0.1), 0.0);
        assert_eq!(m.finish(0.25), 0.25);
        let mut m = Model::build(small(Architecture::BagFc)).unwrap();
        m.set_target_norm(TargetNorm::ZScore { mean: 100.0, std: 10.0 });
        assert_eq!(m.finish(1.5), 115.0);
    }

    #[test]
    fn config_text_round_trip() {
        for arch in Architecture::ALL {
            let mut c = small(arch);
            c.pooling = Pooling::Windowed { window: 2, stride: 2 };
            c.target_norm = TargetNorm::ZScore {
                mean: 1234.567_891_234,
                std: 0.1,
            };
            assert_eq!(ModelConfig::from_text(&c.to_text()).unwrap(), c);
        }
        assert!(ModelConfig::from_text("architecture = convstack\n").is_err());
        let bad = small(Architecture::BagFc).to_text() + "colour = blue\n";
        assert!(ModelConfig::from_text(&bad).is_err());
    }

    /// Finite-difference check of every parameter of `m` on a two-sequence
    /// batch with a weighted-sum loss.
    pub(crate) fn model_grad_error(m: &Model, batch: &[&[u32]]) -> f64 {
        let w = [0.7, -1.3];
        let mut m = m.clone();
        m.zero_grad();
        let (_, trace) = m.forward(batch).unwrap();
        m.backward(&trace, &w[..batch.len()]);
        let base = m.clone();
        let count = base.params().len();
        let mut worst: f64 = 0.0;
        for i in 0..count {
            let grad = base.params()[i].1.grad.clone().unwrap();
            let mut values = base.params()[i].1.values.clone();
            let mut probe = base.clone();
            let err = grad_check(
                |v| {
                    probe.params_mut()[i].values.copy_from_slice(v);
                    let (y, _) = probe.forward(batch).unwrap();
                    y.iter().zip(w).map(|(a, b)| a * b).sum()
                },
                &mut values,
                &grad,
                1e-5,
            );
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn whole_model_gradients() {
        let a = [BOS, 4, 5, 6, 7, EOS, PAD, PAD, PAD, PAD];
        let b = [BOS, 8, 7, 6, 5, 4, 6, 5, 4, EOS];
        for arch in Architecture::ALL {
            let m = Model::build(small(arch)).unwrap();
            let err = model_grad_error(&m, &[&a, &b]);
            assert!(err <= 1e-4, "{arch}: {err}");
        }
        let mut c = small(Architecture::ConvStack);
        c.pooling = Pooling::Global;
        let err = model_grad_error(&Model::build(c).unwrap(), &[&a, &b]);
        assert!(err <= 1e-4, "global pooling: {err}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut text = Vocabulary::reserved_only().to_text();
        for (i, t) in ["a", "b", "c", "d", "e"].iter().enumerate() {
            text.push_str(&format!("{}\t{t}\n", i + 4));
        }
        let vocab = Vocabulary::from_text(&text).unwrap();
        let m = Model::build(small(Architecture::Recurrent)).unwrap();
        m.save(&path, &vocab, None).unwrap();
        let (back, v) = Model::load(&path).unwrap();
        assert_eq!(v, vocab);
        assert_eq!(back.config(), m.config());
        for ((_, a), (_, b)) in back.params().iter().zip(m.params()) {
            assert_eq!(a.values, b.values);
        }
        let short = Vocabulary::reserved_only();
        m.save(&path, &short, None).unwrap();
        assert!(matches!(Model::load(&path), Err(ModelError::Vocab(_))));
    }
}
