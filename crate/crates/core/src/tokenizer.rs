//! Token sequences over IR functions.
//!
//! Two modes: [`TokenMode::OpsOnly`] keeps opcodes and tensor types, dropping
//! all dataflow; [`TokenMode::OpsAndOperands`] additionally emits a position
//! token per op and one reference token per operand. Tensor types are always
//! a single token (`tensor<1x128xf32>`), never split into digits.
//!
//! Operand references are normalized by definition distance: `@-3` is the
//! result of the op three positions earlier, `@arg1` is the second argument.
//! That keeps the operand vocabulary bounded and makes token sequences
//! independent of SSA naming.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::ir::{Def, GraphFunction};

pub const PAD: u32 = 0;
pub const OOV: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<oov>", "<bos>", "<eos>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenMode {
    OpsOnly,
    OpsAndOperands,
}

impl TokenMode {
    pub fn name(self) -> &'static str {
        match self {
            TokenMode::OpsOnly => "ops-only",
            TokenMode::OpsAndOperands => "ops-operands",
        }
    }

    /// Default fixed input length for models fed with this mode.
    pub fn default_max_len(self) -> usize {
        match self {
            TokenMode::OpsOnly => 112,
            TokenMode::OpsAndOperands => 256,
        }
    }
}

impl fmt::Display for TokenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TokenMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ops-only" => Ok(TokenMode::OpsOnly),
            "ops-operands" | "ops-and-operands" => Ok(TokenMode::OpsAndOperands),
            other => Err(format!("unknown tokenization mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizerError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("min_freq must be at least 1")]
    ZeroMinFreq,
    #[error("vocabulary line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Token string to id mapping. Ids 0-3 are reserved for PAD, OOV, BOS, EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// A vocabulary holding only the reserved tokens.
    pub fn reserved_only() -> Self {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for t in RESERVED_TOKENS {
            v.push(t.to_string());
        }
        v
    }

    fn push(&mut self, token: String) -> u32 {
        let id = self.id_to_token.len() as u32;
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
        id
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Id of `token`, or [`OOV`] if it is not in the vocabulary.
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(OOV)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Serializes as `<id>\t<token>` lines in id order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, tok) in self.id_to_token.iter().enumerate() {
            out.push_str(&format!("{id}\t{tok}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let mut v = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let err = |message: String| TokenizerError::Format { line, message };
            let (id, tok) = raw
                .split_once('\t')
                .ok_or_else(|| err("expected `<id><TAB><token>`".into()))?;
            let id: u32 = id.trim().parse().map_err(|_| err(format!("bad id `{id}`")))?;
            if id as usize != v.len() {
                return Err(err(format!("id {id} breaks contiguity, expected {}", v.len())));
            }
            if tok.is_empty() {
                return Err(err("empty token".into()));
            }
            if let Some(reserved) = RESERVED_TOKENS.get(id as usize) {
                if tok != *reserved {
                    return Err(err(format!("reserved id {id} must be `{reserved}`")));
                }
            } else if RESERVED_TOKENS.contains(&tok) {
                return Err(err(format!("reserved token `{tok}` at non-reserved id {id}")));
            }
            if v.token_to_id.contains_key(tok) {
                return Err(err(format!("duplicate token `{tok}`")));
            }
            v.push(tok.to_string());
        }
        if v.len() < RESERVED_TOKENS.len() {
            return Err(TokenizerError::Format {
                line: v.len() + 1,
                message: "reserved ids 0-3 missing".into(),
            });
        }
        Ok(v)
    }

    /// Hex SHA-256 of the serialized form; checkpoints record it.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Integer ids fed to a model.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mode: TokenMode,
    /// Length before padding or truncation.
    pub source_len: usize,
}

fn reference_token(def: Def, at: usize) -> String {
    match def {
        Def::Arg(j) => format!("@arg{j}"),
        Def::Op(i) => format!("@-{}", at - i),
    }
}

/// Content tokens of `f` in `mode`, without BOS/EOS. `f` must be valid.
pub fn token_strings(f: &GraphFunction, mode: TokenMode) -> Vec<String> {
    let mut out: Vec<String> = f.args.iter().map(|(_, s)| s.to_string()).collect();
    let sites = f.def_sites();
    let n = f.body.len();
    for (i, op) in f.body.iter().enumerate() {
        if mode == TokenMode::OpsAndOperands {
            out.push(format!("%{i}"));
        }
        out.push(op.opcode.to_string());
        if mode == TokenMode::OpsAndOperands {
            for id in &op.operands {
                out.push(reference_token(sites[id], i));
            }
        }
        out.push(op.result_shape.to_string());
    }
    for id in &f.returns {
        let def = sites[id];
        if mode == TokenMode::OpsAndOperands {
            out.push(reference_token(def, n));
        }
        out.push(f.shape_of(def).to_string());
    }
    out
}

/// Builds a vocabulary from every token with frequency >= `min_freq`,
/// ordered by descending frequency, ties by first occurrence.
pub fn build_vocab(
    corpus: &[GraphFunction],
    mode: TokenMode,
    min_freq: usize,
) -> Result<Vocabulary, TokenizerError> {
    if corpus.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    if min_freq == 0 {
        return Err(TokenizerError::ZeroMinFreq);
    }
    // token -> (count, first occurrence)
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    let mut order = 0usize;
    for f in corpus {
        for tok in token_strings(f, mode) {
            let entry = counts.entry(tok).or_insert((0, order));
            entry.0 += 1;
            order += 1;
        }
    }
    let mut kept: Vec<(String, usize, usize)> = counts
        .into_iter()
        .filter(|(_, (c, _))| *c >= min_freq)
        .map(|(t, (c, first))| (t, c, first))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let mut v = Vocabulary::reserved_only();
    for (tok, _, _) in kept {
        v.push(tok);
    }
    Ok(v)
}

fn tokenize_with(f: &GraphFunction, v: &Vocabulary, mode: TokenMode) -> TokenSequence {
    let mut ids = vec![BOS];
    ids.extend(token_strings(f, mode).iter().map(|t| v.id(t)));
    ids.push(EOS);
    TokenSequence {
        source_len: ids.len(),
        ids,
        mode,
    }
}

/// BOS, argument types, (opcode, result type) per op, returned types, EOS.
pub fn tokenize_ops_only(f: &GraphFunction, v: &Vocabulary) -> TokenSequence {
    tokenize_with(f, v, TokenMode::OpsOnly)
}

/// Like [`tokenize_ops_only`], with a position token before each opcode and a
/// distance-normalized reference per operand and per returned value.
pub fn tokenize_ops_operands(f: &GraphFunction, v: &Vocabulary) -> TokenSequence {
    tokenize_with(f, v, TokenMode::OpsAndOperands)
}

pub fn tokenize(f: &GraphFunction, v: &Vocabulary, mode: TokenMode) -> TokenSequence {
    tokenize_with(f, v, mode)
}

/// Right-pads with PAD, or truncates keeping BOS and ending in EOS.
///
/// # Panics
/// If `max_len < 2`.
pub fn pad_or_truncate(s: &TokenSequence, max_len: usize) -> TokenSequence {
    assert!(max_len >= 2, "max_len must leave room for BOS and EOS");
    let mut ids = s.ids.clone();
    if ids.len() > max_len {
        ids.truncate(max_len);
        ids[max_len - 1] = EOS;
    } else {
        ids.resize(max_len, PAD);
    }
    TokenSequence {
        ids,
        mode: s.mode,
        source_len: s.source_len,
    }
}

/// Fraction of non-PAD, non-boundary tokens that mapped to OOV.
pub fn oov_rate<'a>(seqs: impl IntoIterator<Item = &'a TokenSequence>) -> f64 {
    let (mut oov, mut total) = (0usize, 0usize);
    for s in seqs {
        for &id in &s.ids {
            if id == OOV {
                oov += 1;
            }
            if id != PAD && id != BOS && id != EOS {
                total += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        oov as f64 / total as f64
    }
}
