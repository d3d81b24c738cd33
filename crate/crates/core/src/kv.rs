//! Line-oriented `key = value` files, used for machine configs, CLI config
//! overrides and metric reports.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct KvError {
    pub line: usize,
    pub message: String,
}

/// Parses `key = value` lines in file order. Blank lines and lines starting
/// with `#` are skipped; duplicate keys are an error.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, KvError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| KvError {
            line: n + 1,
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err("expected `key = value`".into()))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(err("empty key".into()));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(err(format!("duplicate key `{k}`")));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub fn render<K: AsRef<str>, V: std::fmt::Display>(pairs: impl IntoIterator<Item = (K, V)>) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(&format!("{} = {}\n", k.as_ref(), v));
    }
    out
}
