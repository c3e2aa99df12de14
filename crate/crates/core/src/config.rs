//! Flat `key = value` text with `#` comments.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KvEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses every line, collecting all syntax problems before failing.
pub fn parse_kv(text: &str) -> Result<Vec<KvEntry>> {
    let mut entries = Vec::new();
    let mut problems = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => {
                let key = k.trim().to_string();
                if entries.iter().any(|e: &KvEntry| e.key == key) {
                    problems.push(format!("line {}: duplicate key `{key}`", i + 1));
                }
                entries.push(KvEntry { key, value: v.trim().to_string(), line: i + 1 });
            }
            _ => problems.push(format!("line {}: expected `key = value`, got `{line}`", i + 1)),
        }
    }
    if problems.is_empty() { Ok(entries) } else { Err(Error::Config(problems.join("; "))) }
}

pub fn render_kv<K: AsRef<str>>(pairs: &[(K, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{} = {v}\n", k.as_ref())).collect()
}

pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{value}`"))),
    }
}
