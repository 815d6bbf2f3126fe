//! Flat `key value` text files. Accepts `key value`, `key: value` and
//! `key = value`; `#` starts a comment.

use crate::error::{Error, Result};

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let split_at = line
            .find(|c: char| c == '=' || c == ':' || c.is_whitespace())
            .ok_or_else(|| Error::Config(format!("line {}: expected `key value`, got `{line}`", n + 1)))?;
        let key = line[..split_at].trim();
        let value = line[split_at..]
            .trim_start_matches(|c: char| c.is_whitespace())
            .trim_start_matches(['=', ':'])
            .trim();
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config(format!("line {}: expected `key value`, got `{line}`", n + 1)));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

pub fn format(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

/// Python-style and lowercase booleans.
pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got `{value}`"))),
    }
}

pub fn unknown_key(key: &str, valid: &[&str]) -> Error {
    Error::UnknownKey {
        key: key.to_string(),
        valid: valid.join(", "),
    }
}
