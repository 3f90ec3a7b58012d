//! Config files supply default flag values. Two formats are accepted: a JSON
//! object, or lines of `key = value` with `#` comments. Keys are long flag
//! names without the leading dashes; `true` turns a switch on.

use std::path::Path;

use magic_mps::MagicError;
use serde_json::Value;

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, MagicError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let v: Value = serde_json::from_str(trimmed)?;
        let obj = v.as_object().ok_or_else(|| MagicError::Parse("config JSON must be an object".into()))?;
        return obj
            .iter()
            .map(|(k, v)| {
                let s = match v {
                    Value::String(s) => s.clone(),
                    Value::Bool(_) | Value::Number(_) => v.to_string(),
                    other => return Err(MagicError::Parse(format!("config key '{k}': unsupported value {other}"))),
                };
                Ok((k.clone(), s))
            })
            .collect();
    }
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| MagicError::Parse(format!("config line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(MagicError::Parse(format!("config line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn to_flags(pairs: &[(String, String)]) -> Vec<String> {
    let mut out = Vec::new();
    for (k, v) in pairs {
        let flag = format!("--{}", k.trim_start_matches('-'));
        match v.as_str() {
            "true" => out.push(flag),
            "false" => {}
            _ => {
                out.push(flag);
                out.push(v.clone());
            }
        }
    }
    out
}

/// Splices the flags of a `--config` file right after the subcommand, so
/// flags given on the command line win.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>, MagicError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut path = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            path = Some(it.next().ok_or_else(|| MagicError::InvalidArgument("--config needs a path".into()))?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = std::fs::read_to_string(Path::new(&path))?;
    let flags = to_flags(&parse_config(&text)?);
    if rest.len() < 2 {
        return Err(MagicError::InvalidArgument("--config needs a subcommand".into()));
    }
    let mut out: Vec<String> = rest[..2].to_vec();
    out.extend(flags);
    out.extend_from_slice(&rest[2..]);
    Ok(out)
}
