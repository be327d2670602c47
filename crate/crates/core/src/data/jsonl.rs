use std::path::Path;

use serde::Serialize;

use super::MultimodalExample;
use crate::error::{Error, Result};

pub fn read_lines(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn with_source(source_id: &str, msg: String) -> String {
    if source_id.is_empty() {
        msg
    } else {
        format!("source_id `{source_id}`: {msg}")
    }
}

/// Error text for a line that failed to deserialize, naming its
/// `source_id` when the line is at least valid JSON.
pub(crate) fn describe(line: &str, err: serde_json::Error) -> String {
    let id = serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("source_id").and_then(|s| s.as_str()).map(str::to_string));
    with_source(id.as_deref().unwrap_or(""), err.to_string())
}

/// Parses one example per non-blank line; `path` only labels errors.
pub fn parse_jsonl(text: &str, path: &Path) -> Result<Vec<MultimodalExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: MultimodalExample = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, describe(line, e)))?;
        ex.validate()
            .map_err(|m| Error::parse(path, i + 1, with_source(&ex.source_id, m)))?;
        out.push(ex);
    }
    Ok(out)
}

/// Loads and validates a dataset; an empty file yields no examples.
pub fn load_jsonl(path: &Path) -> Result<Vec<MultimodalExample>> {
    parse_jsonl(&read_lines(path)?, path)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item).expect("serializable record"));
        s.push('\n');
    }
    s
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    std::fs::write(path, to_jsonl(items)).map_err(|e| Error::io(path, e))
}
