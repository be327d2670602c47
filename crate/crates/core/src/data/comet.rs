use std::path::Path;

use serde_json::Value;

use super::MultimodalExample;
use crate::error::{Error, Result};
use crate::vocab::TaskType;

pub const COMET_RELATIONS: [(&str, TaskType); 5] = [
    ("xIntent", TaskType::Intent),
    ("xWant", TaskType::Intent),
    ("xNeed", TaskType::Before),
    ("xReact", TaskType::After),
    ("xEffect", TaskType::After),
];

/// Maps a knowledge-base relation to the inference task it supervises.
pub fn map_comet_relation(relation: &str) -> Result<TaskType> {
    COMET_RELATIONS
        .iter()
        .find(|(r, _)| *r == relation)
        .map(|&(_, t)| t)
        .ok_or_else(|| Error::data(format!("unknown relation `{relation}`")))
}

/// Parses candidate descriptions. A line carrying `"relation"` gets its task
/// from the relation mapping (overriding any `"task"`); other lines must be
/// ordinary examples.
pub fn parse_candidates(text: &str, path: &Path) -> Result<Vec<MultimodalExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| Error::parse(path, i + 1, m);
        let mut v: Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if let Some(rel) = v.get("relation").cloned() {
            let rel = rel.as_str().ok_or_else(|| err("relation: expected a string".into()))?;
            let task = map_comet_relation(rel).map_err(|e| err(e.to_string()))?;
            v["task"] = Value::String(task.as_str().to_string());
        }
        let ex: MultimodalExample = serde_json::from_value(v).map_err(|e| err(e.to_string()))?;
        ex.validate().map_err(err)?;
        out.push(ex);
    }
    Ok(out)
}

pub fn load_candidates(path: &Path) -> Result<Vec<MultimodalExample>> {
    parse_candidates(&super::read_lines(path)?, path)
}
