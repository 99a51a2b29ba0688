use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::types::{TaskError, TaskInstance};

const REQUIRED_KEYS: [&str; 4] = ["id", "context", "query", "answer"];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: invalid JSON: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing required key \"{key}\"")]
    MissingKey { line: usize, key: &'static str },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: TaskError },
}

/// Reads one task per non-blank line.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<TaskInstance>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    parse_dataset(&text)
}

/// `context` may be a single string or a list of documents; ids given as
/// numbers are read as text.
pub fn parse_dataset(text: &str) -> Result<Vec<TaskInstance>, DatasetError> {
    let mut tasks = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut value: Value = serde_json::from_str(raw).map_err(|e| DatasetError::Malformed { line, message: e.to_string() })?;
        let obj = value.as_object_mut().ok_or_else(|| DatasetError::Malformed { line, message: "expected a JSON object".into() })?;
        if !obj.contains_key("answer") {
            if let Some(gold) = obj.remove("gold_answer") {
                obj.insert("answer".into(), gold);
            }
        }
        if let Some(key) = REQUIRED_KEYS.iter().find(|k| !obj.contains_key(**k)) {
            return Err(DatasetError::MissingKey { line, key });
        }
        if let Some(Value::Number(n)) = obj.get("id") {
            let id = n.to_string();
            obj.insert("id".into(), Value::String(id));
        }
        if let Some(Value::String(doc)) = obj.get("context") {
            let docs = Value::Array(vec![Value::String(doc.clone())]);
            obj.insert("context".into(), docs);
        }
        let task: TaskInstance = serde_json::from_value(value).map_err(|e| DatasetError::Malformed { line, message: e.to_string() })?;
        task.validate().map_err(|source| DatasetError::Invalid { line, source })?;
        tasks.push(task);
    }
    Ok(tasks)
}
