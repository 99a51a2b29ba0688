use serde::{Deserialize, Serialize};

use crate::types::{normalize_answer, TaskInstance};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Normalized exact match, or a unique option match when options exist.
    #[default]
    Exact,
    /// Also accepts a prediction that contains the normalized gold span.
    SpanContainment,
}

pub fn score(predicted: Option<&str>, task: &TaskInstance) -> bool {
    score_with(predicted, task, ScoringMode::Exact)
}

pub fn score_with(predicted: Option<&str>, task: &TaskInstance, mode: ScoringMode) -> bool {
    let Some(predicted) = predicted else {
        return false;
    };
    let pred = normalize_answer(predicted);
    let gold = normalize_answer(&task.gold_answer);
    if let Some(options) = &task.options {
        let mut matching = options.iter().filter(|o| normalize_answer(o) == pred);
        return match (matching.next(), matching.next()) {
            (Some(only), None) => normalize_answer(only) == gold,
            _ => false,
        };
    }
    match mode {
        ScoringMode::Exact => pred == gold,
        ScoringMode::SpanContainment => !gold.is_empty() && pred.contains(&gold),
    }
}
