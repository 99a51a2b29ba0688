use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::suite::{fmt_decimal, run_suite, AggregateReport, Clients, SuiteConfig};
use crate::types::TaskInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    MaxRounds,
    SamplesPerTask,
    InstructionsPerRound,
    PagesPerChunk,
    RagK,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SweepError {
    #[error("unknown sweep axis \"{0}\" (expected max_rounds, samples_per_task, instructions_per_round, pages_per_chunk or rag_k)")]
    UnknownAxis(String),
    #[error("sweep needs at least one value")]
    NoValues,
    #[error("{axis} must be at least 1")]
    ZeroValue { axis: SweepAxis },
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self, SweepError> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "max_rounds" | "rounds" => Ok(Self::MaxRounds),
            "samples_per_task" | "samples" => Ok(Self::SamplesPerTask),
            "instructions_per_round" | "tasks_per_round" => Ok(Self::InstructionsPerRound),
            "pages_per_chunk" => Ok(Self::PagesPerChunk),
            "rag_k" => Ok(Self::RagK),
            _ => Err(SweepError::UnknownAxis(s.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MaxRounds => "max_rounds",
            Self::SamplesPerTask => "samples_per_task",
            Self::InstructionsPerRound => "instructions_per_round",
            Self::PagesPerChunk => "pages_per_chunk",
            Self::RagK => "rag_k",
        }
    }

    /// Sets this axis to `value` in `config`.
    pub fn apply(self, config: &mut SuiteConfig, value: usize) {
        match self {
            Self::MaxRounds => {
                config.minion.max_rounds = value;
                config.minions.max_rounds = value;
            }
            Self::SamplesPerTask => config.minions.knobs.samples_per_task = Some(value),
            Self::InstructionsPerRound => config.minions.knobs.tasks_per_round = Some(value),
            Self::PagesPerChunk => config.minions.knobs.pages_per_chunk = Some(value),
            Self::RagK => config.rag.k = value,
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: usize,
    pub report: AggregateReport,
}

/// Runs the suite once per value of `axis`.
pub fn sweep(
    dataset: &[TaskInstance],
    base: &SuiteConfig,
    axis: SweepAxis,
    values: &[usize],
    clients: Clients<'_>,
) -> Result<Vec<SweepRow>, SweepError> {
    if values.is_empty() {
        return Err(SweepError::NoValues);
    }
    if values.contains(&0) {
        return Err(SweepError::ZeroValue { axis });
    }
    Ok(values
        .iter()
        .map(|&value| {
            let mut config = base.clone();
            axis.apply(&mut config, value);
            let (_, report) = run_suite(dataset, &config, clients);
            SweepRow { axis, value, report }
        })
        .collect())
}

pub const SWEEP_COLUMNS: [&str; 7] = ["axis", "value", "accuracy", "mean_usd", "mean_remote_prefill", "mean_remote_decode", "mean_rounds"];

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for row in rows {
        let r = &row.report;
        w.write_record([
            row.axis.as_str().to_string(),
            row.value.to_string(),
            fmt_decimal(r.accuracy),
            fmt_decimal(r.mean_usd),
            fmt_decimal(r.mean_remote_prefill),
            fmt_decimal(r.mean_remote_decode),
            fmt_decimal(r.mean_rounds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut buf = Vec::new();
    write_sweep_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is UTF-8")
}
