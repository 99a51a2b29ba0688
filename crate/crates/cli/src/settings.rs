//! Run settings shared by the command line and the TOML config file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use minions_core::harness::{Protocol, ScoringMode, SuiteConfig, SweepAxis};
use minions_core::minions::RoundStrategyKind;
use minions_core::retrieval::RetrieverKind;
use minions_core::Parallelism;
use rust_decimal::Decimal;
use serde::Deserialize;

/// Every field is optional so command-line values can be layered over file
/// values, which are layered over the library defaults.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// remote_only, local_only, minion, minions or rag.
    #[arg(long)]
    pub protocol: Option<String>,
    /// JSONL dataset with id, context, query and answer per line.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Base URL of an OpenAI-compatible server for the local model.
    #[arg(long)]
    pub local_url: Option<String>,
    /// Base URL of an OpenAI-compatible server for the remote model.
    #[arg(long)]
    pub remote_url: Option<String>,
    #[arg(long)]
    pub local_model: Option<String>,
    #[arg(long)]
    pub remote_model: Option<String>,
    /// JSON file {"local": script, "remote": script} replacing both servers.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// retries or scratchpad.
    #[arg(long)]
    pub round_strategy: Option<String>,
    /// Samples per instruction.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub instructions_per_round: Option<usize>,
    #[arg(long)]
    pub pages_per_chunk: Option<usize>,
    /// Local jobs in flight at once.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Tasks in flight at once.
    #[arg(long)]
    pub task_concurrency: Option<usize>,
    #[arg(long)]
    pub rag_k: Option<usize>,
    /// bm25 or embedding.
    #[arg(long)]
    pub rag_retriever: Option<String>,
    /// Embeddings server; the hashing embedder is used when absent.
    #[arg(long)]
    pub embed_url: Option<String>,
    #[arg(long)]
    pub embed_model: Option<String>,
    /// exact or span.
    #[arg(long)]
    pub scoring: Option<String>,
    #[arg(long)]
    pub usd_per_prefill_token: Option<String>,
    #[arg(long)]
    pub usd_per_decode_token: Option<String>,
    /// Disable data-parallel execution.
    #[arg(long)]
    pub sequential: Option<bool>,
}

macro_rules! layer {
    ($top:expr, $bottom:expr, $($field:ident),+ $(,)?) => {
        Settings { $($field: $top.$field.or($bottom.$field)),+ }
    };
}

impl Settings {
    /// Values set in `self` win over values in `lower`.
    pub fn over(self, lower: Settings) -> Settings {
        layer!(
            self,
            lower,
            protocol,
            dataset,
            local_url,
            remote_url,
            local_model,
            remote_model,
            mock_script,
            max_rounds,
            round_strategy,
            samples,
            instructions_per_round,
            pages_per_chunk,
            batch_size,
            task_concurrency,
            rag_k,
            rag_retriever,
            embed_url,
            embed_model,
            scoring,
            usd_per_prefill_token,
            usd_per_decode_token,
            sequential,
        )
    }

    pub fn from_toml(text: &str) -> Result<Settings> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Settings::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset.as_deref().ok_or_else(|| anyhow!("no dataset given; pass --dataset or set `dataset` in the config file"))
    }

    pub fn suite_config(&self) -> Result<SuiteConfig> {
        let mut config = SuiteConfig::default();
        if let Some(p) = &self.protocol {
            config.protocol = Protocol::parse(p).ok_or_else(|| anyhow!("unknown protocol `{p}`"))?;
        }
        let knobs = [
            (SweepAxis::MaxRounds, self.max_rounds),
            (SweepAxis::SamplesPerTask, self.samples),
            (SweepAxis::InstructionsPerRound, self.instructions_per_round),
            (SweepAxis::PagesPerChunk, self.pages_per_chunk),
            (SweepAxis::RagK, self.rag_k),
        ];
        for (axis, value) in knobs {
            if let Some(v) = value {
                if v == 0 {
                    bail!("{axis} must be at least 1");
                }
                axis.apply(&mut config, v);
            }
        }
        if let Some(s) = &self.round_strategy {
            config.minions.round_strategy = parse_round_strategy(s)?;
        }
        if let Some(b) = self.batch_size {
            config.minions.batch_size = b.max(1);
        }
        if let Some(t) = self.task_concurrency {
            config.task_concurrency = t.max(1);
        }
        if let Some(r) = &self.rag_retriever {
            config.rag.retriever = parse_retriever(r)?;
        }
        if let Some(s) = &self.scoring {
            config.scoring = parse_scoring(s)?;
        }
        if let Some(m) = &self.local_model {
            config.minion.local_model.clone_from(m);
            config.minions.local_model.clone_from(m);
            config.baseline.local_model.clone_from(m);
        }
        if let Some(m) = &self.remote_model {
            config.minion.remote_model.clone_from(m);
            config.minions.remote_model.clone_from(m);
            config.baseline.remote_model.clone_from(m);
            config.rag.remote_model.clone_from(m);
        }
        if let Some(r) = &self.usd_per_prefill_token {
            config.rates.usd_per_prefill_token = parse_rate(r)?;
        }
        if let Some(r) = &self.usd_per_decode_token {
            config.rates.usd_per_decode_token = parse_rate(r)?;
        }
        if self.sequential == Some(true) {
            config.parallelism = Parallelism::Sequential;
            config.minions.parallelism = Parallelism::Sequential;
            config.rag.parallelism = Parallelism::Sequential;
        }
        Ok(config)
    }
}

fn parse_round_strategy(s: &str) -> Result<RoundStrategyKind> {
    match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
        "retries" | "simple_retries" => Ok(RoundStrategyKind::SimpleRetries),
        "scratchpad" => Ok(RoundStrategyKind::Scratchpad),
        _ => bail!("unknown round strategy `{s}` (expected retries or scratchpad)"),
    }
}

fn parse_retriever(s: &str) -> Result<RetrieverKind> {
    match s.trim().to_ascii_lowercase().as_str() {
        "bm25" => Ok(RetrieverKind::Bm25),
        "embedding" | "embeddings" => Ok(RetrieverKind::Embedding),
        _ => bail!("unknown retriever `{s}` (expected bm25 or embedding)"),
    }
}

fn parse_scoring(s: &str) -> Result<ScoringMode> {
    match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
        "exact" => Ok(ScoringMode::Exact),
        "span" | "span_containment" => Ok(ScoringMode::SpanContainment),
        _ => bail!("unknown scoring mode `{s}` (expected exact or span)"),
    }
}

fn parse_rate(s: &str) -> Result<Decimal> {
    let rate =
        Decimal::from_str(s.trim()).or_else(|_| Decimal::from_scientific(s.trim())).with_context(|| format!("invalid rate `{s}`"))?;
    if rate.is_sign_negative() {
        bail!("rate `{s}` is negative");
    }
    Ok(rate)
}
