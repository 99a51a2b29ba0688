use std::fmt;
use std::io::Write;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scoring::{score_with, ScoringMode};
use crate::client::{estimate_tokens, CompletionRequest, LanguageModel};
use crate::exec::{self, Parallelism};
use crate::minion::{run_minion, MinionConfig};
use crate::minions::{run_minions, MinionsConfig};
use crate::retrieval::{parse_rag_answer, run_rag, EmbeddingProvider, RagConfig};
use crate::types::{ChatMessage, CostLedger, CostRates, ProtocolResult, Role, TaskInstance, Termination, TokenUsage, TranscriptEvent};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    RemoteOnly,
    LocalOnly,
    Minion,
    #[default]
    Minions,
    Rag,
}

impl Protocol {
    pub const ALL: [Protocol; 5] = [Protocol::RemoteOnly, Protocol::LocalOnly, Protocol::Minion, Protocol::Minions, Protocol::Rag];

    /// Accepts `remote-only` and `remote_only` spellings.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "remote_only" | "remote" => Some(Protocol::RemoteOnly),
            "local_only" | "local" => Some(Protocol::LocalOnly),
            "minion" => Some(Protocol::Minion),
            "minions" => Some(Protocol::Minions),
            "rag" => Some(Protocol::Rag),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::RemoteOnly => "remote_only",
            Protocol::LocalOnly => "local_only",
            Protocol::Minion => "minion",
            Protocol::Minions => "minions",
            Protocol::Rag => "rag",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Settings for the single-model baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Contexts whose prompt would exceed this many estimated tokens are cut.
    pub max_prefill_tokens: Option<u64>,
    pub remote_model: String,
    pub local_model: String,
    pub remote_temperature: f64,
    pub local_temperature: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            max_prefill_tokens: Some(128_000),
            remote_model: "remote".into(),
            local_model: "local".into(),
            remote_temperature: 0.0,
            local_temperature: 0.2,
        }
    }
}

const BASELINE_TEMPLATE: &str = "Below is a {doc_type}. Read it and answer the question that follows.

## Document
{context}

## Question
{query}
{options}
Think step by step, then reply with a JSON object:
```json
{\"explanation\": \"...\", \"answer\": \"...\"}
```";

fn render_baseline(task: &TaskInstance, context: &str) -> String {
    let options = match &task.options {
        Some(o) => format!("\nAnswer choices:\n{}\nYour answer must exactly match one of the answer choices.\n", o.join("\n")),
        None => String::new(),
    };
    BASELINE_TEMPLATE
        .replace("{doc_type}", &task.doc_type)
        .replace("{query}", &task.query)
        .replace("{options}", &options)
        .replace("{context}", context)
}

/// Full-context prompt, cut to `max_tokens` estimated tokens when needed.
/// Returns the prompt and whether the context was truncated.
pub(crate) fn baseline_prompt(task: &TaskInstance, max_tokens: Option<u64>) -> (String, bool) {
    let context = task.context.join("\n\n");
    let full = render_baseline(task, &context);
    let Some(max) = max_tokens else {
        return (full, false);
    };
    if estimate_tokens(&full) <= max {
        return (full, false);
    }
    let overhead = estimate_tokens(&render_baseline(task, ""));
    let keep_chars = (max.saturating_sub(overhead) * 4) as usize;
    let cut: String = context.chars().take(keep_chars).collect();
    (render_baseline(task, &cut), true)
}

/// Sends the whole context to one model in a single call.
pub fn run_baseline(model: &dyn LanguageModel, role: Role, task: &TaskInstance, config: &BaselineConfig) -> ProtocolResult {
    let ledger = CostLedger::new();
    let (prompt, truncated) = baseline_prompt(task, config.max_prefill_tokens);
    if truncated {
        tracing::warn!(task = %task.id, max_prefill_tokens = ?config.max_prefill_tokens, "context truncated for {role} baseline");
    }
    let (name, temperature) = match role {
        Role::Remote => (&config.remote_model, config.remote_temperature),
        Role::Local => (&config.local_model, config.local_temperature),
    };
    let request = CompletionRequest::new(name, vec![ChatMessage::user(prompt)], temperature);
    match model.complete(&request) {
        Ok(response) => {
            ledger.record(role, response.usage);
            let event = match role {
                Role::Remote => TranscriptEvent::RemoteMessage { round: 1, content: response.text.clone() },
                Role::Local => TranscriptEvent::LocalMessage { round: 1, content: response.text.clone() },
            };
            ProtocolResult {
                final_answer: parse_rag_answer(&response.text),
                rounds_used: 1,
                ledger,
                transcript: vec![event],
                terminated_by: Termination::FinalAnswer,
            }
        }
        Err(e) => ProtocolResult::error(1, ledger, Vec::new(), format!("{role} call failed: {e}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub protocol: Protocol,
    pub minion: MinionConfig,
    pub minions: MinionsConfig,
    pub rag: RagConfig,
    pub baseline: BaselineConfig,
    pub rates: CostRates,
    pub priced_roles: Vec<Role>,
    pub scoring: ScoringMode,
    /// Tasks in flight at once.
    pub task_concurrency: usize,
    pub parallelism: Parallelism,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::default(),
            minion: MinionConfig::default(),
            minions: MinionsConfig::default(),
            rag: RagConfig::default(),
            baseline: BaselineConfig::default(),
            rates: CostRates::default(),
            priced_roles: vec![Role::Remote],
            scoring: ScoringMode::Exact,
            task_concurrency: 4,
            parallelism: Parallelism::default(),
        }
    }
}

impl SuiteConfig {
    /// Short hash of the serialized configuration.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

/// Model endpoints used by a suite.
#[derive(Clone, Copy)]
pub struct Clients<'a> {
    pub local: &'a dyn LanguageModel,
    pub remote: &'a dyn LanguageModel,
    /// Used by embedding retrieval; the hashing embedder stands in when absent.
    pub embedder: Option<&'a dyn EmbeddingProvider>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub protocol: Protocol,
    pub predicted: Option<String>,
    pub correct: bool,
    pub remote_usage: TokenUsage,
    pub local_usage: TokenUsage,
    pub usd: Decimal,
    pub rounds: usize,
    pub terminated_by: Termination,
    pub error: Option<String>,
    pub config_fingerprint: String,
}

pub fn run_task(task: &TaskInstance, config: &SuiteConfig, clients: Clients<'_>, fingerprint: &str) -> RunRecord {
    let result = match config.protocol {
        Protocol::RemoteOnly => run_baseline(clients.remote, Role::Remote, task, &config.baseline),
        Protocol::LocalOnly => run_baseline(clients.local, Role::Local, task, &config.baseline),
        Protocol::Minion => run_minion(clients.local, clients.remote, task, &config.minion),
        Protocol::Minions => run_minions(clients.local, clients.remote, task, &config.minions),
        Protocol::Rag => run_rag(task, &config.rag, clients.remote, clients.embedder),
    };
    let error = match (&result.terminated_by, result.transcript.last()) {
        (Termination::Error, Some(TranscriptEvent::Error { message, .. })) => Some(message.clone()),
        _ => None,
    };
    let correct = score_with(result.final_answer.as_deref(), task, config.scoring);
    RunRecord {
        task_id: task.id.clone(),
        protocol: config.protocol,
        correct,
        remote_usage: result.ledger.remote(),
        local_usage: result.ledger.local(),
        usd: result.ledger.cost_usd(&config.rates, &config.priced_roles),
        rounds: result.rounds_used,
        terminated_by: result.terminated_by,
        predicted: result.final_answer,
        error,
        config_fingerprint: fingerprint.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub count: usize,
    pub correct: usize,
    pub accuracy: Decimal,
    pub total_usd: Decimal,
    pub mean_usd: Decimal,
    pub mean_remote_prefill: Decimal,
    pub mean_remote_decode: Decimal,
    pub mean_local_prefill: Decimal,
    pub mean_rounds: Decimal,
    /// (mean remote prefill tokens, accuracy).
    pub ib_proxy: (Decimal, Decimal),
}

pub fn aggregate(records: &[RunRecord]) -> AggregateReport {
    let count = records.len();
    let mean = |total: Decimal| if count == 0 { Decimal::ZERO } else { total / Decimal::from(count) };
    let sum_u64 = |f: fn(&RunRecord) -> u64| Decimal::from(records.iter().map(f).sum::<u64>());
    let correct = records.iter().filter(|r| r.correct).count();
    let total_usd: Decimal = records.iter().map(|r| r.usd).sum();
    let accuracy = mean(Decimal::from(correct));
    let mean_remote_prefill = mean(sum_u64(|r| r.remote_usage.prefill_tokens));
    AggregateReport {
        count,
        correct,
        accuracy,
        total_usd,
        mean_usd: mean(total_usd),
        mean_remote_prefill,
        mean_remote_decode: mean(sum_u64(|r| r.remote_usage.decode_tokens)),
        mean_local_prefill: mean(sum_u64(|r| r.local_usage.prefill_tokens)),
        mean_rounds: mean(sum_u64(|r| r.rounds as u64)),
        ib_proxy: (mean_remote_prefill, accuracy),
    }
}

impl fmt::Display for AggregateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tasks:               {}", self.count)?;
        writeln!(f, "accuracy:            {} ({}/{})", fmt_decimal(self.accuracy), self.correct, self.count)?;
        writeln!(f, "total usd:           {}", fmt_decimal(self.total_usd))?;
        writeln!(f, "mean usd:            {}", fmt_decimal(self.mean_usd))?;
        writeln!(f, "mean remote prefill: {}", fmt_decimal(self.mean_remote_prefill))?;
        writeln!(f, "mean remote decode:  {}", fmt_decimal(self.mean_remote_decode))?;
        writeln!(f, "mean local prefill:  {}", fmt_decimal(self.mean_local_prefill))?;
        write!(f, "mean rounds:         {}", fmt_decimal(self.mean_rounds))
    }
}

/// Rounds to 10 places and drops trailing zeros.
pub(crate) fn fmt_decimal(d: Decimal) -> String {
    d.round_dp(10).normalize().to_string()
}

/// Runs every task, `task_concurrency` at a time. Records come back sorted by task id.
pub fn run_suite(dataset: &[TaskInstance], config: &SuiteConfig, clients: Clients<'_>) -> (Vec<RunRecord>, AggregateReport) {
    let fingerprint = config.fingerprint();
    let Ok(mut records) = exec::try_map_batched(dataset, config.task_concurrency, config.parallelism, |task| {
        Ok::<_, std::convert::Infallible>(run_task(task, config, clients, &fingerprint))
    });
    records.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let report = aggregate(&records);
    (records, report)
}

pub fn write_records_csv<W: Write>(records: &[RunRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "task_id",
        "protocol",
        "predicted",
        "correct",
        "remote_prefill",
        "remote_decode",
        "local_prefill",
        "local_decode",
        "usd",
        "rounds",
        "terminated_by",
        "config_fingerprint",
    ])?;
    for r in records {
        let terminated = match r.terminated_by {
            Termination::FinalAnswer => "final_answer",
            Termination::MaxRoundsForced => "max_rounds_forced",
            Termination::Error => "error",
        };
        w.write_record([
            r.task_id.as_str(),
            r.protocol.as_str(),
            r.predicted.as_deref().unwrap_or(""),
            if r.correct { "true" } else { "false" },
            &r.remote_usage.prefill_tokens.to_string(),
            &r.remote_usage.decode_tokens.to_string(),
            &r.local_usage.prefill_tokens.to_string(),
            &r.local_usage.decode_tokens.to_string(),
            &fmt_decimal(r.usd),
            &r.rounds.to_string(),
            terminated,
            &r.config_fingerprint,
        ])?;
    }
    w.flush()?;
    Ok(())
}
