//! Decompose / execute / aggregate protocol.
//!
//! Each round the remote model emits a [`DecompositionPlan`]. The plan is
//! expanded into the cross product instructions x chunks x samples, the jobs
//! run on the local model in bounded parallel batches, abstentions are dropped,
//! and the surviving outputs are handed back to the remote model, which either
//! answers or asks for another round.

mod prompts;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chunking::{Chunker, ChunkingError, ChunkingStrategy};
use crate::client::{
    complete_parsed, extract_json_block, json_feedback, CallError, ClientError, CompletionRequest, ExtractionError, LanguageModel,
    DEFAULT_MAX_RETRIES,
};
use crate::exec::{self, Parallelism};
use crate::minion::value_as_text;
use crate::types::{ChatMessage, CostLedger, JobManifest, JobOutput, ProtocolResult, Role, TaskInstance, Termination, TranscriptEvent};

pub use prompts::{DatasetFlavor, WorkerTemplate, FORCED_SYNTHESIS_SUFFIX};

// ---------------------------------------------------------------------------
// Plan

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanInstruction {
    pub task_id: u32,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionPlan {
    pub round_index: usize,
    pub instructions: Vec<PlanInstruction>,
    pub chunking: ChunkingStrategy,
    pub samples_per_task: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_filter: Option<Vec<String>>,
}

impl DecompositionPlan {
    /// Number of distinct instructions (k).
    pub fn instruction_count(&self) -> usize {
        self.instructions.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanLimits {
    pub max_instructions: usize,
    pub max_samples: usize,
}

impl Default for PlanLimits {
    fn default() -> Self {
        Self { max_instructions: 16, max_samples: 16 }
    }
}

/// Context needed to validate a plan.
#[derive(Debug, Clone, Default)]
pub struct PlanRules {
    pub round_index: usize,
    pub limits: PlanLimits,
    /// Chunk ids produced by earlier rounds; `chunk_filter` entries must be in it.
    pub known_chunk_ids: HashSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("plan is missing field \"{0}\"")]
    MissingField(&'static str),
    #[error("field \"{field}\" is invalid: {message}")]
    InvalidField { field: &'static str, message: String },
    #[error("field \"chunking\" is invalid: {0}")]
    Chunking(#[from] ChunkingError),
    #[error("task_id {0} appears more than once in \"instructions\"")]
    DuplicateTaskId(u32),
    #[error("field \"{field}\" exceeds the limit of {max}")]
    OverLimit { field: &'static str, max: usize },
    #[error("chunk_filter references unknown chunk_id \"{0}\"")]
    UnknownChunk(String),
}

impl PlanError {
    pub fn feedback(&self) -> String {
        match self {
            PlanError::Extraction(e) => json_feedback(e),
            other => format!("Your plan was rejected: {other}. Reply again with a corrected plan in a ```json block."),
        }
    }
}

fn invalid(field: &'static str, message: impl Into<String>) -> PlanError {
    PlanError::InvalidField { field, message: message.into() }
}

/// Parses and validates a plan from the remote reply.
pub fn parse_plan(remote_text: &str, rules: &PlanRules) -> Result<DecompositionPlan, PlanError> {
    let obj = extract_json_block(remote_text)?;

    let raw_instructions = obj
        .get("instructions")
        .ok_or(PlanError::MissingField("instructions"))?
        .as_array()
        .ok_or_else(|| invalid("instructions", "must be an array"))?;
    if raw_instructions.is_empty() {
        return Err(invalid("instructions", "must not be empty"));
    }
    if raw_instructions.len() > rules.limits.max_instructions {
        return Err(PlanError::OverLimit { field: "instructions", max: rules.limits.max_instructions });
    }
    let mut seen = HashSet::new();
    let mut instructions = Vec::with_capacity(raw_instructions.len());
    for item in raw_instructions {
        let task_id = item
            .get("task_id")
            .and_then(Value::as_u64)
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| invalid("task_id", "every instruction needs a non-negative integer task_id"))?;
        let instruction = item
            .get("instruction")
            .and_then(Value::as_str)
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| invalid("instruction", "every instruction needs non-empty text"))?
            .to_string();
        if !seen.insert(task_id) {
            return Err(PlanError::DuplicateTaskId(task_id));
        }
        let advice = item.get("advice").and_then(value_as_text).filter(|s| !s.trim().is_empty());
        instructions.push(PlanInstruction { task_id, instruction, advice });
    }

    let chunking = obj.get("chunking").ok_or(PlanError::MissingField("chunking"))?;
    let strategy = chunking.get("strategy").and_then(Value::as_str).ok_or_else(|| invalid("chunking", "needs a \"strategy\" string"))?;
    let chunking = ChunkingStrategy::from_parts(strategy, chunking.get("params").unwrap_or(&Value::Null))?;

    let samples = obj
        .get("samples_per_task")
        .ok_or(PlanError::MissingField("samples_per_task"))?
        .as_u64()
        .ok_or_else(|| invalid("samples_per_task", "must be a positive integer"))? as usize;
    if samples == 0 {
        return Err(invalid("samples_per_task", "must be at least 1"));
    }
    if samples > rules.limits.max_samples {
        return Err(PlanError::OverLimit { field: "samples_per_task", max: rules.limits.max_samples });
    }

    let chunk_filter = match obj.get("chunk_filter") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => {
            let ids = items
                .iter()
                .map(|v| v.as_str().map(str::to_string).ok_or_else(|| invalid("chunk_filter", "entries must be strings")))
                .collect::<Result<Vec<_>, _>>()?;
            if let Some(unknown) = ids.iter().find(|id| !rules.known_chunk_ids.contains(*id)) {
                return Err(PlanError::UnknownChunk(unknown.clone()));
            }
            Some(ids)
        }
        Some(_) => return Err(invalid("chunk_filter", "must be an array of chunk ids")),
    };

    Ok(DecompositionPlan { round_index: rules.round_index, instructions, chunking, samples_per_task: samples, chunk_filter })
}

// ---------------------------------------------------------------------------
// Expansion

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExpandError {
    #[error(transparent)]
    Chunking(#[from] ChunkingError),
    #[error("chunk_filter references unknown chunk_id \"{0}\"")]
    UnknownChunk(String),
    #[error("context is empty")]
    EmptyContext,
}

/// Numeric sort key for `"<doc>_<chunk>"` ids; malformed ids sort last by text.
fn chunk_sort_key(id: &str) -> (u64, u64, String) {
    let mut parts = id.splitn(2, '_').map(|p| p.parse::<u64>().ok());
    match (parts.next().flatten(), parts.next().flatten()) {
        (Some(d), Some(c)) => (d, c, String::new()),
        _ => (u64::MAX, u64::MAX, id.to_string()),
    }
}

/// Expands a plan into job manifests ordered by (task_id, chunk, sample).
///
/// With a `chunk_filter`, the chunks are taken from `prior_jobs` rather than
/// re-chunking the context, so ids keep meaning what they meant when they
/// were produced.
pub fn expand_plan(
    plan: &DecompositionPlan,
    context: &[String],
    prior_jobs: &[JobManifest],
    chunker: &Chunker,
) -> Result<Vec<JobManifest>, ExpandError> {
    if context.is_empty() {
        return Err(ExpandError::EmptyContext);
    }
    let chunks: Vec<(String, String)> = match &plan.chunk_filter {
        Some(filter) => {
            let mut picked = BTreeMap::new();
            for id in filter {
                let job = prior_jobs.iter().find(|j| &j.chunk_id == id).ok_or_else(|| ExpandError::UnknownChunk(id.clone()))?;
                picked.insert(chunk_sort_key(id), (id.clone(), job.chunk.clone()));
            }
            picked.into_values().collect()
        }
        None => chunker.chunk_context(context, &plan.chunking)?.into_iter().map(|c| (c.id(), c.text)).collect(),
    };

    let mut instructions: Vec<&PlanInstruction> = plan.instructions.iter().collect();
    instructions.sort_by_key(|i| i.task_id);

    let mut jobs = Vec::with_capacity(instructions.len() * chunks.len() * plan.samples_per_task);
    for instr in instructions {
        for (chunk_id, chunk) in &chunks {
            for sample_index in 0..plan.samples_per_task {
                jobs.push(JobManifest {
                    job_index: jobs.len(),
                    task_id: instr.task_id,
                    chunk_id: chunk_id.clone(),
                    chunk: chunk.clone(),
                    task: instr.instruction.clone(),
                    advice: instr.advice.clone(),
                    sample_index,
                });
            }
        }
    }
    Ok(jobs)
}

// ---------------------------------------------------------------------------
// Execution

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerSettings {
    pub model: String,
    pub temperature: f64,
    pub batch_size: usize,
    pub max_retries: usize,
    pub parallelism: Parallelism,
}

impl Default for WorkerSettings {
    fn default() -> Self {
        Self {
            model: "local".into(),
            temperature: DatasetFlavor::Finance.default_local_temperature(),
            batch_size: 8,
            max_retries: DEFAULT_MAX_RETRIES,
            parallelism: Parallelism::default(),
        }
    }
}

pub fn render_worker_prompt(template: WorkerTemplate, job: &JobManifest, question: &str) -> String {
    match template {
        WorkerTemplate::Extraction => prompts::FINANCE_WORKER
            .replace("{task}", &job.task)
            .replace("{advice}", job.advice.as_deref().unwrap_or(""))
            .replace("{context}", &job.chunk),
        WorkerTemplate::KeywordQuotes => {
            prompts::KEYWORD_WORKER.replace("{question}", question).replace("{task}", &job.task).replace("{context}", &job.chunk)
        }
    }
}

/// Null, absent, empty, or the string "none" in any casing.
pub fn is_none_marker(v: Option<&Value>) -> bool {
    match v {
        None | Some(Value::Null) => true,
        Some(Value::String(s)) => {
            let t = s.trim();
            t.is_empty() || t.eq_ignore_ascii_case("none")
        }
        _ => false,
    }
}

/// Interprets one worker reply.
pub fn parse_worker_output(template: WorkerTemplate, job_index: usize, text: &str) -> Result<JobOutput, ExtractionError> {
    let obj = extract_json_block(text)?;
    let output = match template {
        WorkerTemplate::Extraction => {
            let answer = (!is_none_marker(obj.get("answer"))).then(|| obj.get("answer").and_then(value_as_text)).flatten();
            let citation = (!is_none_marker(obj.get("citation"))).then(|| obj.get("citation").and_then(value_as_text)).flatten();
            let explanation = obj.get("explanation").and_then(value_as_text).unwrap_or_default();
            JobOutput { job_index, explanation, citation, abstained: answer.is_none(), answer }
        }
        WorkerTemplate::KeywordQuotes => {
            let found: serde_json::Map<String, Value> = obj
                .as_object()
                .map(|m| m.iter().filter(|(_, v)| !is_none_marker(Some(v))).map(|(k, v)| (k.clone(), v.clone())).collect())
                .unwrap_or_default();
            if found.is_empty() {
                JobOutput::abstain(job_index, "")
            } else {
                let answer = Value::Object(found).to_string();
                JobOutput { job_index, explanation: String::new(), citation: None, answer: Some(answer), abstained: false }
            }
        }
    };
    Ok(output)
}

/// Runs every job on the local model, at most `batch_size` at a time. Output
/// `i` always belongs to manifest `i`. A job whose reply cannot be parsed
/// after retries counts as an abstention; client failures abort the batch.
pub fn execute_jobs(
    local: &dyn LanguageModel,
    manifests: &[JobManifest],
    template: WorkerTemplate,
    question: &str,
    settings: &WorkerSettings,
    ledger: &CostLedger,
) -> Result<Vec<JobOutput>, ClientError> {
    exec::try_map_batched(manifests, settings.batch_size, settings.parallelism, |job| {
        let request = CompletionRequest::new(
            &settings.model,
            vec![ChatMessage::user(render_worker_prompt(template, job, question))],
            settings.temperature,
        );
        let parsed = complete_parsed(local, &request, Role::Local, ledger, settings.max_retries, |text| {
            parse_worker_output(template, job.job_index, text).map_err(|e| json_feedback(&e))
        });
        match parsed {
            Ok(p) => Ok(p.value),
            Err(CallError::Rejected { .. }) => Ok(JobOutput::abstain(job.job_index, "unparseable worker output")),
            Err(CallError::Client(e)) => Err(e),
        }
    })
}

// ---------------------------------------------------------------------------
// Filtering and formatting

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub jobs_created: usize,
    pub jobs_kept: usize,
    pub abstain_fraction: f64,
}

impl RoundReport {
    pub fn new(jobs_created: usize, jobs_kept: usize) -> Self {
        let abstain_fraction = if jobs_created == 0 { 0.0 } else { (jobs_created - jobs_kept) as f64 / jobs_created as f64 };
        Self { jobs_created, jobs_kept, abstain_fraction }
    }

    /// Fraction of jobs that did not abstain.
    pub fn keep_fraction(&self) -> f64 {
        if self.jobs_created == 0 {
            0.0
        } else {
            self.jobs_kept as f64 / self.jobs_created as f64
        }
    }
}

pub fn filter_abstentions(outputs: Vec<JobOutput>) -> (Vec<JobOutput>, RoundReport) {
    let created = outputs.len();
    let kept: Vec<JobOutput> = outputs.into_iter().filter(|o| !o.abstained).collect();
    let report = RoundReport::new(created, kept.len());
    (kept, report)
}

pub const EMPTY_SYNTHESIS_INPUT: &str = "No job returned relevant information.";

/// Header that opens every entry in the synthesis input.
pub const JOB_ENTRY_PREFIX: &str = "### Job ";

/// Renders kept outputs, in order, as the text handed to synthesis.
pub fn format_for_synthesis(kept: &[JobOutput], manifests: &[JobManifest]) -> String {
    if kept.is_empty() {
        return EMPTY_SYNTHESIS_INPUT.to_string();
    }
    kept.iter()
        .map(|out| {
            let job = manifests.iter().find(|m| m.job_index == out.job_index);
            let field = |f: fn(&JobManifest) -> String| job.map(f).unwrap_or_else(|| "unknown".into());
            format!(
                "{JOB_ENTRY_PREFIX}{}\ntask_id: {}\nchunk_id: {}\ninstruction: {}\nexplanation: {}\ncitation: {}\nanswer: {}",
                out.job_index,
                field(|m| m.task_id.to_string()),
                field(|m| m.chunk_id.clone()),
                field(|m| m.task.clone()),
                out.explanation,
                out.citation.as_deref().unwrap_or("None"),
                out.answer.as_deref().unwrap_or("None"),
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

// ---------------------------------------------------------------------------
// Synthesis

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    ProvideFinalAnswer,
    RequestAdditionalInfo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisDecision {
    pub decision: Decision,
    pub explanation: String,
    pub answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("synthesis reply is missing \"{0}\"")]
    MissingField(&'static str),
    #[error("unknown decision \"{0}\"")]
    UnknownDecision(String),
    #[error("a final answer is required in the last round")]
    AnswerRequired,
}

impl SynthesisError {
    fn feedback(&self) -> String {
        match self {
            SynthesisError::Extraction(e) => json_feedback(e),
            SynthesisError::AnswerRequired => {
                "This is the final round: \"decision\" must be \"provide_final_answer\" and \"answer\" must hold your best answer."
                    .to_string()
            }
            other => format!("Your last reply could not be used: {other}. Reply again with the required JSON object."),
        }
    }
}

pub fn parse_synthesis(text: &str, is_final_round: bool) -> Result<SynthesisDecision, SynthesisError> {
    let obj = extract_json_block(text)?;
    let raw_decision = obj.get("decision").and_then(Value::as_str).ok_or(SynthesisError::MissingField("decision"))?;
    let decision = match raw_decision.trim().to_ascii_lowercase().as_str() {
        "provide_final_answer" => Decision::ProvideFinalAnswer,
        "request_additional_info" | "need more information" => Decision::RequestAdditionalInfo,
        _ => return Err(SynthesisError::UnknownDecision(raw_decision.to_string())),
    };
    let explanation = obj.get("explanation").and_then(value_as_text).unwrap_or_default();
    let answer = obj
        .get("answer")
        .filter(|v| !matches!(v, Value::Null))
        .and_then(value_as_text)
        .filter(|s| !s.trim().is_empty() && !s.trim().eq_ignore_ascii_case("null"));
    match decision {
        Decision::ProvideFinalAnswer if answer.is_none() => Err(SynthesisError::MissingField("answer")),
        Decision::ProvideFinalAnswer => Ok(SynthesisDecision { decision, explanation, answer }),
        Decision::RequestAdditionalInfo if is_final_round => Err(SynthesisError::AnswerRequired),
        Decision::RequestAdditionalInfo => Ok(SynthesisDecision { decision, explanation, answer: None }),
    }
}

pub fn build_synthesis_prompt(extractions: &str, query: &str, is_final_round: bool, flavor: DatasetFlavor) -> String {
    let mut prompt = prompts::synthesis_template(flavor).replace("{question}", query).replace("{extractions}", extractions);
    if is_final_round {
        prompt.push_str(FORCED_SYNTHESIS_SUFFIX);
    }
    prompt
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StepError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("remote reply rejected after {attempts} attempt(s): {feedback}")]
    Rejected { attempts: usize, feedback: String },
}

impl From<CallError> for StepError {
    fn from(e: CallError) -> Self {
        match e {
            CallError::Client(c) => StepError::Client(c),
            CallError::Rejected { attempts, feedback, .. } => StepError::Rejected { attempts, feedback },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSettings {
    pub model: String,
    pub temperature: f64,
    pub max_retries: usize,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self { model: "remote".into(), temperature: 0.0, max_retries: DEFAULT_MAX_RETRIES }
    }
}

/// Asks the remote model to judge the collected outputs. On the final round
/// only a final answer is accepted.
pub fn synthesize(
    remote: &dyn LanguageModel,
    extractions: &str,
    query: &str,
    is_final_round: bool,
    flavor: DatasetFlavor,
    settings: &RemoteSettings,
    ledger: &CostLedger,
) -> Result<SynthesisDecision, StepError> {
    let request = CompletionRequest::new(
        &settings.model,
        vec![ChatMessage::user(build_synthesis_prompt(extractions, query, is_final_round, flavor))],
        settings.temperature,
    );
    let parsed = complete_parsed(remote, &request, Role::Remote, ledger, settings.max_retries, |text| {
        parse_synthesis(text, is_final_round).map_err(|e| e.feedback())
    })?;
    Ok(parsed.value)
}

// ---------------------------------------------------------------------------
// Round strategy

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStrategyKind {
    /// Only the remote model's advice carries over.
    #[default]
    SimpleRetries,
    /// The remote model's notes accumulate across rounds.
    Scratchpad,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundStrategy {
    pub kind: RoundStrategyKind,
    pub scratchpad_text: String,
    pub carried_advice: String,
}

impl RoundStrategy {
    pub fn new(kind: RoundStrategyKind) -> Self {
        Self { kind, ..Default::default() }
    }

    /// Folds a finished round into the carried state.
    pub fn record_round(&mut self, round: usize, decision: &SynthesisDecision, findings: &str) {
        match self.kind {
            RoundStrategyKind::SimpleRetries => self.carried_advice = decision.explanation.clone(),
            RoundStrategyKind::Scratchpad => {
                self.scratchpad_text.push_str(&format!("Round {round}: {}\n", decision.explanation));
                if !findings.is_empty() {
                    self.scratchpad_text.push_str(findings);
                    self.scratchpad_text.push('\n');
                }
            }
        }
    }

    /// Text injected into the next decomposition prompt.
    pub fn carry_over(&self) -> Option<String> {
        match self.kind {
            RoundStrategyKind::SimpleRetries if !self.carried_advice.is_empty() => {
                Some(format!("## Advice from the previous round\n{}", self.carried_advice))
            }
            RoundStrategyKind::Scratchpad if !self.scratchpad_text.is_empty() => {
                Some(format!("## Scratchpad\n{}", self.scratchpad_text.trim_end()))
            }
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Decomposition prompt

/// Overrides a sweep can pin regardless of what the remote model plans.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanKnobs {
    pub pages_per_chunk: Option<usize>,
    pub tasks_per_round: Option<usize>,
    pub samples_per_task: Option<usize>,
}

impl PlanKnobs {
    /// Applies the pinned values to a parsed plan.
    pub fn apply(&self, plan: &mut DecompositionPlan) {
        if let Some(ppc) = self.pages_per_chunk {
            if plan.chunk_filter.is_none() {
                plan.chunking = ChunkingStrategy::MultiPage { pages_per_chunk: ppc.max(1) };
            }
        }
        if let Some(n) = self.tasks_per_round {
            plan.instructions.truncate(n.max(1));
        }
        if let Some(s) = self.samples_per_task {
            plan.samples_per_task = s.max(1);
        }
    }
}

pub const DEFAULT_PAGES_PER_CHUNK_HINT: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeInput<'a> {
    pub query: &'a str,
    pub round_index: usize,
    pub strategy: &'a RoundStrategy,
    pub prior_round_summary: Option<&'a str>,
    pub flavor: DatasetFlavor,
    pub knobs: PlanKnobs,
    pub limits: PlanLimits,
}

pub fn build_decompose_prompt(input: &DecomposeInput<'_>) -> Vec<ChatMessage> {
    let head = match input.flavor {
        DatasetFlavor::Finance => prompts::FINANCE_DECOMPOSE
            .replace("{pages_per_chunk}", &input.knobs.pages_per_chunk.unwrap_or(DEFAULT_PAGES_PER_CHUNK_HINT).to_string()),
        DatasetFlavor::LongHealth | DatasetFlavor::Qasper => prompts::GENERAL_DECOMPOSE.to_string(),
    };
    let mut prompt = head.replace("{step_number}", &input.round_index.to_string());

    let mut advanced = Vec::new();
    if let Some(n) = input.knobs.tasks_per_round {
        advanced.push(format!("Use at most {n} distinct task(s)."));
    }
    if let Some(s) = input.knobs.samples_per_task {
        advanced.push(format!("Set \"samples_per_task\" to {s}."));
    }
    if let Some(carry) = input.strategy.carry_over() {
        advanced.push(carry);
    }
    if let Some(summary) = input.prior_round_summary {
        advanced.push(format!("## Previous rounds\n{summary}"));
    }
    if !advanced.is_empty() {
        prompt.push('\n');
        prompt.push_str(&advanced.join("\n\n"));
        prompt.push('\n');
    }

    prompt.push_str(&format!("\n## Question\n{}\n", input.query));
    prompt.push_str(
        &prompts::PLAN_FORMAT
            .replace("{max_tasks}", &input.limits.max_instructions.to_string())
            .replace("{max_samples}", &input.limits.max_samples.to_string()),
    );
    vec![ChatMessage::user(prompt)]
}

/// Summarizes a finished round for the next decomposition prompt, truncated
/// to `budget_chars`.
pub fn summarize_round(
    round: usize,
    report: &RoundReport,
    decision: &SynthesisDecision,
    kept: &[JobOutput],
    manifests: &[JobManifest],
    budget_chars: usize,
) -> String {
    let mut text = format!(
        "Round {round}: {} job(s) created, {} returned an answer (abstain fraction {:.3}).\nSynthesis: {}\n",
        report.jobs_created, report.jobs_kept, report.abstain_fraction, decision.explanation
    );
    text.push_str(&findings_text(kept, manifests));
    truncate_chars(&text, budget_chars)
}

fn findings_text(kept: &[JobOutput], manifests: &[JobManifest]) -> String {
    if kept.is_empty() {
        return String::new();
    }
    let mut text = String::from("Answers returned (usable in \"chunk_filter\"):\n");
    for out in kept {
        let chunk = manifests.iter().find(|m| m.job_index == out.job_index).map(|m| (m.task_id, m.chunk_id.as_str()));
        if let Some((task_id, chunk_id)) = chunk {
            text.push_str(&format!(
                "- job {} (task {task_id}, chunk {chunk_id}): {}\n",
                out.job_index,
                out.answer.as_deref().unwrap_or("None")
            ));
        }
    }
    text
}

fn truncate_chars(text: &str, budget: usize) -> String {
    match text.char_indices().nth(budget) {
        Some((i, _)) => format!("{}\n[truncated]", &text[..i]),
        None => text.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Protocol loop

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinionsConfig {
    pub max_rounds: usize,
    pub round_strategy: RoundStrategyKind,
    pub batch_size: usize,
    pub remote_temperature: f64,
    /// `None` uses the flavor's default.
    pub local_temperature: Option<f64>,
    pub flavor: DatasetFlavor,
    pub remote_model: String,
    pub local_model: String,
    pub max_retries: usize,
    pub limits: PlanLimits,
    pub knobs: PlanKnobs,
    pub summary_budget_chars: usize,
    pub parallelism: Parallelism,
    /// Regex overriding the form-feed page delimiter.
    pub page_pattern: Option<String>,
}

impl Default for MinionsConfig {
    fn default() -> Self {
        Self {
            max_rounds: 3,
            round_strategy: RoundStrategyKind::SimpleRetries,
            batch_size: 8,
            remote_temperature: 0.0,
            local_temperature: None,
            flavor: DatasetFlavor::Finance,
            remote_model: "remote".into(),
            local_model: "local".into(),
            max_retries: DEFAULT_MAX_RETRIES,
            limits: PlanLimits::default(),
            knobs: PlanKnobs::default(),
            summary_budget_chars: 4000,
            parallelism: Parallelism::default(),
            page_pattern: None,
        }
    }
}

impl MinionsConfig {
    fn worker_settings(&self) -> WorkerSettings {
        WorkerSettings {
            model: self.local_model.clone(),
            temperature: self.local_temperature.unwrap_or_else(|| self.flavor.default_local_temperature()),
            batch_size: self.batch_size,
            max_retries: self.max_retries,
            parallelism: self.parallelism,
        }
    }

    fn remote_settings(&self) -> RemoteSettings {
        RemoteSettings { model: self.remote_model.clone(), temperature: self.remote_temperature, max_retries: self.max_retries }
    }
}

pub fn run_minions(local: &dyn LanguageModel, remote: &dyn LanguageModel, task: &TaskInstance, config: &MinionsConfig) -> ProtocolResult {
    let ledger = CostLedger::new();
    let mut transcript = Vec::new();
    let chunker = match config.page_pattern.as_deref().map(Chunker::with_page_pattern).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => return ProtocolResult::error(1, ledger, transcript, e.to_string()),
    };
    let max_rounds = config.max_rounds.max(1);
    let worker = config.worker_settings();
    let remote_settings = config.remote_settings();
    let template = config.flavor.worker_template();

    let mut strategy = RoundStrategy::new(config.round_strategy);
    let mut prior_jobs: Vec<JobManifest> = Vec::new();
    let mut summaries: Vec<String> = Vec::new();

    for round in 1..=max_rounds {
        let is_final = round == max_rounds;
        let summary = (!summaries.is_empty()).then(|| summaries.join("\n"));
        let messages = build_decompose_prompt(&DecomposeInput {
            query: &task.query,
            round_index: round,
            strategy: &strategy,
            prior_round_summary: summary.as_deref(),
            flavor: config.flavor,
            knobs: config.knobs,
            limits: config.limits,
        });
        let rules = PlanRules {
            round_index: round,
            limits: config.limits,
            known_chunk_ids: prior_jobs.iter().map(|j| j.chunk_id.clone()).collect(),
        };
        let request = CompletionRequest::new(&config.remote_model, messages, config.remote_temperature);
        let plan = complete_parsed(remote, &request, Role::Remote, &ledger, config.max_retries, |text| {
            parse_plan(text, &rules).map_err(|e| e.feedback())
        });
        let mut plan = match plan {
            Ok(p) => p.value,
            Err(e) => return ProtocolResult::error(round, ledger, transcript, format!("decomposition failed: {e}")),
        };
        config.knobs.apply(&mut plan);
        transcript.push(TranscriptEvent::Plan { round, plan: plan.clone() });

        let manifests = match expand_plan(&plan, &task.context, &prior_jobs, &chunker) {
            Ok(m) => m,
            Err(e) => return ProtocolResult::error(round, ledger, transcript, format!("plan expansion failed: {e}")),
        };
        let outputs = match execute_jobs(local, &manifests, template, &task.query, &worker, &ledger) {
            Ok(o) => o,
            Err(e) => return ProtocolResult::error(round, ledger, transcript, format!("job execution failed: {e}")),
        };
        let (kept, report) = filter_abstentions(outputs);
        transcript.push(TranscriptEvent::JobBatch { round, report: report.clone() });

        let extractions = format_for_synthesis(&kept, &manifests);
        let decision = match synthesize(remote, &extractions, &task.query, is_final, config.flavor, &remote_settings, &ledger) {
            Ok(d) => d,
            Err(e) => return ProtocolResult::error(round, ledger, transcript, format!("synthesis failed: {e}")),
        };
        transcript.push(TranscriptEvent::Synthesis { round, decision: decision.clone() });

        if decision.decision == Decision::ProvideFinalAnswer {
            return ProtocolResult {
                final_answer: decision.answer,
                rounds_used: round,
                ledger,
                transcript,
                terminated_by: if is_final { Termination::MaxRoundsForced } else { Termination::FinalAnswer },
            };
        }

        strategy.record_round(round, &decision, &findings_text(&kept, &manifests));
        summaries.push(summarize_round(round, &report, &decision, &kept, &manifests, config.summary_budget_chars));
        prior_jobs.extend(manifests);
    }
    unreachable!("the final round either answers or errors")
}
