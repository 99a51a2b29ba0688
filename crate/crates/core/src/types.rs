//! Shared domain types: tasks, chat messages, job manifests, token ledger and
//! protocol results.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::minions::{DecompositionPlan, RoundReport, SynthesisDecision};

/// One benchmark item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub context: Vec<String>,
    pub query: String,
    #[serde(rename = "answer")]
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default = "default_doc_type")]
    pub doc_type: String,
}

fn default_doc_type() -> String {
    "document".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaskError {
    #[error("task {0}: context must contain at least one document")]
    EmptyContext(String),
    #[error("task {0}: query is empty")]
    EmptyQuery(String),
    #[error("task {0}: gold answer does not match any option")]
    GoldNotInOptions(String),
}

impl TaskInstance {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.context.is_empty() {
            return Err(TaskError::EmptyContext(self.id.clone()));
        }
        if self.query.trim().is_empty() {
            return Err(TaskError::EmptyQuery(self.id.clone()));
        }
        if let Some(options) = &self.options {
            let gold = normalize_answer(&self.gold_answer);
            if !options.iter().any(|o| normalize_answer(o) == gold) {
                return Err(TaskError::GoldNotInOptions(self.id.clone()));
            }
        }
        Ok(())
    }

    /// Total characters across all context documents.
    pub fn context_chars(&self) -> usize {
        self.context.iter().map(|d| d.chars().count()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: ChatRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: ChatRole::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: ChatRole::Assistant, content: content.into() }
    }
}

/// A single local subtask: one instruction applied to one chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobManifest {
    pub job_index: usize,
    pub task_id: u32,
    /// `"<doc_index>_<chunk_index>"`.
    pub chunk_id: String,
    pub chunk: String,
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advice: Option<String>,
    pub sample_index: usize,
}

/// Structured result of one job. `abstained` is true exactly when `answer` is `None`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobOutput {
    pub job_index: usize,
    pub explanation: String,
    pub citation: Option<String>,
    pub answer: Option<String>,
    pub abstained: bool,
}

impl JobOutput {
    pub fn abstain(job_index: usize, explanation: impl Into<String>) -> Self {
        Self { job_index, explanation: explanation.into(), citation: None, answer: None, abstained: true }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prefill_tokens: u64,
    pub decode_tokens: u64,
}

impl TokenUsage {
    pub const fn new(prefill_tokens: u64, decode_tokens: u64) -> Self {
        Self { prefill_tokens, decode_tokens }
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage { prefill_tokens: self.prefill_tokens + rhs.prefill_tokens, decode_tokens: self.decode_tokens + rhs.decode_tokens }
    }
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

/// USD price per prefill and per decode token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRates {
    pub usd_per_prefill_token: Decimal,
    pub usd_per_decode_token: Decimal,
}

impl CostRates {
    pub fn new(usd_per_prefill_token: Decimal, usd_per_decode_token: Decimal) -> Self {
        Self { usd_per_prefill_token, usd_per_decode_token }
    }

    /// Decode-to-prefill price ratio. `None` when prefill is free.
    pub fn alpha(&self) -> Option<Decimal> {
        if self.usd_per_prefill_token.is_zero() {
            None
        } else {
            Some(self.usd_per_decode_token / self.usd_per_prefill_token)
        }
    }
}

impl Default for CostRates {
    /// $2.50 per million input tokens and $10.00 per million output tokens.
    fn default() -> Self {
        Self { usd_per_prefill_token: Decimal::new(25, 7), usd_per_decode_token: Decimal::new(1, 5) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Local,
    Remote,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Local => f.write_str("local"),
            Role::Remote => f.write_str("remote"),
        }
    }
}

#[derive(Debug, Default)]
struct AtomicUsage {
    prefill: AtomicU64,
    decode: AtomicU64,
}

impl AtomicUsage {
    fn add(&self, usage: TokenUsage) {
        self.prefill.fetch_add(usage.prefill_tokens, Ordering::Relaxed);
        self.decode.fetch_add(usage.decode_tokens, Ordering::Relaxed);
    }

    fn load(&self) -> TokenUsage {
        TokenUsage { prefill_tokens: self.prefill.load(Ordering::Relaxed), decode_tokens: self.decode.load(Ordering::Relaxed) }
    }
}

/// Per-role token totals. Accumulation goes through `&self` so parallel job
/// workers can share one ledger.
#[derive(Debug, Default)]
pub struct CostLedger {
    local: AtomicUsage,
    remote: AtomicUsage,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_usage(local: TokenUsage, remote: TokenUsage) -> Self {
        let ledger = Self::new();
        ledger.record(Role::Local, local);
        ledger.record(Role::Remote, remote);
        ledger
    }

    pub fn record(&self, role: Role, usage: TokenUsage) {
        match role {
            Role::Local => self.local.add(usage),
            Role::Remote => self.remote.add(usage),
        }
    }

    /// Builder form of [`CostLedger::record`].
    pub fn with_usage(self, role: Role, usage: TokenUsage) -> Self {
        self.record(role, usage);
        self
    }

    pub fn usage(&self, role: Role) -> TokenUsage {
        match role {
            Role::Local => self.local.load(),
            Role::Remote => self.remote.load(),
        }
    }

    pub fn local(&self) -> TokenUsage {
        self.usage(Role::Local)
    }

    pub fn remote(&self) -> TokenUsage {
        self.usage(Role::Remote)
    }

    /// Adds every role total of `other` into `self`.
    pub fn absorb(&self, other: &CostLedger) {
        self.record(Role::Local, other.local());
        self.record(Role::Remote, other.remote());
    }

    /// Cost in USD over the roles in `priced_roles`.
    pub fn cost_usd(&self, rates: &CostRates, priced_roles: &[Role]) -> Decimal {
        let mut roles = priced_roles.to_vec();
        roles.sort();
        roles.dedup();
        roles
            .into_iter()
            .map(|role| {
                let u = self.usage(role);
                Decimal::from(u.prefill_tokens) * rates.usd_per_prefill_token + Decimal::from(u.decode_tokens) * rates.usd_per_decode_token
            })
            .sum()
    }

    /// Cost with only remote usage priced.
    pub fn remote_cost_usd(&self, rates: &CostRates) -> Decimal {
        self.cost_usd(rates, &[Role::Remote])
    }
}

impl Clone for CostLedger {
    fn clone(&self) -> Self {
        Self::from_usage(self.local(), self.remote())
    }
}

impl PartialEq for CostLedger {
    fn eq(&self, other: &Self) -> bool {
        self.local() == other.local() && self.remote() == other.remote()
    }
}

impl Eq for CostLedger {}

#[derive(Serialize, Deserialize)]
struct LedgerSnapshot {
    local: TokenUsage,
    remote: TokenUsage,
}

impl Serialize for CostLedger {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        LedgerSnapshot { local: self.local(), remote: self.remote() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CostLedger {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let snap = LedgerSnapshot::deserialize(deserializer)?;
        Ok(CostLedger::from_usage(snap.local, snap.remote))
    }
}

/// Free-function form of [`CostLedger::record`].
pub fn record_usage(ledger: &CostLedger, role: Role, usage: TokenUsage) {
    ledger.record(role, usage);
}

/// Free-function form of [`CostLedger::cost_usd`].
pub fn cost_usd(ledger: &CostLedger, rates: &CostRates, priced_roles: &[Role]) -> Decimal {
    ledger.cost_usd(rates, priced_roles)
}

/// Rounds a USD amount to the three decimals used in reports.
pub fn round_usd(amount: Decimal) -> Decimal {
    amount.round_dp_with_strategy(3, rust_decimal::RoundingStrategy::MidpointAwayFromZero)
}

/// Lowercases, trims, and collapses internal whitespace runs to one space.
pub fn normalize_answer(text: &str) -> String {
    text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    FinalAnswer,
    MaxRoundsForced,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TranscriptEvent {
    RemoteMessage { round: usize, content: String },
    LocalMessage { round: usize, content: String },
    Plan { round: usize, plan: DecompositionPlan },
    JobBatch { round: usize, report: RoundReport },
    Synthesis { round: usize, decision: SynthesisDecision },
    Error { round: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub final_answer: Option<String>,
    pub rounds_used: usize,
    pub ledger: CostLedger,
    pub transcript: Vec<TranscriptEvent>,
    pub terminated_by: Termination,
}

impl ProtocolResult {
    pub fn error(rounds_used: usize, ledger: CostLedger, mut transcript: Vec<TranscriptEvent>, message: String) -> Self {
        transcript.push(TranscriptEvent::Error { round: rounds_used, message });
        Self { final_answer: None, rounds_used: rounds_used.max(1), ledger, transcript, terminated_by: Termination::Error }
    }

    /// Canonical JSON rendering of the transcript, used for replay comparisons.
    pub fn transcript_json(&self) -> String {
        serde_json::to_string(&self.transcript).expect("transcript serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::str::FromStr;

    fn dec(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    #[test]
    fn record_accumulates_from_zero() {
        let ledger = CostLedger::new();
        ledger.record(Role::Remote, TokenUsage::new(100, 10));
        assert_eq!(ledger.remote(), TokenUsage::new(100, 10));
        assert_eq!(ledger.local(), TokenUsage::default());
    }

    #[test]
    fn zero_usage_is_identity() {
        let ledger = CostLedger::new().with_usage(Role::Remote, TokenUsage::new(100, 10));
        ledger.record(Role::Remote, TokenUsage::new(0, 0));
        assert_eq!(ledger.remote(), TokenUsage::new(100, 10));
    }

    #[test]
    fn roles_are_isolated() {
        let ledger = CostLedger::new().with_usage(Role::Remote, TokenUsage::new(100, 10));
        ledger.record(Role::Local, TokenUsage::new(50, 5));
        assert_eq!(ledger.remote(), TokenUsage::new(100, 10));
        assert_eq!(ledger.local(), TokenUsage::new(50, 5));
    }

    #[test]
    fn remote_only_rows_price_as_reported() {
        let rates = CostRates::default();
        let fin = CostLedger::new().with_usage(Role::Remote, TokenUsage::new(103_040, 320));
        assert_eq!(fin.remote_cost_usd(&rates), dec("0.2608"));
        assert_eq!(round_usd(fin.remote_cost_usd(&rates)), dec("0.261"));

        let health = CostLedger::new().with_usage(Role::Remote, TokenUsage::new(120_100, 70));
        assert_eq!(health.remote_cost_usd(&rates), dec("0.30095"));
        assert_eq!(round_usd(health.remote_cost_usd(&rates)), dec("0.301"));
    }

    #[test]
    fn local_usage_is_free_by_default() {
        let ledger = CostLedger::new().with_usage(Role::Local, TokenUsage::new(1_000_000, 5_000));
        assert_eq!(ledger.remote_cost_usd(&CostRates::default()), Decimal::ZERO);
        assert!(ledger.cost_usd(&CostRates::default(), &[Role::Local]) > Decimal::ZERO);
    }

    #[test]
    fn duplicate_priced_roles_count_once() {
        let ledger = CostLedger::new().with_usage(Role::Remote, TokenUsage::new(10, 0));
        let rates = CostRates::default();
        assert_eq!(ledger.cost_usd(&rates, &[Role::Remote, Role::Remote]), ledger.cost_usd(&rates, &[Role::Remote]));
    }

    #[test]
    fn alpha_is_decode_over_prefill() {
        assert_eq!(CostRates::default().alpha(), Some(dec("4")));
        assert_eq!(CostRates::new(Decimal::ZERO, Decimal::ONE).alpha(), None);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_answer("  US$394,328  million "), "us$394,328 million");
        assert_eq!(normalize_answer("A"), "a");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("a\t\nb"), "a b");
    }

    #[test]
    fn task_validation() {
        let mut task = TaskInstance {
            id: "t".into(),
            context: vec!["doc".into()],
            query: "q".into(),
            gold_answer: "B".into(),
            options: Some(vec!["A".into(), " b".into()]),
            doc_type: "document".into(),
        };
        assert!(task.validate().is_ok());
        task.gold_answer = "C".into();
        assert_eq!(task.validate(), Err(TaskError::GoldNotInOptions("t".into())));
        task.options = None;
        task.context.clear();
        assert_eq!(task.validate(), Err(TaskError::EmptyContext("t".into())));
    }

    #[test]
    fn ledger_serializes_as_snapshot() {
        let ledger = CostLedger::from_usage(TokenUsage::new(1, 2), TokenUsage::new(3, 4));
        let json = serde_json::to_string(&ledger).unwrap();
        let back: CostLedger = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ledger);
    }

    #[test]
    fn concurrent_accumulation_is_exact() {
        let ledger = CostLedger::new();
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..1000 {
                        ledger.record(Role::Local, TokenUsage::new(3, 1));
                    }
                });
            }
        });
        assert_eq!(ledger.local(), TokenUsage::new(24_000, 8_000));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn usage() -> impl Strategy<Value = TokenUsage> {
            (0u64..10_000_000, 0u64..1_000_000).prop_map(|(p, d)| TokenUsage::new(p, d))
        }

        proptest! {
            #[test]
            fn cost_is_linear(a_l in usage(), a_r in usage(), b_l in usage(), b_r in usage(),
                              pre in 0u32..100_000, dec_ in 0u32..100_000) {
                let rates = CostRates::new(Decimal::new(pre.into(), 9), Decimal::new(dec_.into(), 9));
                let roles = [Role::Local, Role::Remote];
                let a = CostLedger::from_usage(a_l, a_r);
                let b = CostLedger::from_usage(b_l, b_r);
                let merged = a.clone();
                merged.absorb(&b);
                prop_assert_eq!(
                    merged.cost_usd(&rates, &roles),
                    a.cost_usd(&rates, &roles) + b.cost_usd(&rates, &roles)
                );
            }

            #[test]
            fn record_order_does_not_matter(items in proptest::collection::vec((any::<bool>(), usage()), 0..20)) {
                let forward = CostLedger::new();
                let backward = CostLedger::new();
                for (local, u) in &items {
                    forward.record(if *local { Role::Local } else { Role::Remote }, *u);
                }
                for (local, u) in items.iter().rev() {
                    backward.record(if *local { Role::Local } else { Role::Remote }, *u);
                }
                prop_assert_eq!(forward, backward);
            }

            #[test]
            fn normalize_is_idempotent(s in "\\PC{0,40}") {
                let once = normalize_answer(&s);
                prop_assert_eq!(normalize_answer(&once), once);
            }
        }
    }
}
