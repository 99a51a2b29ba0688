//! Free-form chat protocol: a remote model that never sees the context talks
//! to a local model that holds all of it, until the remote model commits to an
//! answer.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::client::{
    complete_parsed, extract_json_block, json_feedback, CompletionRequest, ExtractionError, LanguageModel, DEFAULT_MAX_RETRIES,
};
use crate::types::{ChatMessage, CostLedger, ProtocolResult, Role, TaskInstance, Termination, TranscriptEvent};

const REMOTE_TEMPLATE: &str = r#"We need to answer the following question based on a {doc_type}.

### Question
{query}

### Instructions
You will not have direct access to the {doc_type}, but can chat with a small language model which has read the entire thing.

Feel free to think step-by-step, but eventually you must provide an output
in the format below:

<think step by step here>
```json
{
    "message": "<your message to the small language model>"
}
```"#;

const LOCAL_TEMPLATE: &str = r#"You will help a user answer the following question based on a {doc_type}.


Read the {doc_type} below and prepare to answer questions from an expert user.
### {doc_type}
{context}

### Question
{query}"#;

const CONVERSATION_TEMPLATE: &str = r#"Here is the response from the small language model:

### Response
{response}


### Instructions
Analyze the response and think-step-by-step to determine if you have enough
information to answer the question.

If you have enough information, provide a final numeric answer in the format
below.

<think step by step here>
```json
{
    "decision": "provide_final_answer",
    "answer": "<your answer>"
}
```

Otherwise, request additional information from the small language model by
outputting the following:

<think step by step here>
```json
{
    "decision": "request_additional_info",
    "message": "<your message to the small language model>"
}
```"#;

/// Appended to the conversation prompt on the last allowed remote turn.
pub const FORCED_ANSWER_SUFFIX: &str = "\n\n### Final round\nThis is the last round of the conversation. You must provide your best final answer now: the only acceptable decision is \"provide_final_answer\".";

/// Separator placed between context documents.
pub const DOCUMENT_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinionConfig {
    pub max_rounds: usize,
    pub remote_temperature: f64,
    pub local_temperature: f64,
    pub remote_model: String,
    pub local_model: String,
    pub max_retries: usize,
}

impl Default for MinionConfig {
    fn default() -> Self {
        Self {
            max_rounds: 5,
            remote_temperature: 0.0,
            local_temperature: 0.2,
            remote_model: "remote".into(),
            local_model: "local".into(),
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

impl MinionConfig {
    /// The remote turn on which only a final answer is accepted. The first
    /// remote turn can only open the conversation, so this is at least 2.
    pub fn forced_round(&self) -> usize {
        self.max_rounds.max(2)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "snake_case")]
pub enum RemoteDecision {
    Message(String),
    FinalAnswer(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TurnError {
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error("reply is missing required key \"{0}\"")]
    MissingKey(&'static str),
    #[error("unknown decision \"{0}\"")]
    UnknownDecision(String),
    #[error("a final answer is required on this turn")]
    AnswerRequired,
}

impl TurnError {
    pub fn feedback(&self) -> String {
        match self {
            TurnError::Extraction(e) => json_feedback(e),
            TurnError::AnswerRequired => {
                "You must now provide a final answer: reply with a ```json block whose \"decision\" is \"provide_final_answer\" and whose \"answer\" holds your answer.".to_string()
            }
            other => format!("Your last reply could not be used: {other}. Reply again using exactly the requested JSON format."),
        }
    }
}

pub fn build_remote_system_prompt(query: &str, doc_type: &str) -> String {
    REMOTE_TEMPLATE.replace("{doc_type}", doc_type).replace("{query}", query)
}

pub fn build_local_system_prompt(context: &[String], query: &str, doc_type: &str) -> String {
    // Substitute the context last so braces inside documents are never re-read as placeholders.
    LOCAL_TEMPLATE.replace("{doc_type}", doc_type).replace("{query}", query).replace("{context}", &context.join(DOCUMENT_SEPARATOR))
}

pub fn build_conversation_prompt(response: &str, forced: bool) -> String {
    let mut prompt = CONVERSATION_TEMPLATE.replace("{response}", response);
    if forced {
        prompt.push_str(FORCED_ANSWER_SUFFIX);
    }
    prompt
}

/// Reads a JSON value that should be text; numbers and booleans are rendered.
pub(crate) fn value_as_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn required_text(obj: &Value, key: &'static str) -> Result<String, TurnError> {
    obj.get(key).and_then(value_as_text).filter(|s| !s.trim().is_empty()).ok_or(TurnError::MissingKey(key))
}

/// Parses one remote reply. The opening turn (round 1) carries only a
/// `message`; later turns carry a `decision`.
pub fn parse_remote_turn(text: &str, round_index: usize) -> Result<RemoteDecision, TurnError> {
    let obj = extract_json_block(text)?;
    if round_index <= 1 {
        return Ok(RemoteDecision::Message(required_text(&obj, "message")?));
    }
    let decision = obj.get("decision").and_then(Value::as_str).ok_or(TurnError::MissingKey("decision"))?;
    match decision {
        "provide_final_answer" => Ok(RemoteDecision::FinalAnswer(required_text(&obj, "answer")?)),
        "request_additional_info" => Ok(RemoteDecision::Message(required_text(&obj, "message")?)),
        other => Err(TurnError::UnknownDecision(other.to_string())),
    }
}

fn non_empty(text: String) -> String {
    if text.is_empty() {
        "(empty response)".to_string()
    } else {
        text
    }
}

pub fn run_minion(local: &dyn LanguageModel, remote: &dyn LanguageModel, task: &TaskInstance, config: &MinionConfig) -> ProtocolResult {
    let ledger = CostLedger::new();
    let mut transcript = Vec::new();
    let forced_round = config.forced_round();

    let mut remote_msgs = vec![ChatMessage::system(build_remote_system_prompt(&task.query, &task.doc_type))];
    let mut local_msgs = vec![ChatMessage::system(build_local_system_prompt(&task.context, &task.query, &task.doc_type))];

    for round in 1..=forced_round {
        let forced = round == forced_round;
        let request = CompletionRequest::new(&config.remote_model, remote_msgs.clone(), config.remote_temperature);
        let reply =
            complete_parsed(remote, &request, Role::Remote, &ledger, config.max_retries, |text| match parse_remote_turn(text, round) {
                Ok(RemoteDecision::Message(_)) if forced => Err(TurnError::AnswerRequired.feedback()),
                other => other.map_err(|e| e.feedback()),
            });
        let reply = match reply {
            Ok(r) => r,
            Err(e) => return ProtocolResult::error(round, ledger, transcript, format!("remote turn failed: {e}")),
        };
        transcript.push(TranscriptEvent::RemoteMessage { round, content: reply.raw.clone() });
        remote_msgs.push(ChatMessage::assistant(non_empty(reply.raw)));

        let message = match reply.value {
            RemoteDecision::FinalAnswer(answer) => {
                return ProtocolResult {
                    final_answer: Some(answer),
                    rounds_used: round,
                    ledger,
                    transcript,
                    terminated_by: if forced { Termination::MaxRoundsForced } else { Termination::FinalAnswer },
                };
            }
            RemoteDecision::Message(m) => m,
        };

        local_msgs.push(ChatMessage::user(message));
        let request = CompletionRequest::new(&config.local_model, local_msgs.clone(), config.local_temperature);
        let response = match local.complete(&request) {
            Ok(r) => r,
            Err(e) => return ProtocolResult::error(round, ledger, transcript, format!("local turn failed: {e}")),
        };
        ledger.record(Role::Local, response.usage);
        transcript.push(TranscriptEvent::LocalMessage { round, content: response.text.clone() });
        let local_text = non_empty(response.text);
        local_msgs.push(ChatMessage::assistant(local_text.clone()));
        remote_msgs.push(ChatMessage::user(build_conversation_prompt(&local_text, round + 1 == forced_round)));
    }
    unreachable!("the forced round either answers or errors")
}
