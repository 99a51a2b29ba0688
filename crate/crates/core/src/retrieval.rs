//! Retrieval baseline: BM25 or embedding top-k over character chunks, sent to
//! the remote model in a single call.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::chunking::chunk_by_chars;
use crate::client::{extract_json_block, http_agent, post_json_with_retry, ClientError, CompletionRequest, LanguageModel, RetryConfig};
use crate::exec::{self, Parallelism};
use crate::minion::value_as_text;
use crate::types::{ChatMessage, CostLedger, ProtocolResult, Role, TaskInstance, Termination, TranscriptEvent};

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// A ranked chunk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub index: usize,
    pub score: f64,
}

/// Descending score, ascending index on ties.
fn rank(scores: Vec<f64>) -> Vec<Scored> {
    let mut ranked: Vec<Scored> = scores.into_iter().enumerate().map(|(index, score)| Scored { index, score }).collect();
    ranked.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.index.cmp(&y.index)));
    ranked
}

// ---------------------------------------------------------------------------
// BM25

pub const DEFAULT_K1: f64 = 1.5;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    doc_freq: HashMap<String, usize>,
    term_counts: Vec<HashMap<String, u32>>,
    lengths: Vec<usize>,
    avg_len: f64,
    k1: f64,
    b: f64,
}

impl Bm25Index {
    pub fn build<S: AsRef<str>>(chunks: &[S], k1: f64, b: f64) -> Self {
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut term_counts = Vec::with_capacity(chunks.len());
        let mut lengths = Vec::with_capacity(chunks.len());
        for chunk in chunks {
            let tokens = tokenize(chunk.as_ref());
            let mut counts: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *counts.entry(t.clone()).or_default() += 1;
            }
            for term in counts.keys() {
                *doc_freq.entry(term.clone()).or_default() += 1;
            }
            lengths.push(tokens.len());
            term_counts.push(counts);
        }
        let avg_len = if lengths.is_empty() { 0.0 } else { lengths.iter().sum::<usize>() as f64 / lengths.len() as f64 };
        Self { doc_freq, term_counts, lengths, avg_len, k1, b }
    }

    pub fn with_defaults<S: AsRef<str>>(chunks: &[S]) -> Self {
        Self::build(chunks, DEFAULT_K1, DEFAULT_B)
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Okapi score of one chunk. Repeated query terms contribute once per occurrence.
    pub fn score(&self, query_terms: &[String], index: usize) -> f64 {
        let counts = &self.term_counts[index];
        let len_norm = if self.avg_len > 0.0 { self.lengths[index] as f64 / self.avg_len } else { 0.0 };
        query_terms
            .iter()
            .map(|term| {
                let tf = counts.get(term).copied().unwrap_or(0) as f64;
                if tf == 0.0 {
                    return 0.0;
                }
                self.idf(term) * tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * len_norm))
            })
            .sum()
    }

    pub fn scores(&self, query: &str, mode: Parallelism) -> Vec<f64> {
        let terms = tokenize(query);
        let indices: Vec<usize> = (0..self.len()).collect();
        exec::map(&indices, mode, |&i| self.score(&terms, i))
    }

    /// Top `k` chunks. Zero-score chunks pad the result only when at least one
    /// chunk matched; a query sharing no term with the corpus returns nothing.
    pub fn top_k(&self, query: &str, k: usize, mode: Parallelism) -> Vec<Scored> {
        let ranked = rank(self.scores(query, mode));
        if ranked.first().is_none_or(|s| s.score <= 0.0) {
            return Vec::new();
        }
        ranked.into_iter().take(k).collect()
    }
}

// ---------------------------------------------------------------------------
// Embeddings

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError>;
}

/// Deterministic feature-hashing embedder for offline runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dims: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dims: 64 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl HashingEmbedder {
    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dims.max(1)];
        for token in tokenize(text) {
            let h = fnv1a(token.as_bytes());
            let slot = (h % v.len() as u64) as usize;
            v[slot] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// OpenAI-compatible `/v1/embeddings` client.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    base_url: String,
    api_key: Option<String>,
    model: String,
    retry: RetryConfig,
    agent: ureq::Agent,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            model: model.into(),
            retry: RetryConfig::default(),
            agent: http_agent(),
        }
    }

    pub fn with_retry(mut self, retry: RetryConfig) -> Self {
        self.retry = retry;
        self
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/embeddings", self.base_url)
    }
}

pub(crate) fn parse_embeddings(payload: &Value, expected: usize) -> Result<Vec<Vec<f64>>, ClientError> {
    let data = payload.get("data").and_then(Value::as_array).ok_or_else(|| ClientError::Protocol("missing data array".into()))?;
    if data.len() != expected {
        return Err(ClientError::Protocol(format!("expected {expected} embeddings, got {}", data.len())));
    }
    let mut out = vec![Vec::new(); expected];
    for (pos, item) in data.iter().enumerate() {
        let slot = item.get("index").and_then(Value::as_u64).map(|i| i as usize).unwrap_or(pos);
        let vector = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ClientError::Protocol(format!("missing data[{pos}].embedding")))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| ClientError::Protocol("embedding entries must be numbers".into())))
            .collect::<Result<Vec<f64>, _>>()?;
        *out.get_mut(slot).ok_or_else(|| ClientError::Protocol(format!("embedding index {slot} out of range")))? = vector;
    }
    let dims = out.first().map_or(0, Vec::len);
    if out.iter().any(|v| v.len() != dims) {
        return Err(ClientError::Protocol("embeddings differ in dimension".into()));
    }
    Ok(out)
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = serde_json::json!({ "model": self.model, "input": texts });
        let payload = post_json_with_retry(&self.agent, &self.endpoint(), self.api_key.as_deref(), &body, self.retry)?;
        parse_embeddings(&payload, texts.len())
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = y.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        dot / (nx * ny)
    }
}

pub fn embed_top_k(provider: &dyn EmbeddingProvider, chunks: &[String], query: &str, k: usize) -> Result<Vec<Scored>, ClientError> {
    if chunks.is_empty() {
        return Ok(Vec::new());
    }
    let chunk_vecs = provider.embed(chunks)?;
    let query_vec =
        provider.embed(&[query.to_string()])?.pop().ok_or_else(|| ClientError::Protocol("no embedding returned for the query".into()))?;
    if chunk_vecs.iter().any(|v| v.len() != query_vec.len()) {
        return Err(ClientError::Protocol("query and chunk embeddings differ in dimension".into()));
    }
    let scores = chunk_vecs.iter().map(|v| cosine(v, &query_vec)).collect();
    Ok(rank(scores).into_iter().take(k).collect())
}

// ---------------------------------------------------------------------------
// RAG protocol

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    #[default]
    Bm25,
    Embedding,
}

impl fmt::Display for RetrieverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrieverKind::Bm25 => "bm25",
            RetrieverKind::Embedding => "embedding",
        })
    }
}

pub const SUMMARY_RETRIEVAL_QUERY: &str = "Summarize the provided text";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagConfig {
    pub retriever: RetrieverKind,
    pub k: usize,
    pub chunk_size_chars: usize,
    /// Replaces the task query for retrieval only.
    pub retrieval_query: Option<String>,
    pub remote_model: String,
    pub remote_temperature: f64,
    pub k1: f64,
    pub b: f64,
    pub parallelism: Parallelism,
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            retriever: RetrieverKind::Bm25,
            k: 15,
            chunk_size_chars: 1000,
            retrieval_query: None,
            remote_model: "remote".into(),
            remote_temperature: 0.0,
            k1: DEFAULT_K1,
            b: DEFAULT_B,
            parallelism: Parallelism::default(),
        }
    }
}

impl RagConfig {
    /// Uses the fixed summarization query for retrieval.
    pub fn summarization(mut self) -> Self {
        self.retrieval_query = Some(SUMMARY_RETRIEVAL_QUERY.to_string());
        self
    }
}

pub const NO_EXCERPTS: &str = "(no excerpts were retrieved)";

pub fn build_rag_prompt(task: &TaskInstance, excerpts: &[(usize, &str)]) -> String {
    let body = if excerpts.is_empty() {
        NO_EXCERPTS.to_string()
    } else {
        excerpts.iter().map(|(i, text)| format!("[excerpt {i}]\n{text}")).collect::<Vec<_>>().join("\n\n")
    };
    let mut prompt = format!(
        "The excerpts below were retrieved from a {} to help answer a question.\n\n## Excerpts\n{body}\n\n## Question\n{}\n",
        task.doc_type, task.query
    );
    if let Some(options) = &task.options {
        prompt.push_str(&format!("\nAnswer choices:\n{}\nYour answer must exactly match one of the answer choices.\n", options.join("\n")));
    }
    prompt.push_str("\nThink step by step, then reply with a JSON object:\n```json\n{\"explanation\": \"...\", \"answer\": \"...\"}\n```");
    prompt
}

/// Pulls `answer` out of a JSON reply, falling back to the trimmed text.
pub fn parse_rag_answer(text: &str) -> Option<String> {
    let from_json = extract_json_block(text).ok().and_then(|v| v.get("answer").and_then(value_as_text));
    from_json.or_else(|| Some(text.trim().to_string())).filter(|s| !s.is_empty())
}

/// Retrieves chunks with `embedder` (or the hashing embedder when `None`) and
/// issues exactly one remote call.
pub fn run_rag(
    task: &TaskInstance,
    config: &RagConfig,
    remote: &dyn LanguageModel,
    embedder: Option<&dyn EmbeddingProvider>,
) -> ProtocolResult {
    let ledger = CostLedger::new();
    let mut chunks = Vec::new();
    for doc in &task.context {
        match chunk_by_chars(doc, config.chunk_size_chars, 0) {
            Ok(c) => chunks.extend(c.into_iter().map(|c| c.text)),
            Err(e) => return ProtocolResult::error(1, ledger, Vec::new(), e.to_string()),
        }
    }
    let query = config.retrieval_query.as_deref().unwrap_or(&task.query);
    let hits = match config.retriever {
        RetrieverKind::Bm25 => Bm25Index::build(&chunks, config.k1, config.b).top_k(query, config.k, config.parallelism),
        RetrieverKind::Embedding => {
            let fallback = HashingEmbedder::default();
            match embed_top_k(embedder.unwrap_or(&fallback), &chunks, query, config.k) {
                Ok(h) => h,
                Err(e) => return ProtocolResult::error(1, ledger, Vec::new(), format!("embedding failed: {e}")),
            }
        }
    };
    let mut picked: Vec<usize> = hits.iter().map(|h| h.index).collect();
    picked.sort_unstable();
    let excerpts: Vec<(usize, &str)> = picked.iter().map(|&i| (i, chunks[i].as_str())).collect();

    let request =
        CompletionRequest::new(&config.remote_model, vec![ChatMessage::user(build_rag_prompt(task, &excerpts))], config.remote_temperature);
    match remote.complete(&request) {
        Ok(response) => {
            ledger.record(Role::Remote, response.usage);
            let answer = parse_rag_answer(&response.text);
            ProtocolResult {
                final_answer: answer,
                rounds_used: 1,
                ledger,
                transcript: vec![TranscriptEvent::RemoteMessage { round: 1, content: response.text }],
                terminated_by: Termination::FinalAnswer,
            }
        }
        Err(e) => ProtocolResult::error(1, ledger, Vec::new(), format!("remote call failed: {e}")),
    }
}
