//! Local/remote language-model collaboration protocols.
//!
//! A small local model reads the long context; a remote model that never
//! sees it steers the work. [`minion::run_minion`] runs a two-model chat,
//! [`minions::run_minions`] decomposes the query into parallel jobs over
//! chunks, and [`retrieval::run_rag`] plus the baselines in [`harness`] give
//! the points of comparison. [`costlat`] holds the analytic latency model.
//!
//! Data-parallel work (job batches, BM25 scoring, suite runs) goes through
//! [`exec`], which uses rayon when the `parallel` feature is on.

pub mod chunking;
pub mod client;
pub mod costlat;
pub mod exec;
pub mod harness;
pub mod minion;
pub mod minions;
pub mod retrieval;
pub mod types;

pub use client::{ClientError, CompletionRequest, CompletionResponse, HttpModel, LanguageModel, MockModel, MockScript};
pub use exec::Parallelism;
pub use types::{ChatMessage, CostLedger, CostRates, JobManifest, JobOutput, ProtocolResult, Role, TaskInstance, Termination, TokenUsage};
