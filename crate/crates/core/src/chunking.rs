//! Deterministic context splitting.
//!
//! Spans are byte offsets into the source document, so `chunk.text ==
//! &doc[chunk.span.0..chunk.span.1]` always holds. Character-based sizes count
//! Unicode scalar values, never bytes.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Conventional page separator.
pub const PAGE_DELIMITER: char = '\u{0C}';

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_index: usize,
    pub chunk_index: usize,
    pub text: String,
    pub span: (usize, usize),
}

impl Chunk {
    pub fn id(&self) -> String {
        chunk_id(self.doc_index, self.chunk_index)
    }
}

pub fn chunk_id(doc_index: usize, chunk_index: usize) -> String {
    format!("{doc_index}_{chunk_index}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", content = "params", rename_all = "snake_case")]
pub enum ChunkingStrategy {
    ByChars { chunk_size_chars: usize, overlap_chars: usize },
    ByPage,
    BySection,
    MultiPage { pages_per_chunk: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChunkingError {
    #[error("chunk_size_chars must be at least 1")]
    ZeroChunkSize,
    #[error("overlap_chars ({overlap}) must be smaller than chunk_size_chars ({size})")]
    OverlapTooLarge { size: usize, overlap: usize },
    #[error("pages_per_chunk must be at least 1")]
    ZeroPagesPerChunk,
    #[error("unknown chunking strategy \"{0}\"")]
    UnknownStrategy(String),
    #[error("chunking strategy \"{strategy}\" requires parameter \"{param}\"")]
    MissingParam { strategy: &'static str, param: &'static str },
    #[error("invalid page delimiter pattern: {0}")]
    BadDelimiter(String),
}

impl ChunkingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            ChunkingStrategy::ByChars { .. } => "by_chars",
            ChunkingStrategy::ByPage => "by_page",
            ChunkingStrategy::BySection => "by_section",
            ChunkingStrategy::MultiPage { .. } => "multi_page",
        }
    }

    pub fn validate(&self) -> Result<(), ChunkingError> {
        match *self {
            ChunkingStrategy::ByChars { chunk_size_chars, overlap_chars } => {
                if chunk_size_chars == 0 {
                    Err(ChunkingError::ZeroChunkSize)
                } else if overlap_chars >= chunk_size_chars {
                    Err(ChunkingError::OverlapTooLarge { size: chunk_size_chars, overlap: overlap_chars })
                } else {
                    Ok(())
                }
            }
            ChunkingStrategy::MultiPage { pages_per_chunk: 0 } => Err(ChunkingError::ZeroPagesPerChunk),
            _ => Ok(()),
        }
    }

    /// Builds a strategy from its wire name and a JSON parameter object.
    pub fn from_parts(name: &str, params: &serde_json::Value) -> Result<Self, ChunkingError> {
        let param = |key: &str| params.get(key).and_then(serde_json::Value::as_u64).map(|v| v as usize);
        let strategy = match name {
            "by_chars" => ChunkingStrategy::ByChars {
                chunk_size_chars: param("chunk_size_chars")
                    .ok_or(ChunkingError::MissingParam { strategy: "by_chars", param: "chunk_size_chars" })?,
                overlap_chars: param("overlap_chars").unwrap_or(0),
            },
            "by_page" => ChunkingStrategy::ByPage,
            "by_section" => ChunkingStrategy::BySection,
            "multi_page" => ChunkingStrategy::MultiPage {
                pages_per_chunk: param("pages_per_chunk")
                    .ok_or(ChunkingError::MissingParam { strategy: "multi_page", param: "pages_per_chunk" })?,
            },
            other => return Err(ChunkingError::UnknownStrategy(other.to_string())),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

/// Applies a strategy to one or more documents. Holds the page delimiter,
/// which defaults to form feed and may be overridden by a regex.
#[derive(Debug, Clone, Default)]
pub struct Chunker {
    page_pattern: Option<Regex>,
}

impl Chunker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_page_pattern(pattern: &str) -> Result<Self, ChunkingError> {
        let re = Regex::new(pattern).map_err(|e| ChunkingError::BadDelimiter(e.to_string()))?;
        Ok(Self { page_pattern: Some(re) })
    }

    pub fn chunk_document(&self, doc_index: usize, doc: &str, strategy: &ChunkingStrategy) -> Result<Vec<Chunk>, ChunkingError> {
        strategy.validate()?;
        let spans = match *strategy {
            ChunkingStrategy::ByChars { chunk_size_chars, overlap_chars } => char_spans(doc, chunk_size_chars, overlap_chars),
            ChunkingStrategy::ByPage => self.page_spans(doc),
            ChunkingStrategy::BySection => section_spans(doc),
            ChunkingStrategy::MultiPage { pages_per_chunk } => {
                self.page_spans(doc).chunks(pages_per_chunk).map(|run| (run[0].0, run[run.len() - 1].1)).collect()
            }
        };
        Ok(spans
            .into_iter()
            .enumerate()
            .map(|(chunk_index, (start, end))| Chunk { doc_index, chunk_index, text: doc[start..end].to_string(), span: (start, end) })
            .collect())
    }

    /// Chunks every document, in document order.
    pub fn chunk_context(&self, docs: &[String], strategy: &ChunkingStrategy) -> Result<Vec<Chunk>, ChunkingError> {
        let mut out = Vec::new();
        for (i, doc) in docs.iter().enumerate() {
            out.extend(self.chunk_document(i, doc, strategy)?);
        }
        Ok(out)
    }

    fn page_spans(&self, doc: &str) -> Vec<(usize, usize)> {
        let delims: Vec<(usize, usize)> = match &self.page_pattern {
            Some(re) => re.find_iter(doc).filter(|m| !m.is_empty()).map(|m| (m.start(), m.end())).collect(),
            None => doc.match_indices(PAGE_DELIMITER).map(|(i, s)| (i, i + s.len())).collect(),
        };
        let mut spans = Vec::with_capacity(delims.len() + 1);
        let mut start = 0;
        for (d_start, d_end) in delims {
            if d_start > start {
                spans.push((start, d_start));
            }
            start = d_end;
        }
        if start < doc.len() {
            spans.push((start, doc.len()));
        }
        spans
    }
}

fn char_spans(doc: &str, size: usize, overlap: usize) -> Vec<(usize, usize)> {
    let mut offsets: Vec<usize> = doc.char_indices().map(|(i, _)| i).collect();
    let n = offsets.len();
    offsets.push(doc.len());
    let stride = size - overlap;
    (0..n).step_by(stride).map(|start| (offsets[start], offsets[(start + size).min(n)])).collect()
}

fn heading_patterns() -> &'static (Regex, Regex) {
    static PATTERNS: OnceLock<(Regex, Regex)> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        (Regex::new(r"(?m)^#{1,6} ").expect("atx pattern"), Regex::new(r"(?m)^[A-Z][^\n]{0,80}\n[=-]{3,}$").expect("setext pattern"))
    })
}

fn section_spans(doc: &str) -> Vec<(usize, usize)> {
    let (atx, setext) = heading_patterns();
    let mut starts: Vec<usize> = atx.find_iter(doc).chain(setext.find_iter(doc)).map(|m| m.start()).collect();
    starts.sort_unstable();
    starts.dedup();
    if starts.first() != Some(&0) {
        starts.insert(0, 0);
    }
    let mut spans = Vec::with_capacity(starts.len());
    for (i, &start) in starts.iter().enumerate() {
        let mut end = starts.get(i + 1).copied().unwrap_or(doc.len());
        // The newline ending the previous section belongs to no chunk.
        if i + 1 < starts.len() {
            if doc[start..end].ends_with('\n') {
                end -= 1;
            }
            if doc[start..end].ends_with('\r') {
                end -= 1;
            }
        }
        if !doc[start..end].trim().is_empty() {
            spans.push((start, end));
        }
    }
    spans
}

/// Fixed-size character windows with `stride = size - overlap`; the final
/// window may be shorter.
pub fn chunk_by_chars(doc: &str, size: usize, overlap: usize) -> Result<Vec<Chunk>, ChunkingError> {
    Chunker::new().chunk_document(0, doc, &ChunkingStrategy::ByChars { chunk_size_chars: size, overlap_chars: overlap })
}

/// Splits on form feed, dropping empty pages.
pub fn chunk_by_page(doc: &str) -> Vec<Chunk> {
    Chunker::new().chunk_document(0, doc, &ChunkingStrategy::ByPage).expect("by_page is infallible")
}

/// Groups consecutive pages into runs of `pages_per_chunk`.
pub fn chunk_on_multiple_pages(doc: &str, pages_per_chunk: usize) -> Result<Vec<Chunk>, ChunkingError> {
    Chunker::new().chunk_document(0, doc, &ChunkingStrategy::MultiPage { pages_per_chunk })
}

/// Splits at Markdown ATX or Setext headings. Text before the first heading
/// forms a preamble chunk; a document without headings is a single chunk.
pub fn chunk_by_section(doc: &str) -> Vec<Chunk> {
    Chunker::new().chunk_document(0, doc, &ChunkingStrategy::BySection).expect("by_section is infallible")
}
