//! Prompt templates for decomposition, job execution and synthesis.
//!
//! Decomposition prompts ask for a JSON plan instead of program code; the
//! remaining wording follows the per-dataset templates.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFlavor {
    /// Financial filings: extraction workers, sufficiency-checking synthesis.
    #[default]
    Finance,
    /// Medical records: keyword-quote workers, answer-choice synthesis.
    LongHealth,
    /// Scientific papers: keyword-quote workers, span-extraction synthesis.
    Qasper,
}

impl DatasetFlavor {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "finance" | "financebench" => Some(Self::Finance),
            "longhealth" | "long_health" => Some(Self::LongHealth),
            "qasper" => Some(Self::Qasper),
            _ => None,
        }
    }

    pub fn default_local_temperature(self) -> f64 {
        match self {
            DatasetFlavor::Finance => 0.2,
            DatasetFlavor::LongHealth | DatasetFlavor::Qasper => 1e-5,
        }
    }

    pub fn worker_template(self) -> WorkerTemplate {
        match self {
            DatasetFlavor::Finance => WorkerTemplate::Extraction,
            DatasetFlavor::LongHealth | DatasetFlavor::Qasper => WorkerTemplate::KeywordQuotes,
        }
    }
}

/// How a job's prompt is rendered and its reply interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerTemplate {
    /// Reply holds `explanation`, `citation` and `answer`.
    Extraction,
    /// Reply maps each requested concept to a direct quote.
    KeywordQuotes,
}

pub(crate) const FINANCE_DECOMPOSE: &str = r#"# Decomposition Round #{step_number}

You do not have access to the raw document(s), but instead can assign tasks to small and less capable language models that can read the document(s).
Note that the document(s) can be very long, so each task should be performed only over a small chunk of text.

Write a JSON plan that will output formatted tasks for a small language model.
Make sure that NONE of the tasks require calculations or complicated reasoning.
Any information you mentioned in your task should be given an extraction task.

Please use chunks of {pages_per_chunk} pages using the "multi_page" chunking strategy with "pages_per_chunk": {pages_per_chunk}.

If you have multiple tasks, consider applying a set of tasks to a set of chunks. Though it's not required to have more than one task.
"#;

pub(crate) const GENERAL_DECOMPOSE: &str = r#"# Decomposition Round #{step_number}

You do not have access to the raw document(s), but instead can assign tasks to small and less capable language models that can read the document(s).
Note that the document(s) can be very long, so each task should be performed only over a small chunk of text.

Write a JSON plan that will output formatted tasks for a small language model.
Make sure that NONE of the tasks require multiple steps. Each task should be atomic!
Consider applying a set of tasks to a set of chunks.
The same `task_id` should be applied to multiple chunks. DO NOT instantiate a new `task_id` for each combination of task and chunk.
Use the conversational history to inform what chunking strategy has already been applied.
"#;

pub(crate) const PLAN_FORMAT: &str = r#"
## Plan format
Every instruction is applied to every chunk, `samples_per_task` times, and each (instruction, chunk, sample) becomes one job for a small language model. A job carries `task_id`, `chunk_id` ("<doc_index>_<chunk_index>"), `chunk`, `task` (your instruction) and optional `advice`. Each job returns `explanation`, `citation` and `answer`, or "None" when the chunk holds nothing relevant.

Available chunking strategies (use the exact names):
- "by_page": one chunk per page. No params.
- "multi_page": groups of pages. Params: {"pages_per_chunk": int}.
- "by_section": one chunk per Markdown section. No params.
- "by_chars": fixed windows. Params: {"chunk_size_chars": int, "overlap_chars": int}.

To revisit only chunks that earlier jobs flagged, list their chunk ids in "chunk_filter".
At most {max_tasks} instructions and at most {max_samples} samples per task are accepted.

Output the plan in the format below:

<think step by step here>
```json
{
    "instructions": [{"task_id": 1, "instruction": "<what to extract>", "advice": "<optional hint>"}],
    "chunking": {"strategy": "by_page", "params": {}},
    "samples_per_task": 1,
    "chunk_filter": ["0_3"]
}
```
Omit "chunk_filter" to run over every chunk."#;

pub(crate) const FINANCE_WORKER: &str = r#"Your job is to complete the following task using only the context below. The context is a chunk of text taken arbitrarily from a document, it might or might not contain relevant information to the task.

## Document
{context}

## Task
{task}

{advice}

Return your result in JSON with the following keys: "explanation", "citation", and "answer".

- "explanation": A concise statement of your reasoning or how you concluded your answer.
- "citation": A direct snippet of the text that supports your answer. If nothing is found, put "None".
- "answer": The extracted answer. If nothing is found, put "None".

Be certain to only rely on the provided text. If you cannot determine the information confidently from this chunk, respond with "None" for all fields."#;

pub(crate) const KEYWORD_WORKER: &str = r#"Your job is to complete the following task using only the context below. The context is a chunk of text taken arbitrarily from a document, it might or might not contain relevant information to the task.

## Document
{context}

### Question you are trying to answer:
{question}

# You have been instructed to extract information pertaining to the following concepts:
# "Date of visit", {task}

Format your response as follows:
{
"Date of visit" : "`direct quote extracted text`",
"<keyword_1>" : "`direct quote extracted text`",
"<keyword_2>" : "`direct quote extracted text`",
...
}

Can you please extract the relevant sections from the document that are related to the concepts provided? Extract direct quotes or sentences. If concept is not mentioned, leave it out.

Your Answer:"#;

pub(crate) const FINANCE_SYNTHESIZE: &str = r#"Now synthesize the findings from multiple junior workers (LLMs).
Your task is to finalize an answer to the question below **if and only if** you have sufficient, reliable information.
Otherwise, you must request additional work.

---
## Inputs
1. Question to answer:
{question}

2. Collected Job Outputs (from junior models):
{extractions}

---
First think step-by-step and then answer the question using the exact format below.

## ANSWER GUIDELINES
1. **Determine if the collected Job Outputs provide enough trustworthy, consistent evidence to confidently answer the question.**
   - If the data is incomplete or contradictory, do NOT guess. Instead, specify what is missing.
   - If the evidence is sufficient, provide a final answer.

2. **Be conservative.** When in doubt, ask for more information.

3. **Address conflicts.** If multiple jobs give different answers, rely on whichever is best supported by a valid "explanation" and "citation".
   - If you need more information from the conflicting jobs you could request additional work from those specific jobs (be sure to mention the specific job IDs in your additional_info field).
   - Then, in the next round you can make a smaller set of jobs to determine which answer is correct.

4. **Required JSON Output**: You must output a JSON object with these keys:
   - "decision": Must be either "provide_final_answer" OR "request_additional_info".
     - Use "provide_final_answer" if you have enough information.
     - Use "request_additional_info" if you cannot conclusively answer.
   - "explanation": A short statement about how you arrived at your conclusion or what is still missing.
   - "answer": The final answer string if "decision"="provide_final_answer", or null otherwise. Should contain ONLY the final answer, without additional calculations or explanations.

Here is the template for your JSON response (with no extra text outside the JSON):

<think step-by-step here>
```json
{
"decision": "...",
"explanation": "...",
"answer": "... or null", # Good answer format: "0.56"; Bad answer format: "The ratio is calculated as 1-0.27*2 = 0.56"
}
```

**Important**:
- If there is not enough information, set "answer" to null, set "decision" to "request_additional_info", and specify exactly what else you need in "missing_info" and from which job IDs.

Now, carefully inspect the question, think step-by-step and perform any calculations before outputting the JSON object."#;

pub(crate) const LONGHEALTH_SYNTHESIZE: &str = r#"Answer the following by the synthesizing findings from multiple junior workers (LLMs).


---
## Inputs
1. Question to answer:
{question}

2. Collected Job Outputs (from junior models):
{extractions}

---
First think step-by-step and then answer the question using the exact format below.

## ANSWER GUIDELINES

**Required JSON Output**: You must output exactly one JSON object with these keys:
   - "decision": Must be  "provide_final_answer".
   - "explanation": A short statement about how you arrived at your conclusion or what is still missing.
   - "answer": The final answer string (that matches one of the provided options) if "decision"="provide_final_answer", or null otherwise.


Here is the template for your JSON response:

<think step-by-step here>


{
"decision": "...",
"explanation": "...",
"answer": "...",
}


Now, carefully inspect the question, think step-by-step and perform any calculations before outputting the JSON object. If answer choices are provided, your answer must **exactly** match one of the answer choices.

Question:
{question}

Your Answer:"#;

pub(crate) const QASPER_SYNTHESIZE: &str = r#"Answer the following by the synthesizing findings from multiple junior workers (LLMs).


---
## Inputs
1. Question to answer:
{question}

2. Collected Job Outputs (from junior models):
{extractions}

---
First think step-by-step and then answer the question using the exact format below.

## ANSWER GUIDELINES

**Required JSON Output**: You must output exactly one JSON object with these keys:
   - "decision": Must be "provide_final_answer" or "need more information"
   - "explanation": A short statement about how you arrived at your conclusion or what is still missing.
   - "answer": a final answer that is a text span pulled directly from the job output citations.


Here is the template for your JSON response:

<think step-by-step here>

{
"decision": "...",
"explanation": "...",
"answer": "..,",
}

Now, carefully inspect the question, think step-by-step and perform any calculations before outputting the JSON object.
- If answer choices are provided, your answer must **exactly** match one of the answer choices.
- Don't paraphrase the final answer --- extract text directly from the document(s) or previous job outputs.

Question:
{question}

Your Answer:"#;

/// Appended to the synthesis prompt on the last round.
pub const FORCED_SYNTHESIS_SUFFIX: &str = "\n\n**This is the final round.** No further work can be requested. You must set \"decision\" to \"provide_final_answer\" and give your best answer from the collected job outputs.";

pub(crate) fn synthesis_template(flavor: DatasetFlavor) -> &'static str {
    match flavor {
        DatasetFlavor::Finance => FINANCE_SYNTHESIZE,
        DatasetFlavor::LongHealth => LONGHEALTH_SYNTHESIZE,
        DatasetFlavor::Qasper => QASPER_SYNTHESIZE,
    }
}
