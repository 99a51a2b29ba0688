//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.

mod common;

use std::collections::HashSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{fenced, random_scenarios, toy_corpus};
use minions_core::chunking::{chunk_by_chars, chunk_by_page, Chunker};
use minions_core::costlat::{bound_from_ratios, count_bound_violations, latency_ratio_bound, HardwareSpec, ModelShape};
use minions_core::harness::{run_suite, Clients, Protocol, SuiteConfig};
use minions_core::minion::{run_minion, MinionConfig};
use minions_core::minions::{
    expand_plan, filter_abstentions, format_for_synthesis, parse_plan, run_minions, MinionsConfig, PlanRules, JOB_ENTRY_PREFIX,
};
use minions_core::retrieval::{tokenize, Bm25Index};
use minions_core::types::{round_usd, TranscriptEvent};
use minions_core::{
    CompletionRequest, CostLedger, CostRates, JobManifest, JobOutput, MockModel, Parallelism, Role, TaskInstance, Termination, TokenUsage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::Decimal;
use serde_json::json;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, format!("took {elapsed:?}, limit {limit:?}"))
}

// ---------------------------------------------------------------------------
// 1. Cost model

fn cost_model() -> Outcome {
    let rates = CostRates::new(Decimal::new(250, 8), Decimal::new(100, 7));
    let start = Instant::now();
    let a = CostLedger::new().with_usage(Role::Remote, TokenUsage::new(103_040, 320)).cost_usd(&rates, &[Role::Remote]);
    let b = CostLedger::new().with_usage(Role::Remote, TokenUsage::new(120_100, 70)).cost_usd(&rates, &[Role::Remote]);
    let elapsed = start.elapsed();
    let tol = Decimal::new(5, 4);
    check((a - Decimal::new(261, 3)).abs() <= tol, format!("first row {a}"))?;
    check((b - Decimal::new(301, 3)).abs() <= tol, format!("second row {b}"))?;
    check(round_usd(a) == Decimal::new(261, 3) && round_usd(b) == Decimal::new(301, 3), "rounding")?;
    within(elapsed, Duration::from_millis(1))?;
    Ok(format!("${a} -> {}, ${b} -> {}, {elapsed:?}", round_usd(a), round_usd(b)))
}

// ---------------------------------------------------------------------------
// 2. Latency bound worked example

fn bound_worked_example() -> Outcome {
    let hw_l = HardwareSpec { peak_flops: 160e12, peak_mem_bw: 1.0 };
    let hw_r = HardwareSpec { peak_flops: 8000e12, peak_mem_bw: 1.0 };
    let exact =
        latency_ratio_bound(0.2, &hw_l, &hw_r, &ModelShape { layers: 32, hidden: 4096 }, &ModelShape { layers: 126, hidden: 16384 })
            .map_err(|e| e.to_string())?;
    check((exact - 4.8095).abs() <= 1e-3, format!("exact bound {exact}"))?;
    let approx = bound_from_ratios(0.2, 8000e12 / 160e12, 1.0 / 16.0).map_err(|e| e.to_string())?;
    check(approx == 4.75, format!("approximate bound {approx}"))?;
    Ok(format!("exact {exact:.4}, with 1/16 shape ratio {approx}"))
}

// ---------------------------------------------------------------------------
// 3. Bound dominance

fn bound_dominance() -> Outcome {
    let scenarios = random_scenarios(1_000, 7);
    let start = Instant::now();
    let violations = count_bound_violations(&scenarios, Parallelism::default());
    let elapsed = start.elapsed();
    check(scenarios.iter().all(|s| s.profile.a().is_some_and(|a| a > 0.01 && a < 0.99)), "a out of range")?;
    check(violations == 0, format!("{violations} violation(s)"))?;
    within(elapsed, Duration::from_secs(5))?;
    Ok(format!("1000 configurations, 0 violations, {elapsed:?}"))
}

// ---------------------------------------------------------------------------
// 4. Plan expansion

fn plan_expansion() -> Outcome {
    // Four 100-byte pages separated by form feeds.
    let doc: String = (0..4).map(|p| format!("{:-<99}", format!("page {p} "))).collect::<Vec<_>>().join("\x0c");
    check(doc.len() == 399, "document length")?;
    let start = Instant::now();
    for k in 1..=4u32 {
        for c in 1..=4usize {
            for s in 1..=4usize {
                let size = doc.len().div_ceil(c);
                let plan_text = fenced(json!({
                    "instructions": (1..=k).map(|t| json!({"task_id": t, "instruction": format!("task {t}")})).collect::<Vec<_>>(),
                    "chunking": {"strategy": "by_chars", "params": {"chunk_size_chars": size, "overlap_chars": 0}},
                    "samples_per_task": s,
                }));
                let plan = parse_plan(&plan_text, &PlanRules::default()).map_err(|e| e.to_string())?;
                let jobs = expand_plan(&plan, std::slice::from_ref(&doc), &[], &Chunker::new()).map_err(|e| e.to_string())?;
                let want = k as usize * c * s;
                check(jobs.len() == want, format!("(k,c,s)=({k},{c},{s}): {} jobs", jobs.len()))?;
                let triples: HashSet<_> = jobs.iter().map(|j| (j.task_id, j.chunk_id.clone(), j.sample_index)).collect();
                check(triples.len() == want, "duplicate job identity")?;
                let mut got: Vec<(u32, String)> = jobs.iter().map(|j| (j.task_id, j.chunk_id.clone())).collect();
                let mut oracle = Vec::new();
                for t in 1..=k {
                    for ci in 0..c {
                        for _ in 0..s {
                            oracle.push((t, format!("0_{ci}")));
                        }
                    }
                }
                got.sort();
                oracle.sort();
                check(got == oracle, format!("(k,c,s)=({k},{c},{s}): multiset differs"))?;
            }
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("64 (k,c,s) triples match, {elapsed:?}"))
}

// ---------------------------------------------------------------------------
// 5. Golden protocol runs

fn golden_context() -> String {
    let mut pages: Vec<String> =
        (0..12).map(|i| format!("Page {i}. Routine operating commentary with no totals. {}", "filler ".repeat(40))).collect();
    pages[7] = "Page 7. Total net revenue for fiscal 2023 was $394,328 million.".into();
    pages.join("\x0c")
}

fn golden_task() -> TaskInstance {
    TaskInstance {
        id: "golden".into(),
        context: vec![golden_context()],
        query: "What was total net revenue for fiscal 2023?".into(),
        gold_answer: "$394,328 million".into(),
        options: None,
        doc_type: "financial document".into(),
    }
}

fn minion_remote() -> MockModel {
    MockModel::queue([
        fenced(json!({"message": "Find the total net revenue for fiscal 2023 and quote it."})),
        fenced(json!({"decision": "request_additional_info", "message": "Which page states it? Quote the sentence."})),
        fenced(json!({"decision": "provide_final_answer", "answer": "$394,328 million"})),
    ])
}

fn minion_local() -> MockModel {
    MockModel::from_fn(|req| {
        let turns = req.messages.iter().filter(|m| m.role == minions_core::types::ChatRole::User).count();
        if turns == 1 {
            "Total net revenue for fiscal 2023 was $394,328 million.".into()
        } else {
            "Page 7: \"Total net revenue for fiscal 2023 was $394,328 million.\"".into()
        }
    })
}

fn minions_remote() -> MockModel {
    MockModel::queue([
        fenced(json!({
            "instructions": [{"task_id": 1, "instruction": "Extract the total net revenue for fiscal 2023."}],
            "chunking": {"strategy": "by_page", "params": {}},
            "samples_per_task": 1
        })),
        fenced(json!({"decision": "request_additional_info", "explanation": "Confirm units on chunk 0_7.", "answer": null})),
        fenced(json!({
            "instructions": [
                {"task_id": 1, "instruction": "Quote the revenue sentence."},
                {"task_id": 2, "instruction": "State the units of the revenue figure."}
            ],
            "chunking": {"strategy": "by_page", "params": {}},
            "samples_per_task": 2,
            "chunk_filter": ["0_7"]
        })),
        fenced(json!({"decision": "provide_final_answer", "explanation": "Confirmed.", "answer": "$394,328 million"})),
    ])
}

fn minions_local() -> MockModel {
    MockModel::from_fn(|req| {
        if req.messages[0].content.contains("$394,328 million") {
            r#"{"explanation": "stated on the page", "citation": "Total net revenue for fiscal 2023 was $394,328 million.", "answer": "$394,328 million"}"#.into()
        } else {
            r#"{"explanation": "None", "citation": "None", "answer": "None"}"#.into()
        }
    })
}

fn leaks_context(remote: &MockModel, context: &str) -> bool {
    let chars: Vec<char> = context.chars().collect();
    let sent: Vec<String> = remote.requests().into_iter().flat_map(|r| r.messages.into_iter().map(|m| m.content)).collect();
    (0..chars.len().saturating_sub(63)).any(|i| {
        let window: String = chars[i..i + 64].iter().collect();
        sent.iter().any(|s| s.contains(&window))
    })
}

fn golden_runs() -> Outcome {
    let start = Instant::now();
    let task = golden_task();
    let config = MinionConfig { max_rounds: 5, ..Default::default() };
    let mut minion_transcripts = Vec::new();
    let mut minions_transcripts = Vec::new();
    for _ in 0..3 {
        let (remote, local) = (minion_remote(), minion_local());
        let result = run_minion(&local, &remote, &task, &config);
        check(result.final_answer.as_deref() == Some("$394,328 million"), format!("minion answer {:?}", result.final_answer))?;
        check(
            result.rounds_used == 3 && result.terminated_by == Termination::FinalAnswer,
            format!("minion rounds {}", result.rounds_used),
        )?;
        check(!leaks_context(&remote, &task.context[0]), "minion sent a 64-char context window to the remote model")?;
        minion_transcripts.push(result.transcript_json());

        let (remote, local) = (minions_remote(), minions_local());
        let result = run_minions(&local, &remote, &task, &MinionsConfig::default());
        check(result.final_answer.as_deref() == Some("$394,328 million"), format!("minions answer {:?}", result.final_answer))?;
        check(result.rounds_used == 2, format!("minions rounds {}", result.rounds_used))?;
        let created: Vec<usize> = result
            .transcript
            .iter()
            .filter_map(|e| match e {
                TranscriptEvent::JobBatch { report, .. } => Some(report.jobs_created),
                _ => None,
            })
            .collect();
        let (k2, filtered, s2) = (2, 1, 2);
        check(created == [12, k2 * filtered * s2], format!("job counts {created:?}"))?;
        check(!leaks_context(&remote, &task.context[0]), "minions sent a 64-char context window to the remote model")?;
        minions_transcripts.push(result.transcript_json());
    }
    check(minion_transcripts.windows(2).all(|w| w[0] == w[1]), "minion transcripts differ across runs")?;
    check(minions_transcripts.windows(2).all(|w| w[0] == w[1]), "minions transcripts differ across runs")?;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(2))?;
    Ok(format!("minion 3 rounds, minions jobs [12, 4], 3 identical replays, {elapsed:?}"))
}

// ---------------------------------------------------------------------------
// 6. Abstention filtering

fn abstention_filtering() -> Outcome {
    let manifests: Vec<JobManifest> = (0..30)
        .map(|i| JobManifest {
            job_index: i,
            task_id: 1 + (i % 3) as u32,
            chunk_id: format!("0_{}", i / 3),
            chunk: format!("chunk {}", i / 3),
            task: "extract".into(),
            advice: None,
            sample_index: 0,
        })
        .collect();
    let outputs: Vec<JobOutput> = (0..30)
        .map(|i| {
            if i % 3 == 1 {
                JobOutput::abstain(i, "nothing here")
            } else {
                JobOutput {
                    job_index: i,
                    explanation: "found".into(),
                    citation: Some(format!("c{i}")),
                    answer: Some(format!("a{i}")),
                    abstained: false,
                }
            }
        })
        .collect();
    let (kept, report) = filter_abstentions(outputs);
    check(kept.len() == 20 && report.jobs_kept == 20, format!("kept {}", kept.len()))?;
    check(report.abstain_fraction == 1.0 / 3.0, format!("abstain fraction {}", report.abstain_fraction))?;
    let w = format_for_synthesis(&kept, &manifests);
    let indices: Vec<usize> =
        w.split(JOB_ENTRY_PREFIX).skip(1).map(|entry| entry.lines().next().unwrap_or("").trim().parse().unwrap_or(usize::MAX)).collect();
    let expected: Vec<usize> = (0..30).filter(|i| i % 3 != 1).collect();
    check(indices == expected, format!("entries {indices:?}"))?;
    Ok("kept 20 of 30, abstain fraction 1/3, 20 entries in manifest order".into())
}

// ---------------------------------------------------------------------------
// 7. BM25 oracle

fn brute_force_bm25(corpus: &[String], query: &str) -> Vec<f64> {
    let docs: Vec<Vec<String>> = corpus.iter().map(|d| tokenize(d)).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let (k1, b) = (1.5, 0.75);
    docs.iter()
        .map(|doc| {
            tokenize(query)
                .iter()
                .map(|q| {
                    let df = docs.iter().filter(|d| d.iter().any(|t| t == q)).count() as f64;
                    let f = doc.iter().filter(|t| *t == q).count() as f64;
                    let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                    idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * doc.len() as f64 / avgdl))
                })
                .sum()
        })
        .collect()
}

fn bm25_oracle() -> Outcome {
    let corpus = toy_corpus(20, 11);
    let queries = [
        "revenue growth",
        "patient dose",
        "tumor scan scan",
        "model accuracy baseline",
        "cash debt risk",
        "quarter",
        "table margin revenue",
        "dataset",
        "growth risk patient model",
        "unseen words only",
    ];
    let start = Instant::now();
    let index = Bm25Index::with_defaults(&corpus);
    for q in queries {
        let oracle = brute_force_bm25(&corpus, q);
        let mut oracle_rank: Vec<usize> = (0..corpus.len()).collect();
        oracle_rank.sort_by(|&x, &y| oracle[y].total_cmp(&oracle[x]).then(x.cmp(&y)));
        let any_positive = oracle.iter().any(|s| *s > 0.0);
        let hits = index.top_k(q, corpus.len(), Parallelism::default());
        if !any_positive {
            check(hits.is_empty(), format!("\"{q}\": expected no hits"))?;
            continue;
        }
        let got: Vec<usize> = hits.iter().map(|h| h.index).collect();
        check(got == oracle_rank, format!("\"{q}\": order {got:?} vs {oracle_rank:?}"))?;
        for h in &hits {
            let want = oracle[h.index];
            check(
                (h.score - want).abs() <= 1e-12 * want.abs().max(f64::MIN_POSITIVE),
                format!("\"{q}\": doc {} score {} vs {want}", h.index, h.score),
            )?;
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("20 documents x 10 queries match, {elapsed:?}"))
}

// ---------------------------------------------------------------------------
// 8. Compression

fn is_worker_prompt(req: &CompletionRequest) -> bool {
    req.messages[0].content.contains("\n\n## Task\n")
}

fn suite_remote() -> MockModel {
    MockModel::from_fn(|req| {
        let first = &req.messages[0].content;
        if first.starts_with("# Decomposition Round #") {
            fenced(json!({
                "instructions": [{"task_id": 1, "instruction": "Extract the total net revenue."}],
                "chunking": {"strategy": "multi_page", "params": {"pages_per_chunk": 2}},
                "samples_per_task": 1
            }))
        } else if first.contains("Collected Job Outputs") {
            fenced(json!({"decision": "provide_final_answer", "explanation": "ok", "answer": "$394,328 million"}))
        } else if req.messages.len() == 1 && req.messages[0].role == minions_core::types::ChatRole::System {
            fenced(json!({"message": "Find the total net revenue."}))
        } else if req.messages.len() > 1 {
            fenced(json!({"decision": "provide_final_answer", "answer": "$394,328 million"}))
        } else {
            fenced(json!({"explanation": "read", "answer": "$394,328 million"}))
        }
    })
}

fn suite_local() -> MockModel {
    MockModel::from_fn(|req| {
        if is_worker_prompt(req) {
            if req.messages[0].content.contains("$394,328 million") {
                r#"{"explanation": "stated", "citation": "revenue was $394,328 million", "answer": "$394,328 million"}"#.into()
            } else {
                r#"{"explanation": "None", "citation": "None", "answer": "None"}"#.into()
            }
        } else {
            "The total net revenue was $394,328 million.".into()
        }
    })
}

fn long_task(i: usize) -> TaskInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
    let mut pages: Vec<String> = (0..20).map(|_| (0..5_000).map(|_| (b'a' + rng.gen_range(0..26u8)) as char).collect::<String>()).collect();
    let needle = rng.gen_range(0..20);
    pages[needle].replace_range(0..60, "Total net revenue for fiscal 2023 was $394,328 million. ....");
    let context = pages.join("\x0c");
    TaskInstance {
        id: format!("long{i}"),
        context: vec![context],
        query: "What was total net revenue for fiscal 2023?".into(),
        gold_answer: "$394,328 million".into(),
        options: None,
        doc_type: "financial document".into(),
    }
}

fn compression() -> Outcome {
    let dataset: Vec<TaskInstance> = (0..4).map(long_task).collect();
    check(dataset.iter().all(|t| t.context_chars() >= 100_000), "contexts shorter than 100k chars")?;
    let (remote, local) = (suite_remote(), suite_local());
    let clients = Clients { local: &local, remote: &remote, embedder: None };
    let mut prefill = Vec::new();
    for protocol in [Protocol::RemoteOnly, Protocol::Minion, Protocol::Minions] {
        let config = SuiteConfig { protocol, ..Default::default() };
        let (_, report) = run_suite(&dataset, &config, clients);
        check(report.accuracy == Decimal::ONE, format!("{protocol} accuracy {}", report.accuracy))?;
        prefill.push(report.mean_remote_prefill);
    }
    let limit = prefill[0] * Decimal::new(1, 1);
    check(prefill[1] < limit, format!("minion remote prefill {} vs remote-only {}", prefill[1], prefill[0]))?;
    check(prefill[2] < limit, format!("minions remote prefill {} vs remote-only {}", prefill[2], prefill[0]))?;
    Ok(format!(
        "mean remote prefill: remote-only {}, minion {} ({:.2}%), minions {} ({:.2}%)",
        prefill[0],
        prefill[1],
        prefill[1] / prefill[0] * Decimal::ONE_HUNDRED,
        prefill[2],
        prefill[2] / prefill[0] * Decimal::ONE_HUNDRED
    ))
}

// ---------------------------------------------------------------------------
// 9. Chunking round trip

fn chunking_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let alphabet: Vec<char> = "ab cdé\n\x0c\x0cxyz漢".chars().collect();
    for case in 0..200 {
        let len = rng.gen_range(0..400);
        let doc: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();

        let pages = chunk_by_page(&doc);
        let rejoined = pages.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("\x0c");
        let expected = doc.split('\x0c').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("\x0c");
        check(rejoined == expected, format!("case {case}: page rejoin differs"))?;

        let size = rng.gen_range(1..50);
        let windows = chunk_by_chars(&doc, size, 0).map_err(|e| e.to_string())?;
        let mut cursor = 0;
        for w in &windows {
            check(w.span.0 == cursor && doc[w.span.0..w.span.1] == w.text, format!("case {case}: window at {cursor}"))?;
            cursor = w.span.1;
        }
        check(cursor == doc.len(), format!("case {case}: windows end at {cursor} of {}", doc.len()))?;
        check(windows.iter().map(|w| w.text.chars().count()).sum::<usize>() == doc.chars().count(), format!("case {case}: char count"))?;
    }
    Ok("200 documents: page rejoin exact, character windows tile exactly once".into())
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 9] = [
        ("cost model reproduction", cost_model),
        ("latency bound worked example", bound_worked_example),
        ("bound dominance over 1000 configurations", bound_dominance),
        ("plan expansion oracle", plan_expansion),
        ("protocol golden runs", golden_runs),
        ("abstention filtering", abstention_filtering),
        ("BM25 oracle equivalence", bm25_oracle),
        ("compression versus remote-only", compression),
        ("chunking round trip", chunking_round_trip),
    ];
    let mut failed = Vec::new();
    let mut stderr = std::io::stderr();
    writeln!(stderr).unwrap();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let line = match &outcome {
            Ok(detail) => format!("PASS  {}. {name}: {detail}", i + 1),
            Err(why) => format!("FAIL  {}. {name}: {why}", i + 1),
        };
        // Written directly so the lines show even when test output is captured.
        writeln!(stderr, "{line}").unwrap();
        if outcome.is_err() {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
