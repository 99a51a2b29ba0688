#![allow(dead_code)]

use minions_core::costlat::{HardwareSpec, LatencyScenario, ModelShape, WorkloadProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fenced(v: serde_json::Value) -> String {
    format!("Reasoning first.\n```json\n{v}\n```")
}

/// Random scenarios with a ∈ (0.01, 0.99), local hidden size ≤ remote hidden size and c ≥ 1.
pub fn random_scenarios(count: usize, seed: u64) -> Vec<LatencyScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let d_r: u64 = rng.gen_range(64..=16384);
        let d_l: u64 = rng.gen_range(16..=d_r);
        let n: u64 = rng.gen_range(1_000..=1_000_000);
        let (c, k, s) = (rng.gen_range(1..=64u64), rng.gen_range(1..=16u64), rng.gen_range(1..=16u64));
        let p: f64 = rng.gen_range(0.01..=1.0);
        let target_a: f64 = rng.gen_range(0.01..0.99);
        let n_out_local = (target_a * n as f64 / (p * (c * k * s) as f64)).floor() as u64;
        let profile = WorkloadProfile { n, n_out_local, n_out_remote: rng.gen_range(1..=4_000), c, k, s, p };
        match profile.a() {
            Some(a) if a > 0.01 && a < 0.99 => {}
            _ => continue,
        }
        out.push(LatencyScenario {
            hw_local: HardwareSpec { peak_flops: rng.gen_range(1e12..1e15), peak_mem_bw: rng.gen_range(1e10..1e13) },
            hw_remote: HardwareSpec { peak_flops: rng.gen_range(1e14..1e17), peak_mem_bw: rng.gen_range(1e12..1e14) },
            shape_local: ModelShape { layers: rng.gen_range(1..=160), hidden: d_l },
            shape_remote: ModelShape { layers: rng.gen_range(1..=160), hidden: d_r },
            profile,
            rounds: 1,
        });
    }
    out
}

/// Documents built from a small vocabulary so terms repeat across documents.
pub fn toy_corpus(count: usize, seed: u64) -> Vec<String> {
    const WORDS: [&str; 16] = [
        "revenue", "margin", "cash", "debt", "patient", "dose", "tumor", "scan", "model", "dataset", "baseline", "accuracy", "quarter",
        "growth", "risk", "table",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let len = rng.gen_range(3..60);
            (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
        })
        .collect()
}
