//! Analytic latency model for remote-only, Minion and MinionS.
//!
//! Prefill is modeled as compute bound and decode as memory bound, except for
//! MinionS local decode, which batches many jobs and is modeled as compute
//! bound. USD pricing lives in [`crate::types::cost_usd`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::exec::{self, Parallelism};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LatencyError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("chunk count c must be at least 1")]
    ZeroChunks,
    #[error("non-abstain fraction p must lie in [0, 1], got {0}")]
    FractionOutOfRange(f64),
    #[error("a must lie strictly between 0 and 1, got {0}")]
    AOutOfRange(f64),
    #[error("a is undefined for an empty context (n = 0)")]
    EmptyContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareSpec {
    /// Peak compute, flops per second.
    pub peak_flops: f64,
    /// Peak memory bandwidth, bytes per second.
    pub peak_mem_bw: f64,
}

impl HardwareSpec {
    pub fn new(peak_flops: f64, peak_mem_bw: f64) -> Result<Self, LatencyError> {
        let spec = Self { peak_flops, peak_mem_bw };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), LatencyError> {
        if self.peak_flops.is_nan() || self.peak_flops <= 0.0 {
            return Err(LatencyError::NonPositive("peak_flops"));
        }
        if self.peak_mem_bw.is_nan() || self.peak_mem_bw <= 0.0 {
            return Err(LatencyError::NonPositive("peak_mem_bw"));
        }
        Ok(())
    }

    /// Eight H100 GPUs.
    pub fn h100x8() -> Self {
        Self { peak_flops: 8.0e15, peak_mem_bw: 2.68e13 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub layers: u64,
    pub hidden: u64,
}

impl ModelShape {
    pub fn new(layers: u64, hidden: u64) -> Result<Self, LatencyError> {
        let shape = Self { layers, hidden };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<(), LatencyError> {
        if self.layers == 0 {
            return Err(LatencyError::NonPositive("layers"));
        }
        if self.hidden == 0 {
            return Err(LatencyError::NonPositive("hidden"));
        }
        Ok(())
    }

    /// Parameter bytes, 24·L·d².
    pub fn param_bytes(&self) -> f64 {
        24.0 * self.ld() * self.hidden as f64
    }

    fn ld(&self) -> f64 {
        self.layers as f64 * self.hidden as f64
    }

    pub fn llama_405b() -> Self {
        Self { layers: 126, hidden: 16384 }
    }

    pub fn llama_8b() -> Self {
        Self { layers: 32, hidden: 4096 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    /// Context tokens.
    pub n: u64,
    /// Local decode tokens per response.
    pub n_out_local: u64,
    /// Remote decode tokens.
    pub n_out_remote: u64,
    /// Chunks.
    pub c: u64,
    /// Instructions.
    pub k: u64,
    /// Samples per task.
    pub s: u64,
    /// Non-abstain fraction.
    pub p: f64,
}

impl WorkloadProfile {
    pub fn validate(&self) -> Result<(), LatencyError> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(LatencyError::FractionOutOfRange(self.p));
        }
        Ok(())
    }

    /// Total jobs, J = c·k·s.
    pub fn jobs(&self) -> u64 {
        self.c * self.k * self.s
    }

    /// Local output tokens that reach the remote model, n_out_l·p·c·k·s.
    pub fn forwarded_tokens(&self) -> f64 {
        self.n_out_local as f64 * self.p * self.jobs() as f64
    }

    /// a = forwarded tokens / n.
    pub fn a(&self) -> Option<f64> {
        (self.n > 0).then(|| self.forwarded_tokens() / self.n as f64)
    }
}

/// Local and remote wall-clock seconds for one protocol run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySplit {
    pub local_seconds: f64,
    pub remote_seconds: f64,
}

impl LatencySplit {
    pub fn total(&self) -> f64 {
        self.local_seconds + self.remote_seconds
    }

    pub fn scaled(&self, rounds: f64) -> Self {
        Self { local_seconds: self.local_seconds * rounds, remote_seconds: self.remote_seconds * rounds }
    }
}

fn prefill_seconds(hw: &HardwareSpec, shape: &ModelShape, tokens: f64) -> f64 {
    (tokens * shape.param_bytes() + 2.0 * shape.ld() * tokens * tokens) / hw.peak_flops
}

fn decode_seconds(hw: &HardwareSpec, shape: &ModelShape, kv_tokens: f64, out_tokens: f64) -> f64 {
    out_tokens * (shape.param_bytes() + 4.0 * shape.ld() * kv_tokens) / hw.peak_mem_bw
}

/// Single-model latency with `n` prompt tokens and `n_out` generated tokens.
pub fn latency_remote_only(hw_r: &HardwareSpec, shape_r: &ModelShape, n: f64, n_out_remote: f64) -> f64 {
    prefill_seconds(hw_r, shape_r, n) + decode_seconds(hw_r, shape_r, n, n_out_remote)
}

pub fn latency_minion(
    hw_l: &HardwareSpec,
    shape_l: &ModelShape,
    hw_r: &HardwareSpec,
    shape_r: &ModelShape,
    n: f64,
    n_out_local: f64,
    n_out_remote: f64,
) -> LatencySplit {
    LatencySplit {
        local_seconds: latency_remote_only(hw_l, shape_l, n, n_out_local),
        remote_seconds: latency_remote_only(hw_r, shape_r, n_out_local, n_out_remote),
    }
}

pub fn latency_minions(
    hw_l: &HardwareSpec,
    shape_l: &ModelShape,
    hw_r: &HardwareSpec,
    shape_r: &ModelShape,
    profile: &WorkloadProfile,
) -> Result<LatencySplit, LatencyError> {
    if profile.c == 0 {
        return Err(LatencyError::ZeroChunks);
    }
    profile.validate()?;
    let n = profile.n as f64;
    let c = profile.c as f64;
    let ld_l = shape_l.ld();
    let forwarded = profile.forwarded_tokens();

    let local_prefill = (n * shape_l.param_bytes() + 2.0 * ld_l * n * n / c) / hw_l.peak_flops;
    let local_decode = forwarded * (shape_l.param_bytes() + 2.0 * ld_l * n / c) / hw_l.peak_flops;
    Ok(LatencySplit {
        local_seconds: local_prefill + local_decode,
        remote_seconds: latency_remote_only(hw_r, shape_r, forwarded, profile.n_out_remote as f64),
    })
}

/// Upper bound on MinionS / remote-only total latency, 1 + (1+a)·(F_r/F_l)·(L_l·d_l)/(L_r·d_r).
pub fn latency_ratio_bound(
    a: f64,
    hw_l: &HardwareSpec,
    hw_r: &HardwareSpec,
    shape_l: &ModelShape,
    shape_r: &ModelShape,
) -> Result<f64, LatencyError> {
    bound_from_ratios(a, hw_r.peak_flops / hw_l.peak_flops, shape_l.ld() / shape_r.ld())
}

/// The bound in terms of `flops_ratio` = F_r/F_l and `shape_ratio` = (L_l·d_l)/(L_r·d_r).
pub fn bound_from_ratios(a: f64, flops_ratio: f64, shape_ratio: f64) -> Result<f64, LatencyError> {
    if !(a > 0.0 && a < 1.0) {
        return Err(LatencyError::AOutOfRange(a));
    }
    Ok(1.0 + (1.0 + a) * flops_ratio * shape_ratio)
}

/// Checks the measured MinionS / remote-only ratio against the bound.
///
/// The bound assumes d_l ≤ d_r; inputs violating that can legitimately fail.
pub fn verify_bound(
    profile: &WorkloadProfile,
    hw_l: &HardwareSpec,
    hw_r: &HardwareSpec,
    shape_l: &ModelShape,
    shape_r: &ModelShape,
) -> Result<bool, LatencyError> {
    let a = profile.a().ok_or(LatencyError::EmptyContext)?;
    let bound = latency_ratio_bound(a, hw_l, hw_r, shape_l, shape_r)?;
    let minions = latency_minions(hw_l, shape_l, hw_r, shape_r, profile)?;
    let remote_only = latency_remote_only(hw_r, shape_r, profile.n as f64, profile.n_out_remote as f64);
    Ok(minions.total() / remote_only <= bound)
}

/// Everything needed to evaluate all three protocols on one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyScenario {
    pub hw_local: HardwareSpec,
    pub hw_remote: HardwareSpec,
    pub shape_local: ModelShape,
    pub shape_remote: ModelShape,
    pub profile: WorkloadProfile,
    /// Per-round values are multiplied by this.
    pub rounds: u32,
}

impl LatencyScenario {
    pub fn validate(&self) -> Result<(), LatencyError> {
        self.hw_local.validate()?;
        self.hw_remote.validate()?;
        self.shape_local.validate()?;
        self.shape_remote.validate()?;
        self.profile.validate()?;
        if self.rounds == 0 {
            return Err(LatencyError::NonPositive("rounds"));
        }
        Ok(())
    }

    pub fn report(&self) -> Result<LatencyReport, LatencyError> {
        self.validate()?;
        let rounds = self.rounds as f64;
        let p = &self.profile;
        let remote_only = latency_remote_only(&self.hw_remote, &self.shape_remote, p.n as f64, p.n_out_remote as f64);
        let minion = latency_minion(
            &self.hw_local,
            &self.shape_local,
            &self.hw_remote,
            &self.shape_remote,
            p.n as f64,
            p.n_out_local as f64,
            p.n_out_remote as f64,
        )
        .scaled(rounds);
        let minions = latency_minions(&self.hw_local, &self.shape_local, &self.hw_remote, &self.shape_remote, p)?.scaled(rounds);
        let bound = p
            .a()
            .and_then(|a| latency_ratio_bound(a, &self.hw_local, &self.hw_remote, &self.shape_local, &self.shape_remote).ok())
            .map(|b| b * rounds);
        Ok(LatencyReport {
            remote_only,
            minion,
            minions,
            minions_ratio: minions.total() / remote_only,
            bound,
            a: p.a(),
            rounds: self.rounds,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub remote_only: f64,
    pub minion: LatencySplit,
    pub minions: LatencySplit,
    /// MinionS total / remote-only.
    pub minions_ratio: f64,
    /// `None` when a falls outside (0, 1).
    pub bound: Option<f64>,
    pub a: Option<f64>,
    pub rounds: u32,
}

impl fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>14} {:>14} {:>14} {:>10}", "protocol", "T_local (s)", "T_remote (s)", "total (s)", "ratio")?;
        writeln!(f, "{:<10} {:>14} {:>14.6} {:>14.6} {:>10.4}", "remote", "-", self.remote_only, self.remote_only, 1.0)?;
        for (name, split) in [("minion", self.minion), ("minions", self.minions)] {
            writeln!(
                f,
                "{:<10} {:>14.6} {:>14.6} {:>14.6} {:>10.4}",
                name,
                split.local_seconds,
                split.remote_seconds,
                split.total(),
                split.total() / self.remote_only
            )?;
        }
        match (self.a, self.bound) {
            (Some(a), Some(bound)) => write!(f, "a = {a:.4}, rounds = {}, minions bound = {bound:.4}", self.rounds),
            (Some(a), None) => write!(f, "a = {a:.4} lies outside (0, 1); no bound applies"),
            _ => write!(f, "a is undefined for n = 0; no bound applies"),
        }
    }
}

/// Counts scenarios whose single-round MinionS ratio exceeds the bound.
/// Scenarios without a defined bound are skipped.
pub fn count_bound_violations(scenarios: &[LatencyScenario], mode: Parallelism) -> usize {
    exec::map(scenarios, mode, |s| {
        let holds = verify_bound(&s.profile, &s.hw_local, &s.hw_remote, &s.shape_local, &s.shape_remote);
        matches!(holds, Ok(false))
    })
    .into_iter()
    .filter(|violated| *violated)
    .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Independent re-evaluation: expands P and every product term by term.
    fn oracle_single(f: f64, m: f64, l: f64, d: f64, n: f64, n_out: f64) -> f64 {
        let prefill = l * (24.0 * n * d * d + 2.0 * n * n * d) / f;
        let decode = l * n_out * (24.0 * d * d + 4.0 * n * d) / m;
        prefill + decode
    }

    fn h100() -> HardwareSpec {
        HardwareSpec::h100x8()
    }

    fn rtx() -> HardwareSpec {
        HardwareSpec { peak_flops: 160e12, peak_mem_bw: 1.0e12 }
    }

    fn rel_eq(x: f64, y: f64) -> bool {
        (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-300)
    }

    #[test]
    fn param_bytes() {
        assert_eq!(ModelShape::llama_8b().param_bytes(), 24.0 * 32.0 * 4096.0 * 4096.0);
        assert!(ModelShape::new(0, 1).is_err());
        assert!(HardwareSpec::new(1.0, 0.0).is_err());
    }

    #[test]
    fn remote_only_examples() {
        let shape = ModelShape::llama_405b();
        assert_eq!(latency_remote_only(&h100(), &shape, 0.0, 0.0), 0.0);

        let got = latency_remote_only(&h100(), &shape, 1e5, 500.0);
        let want = oracle_single(8e15, 2.68e13, 126.0, 16384.0, 1e5, 500.0);
        assert!(rel_eq(got, want), "{got} vs {want}");

        let fast = HardwareSpec { peak_flops: 16e15, ..h100() };
        let prefill_only = latency_remote_only(&h100(), &shape, 1e5, 0.0);
        let decode_only = got - prefill_only;
        let doubled = latency_remote_only(&fast, &shape, 1e5, 500.0);
        assert!(rel_eq(doubled, prefill_only / 2.0 + decode_only));
    }

    #[test]
    fn minion_examples() {
        let (l, r) = (ModelShape::llama_8b(), ModelShape::llama_405b());
        assert_eq!(latency_minion(&rtx(), &l, &h100(), &r, 0.0, 0.0, 0.0).total(), 0.0);

        let a = latency_minion(&rtx(), &l, &h100(), &r, 1e4, 200.0, 50.0);
        let b = latency_minion(&rtx(), &l, &h100(), &r, 1e6, 200.0, 50.0);
        assert_eq!(a.remote_seconds, b.remote_seconds);

        let want_local = oracle_single(160e12, 1e12, 32.0, 4096.0, 1e4, 200.0);
        let want_remote = oracle_single(8e15, 2.68e13, 126.0, 16384.0, 200.0, 50.0);
        assert!(rel_eq(a.local_seconds, want_local));
        assert!(rel_eq(a.remote_seconds, want_remote));
    }

    fn profile(n: u64, c: u64, k: u64, s: u64, p: f64) -> WorkloadProfile {
        WorkloadProfile { n, n_out_local: 100, n_out_remote: 300, c, k, s, p }
    }

    #[test]
    fn minions_examples() {
        let (l, r) = (ModelShape::llama_8b(), ModelShape::llama_405b());
        let zero_c = profile(1000, 0, 1, 1, 1.0);
        assert_eq!(latency_minions(&rtx(), &l, &h100(), &r, &zero_c), Err(LatencyError::ZeroChunks));

        // c = k = s = p = 1: prefill matches Minion's local prefill.
        let single = WorkloadProfile { n_out_local: 0, ..profile(50_000, 1, 1, 1, 1.0) };
        let minions = latency_minions(&rtx(), &l, &h100(), &r, &single).unwrap();
        let minion = latency_minion(&rtx(), &l, &h100(), &r, 50_000.0, 0.0, 300.0);
        assert!(rel_eq(minions.local_seconds, minion.local_seconds));

        let n = 80_000.0;
        let attention = |c: f64| 2.0 * 32.0 * 4096.0 * n * n / c / 160e12;
        assert!(rel_eq(attention(4.0), attention(2.0) / 2.0));

        let p = profile(80_000, 8, 3, 2, 0.25);
        let got = latency_minions(&rtx(), &l, &h100(), &r, &p).unwrap();
        let (pl, c) = (24.0 * 32.0 * 4096.0 * 4096.0, 8.0);
        let fwd = 100.0 * 0.25 * 48.0;
        let want_local = (n * pl + 2.0 * 32.0 * 4096.0 * n * n / c) / 160e12 + fwd * (pl + 2.0 * 32.0 * 4096.0 * n / c) / 160e12;
        let want_remote = oracle_single(8e15, 2.68e13, 126.0, 16384.0, fwd, 300.0);
        assert!(rel_eq(got.local_seconds, want_local));
        assert!(rel_eq(got.remote_seconds, want_remote));
    }

    #[test]
    fn bound_worked_example() {
        let hw_l = HardwareSpec { peak_flops: 160e12, peak_mem_bw: 1.0 };
        let hw_r = HardwareSpec { peak_flops: 8000e12, peak_mem_bw: 1.0 };
        let bound = latency_ratio_bound(0.2, &hw_l, &hw_r, &ModelShape::llama_8b(), &ModelShape::llama_405b()).unwrap();
        let oracle = 1.0 + 1.2 * 50.0 * (32.0 * 4096.0) / (126.0 * 16384.0);
        assert!((bound - 4.8095).abs() < 1e-3);
        assert!(rel_eq(bound, oracle));
        assert_eq!(bound_from_ratios(0.2, 50.0, 1.0 / 16.0).unwrap(), 4.75);
    }

    #[test]
    fn bound_domain_and_limits() {
        let same = ModelShape::llama_8b();
        assert_eq!(latency_ratio_bound(0.5, &rtx(), &rtx(), &same, &same).unwrap(), 2.5);
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(latency_ratio_bound(bad, &rtx(), &rtx(), &same, &same).is_err());
        }
        let near_zero = latency_ratio_bound(1e-12, &rtx(), &h100(), &same, &ModelShape::llama_405b()).unwrap();
        let limit = 1.0 + 50.0 * (32.0 * 4096.0) / (126.0 * 16384.0);
        assert!((near_zero - limit).abs() < 1e-9);
    }

    #[test]
    fn worked_configuration_satisfies_bound() {
        let hw_l = HardwareSpec { peak_flops: 160e12, peak_mem_bw: 1.0e12 };
        let p = WorkloadProfile { n: 100_000, n_out_local: 200, n_out_remote: 500, c: 20, k: 5, s: 1, p: 0.2 };
        assert!((p.a().unwrap() - 0.04).abs() < 1e-12);
        assert!(verify_bound(&p, &hw_l, &h100(), &ModelShape::llama_8b(), &ModelShape::llama_405b()).unwrap());
        // No jobs: the MinionS ratio is trivially below one-plus.
        let none = WorkloadProfile { s: 0, ..p };
        assert_eq!(none.a(), Some(0.0));
        let split = latency_minions(&hw_l, &ModelShape::llama_8b(), &h100(), &ModelShape::llama_405b(), &none).unwrap();
        let remote_only = latency_remote_only(&h100(), &ModelShape::llama_405b(), 1e5, 500.0);
        assert!(split.remote_seconds / remote_only < 1.0);
    }

    #[test]
    fn report_multiplies_by_rounds() {
        let scenario = LatencyScenario {
            hw_local: rtx(),
            hw_remote: h100(),
            shape_local: ModelShape::llama_8b(),
            shape_remote: ModelShape::llama_405b(),
            profile: WorkloadProfile { n: 100_000, n_out_local: 100, n_out_remote: 300, c: 10, k: 2, s: 1, p: 0.5 },
            rounds: 1,
        };
        let one = scenario.report().unwrap();
        let three = LatencyScenario { rounds: 3, ..scenario }.report().unwrap();
        assert!(rel_eq(three.minions.total(), 3.0 * one.minions.total()));
        assert!(rel_eq(three.bound.unwrap(), 3.0 * one.bound.unwrap()));
        assert_eq!(three.remote_only, one.remote_only);
        let text = one.to_string();
        assert!(text.contains("minions") && text.contains("bound"));
        assert!(LatencyScenario { rounds: 0, ..scenario }.report().is_err());
    }

    fn scenario_strategy() -> impl Strategy<Value = LatencyScenario> {
        (
            (1e12f64..1e15, 1e11f64..1e13, 1e14f64..1e16, 1e12f64..1e14),
            (1u64..=128, 1u64..=16384, 1u64..=128, 1u64..=16384),
            (1_000u64..1_000_000, 1u64..=16, 1u64..=16, 1u64..=16, 0.01f64..=1.0, 0.011f64..0.99, 1u64..2_000),
        )
            .prop_map(|((fl, ml, fr, mr), (ll, dl, lr, dr), (n, c, k, s, p, a, n_out_r))| {
                let (dl, dr) = (dl.min(dr), dl.max(dr));
                let jobs = (c * k * s) as f64;
                let n_out_local = ((a * n as f64) / (p * jobs)).floor().max(1.0) as u64;
                LatencyScenario {
                    hw_local: HardwareSpec { peak_flops: fl, peak_mem_bw: ml },
                    hw_remote: HardwareSpec { peak_flops: fr, peak_mem_bw: mr },
                    shape_local: ModelShape { layers: ll, hidden: dl },
                    shape_remote: ModelShape { layers: lr, hidden: dr },
                    profile: WorkloadProfile { n, n_out_local, n_out_remote: n_out_r, c, k, s, p },
                    rounds: 1,
                }
            })
    }

    proptest! {
        #[test]
        fn bound_dominates(s in scenario_strategy()) {
            let a = s.profile.a().unwrap();
            prop_assume!(a > 0.0 && a < 1.0);
            prop_assert!(verify_bound(&s.profile, &s.hw_local, &s.hw_remote, &s.shape_local, &s.shape_remote).unwrap());
        }

        #[test]
        fn remote_component_below_remote_only(s in scenario_strategy()) {
            let a = s.profile.a().unwrap();
            prop_assume!(a > 0.0 && a < 1.0);
            let split = latency_minions(&s.hw_local, &s.shape_local, &s.hw_remote, &s.shape_remote, &s.profile).unwrap();
            let remote_only = latency_remote_only(&s.hw_remote, &s.shape_remote, s.profile.n as f64, s.profile.n_out_remote as f64);
            prop_assert!(split.remote_seconds < remote_only);
        }

        #[test]
        fn token_scaling(n in 1.0f64..1e5, lambda in 1.0f64..8.0) {
            let shape = ModelShape::llama_8b();
            let hw = rtx();
            let linear = |t: f64| t * shape.param_bytes() / hw.peak_flops;
            let quad = |t: f64| 2.0 * shape.ld() * t * t / hw.peak_flops;
            let base = latency_remote_only(&hw, &shape, n, 0.0);
            let scaled = latency_remote_only(&hw, &shape, lambda * n, 0.0);
            let want = lambda * linear(n) + lambda * lambda * quad(n);
            prop_assert!((scaled - want).abs() <= 1e-9 * want);
            prop_assert!((base - linear(n) - quad(n)).abs() <= 1e-9 * base);
        }
    }

    #[test]
    fn violation_count_matches_in_both_modes() {
        let mut s = LatencyScenario {
            hw_local: rtx(),
            hw_remote: h100(),
            shape_local: ModelShape::llama_8b(),
            shape_remote: ModelShape::llama_405b(),
            profile: WorkloadProfile { n: 100_000, n_out_local: 100, n_out_remote: 300, c: 10, k: 2, s: 1, p: 0.5 },
            rounds: 1,
        };
        let mut cases = vec![s; 10];
        // Local model wider than remote: outside the bound's assumptions.
        s.shape_local = ModelShape { layers: 126, hidden: 65536 };
        s.hw_local = HardwareSpec { peak_flops: 8e15, peak_mem_bw: 1e12 };
        s.shape_remote = ModelShape { layers: 1, hidden: 16 };
        cases.push(s);
        let seq = count_bound_violations(&cases, Parallelism::Sequential);
        assert_eq!(seq, count_bound_violations(&cases, Parallelism::Parallel));
        assert_eq!(seq, 1);
    }
}
