//! Exactness validation on random residual systems and extraction timing.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{random_system, Check, EvalReport, TimingRecord, TimingReport, TrialRecord};
use crate::coreset::{CoresetConfig, NullspaceMethod, DEFAULT_CLUSTER_COUNT};
use crate::error::{Error, Result};
use crate::quadratic::{extract_with_stats, quadratic_of, reconstruct, ExtractStats, MIN_SELECTION};
use crate::seed::derive_seed;

/// Bound on the relative reconstruction error of an exact selection.
pub const VALIDATION_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateConfig {
    pub trials: usize,
    pub rows: usize,
    pub targets: Vec<usize>,
    pub clusters: usize,
    pub seed: u64,
    pub nullspace: NullspaceMethod,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            rows: 30_000,
            targets: vec![29],
            clusters: DEFAULT_CLUSTER_COUNT,
            seed: 0,
            nullspace: NullspaceMethod::Lu,
        }
    }
}

impl ValidateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows < MIN_SELECTION {
            return Err(Error::TooFewRows { rows: self.rows, min: MIN_SELECTION - 1 });
        }
        if let Some(&m) = self.targets.iter().find(|m| **m < MIN_SELECTION) {
            return Err(Error::InvalidTarget { target: m, min: MIN_SELECTION });
        }
        if self.trials == 0 || self.targets.is_empty() {
            return Err(Error::InvalidInput("need at least one trial and one target".into()));
        }
        Ok(())
    }
}

/// Size range guaranteed for target `m` over `n` rows with `k` clusters.
pub(crate) fn size_range(n: usize, m: usize, k: usize) -> (usize, usize) {
    if n <= m {
        (n, n)
    } else {
        (m.saturating_sub(k).max(MIN_SELECTION), m)
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn timing_record(group: &str, method: NullspaceMethod, m: usize, trial: usize, s: &ExtractStats) -> TimingRecord {
    TimingRecord {
        group: group.into(),
        method: method_name(method).into(),
        budget: m,
        trial,
        total_ms: ms(s.total),
        flatten_ms: ms(s.flatten),
        cluster_means_ms: ms(s.coreset.cluster_means),
        caratheodory_ms: ms(s.coreset.caratheodory),
        nullspace_ms: ms(s.coreset.nullspace),
        recursions: s.coreset.recursions,
    }
}

fn method_name(m: NullspaceMethod) -> &'static str {
    match m {
        NullspaceMethod::Lu => "lu",
        NullspaceMethod::Svd => "svd",
    }
}

/// One extraction on trial `t`'s system; returns the record and its timing.
fn run_trial(cfg_seed: u64, trial: usize, n: usize, m: usize, k: usize, method: NullspaceMethod) -> Result<(TrialRecord, TimingRecord)> {
    let seed = derive_seed(cfg_seed, trial as u64);
    let sys = random_system(n, seed)?;
    let ccfg = CoresetConfig::new(m).with_clusters(k).with_nullspace(method).with_seed(seed);
    let mut stats = ExtractStats::default();
    let sel = extract_with_stats(&sys, &ccfg, &mut stats)?;
    let err = quadratic_of(&sys).relative_error(&reconstruct(&sys, &sel)?);
    let group = format!("{}/M={m}", method_name(method));
    let rec = TrialRecord {
        group: group.clone(),
        method: method_name(method).into(),
        budget: m,
        noise_deg: 0.0,
        trial,
        seed,
        value: Some(err),
        raw: None,
        size: sel.len(),
        degenerate: false,
    };
    Ok((rec, timing_record(&group, method, m, trial, &stats)))
}

fn exactness_checks(records: &[TrialRecord], n: usize, k: usize) -> Vec<Check> {
    let worst = records.iter().filter_map(|r| r.value).fold(0.0, f64::max);
    let errors_ok = records.iter().all(|r| r.value.is_some_and(|v| v < VALIDATION_TOLERANCE));
    let bad_sizes: Vec<String> = records
        .iter()
        .filter(|r| {
            let (lo, hi) = size_range(n, r.budget, k);
            r.size < lo || r.size > hi
        })
        .map(|r| format!("M={} trial {} size {}", r.budget, r.trial, r.size))
        .collect();
    vec![
        Check::new("errors below tolerance", errors_ok, format!("worst relative error {worst:.3e}")),
        Check::new(
            "selection sizes in range",
            bad_sizes.is_empty(),
            if bad_sizes.is_empty() { "all sizes in range".to_string() } else { bad_sizes.join("; ") },
        ),
    ]
}

/// Random systems of `rows` rows, extracted at every target in parallel trials.
pub fn validate_random(cfg: &ValidateConfig) -> Result<(EvalReport, TimingReport)> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = cfg.targets.iter().flat_map(|&m| (0..cfg.trials).map(move |t| (m, t))).collect();
    let out: Vec<(TrialRecord, TimingRecord)> = jobs
        .par_iter()
        .map(|&(m, t)| run_trial(cfg.seed, t, cfg.rows, m, cfg.clusters, cfg.nullspace))
        .collect::<Result<_>>()?;
    let (records, timings): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    let checks = exactness_checks(&records, cfg.rows, cfg.clusters);
    Ok((EvalReport::new("validate", cfg, records, checks)?, TimingReport::new("validate", timings)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub targets: Vec<usize>,
    pub trials: usize,
    pub rows: usize,
    pub clusters: usize,
    pub seed: u64,
    pub methods: Vec<NullspaceMethod>,
    /// Untimed extractions before measuring.
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            targets: vec![29, 64, 128, 256, 512, 1024],
            trials: 20,
            rows: 30_000,
            clusters: DEFAULT_CLUSTER_COUNT,
            seed: 0,
            methods: vec![NullspaceMethod::Lu, NullspaceMethod::Svd],
            warmup: 2,
        }
    }
}

/// Sequential timing sweep. Trial `t` uses the same system for every target
/// and method; the loop order interleaves targets and methods within a trial.
pub fn bench(cfg: &BenchConfig) -> Result<(EvalReport, TimingReport)> {
    ValidateConfig {
        trials: cfg.trials,
        rows: cfg.rows,
        targets: cfg.targets.clone(),
        clusters: cfg.clusters,
        seed: cfg.seed,
        nullspace: NullspaceMethod::Lu,
    }
    .validate()?;
    if cfg.methods.is_empty() {
        return Err(Error::InvalidInput("need at least one nullspace method".into()));
    }
    for w in 0..cfg.warmup {
        for &method in &cfg.methods {
            run_trial(cfg.seed ^ 0xA5A5, w, cfg.rows, cfg.targets[0], cfg.clusters, method)?;
        }
    }
    let mut records = Vec::new();
    let mut timings = Vec::new();
    for t in 0..cfg.trials {
        for &m in &cfg.targets {
            for &method in &cfg.methods {
                let (r, tm) = run_trial(cfg.seed, t, cfg.rows, m, cfg.clusters, method)?;
                records.push(r);
                timings.push(tm);
            }
        }
    }
    // deterministic report ordering: by method, then target, then trial
    let order = |method: &str, m: usize, t: usize| {
        (cfg.methods.iter().position(|x| method_name(*x) == method), cfg.targets.iter().position(|x| *x == m), t)
    };
    records.sort_by_key(|r| order(&r.method, r.budget, r.trial));
    timings.sort_by_key(|r| order(&r.method, r.budget, r.trial));
    let checks = exactness_checks(&records, cfg.rows, cfg.clusters);
    let mut timing = TimingReport::new("bench", timings);
    timing.checks = timing_checks(&timing, cfg);
    Ok((EvalReport::new("bench", cfg, records, checks)?, timing))
}

fn timing_checks(t: &TimingReport, cfg: &BenchConfig) -> Vec<Check> {
    let mut checks = Vec::new();
    for &method in &cfg.methods {
        let name = method_name(method);
        let medians: Vec<f64> = cfg.targets.iter().filter_map(|&m| t.median(name, m)).collect();
        let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
        let listing: Vec<String> = cfg.targets.iter().zip(&medians).map(|(m, v)| format!("M={m}: {v:.2} ms")).collect();
        checks.push(Check::new(format!("{name} median time nondecreasing in M"), monotone, listing.join(", ")));
    }
    if cfg.methods.contains(&NullspaceMethod::Lu) && cfg.methods.contains(&NullspaceMethod::Svd) {
        let ratios: Vec<(usize, f64)> = cfg
            .targets
            .iter()
            .filter_map(|&m| Some((m, t.median("svd", m)? / t.median("lu", m)?)))
            .collect();
        let min = ratios.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
        let listing: Vec<String> = ratios.iter().map(|(m, r)| format!("M={m}: {r:.2}x")).collect();
        checks.push(Check::new("lu at least 2x faster than svd", min >= 2.0, listing.join(", ")));
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passthrough_is_exact() {
        let cfg = ValidateConfig { trials: 1, rows: 29, targets: vec![29], ..ValidateConfig::default() };
        let (r, _) = validate_random(&cfg).unwrap();
        assert!(r.passed);
        assert_eq!(r.records[0].value, Some(0.0));
        assert_eq!(r.records[0].size, 29);
    }

    #[test]
    fn small_sweep_passes_and_is_deterministic() {
        let cfg = ValidateConfig { trials: 4, rows: 3000, targets: vec![29, 64, 128], seed: 5, ..ValidateConfig::default() };
        let (a, _) = validate_random(&cfg).unwrap();
        let (b, _) = validate_random(&cfg).unwrap();
        assert!(a.passed, "{:?}", a.checks);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.records.len(), 12);
        assert!(a.records.iter().filter(|r| r.budget == 29).all(|r| r.size == 29));
    }

    #[test]
    fn rejects_small_target() {
        let cfg = ValidateConfig { targets: vec![10], ..ValidateConfig::default() };
        assert!(matches!(validate_random(&cfg), Err(Error::InvalidTarget { .. })));
    }

    #[test]
    fn bench_reports_every_combination() {
        let cfg = BenchConfig { targets: vec![29, 64], trials: 2, rows: 2000, warmup: 0, ..BenchConfig::default() };
        let (r, t) = bench(&cfg).unwrap();
        assert!(r.passed);
        assert_eq!(r.records.len(), 8);
        assert_eq!(t.summary.len(), 4);
        assert_eq!(t.checks.len(), 3);
        assert!(t.records.iter().all(|x| x.nullspace_ms <= x.total_ms));
    }
}
