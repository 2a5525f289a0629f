//! Numerical experiments: exactness validation, timing, Hessian KLD and
//! displacement errors under rotation noise, with a random-sampling baseline,
//! and full versus downsampled trajectory optimization.
//!
//! Every experiment returns an [`EvalReport`] whose content depends only on
//! its configuration. Wall-clock measurements go into a separate
//! [`TimingReport`].

mod displacement;
mod kld;
mod pair;
mod trajectory;
mod validate;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector6;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::quadratic::ResidualSystem;

pub use displacement::{displacement_error_sweep, random_rotation, DisplacementConfig};
pub use kld::{kld_table, normalized_kld, KldConfig, KldScore, DEGENERATE_EIGENVALUE};
pub use pair::{random_sampling_baseline, PairData};
pub use trajectory::{
    trajectory_comparison, trajectory_comparison_on, TrajectoryConfig, TrajectoryOutcome, TrajectoryRun,
    ATE_RELATIVE_TOLERANCE, ROW_RATIO_LIMIT,
};
pub use validate::{bench, validate_random, BenchConfig, ValidateConfig, VALIDATION_TOLERANCE};

/// One measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub group: String,
    pub method: String,
    /// Residual rows (exact) or points (random) requested.
    pub budget: usize,
    pub noise_deg: f64,
    pub trial: usize,
    pub seed: u64,
    /// `None` when the quantity is undefined for this trial (degenerate system).
    pub value: Option<f64>,
    /// Secondary quantity, e.g. the unnormalized KLD.
    pub raw: Option<f64>,
    /// Rows actually selected.
    pub size: usize,
    pub degenerate: bool,
}

/// Statistics of one group over its defined values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub method: String,
    pub budget: usize,
    pub noise_deg: f64,
    pub count: usize,
    pub defined: usize,
    pub degenerate: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub version: String,
    pub config: serde_json::Value,
    pub records: Vec<TrialRecord>,
    pub summary: Vec<GroupSummary>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl EvalReport {
    pub fn new(experiment: &str, config: &impl Serialize, records: Vec<TrialRecord>, checks: Vec<Check>) -> Result<Self> {
        let summary = summarize(&records);
        let passed = checks.iter().all(|c| c.passed);
        Ok(Self {
            experiment: experiment.into(),
            version: crate::VERSION.into(),
            config: serde_json::to_value(config)?,
            records,
            summary,
            checks,
            passed,
        })
    }

    pub fn group(&self, name: &str) -> Option<&GroupSummary> {
        self.summary.iter().find(|g| g.group == name)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    /// One row per trial.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path, &self.records)
    }

    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path, &self.summary)
    }
}

/// Per-trial wall-clock breakdown in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub group: String,
    pub method: String,
    pub budget: usize,
    pub trial: usize,
    pub total_ms: f64,
    pub flatten_ms: f64,
    pub cluster_means_ms: f64,
    pub caratheodory_ms: f64,
    pub nullspace_ms: f64,
    pub recursions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub group: String,
    pub method: String,
    pub budget: usize,
    pub count: usize,
    pub median_total_ms: f64,
    pub mean_total_ms: f64,
    pub median_flatten_ms: f64,
    pub median_cluster_means_ms: f64,
    pub median_caratheodory_ms: f64,
    pub median_nullspace_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub experiment: String,
    pub records: Vec<TimingRecord>,
    pub summary: Vec<TimingSummary>,
    pub checks: Vec<Check>,
}

impl TimingReport {
    pub fn new(experiment: &str, records: Vec<TimingRecord>) -> Self {
        let mut summary: Vec<TimingSummary> = Vec::new();
        for key in group_keys(records.iter().map(|r| (&r.group, &r.method, r.budget))) {
            let rs: Vec<&TimingRecord> = records.iter().filter(|r| r.group == key.0).collect();
            let col = |f: fn(&TimingRecord) -> f64| -> Vec<f64> { rs.iter().map(|r| f(r)).collect() };
            let total = col(|r| r.total_ms);
            summary.push(TimingSummary {
                group: key.0,
                method: key.1,
                budget: key.2,
                count: rs.len(),
                median_total_ms: median(&total),
                mean_total_ms: mean(&total),
                median_flatten_ms: median(&col(|r| r.flatten_ms)),
                median_cluster_means_ms: median(&col(|r| r.cluster_means_ms)),
                median_caratheodory_ms: median(&col(|r| r.caratheodory_ms)),
                median_nullspace_ms: median(&col(|r| r.nullspace_ms)),
            });
        }
        Self { experiment: experiment.into(), records, summary, checks: Vec::new() }
    }

    pub fn median(&self, method: &str, budget: usize) -> Option<f64> {
        self.summary.iter().find(|s| s.method == method && s.budget == budget).map(|s| s.median_total_ms)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path, &self.records)
    }
}

fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Distinct `(group, method, budget)` keys in first-seen order.
fn group_keys<'a>(keys: impl Iterator<Item = (&'a String, &'a String, usize)>) -> Vec<(String, String, usize)> {
    let mut out: Vec<(String, String, usize)> = Vec::new();
    for (g, m, b) in keys {
        if !out.iter().any(|k| &k.0 == g) {
            out.push((g.clone(), m.clone(), b));
        }
    }
    out
}

pub fn summarize(records: &[TrialRecord]) -> Vec<GroupSummary> {
    let mut out = Vec::new();
    for (group, method, budget) in group_keys(records.iter().map(|r| (&r.group, &r.method, r.budget))) {
        let rs: Vec<&TrialRecord> = records.iter().filter(|r| r.group == group).collect();
        let vals: Vec<f64> = rs.iter().filter_map(|r| r.value).collect();
        let (min, max) = if vals.is_empty() {
            (0.0, 0.0)
        } else {
            (vals.iter().copied().fold(f64::INFINITY, f64::min), vals.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        };
        out.push(GroupSummary {
            group,
            method,
            budget,
            noise_deg: rs[0].noise_deg,
            count: rs.len(),
            defined: vals.len(),
            degenerate: rs.iter().filter(|r| r.degenerate).count(),
            mean: mean(&vals),
            std: std_dev(&vals),
            median: median(&vals),
            min,
            max,
        });
    }
    out
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// `n` rows with i.i.d. standard normal Jacobian entries and residuals.
pub fn random_system(n: usize, seed: u64) -> Result<ResidualSystem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
    let jac = (0..n).map(|_| Vector6::from_fn(|_, _| g())).collect();
    let res = (0..n).map(|_| g()).collect();
    ResidualSystem::new(res, jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(group: &str, trial: usize, value: Option<f64>) -> TrialRecord {
        TrialRecord {
            group: group.into(),
            method: "m".into(),
            budget: 1,
            noise_deg: 0.0,
            trial,
            seed: 0,
            value,
            raw: None,
            size: 0,
            degenerate: value.is_none(),
        }
    }

    #[test]
    fn summary_statistics() {
        let records = vec![rec("a", 0, Some(1.0)), rec("a", 1, Some(3.0)), rec("a", 2, None), rec("b", 0, Some(2.0))];
        let s = summarize(&records);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].count, 3);
        assert_eq!(s[0].defined, 2);
        assert_eq!(s[0].degenerate, 1);
        assert_eq!(s[0].mean, 2.0);
        assert_eq!(s[0].std, 1.0);
        assert_eq!(s[0].median, 2.0);
        assert_eq!(s[1].max, 2.0);
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = EvalReport::new("t", &serde_json::json!({"k": 1}), vec![rec("a", 0, Some(1.5))], vec![]).unwrap();
        assert!(r.passed);
        r.write_json(dir.path().join("r.json")).unwrap();
        r.write_csv(dir.path().join("r.csv")).unwrap();
        let back: EvalReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(back, r);
        let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("group,method,budget"));
    }
}
