//! Multi-frame trajectory optimization with full and downsampled factors.

use serde::{Deserialize, Serialize};

use super::{Check, EvalReport, TrialRecord};
use crate::coreset::DEFAULT_CLUSTER_COUNT;
use crate::downsample::{DownsampleConfig, DEFAULT_MAX_CORRESPONDENCE_DISTANCE};
use crate::error::{Error, Result};
use crate::optimizer::synthetic::{SceneConfig, SyntheticSequence};
use crate::optimizer::{ate, detect_overlaps, optimize, AteResult, FactorGraph, OptimizeResult, OptimizerConfig};
use crate::quadratic::MIN_SELECTION;

/// Largest relative ATE difference of a sampled run from the full run.
pub const ATE_RELATIVE_TOLERANCE: f64 = 0.05;
/// Largest ratio of sampled to full row evaluations.
pub const ROW_RATIO_LIMIT: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub scene: SceneConfig,
    /// Run with full factors.
    pub full: bool,
    /// Exact row budgets, one run each.
    pub budgets: Vec<usize>,
    pub clusters: usize,
    pub max_correspondence_distance: f64,
    /// Fraction of a frame's points that must match for a pair to get a factor.
    pub min_overlap: f64,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            full: true,
            budgets: vec![29],
            clusters: DEFAULT_CLUSTER_COUNT,
            max_correspondence_distance: DEFAULT_MAX_CORRESPONDENCE_DISTANCE,
            min_overlap: 0.3,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRun {
    /// `"full"` or `"exact"`.
    pub method: String,
    /// Row budget per factor, 0 for the full run.
    pub budget: usize,
    pub factors: usize,
    /// Rows of one linearization pass over all factors.
    pub rows_per_pass: usize,
    pub initial_ate: AteResult,
    pub ate: AteResult,
    pub result: OptimizeResult,
}

impl TrajectoryRun {
    pub fn label(&self) -> String {
        if self.method == "full" {
            "full".into()
        } else {
            format!("exact/M={}", self.budget)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryOutcome {
    pub sequence: SyntheticSequence,
    pub pairs: Vec<(usize, usize)>,
    pub runs: Vec<TrajectoryRun>,
}

/// Generates the synthetic loop and optimizes it once per requested method.
pub fn trajectory_comparison(cfg: &TrajectoryConfig) -> Result<(EvalReport, TrajectoryOutcome)> {
    let sequence = SyntheticSequence::generate(&cfg.scene)?;
    trajectory_comparison_on(cfg, sequence)
}

/// Same as [`trajectory_comparison`] on a given sequence; `cfg.scene` is ignored.
pub fn trajectory_comparison_on(cfg: &TrajectoryConfig, sequence: SyntheticSequence) -> Result<(EvalReport, TrajectoryOutcome)> {
    if !cfg.full && cfg.budgets.is_empty() {
        return Err(Error::InvalidInput("nothing to run: no full run and no budgets".into()));
    }
    if let Some(&m) = cfg.budgets.iter().find(|m| **m < MIN_SELECTION) {
        return Err(Error::InvalidTarget { target: m, min: MIN_SELECTION });
    }
    cfg.optimizer.validate()?;
    let d = cfg.max_correspondence_distance;
    let pairs = detect_overlaps(&sequence.clouds, &sequence.initial, d, cfg.min_overlap)?;
    let initial_ate = ate(&sequence.initial, &sequence.ground_truth)?;

    let mut runs = Vec::new();
    let mut run = |method: &str, budget: usize, graph: FactorGraph| -> Result<()> {
        let result = optimize(&graph, &cfg.optimizer)?;
        let a = ate(&result.poses, &sequence.ground_truth)?;
        log::info!("{method} M={budget}: ate {:.4} after {} iterations", a.rmse, result.iterations);
        runs.push(TrajectoryRun {
            method: method.into(),
            budget,
            factors: graph.factors.len(),
            rows_per_pass: graph.rows_per_pass(),
            initial_ate,
            ate: a,
            result,
        });
        Ok(())
    };
    if cfg.full {
        let g = FactorGraph::with_full_factors(sequence.clouds.clone(), sequence.initial.clone(), &pairs, d)?;
        run("full", 0, g)?;
    }
    for &m in &cfg.budgets {
        let mut dc = DownsampleConfig::new(m).with_seed(cfg.seed).with_max_distance(d);
        dc.coreset.cluster_count = cfg.clusters;
        let g = FactorGraph::with_sampled_factors(sequence.clouds.clone(), sequence.initial.clone(), &pairs, &dc)?;
        run("exact", m, g)?;
    }

    let records = runs
        .iter()
        .map(|r| TrialRecord {
            group: r.label(),
            method: r.method.clone(),
            budget: r.budget,
            noise_deg: 0.0,
            trial: 0,
            seed: cfg.seed,
            value: Some(r.ate.rmse),
            raw: Some(r.result.rows_evaluated as f64),
            size: r.rows_per_pass,
            degenerate: false,
        })
        .collect();
    let checks = trajectory_checks(&runs);
    let report = EvalReport::new("trajectory", cfg, records, checks)?;
    Ok((report, TrajectoryOutcome { sequence, pairs, runs }))
}

fn trajectory_checks(runs: &[TrajectoryRun]) -> Vec<Check> {
    let mut checks = Vec::new();
    for r in runs {
        let monotone = r.result.cost_trace.windows(2).all(|w| w[1] <= w[0]);
        checks.push(Check::new(
            format!("{} cost never increases", r.label()),
            monotone,
            format!("{} accepted steps", r.result.accepted_steps),
        ));
        checks.push(Check::new(
            format!("{} improves on the initial trajectory", r.label()),
            r.ate.rmse < r.initial_ate.rmse,
            format!("ATE {:.4} -> {:.4}", r.initial_ate.rmse, r.ate.rmse),
        ));
    }
    if let Some(full) = runs.iter().find(|r| r.method == "full") {
        for r in runs.iter().filter(|r| r.method != "full") {
            let rel = (r.ate.rmse - full.ate.rmse).abs() / full.ate.rmse;
            checks.push(Check::new(
                format!("{} ATE within {:.0}% of full", r.label(), ATE_RELATIVE_TOLERANCE * 100.0),
                rel < ATE_RELATIVE_TOLERANCE,
                format!("{:.5} vs {:.5} ({:.2}%)", r.ate.rmse, full.ate.rmse, rel * 100.0),
            ));
            let ratio = r.result.rows_evaluated as f64 / full.result.rows_evaluated as f64;
            checks.push(Check::new(
                format!("{} evaluates under {:.0}% of full rows", r.label(), ROW_RATIO_LIMIT * 100.0),
                ratio < ROW_RATIO_LIMIT,
                format!("{} vs {} rows ({:.3}%)", r.result.rows_evaluated, full.result.rows_evaluated, ratio * 100.0),
            ));
        }
    }
    checks
}
