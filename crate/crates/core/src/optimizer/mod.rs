//! Multi-frame registration over SE(3) poses.
//!
//! The objective is the sum of pair registration errors over every
//! overlapping frame pair. Each factor supplies a 12-dim quadratic model in
//! `[δ_i; δ_j]`; the models are assembled into a dense system over all
//! frames except frame 0, which is held fixed as the gauge, and solved with
//! Levenberg-Marquardt.

mod ate;
pub mod synthetic;

use nalgebra::{DMatrix, DVector, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::downsample::{exact_downsample, DownsampleConfig, FullFactor, SampledFactor};
use crate::error::{Error, Result};
use crate::registration::{overlap_ratio, GaussianPointCloud, KdTree, PairQuadratic, Pose, WhitenerPolicy};
use crate::seed::derive_seed;

pub use ate::{align_rigid, ate, read_tum, write_tum, AteResult};

/// A registration error term between frames `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Factor {
    Full(FullFactor),
    Sampled(SampledFactor),
}

impl Factor {
    pub fn frames(&self) -> (usize, usize) {
        match self {
            Factor::Full(f) => (f.target_frame, f.source_frame),
            Factor::Sampled(f) => (f.target_frame, f.source_frame),
        }
    }

    /// Scalar residual rows touched by one linearization or cost evaluation.
    pub fn row_count(&self) -> usize {
        match self {
            Factor::Full(f) => 3 * f.correspondences.len(),
            Factor::Sampled(f) => f.len(),
        }
    }

    pub fn linearize(
        &self,
        target: &GaussianPointCloud,
        source: &GaussianPointCloud,
        t_i: &Pose,
        t_j: &Pose,
        policy: WhitenerPolicy,
    ) -> Result<PairQuadratic> {
        match self {
            Factor::Full(f) => Ok(f.relinearize(target, source, t_i, t_j, policy)),
            Factor::Sampled(f) => f.relinearize(target, source, t_i, t_j, policy),
        }
    }

    pub fn cost(
        &self,
        target: &GaussianPointCloud,
        source: &GaussianPointCloud,
        t_i: &Pose,
        t_j: &Pose,
        policy: WhitenerPolicy,
    ) -> f64 {
        match self {
            Factor::Full(f) => f.cost(target, source, t_i, t_j, policy),
            Factor::Sampled(f) => f.cost(target, source, t_i, t_j, policy),
        }
    }
}

/// Frames, their current poses and the factors between them.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    pub clouds: Vec<GaussianPointCloud>,
    pub poses: Vec<Pose>,
    pub factors: Vec<Factor>,
}

impl FactorGraph {
    pub fn new(clouds: Vec<GaussianPointCloud>, poses: Vec<Pose>, factors: Vec<Factor>) -> Result<Self> {
        if clouds.len() != poses.len() {
            return Err(Error::LengthMismatch { left: clouds.len(), right: poses.len() });
        }
        for f in &factors {
            let (i, j) = f.frames();
            if i >= j {
                return Err(Error::InvalidInput(format!("factor ({i}, {j}) must have i < j")));
            }
            if j >= poses.len() {
                return Err(Error::IndexOutOfRange { index: j, len: poses.len() });
            }
        }
        let g = Self { clouds, poses, factors };
        if !g.is_connected() {
            log::warn!("factor graph over {} frames is not connected", g.poses.len());
        }
        Ok(g)
    }

    /// Graph with one full factor per pair, correspondences found at the current poses.
    pub fn with_full_factors(
        clouds: Vec<GaussianPointCloud>,
        poses: Vec<Pose>,
        pairs: &[(usize, usize)],
        max_dist: f64,
    ) -> Result<Self> {
        let factors = pairs
            .par_iter()
            .map(|&(i, j)| {
                FullFactor::new(i, j, &clouds[i], &clouds[j], &poses[i], &poses[j], max_dist).map(Factor::Full)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(clouds, poses, factors)
    }

    /// Graph with one exactly downsampled factor per pair, evaluated at the current poses.
    ///
    /// Pair `k` is shuffled with a seed derived from `cfg.coreset.rng_seed` and `k`.
    pub fn with_sampled_factors(
        clouds: Vec<GaussianPointCloud>,
        poses: Vec<Pose>,
        pairs: &[(usize, usize)],
        cfg: &DownsampleConfig,
    ) -> Result<Self> {
        let factors = pairs
            .par_iter()
            .enumerate()
            .map(|(k, &(i, j))| {
                let mut c = *cfg;
                c.coreset.rng_seed = derive_seed(cfg.coreset.rng_seed, k as u64);
                exact_downsample(i, j, &clouds[i], &clouds[j], &poses[i], &poses[j], &c).map(Factor::Sampled)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(clouds, poses, factors)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn overlaps(&self) -> Vec<(usize, usize)> {
        self.factors.iter().map(Factor::frames).collect()
    }

    /// Whether every frame is reachable from frame 0 through factors.
    pub fn is_connected(&self) -> bool {
        let n = self.poses.len();
        if n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for (i, j) in self.overlaps() {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(k) = stack.pop() {
            for &m in &adj[k] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Scalar rows touched by one full pass over all factors.
    pub fn rows_per_pass(&self) -> usize {
        self.factors.iter().map(Factor::row_count).sum()
    }

    pub fn cost(&self, poses: &[Pose], policy: WhitenerPolicy) -> f64 {
        let costs: Vec<f64> = self
            .factors
            .par_iter()
            .map(|f| {
                let (i, j) = f.frames();
                f.cost(&self.clouds[i], &self.clouds[j], &poses[i], &poses[j], policy)
            })
            .collect();
        costs.iter().sum()
    }

    /// Normal equations `(H, b, c)` over frames `1..n` at `poses`.
    pub fn linearize(&self, poses: &[Pose], policy: WhitenerPolicy) -> Result<LinearSystem> {
        let n = self.poses.len();
        let dim = 6 * n.saturating_sub(1);
        let pairs: Vec<PairQuadratic> = self
            .factors
            .par_iter()
            .map(|f| {
                let (i, j) = f.frames();
                f.linearize(&self.clouds[i], &self.clouds[j], &poses[i], &poses[j], policy)
            })
            .collect::<Result<_>>()?;
        let mut h = DMatrix::zeros(dim, dim);
        let mut b = DVector::zeros(dim);
        let mut c = 0.0;
        let mut rows = 0;
        for (f, q) in self.factors.iter().zip(&pairs) {
            let (i, j) = f.frames();
            let blocks = [(i, 0usize), (j, 6usize)];
            for &(fr, r0) in &blocks {
                if fr == 0 {
                    continue;
                }
                let gr = 6 * (fr - 1);
                for &(fc, c0) in &blocks {
                    if fc == 0 {
                        continue;
                    }
                    let gc = 6 * (fc - 1);
                    let mut dst = h.view_mut((gr, gc), (6, 6));
                    dst += q.h.fixed_view::<6, 6>(r0, c0);
                }
                let mut dst = b.rows_mut(gr, 6);
                dst += q.b.fixed_rows::<6>(r0);
            }
            c += q.c;
            rows += q.rows_evaluated;
        }
        Ok(LinearSystem { h, b, c, rows_evaluated: rows })
    }
}

/// Assembled normal equations; the tangent of frame `k ≥ 1` is at `6(k−1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub rows_evaluated: usize,
}

impl LinearSystem {
    /// Solves `(H + λ diag(H)) δ = −b`.
    pub fn damped_step(&self, lambda: f64) -> Result<DVector<f64>> {
        let mut a = self.h.clone();
        for k in 0..a.nrows() {
            a[(k, k)] += lambda * self.h[(k, k)];
        }
        let chol = a.cholesky().ok_or(Error::SingularSystem)?;
        let step = chol.solve(&(-&self.b));
        if step.iter().all(|x| x.is_finite()) {
            Ok(step)
        } else {
            Err(Error::SingularSystem)
        }
    }
}

/// Applies `T_k ← T_k · Exp(δ_k)` to frames `1..n`.
pub fn apply_step(poses: &[Pose], step: &DVector<f64>) -> Vec<Pose> {
    poses
        .iter()
        .enumerate()
        .map(|(k, p)| {
            if k == 0 {
                *p
            } else {
                p.retract(&Vector6::from_iterator(step.rows(6 * (k - 1), 6).iter().copied()))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Stop once `‖δ‖_∞` falls below this.
    pub step_tolerance: f64,
    /// Stop when the relative cost decrease of an accepted step falls below this.
    pub cost_tolerance: f64,
    /// Give up when the damping exceeds this.
    pub max_lambda: f64,
    pub whitener: WhitenerPolicy,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_lambda: 1e-6,
            lambda_up: 10.0,
            lambda_down: 10.0,
            step_tolerance: 1e-9,
            cost_tolerance: 1e-12,
            max_lambda: 1e12,
            whitener: WhitenerPolicy::Fixed,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.initial_lambda,
            self.lambda_up,
            self.lambda_down,
            self.step_tolerance,
            self.cost_tolerance,
            self.max_lambda,
        ];
        if self.max_iterations == 0 || positive.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::InvalidInput("optimizer settings must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub poses: Vec<Pose>,
    /// Cost at the initial poses followed by the cost after each accepted step.
    pub cost_trace: Vec<f64>,
    /// Outer iterations (one linearization each).
    pub iterations: usize,
    pub accepted_steps: usize,
    /// Scalar residual rows evaluated for linearizations and cost checks.
    pub rows_evaluated: usize,
    pub converged: bool,
    pub final_lambda: f64,
}

/// Undamped Gauss-Newton step `−H⁻¹b` at `poses`.
pub fn gauss_newton_step(graph: &FactorGraph, poses: &[Pose], policy: WhitenerPolicy) -> Result<DVector<f64>> {
    let sys = graph.linearize(poses, policy)?;
    let chol = sys.h.clone().cholesky().ok_or(Error::SingularSystem)?;
    Ok(chol.solve(&(-&sys.b)))
}

/// Levenberg-Marquardt from `graph.poses`.
pub fn optimize(graph: &FactorGraph, cfg: &OptimizerConfig) -> Result<OptimizeResult> {
    cfg.validate()?;
    let mut poses = graph.poses.clone();
    let rows_per_pass = graph.rows_per_pass();
    let mut rows = rows_per_pass;
    let mut cost = graph.cost(&poses, cfg.whitener);
    let mut trace = vec![cost];
    let mut lambda = cfg.initial_lambda;
    let mut converged = graph.len() < 2;
    let mut iterations = 0;
    let mut accepted = 0;

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let sys = graph.linearize(&poses, cfg.whitener)?;
        rows += sys.rows_evaluated;
        loop {
            let step = sys.damped_step(lambda)?;
            if step.amax() < cfg.step_tolerance {
                converged = true;
                break;
            }
            let candidate = apply_step(&poses, &step);
            let new_cost = graph.cost(&candidate, cfg.whitener);
            rows += rows_per_pass;
            if new_cost < cost {
                let decrease = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                poses = candidate;
                cost = new_cost;
                trace.push(cost);
                accepted += 1;
                lambda = (lambda / cfg.lambda_down).max(f64::MIN_POSITIVE);
                if decrease < cfg.cost_tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= cfg.lambda_up;
            if lambda > cfg.max_lambda {
                // no descent left at any damping: a local minimum of the model
                converged = true;
                break;
            }
        }
    }
    Ok(OptimizeResult {
        poses,
        cost_trace: trace,
        iterations,
        accepted_steps: accepted,
        rows_evaluated: rows,
        converged,
        final_lambda: lambda,
    })
}

/// Pairs `(i, j)`, `i < j`, where at least `min_ratio` of frame `j`'s points
/// have a frame-`i` neighbor within `max_dist` at the given poses.
pub fn detect_overlaps(
    clouds: &[GaussianPointCloud],
    poses: &[Pose],
    max_dist: f64,
    min_ratio: f64,
) -> Result<Vec<(usize, usize)>> {
    if clouds.len() != poses.len() {
        return Err(Error::LengthMismatch { left: clouds.len(), right: poses.len() });
    }
    if clouds.len() < 2 {
        return Err(Error::TooFewPoints { points: clouds.len(), required: 2 });
    }
    let mut pairs = Vec::new();
    for i in 0..clouds.len() {
        let tree = KdTree::new(clouds[i].means());
        for j in i + 1..clouds.len() {
            let ratio = overlap_ratio(&tree, &clouds[j], &poses[i].between(&poses[j]), max_dist);
            if ratio >= min_ratio {
                pairs.push((i, j));
            }
        }
    }
    Ok(pairs)
}
