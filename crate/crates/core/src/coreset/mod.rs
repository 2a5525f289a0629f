//! Caratheodory sets of weighted point sets.
//!
//! [`caratheodory`] is the classic elimination algorithm: while more points
//! than the target remain, find an affine dependency `v` among the points
//! and shift weight along it until at least one weight reaches zero.
//! [`fast_caratheodory`] applies the same elimination to cluster means of
//! contiguous index blocks, dropping whole clusters per recursion, which
//! makes the total work linear in the number of points.
//!
//! Both preserve the weighted sum `Σ u_i p_i` exactly up to rounding, and
//! return a subset of the input points (by index) with strictly positive
//! weights.

mod nullspace;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use nullspace::{nullspace_lu, nullspace_svd, nullspace_vector, NullspaceMethod};

/// Default number of clusters for [`fast_caratheodory`].
pub const DEFAULT_CLUSTER_COUNT: usize = 64;

/// Points in `R^dim` with one nonnegative weight each. Row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPointSet {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedPointSet {
    /// Builds a set from row-major `points` (`weights.len()` rows of `dim` values).
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("point dimension must be positive".into()));
        }
        if points.len() != weights.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: weights.len() * dim,
                got: points.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput(format!("weight {w} is not a finite nonnegative value")));
        }
        Ok(Self { dim, points, weights })
    }

    /// Builds a set from individual point vectors, checking they share one dimension.
    pub fn from_rows(rows: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != weights.len() {
            return Err(Error::LengthMismatch { left: rows.len(), right: weights.len() });
        }
        let mut points = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            points.extend_from_slice(r);
        }
        Self::new(dim, points, weights)
    }

    /// Uniform weights `1/n`.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        let n = points.len() / dim.max(1);
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// `Σ u_i p_i`.
    pub fn weighted_sum(&self) -> Vec<f64> {
        weighted_sum(&self.points, self.dim, (0..self.len()).zip(self.weights.iter().copied()))
    }

    /// Materializes the points referenced by `coreset` with its weights.
    pub fn select(&self, coreset: &Coreset) -> WeightedPointSet {
        let mut points = Vec::with_capacity(coreset.len() * self.dim);
        for &i in &coreset.indices {
            points.extend_from_slice(self.point(i));
        }
        WeightedPointSet { dim: self.dim, points, weights: coreset.weights.clone() }
    }
}

/// Indices into the input set plus their new weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coreset {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Coreset {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn identity(set: &WeightedPointSet) -> Self {
        Coreset { indices: (0..set.len()).collect(), weights: set.weights.clone() }
    }
}

/// Parameters of [`fast_caratheodory`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoresetConfig {
    /// Target output size `M`.
    pub target_size: usize,
    /// Number of clusters `K` per recursion.
    pub cluster_count: usize,
    /// Seed for the residual shuffle applied by callers before extraction.
    pub rng_seed: u64,
    #[serde(default)]
    pub nullspace: NullspaceMethod,
}

impl CoresetConfig {
    pub fn new(target_size: usize) -> Self {
        Self { target_size, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn with_clusters(mut self, k: usize) -> Self {
        self.cluster_count = k;
        self
    }

    pub fn with_nullspace(mut self, method: NullspaceMethod) -> Self {
        self.nullspace = method;
        self
    }
}

impl Default for CoresetConfig {
    fn default() -> Self {
        Self {
            target_size: 29,
            cluster_count: DEFAULT_CLUSTER_COUNT,
            rng_seed: 0,
            nullspace: NullspaceMethod::Lu,
        }
    }
}

/// Work counters and per-phase wall-clock time of one extraction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoresetStats {
    pub recursions: usize,
    pub eliminations: usize,
    pub cluster_means: Duration,
    pub caratheodory: Duration,
    pub nullspace: Duration,
}

impl CoresetStats {
    pub fn merge(&mut self, other: &CoresetStats) {
        self.recursions += other.recursions;
        self.eliminations += other.eliminations;
        self.cluster_means += other.cluster_means;
        self.caratheodory += other.caratheodory;
        self.nullspace += other.nullspace;
    }
}

fn weighted_sum(points: &[f64], dim: usize, items: impl Iterator<Item = (usize, f64)>) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    for (i, w) in items {
        for (s, p) in sum.iter_mut().zip(&points[i * dim..(i + 1) * dim]) {
            *s += w * p;
        }
    }
    sum
}

/// Classic Caratheodory elimination down to at most `target` points.
///
/// Returns the input unchanged when it already has at most `target` points.
pub fn caratheodory(set: &WeightedPointSet, target: usize) -> Result<Coreset> {
    caratheodory_with(set, target, NullspaceMethod::Lu, &mut CoresetStats::default())
}

pub fn caratheodory_with(
    set: &WeightedPointSet,
    target: usize,
    method: NullspaceMethod,
    stats: &mut CoresetStats,
) -> Result<Coreset> {
    check_target(set.dim, target)?;
    if set.len() <= target {
        return Ok(Coreset::identity(set));
    }
    let (mut idx, mut w) = positive_entries(set);
    let start = Instant::now();
    eliminate(&set.points, set.dim, &mut idx, &mut w, target, method, stats)?;
    stats.caratheodory += start.elapsed();
    Ok(Coreset { indices: idx, weights: w })
}

/// Clustered Caratheodory with a target size.
///
/// Each recursion splits the active points into contiguous blocks of
/// `s = ceil(n / K)` points (the last block holds the remainder), runs
/// [`caratheodory`] on the block means with target `max(L + 1, M / s)`,
/// and keeps only the blocks that survive, rescaling their points'
/// weights. The recursion stops once at most `M` points remain, so the
/// output size lands in `[max(M - K, L + 1), M]` up to rounding of the
/// block sizes.
pub fn fast_caratheodory(set: &WeightedPointSet, cfg: &CoresetConfig) -> Result<Coreset> {
    fast_caratheodory_with_stats(set, cfg, &mut CoresetStats::default())
}

pub fn fast_caratheodory_with_stats(
    set: &WeightedPointSet,
    cfg: &CoresetConfig,
    stats: &mut CoresetStats,
) -> Result<Coreset> {
    let dim = set.dim;
    let target = cfg.target_size;
    check_target(dim, target)?;
    if cfg.cluster_count < dim + 2 {
        return Err(Error::InvalidClusterCount { clusters: cfg.cluster_count, min: dim + 2 });
    }
    if set.len() <= target {
        return Ok(Coreset::identity(set));
    }

    let (mut idx, mut w) = positive_entries(set);
    let mut means = Vec::new();
    let mut cluster_weight = Vec::new();

    while idx.len() > target {
        stats.recursions += 1;
        let n = idx.len();
        let block = n.div_ceil(cfg.cluster_count);
        let clusters = n.div_ceil(block);
        let keep = (dim + 1).max(target / block);

        if keep >= clusters {
            // Blocks are too coarse to drop any; finish on the points themselves.
            let start = Instant::now();
            eliminate(&set.points, dim, &mut idx, &mut w, target, cfg.nullspace, stats)?;
            stats.caratheodory += start.elapsed();
            break;
        }

        let start = Instant::now();
        means.clear();
        means.resize(clusters * dim, 0.0);
        cluster_weight.clear();
        cluster_weight.resize(clusters, 0.0);
        for c in 0..clusters {
            let members = c * block..((c + 1) * block).min(n);
            let mean = &mut means[c * dim..(c + 1) * dim];
            let mut total = 0.0;
            for k in members {
                let p = set.point(idx[k]);
                total += w[k];
                for (m, x) in mean.iter_mut().zip(p) {
                    *m += w[k] * x;
                }
            }
            for m in mean.iter_mut() {
                *m /= total;
            }
            cluster_weight[c] = total;
        }
        stats.cluster_means += start.elapsed();

        let start = Instant::now();
        let mut kept: Vec<usize> = (0..clusters).collect();
        let mut kept_w = cluster_weight.clone();
        eliminate(&means, dim, &mut kept, &mut kept_w, keep, cfg.nullspace, stats)?;
        stats.caratheodory += start.elapsed();

        let mut order: Vec<(usize, f64)> = kept.into_iter().zip(kept_w).collect();
        order.sort_unstable_by_key(|(c, _)| *c);

        let mut next_idx = Vec::with_capacity(order.len() * block);
        let mut next_w = Vec::with_capacity(order.len() * block);
        for (c, new_total) in order {
            let scale = new_total / cluster_weight[c];
            for k in c * block..((c + 1) * block).min(n) {
                next_idx.push(idx[k]);
                next_w.push(w[k] * scale);
            }
        }
        idx = next_idx;
        w = next_w;
    }

    Ok(Coreset { indices: idx, weights: w })
}

fn check_target(dim: usize, target: usize) -> Result<()> {
    if target < dim + 1 {
        return Err(Error::InvalidTarget { target, min: dim + 1 });
    }
    Ok(())
}

fn positive_entries(set: &WeightedPointSet) -> (Vec<usize>, Vec<f64>) {
    set.weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(i, w)| (i, *w))
        .unzip()
}

/// Core elimination loop over `points[idx[k]]` with weights `w[k]`.
fn eliminate(
    points: &[f64],
    dim: usize,
    idx: &mut Vec<usize>,
    w: &mut Vec<f64>,
    target: usize,
    method: NullspaceMethod,
    stats: &mut CoresetStats,
) -> Result<()> {
    let mut a = Vec::new();
    let mut v = Vec::new();
    while idx.len() > target {
        let n = idx.len();
        let cols = n - 1;
        let base = &points[idx[0] * dim..(idx[0] + 1) * dim];
        a.clear();
        a.resize(dim * cols, 0.0);
        for (c, &i) in idx[1..].iter().enumerate() {
            let p = &points[i * dim..(i + 1) * dim];
            for r in 0..dim {
                a[r * cols + c] = p[r] - base[r];
            }
        }

        let start = Instant::now();
        let tail = nullspace_vector(method, &mut a, dim, cols)?;
        stats.nullspace += start.elapsed();
        stats.eliminations += 1;

        v.clear();
        v.push(-tail.iter().sum::<f64>());
        v.extend_from_slice(&tail);

        let mut alpha = f64::INFINITY;
        for (wk, vk) in w.iter().zip(&v) {
            if *vk > 0.0 {
                alpha = alpha.min(wk / vk);
            }
        }
        if !alpha.is_finite() {
            // v sums to zero, so it has a positive entry unless it vanished.
            return Err(Error::NoNullspace);
        }

        let mut write = 0;
        for k in 0..n {
            let (wk, vk) = (w[k], v[k]);
            let ratio_hit = vk > 0.0 && wk / vk == alpha;
            let updated = wk - alpha * vk;
            if ratio_hit || updated <= 0.0 {
                continue;
            }
            idx[write] = idx[k];
            w[write] = updated;
            write += 1;
        }
        idx.truncate(write);
        w.truncate(write);
    }
    Ok(())
}
