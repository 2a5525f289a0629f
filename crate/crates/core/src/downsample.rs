//! Exact downsampling of a frame pair into a weighted residual subset.
//!
//! Correspondences between target frame `i` and source frame `j` are found
//! at the evaluation poses `(T̆_i, T̆_j)`, shuffled, linearized w.r.t. `T_j`
//! and reduced to a weighted selection of scalar rows. Because
//! `∂e/∂T_i = (∂e/∂T_j) A` for a matrix `A` that only depends on `T_ij`, the
//! same rows also reproduce the `T_i` and cross blocks of the pair system.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coreset::CoresetConfig;
use crate::error::{Error, Result};
use crate::quadratic::{extract, ResidualSelection, ResidualSystem};
use crate::registration::{
    find_correspondences, jacobian_row, linearize_pair, linearize_pair_full, pair_cost, Correspondence,
    GaussianPointCloud, PairGeometry, PairQuadratic, Pose, WhitenerPolicy,
};

/// Default correspondence gate in meters.
pub const DEFAULT_MAX_CORRESPONDENCE_DISTANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DownsampleConfig {
    pub coreset: CoresetConfig,
    pub max_correspondence_distance: f64,
}

impl Default for DownsampleConfig {
    fn default() -> Self {
        Self { coreset: CoresetConfig::default(), max_correspondence_distance: DEFAULT_MAX_CORRESPONDENCE_DISTANCE }
    }
}

impl DownsampleConfig {
    pub fn new(target_size: usize) -> Self {
        Self { coreset: CoresetConfig::new(target_size), ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.coreset.rng_seed = seed;
        self
    }

    pub fn with_max_distance(mut self, d: f64) -> Self {
        self.max_correspondence_distance = d;
        self
    }
}

/// One selected scalar row: correspondence slot, axis and weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledRow {
    pub slot: usize,
    pub axis: usize,
    pub weight: f64,
}

/// A frame pair reduced to weighted residual rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledFactor {
    pub target_frame: usize,
    pub source_frame: usize,
    pub eval_target_pose: Pose,
    pub eval_source_pose: Pose,
    /// Correspondences referenced by at least one selected row.
    pub correspondences: Vec<Correspondence>,
    /// Selection over the shuffled stacked system of all correspondences.
    pub selection: ResidualSelection,
    /// Rows in the same order as `selection.indices`.
    pub rows: Vec<SampledRow>,
}

/// A frame pair keeping every correspondence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullFactor {
    pub target_frame: usize,
    pub source_frame: usize,
    pub correspondences: Vec<Correspondence>,
}

/// Shuffled correspondences of a pair at the evaluation poses.
pub fn shuffled_correspondences(
    cloud_i: &GaussianPointCloud,
    cloud_j: &GaussianPointCloud,
    pose_i: &Pose,
    pose_j: &Pose,
    max_dist: f64,
    seed: u64,
) -> Result<Vec<Correspondence>> {
    let mut corrs = find_correspondences(cloud_i, cloud_j, &pose_i.between(pose_j), max_dist)?;
    corrs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(corrs)
}

/// Extracts an exact weighted subset of the pair residuals at `(pose_i, pose_j)`.
pub fn exact_downsample(
    i: usize,
    j: usize,
    cloud_i: &GaussianPointCloud,
    cloud_j: &GaussianPointCloud,
    pose_i: &Pose,
    pose_j: &Pose,
    cfg: &DownsampleConfig,
) -> Result<SampledFactor> {
    let corrs =
        shuffled_correspondences(cloud_i, cloud_j, pose_i, pose_j, cfg.max_correspondence_distance, cfg.coreset.rng_seed)?;
    let sys = linearize_pair(&corrs, cloud_i, cloud_j, pose_i, pose_j)?;
    let sel = extract(&sys, &cfg.coreset)?;
    SampledFactor::from_selection(i, j, *pose_i, *pose_j, &corrs, sel)
}

impl SampledFactor {
    /// Wraps a selection over the stacked rows of `corrs` (3 rows per correspondence).
    pub fn from_selection(
        i: usize,
        j: usize,
        pose_i: Pose,
        pose_j: Pose,
        corrs: &[Correspondence],
        selection: ResidualSelection,
    ) -> Result<Self> {
        if selection.n_source_rows != 3 * corrs.len() {
            return Err(Error::LengthMismatch { left: selection.n_source_rows, right: 3 * corrs.len() });
        }
        selection.validate()?;
        let mut slots = BTreeMap::new();
        let mut kept = Vec::new();
        let rows = selection
            .indices
            .iter()
            .zip(&selection.weights)
            .map(|(&row, &weight)| {
                let k = row / 3;
                let slot = *slots.entry(k).or_insert_with(|| {
                    kept.push(corrs[k]);
                    kept.len() - 1
                });
                SampledRow { slot, axis: row % 3, weight }
            })
            .collect();
        Ok(Self {
            target_frame: i,
            source_frame: j,
            eval_target_pose: pose_i,
            eval_source_pose: pose_j,
            correspondences: kept,
            selection,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Number of referenced points with 1, 2 and 3 selected axes.
    pub fn axes_histogram(&self) -> [usize; 3] {
        let mut per_slot = vec![0usize; self.correspondences.len()];
        for r in &self.rows {
            per_slot[r.slot] += 1;
        }
        let mut hist = [0; 3];
        for n in per_slot {
            hist[n - 1] += 1;
        }
        hist
    }

    /// Fraction of referenced points with all three axes selected.
    pub fn fully_selected_fraction(&self) -> f64 {
        let h = self.axes_histogram();
        h[2] as f64 / self.correspondences.len().max(1) as f64
    }

    /// Weighted 12-dim pair model from the selected rows at `(t_i, t_j)`.
    pub fn relinearize(
        &self,
        target: &GaussianPointCloud,
        source: &GaussianPointCloud,
        t_i: &Pose,
        t_j: &Pose,
        policy: WhitenerPolicy,
    ) -> Result<PairQuadratic> {
        for c in &self.correspondences {
            if c.target_index >= target.len() {
                return Err(Error::IndexOutOfRange { index: c.target_index, len: target.len() });
            }
            if c.source_index >= source.len() {
                return Err(Error::IndexOutOfRange { index: c.source_index, len: source.len() });
            }
        }
        let geom = PairGeometry::new(target, source, t_i, t_j, policy);
        let lin: Vec<_> = self.correspondences.iter().map(|c| geom.linearize(c)).collect();
        let mut q = PairQuadratic::default();
        for r in &self.rows {
            let (e, ji, jj) = &lin[r.slot];
            q.add_row(&jacobian_row(ji, r.axis), &jacobian_row(jj, r.axis), e[r.axis], r.weight);
        }
        Ok(q.finish())
    }

    /// Weighted cost `ẽᵀWẽ` at `(t_i, t_j)`.
    pub fn cost(
        &self,
        target: &GaussianPointCloud,
        source: &GaussianPointCloud,
        t_i: &Pose,
        t_j: &Pose,
        policy: WhitenerPolicy,
    ) -> f64 {
        let geom = PairGeometry::new(target, source, t_i, t_j, policy);
        let res: Vec<_> = self.correspondences.iter().map(|c| geom.residual(c)).collect();
        self.rows.iter().map(|r| r.weight * res[r.slot][r.axis].powi(2)).sum()
    }
}

impl FullFactor {
    pub fn new(
        i: usize,
        j: usize,
        cloud_i: &GaussianPointCloud,
        cloud_j: &GaussianPointCloud,
        pose_i: &Pose,
        pose_j: &Pose,
        max_dist: f64,
    ) -> Result<Self> {
        let correspondences = find_correspondences(cloud_i, cloud_j, &pose_i.between(pose_j), max_dist)?;
        Ok(Self { target_frame: i, source_frame: j, correspondences })
    }

    pub fn relinearize(
        &self,
        target: &GaussianPointCloud,
        source: &GaussianPointCloud,
        t_i: &Pose,
        t_j: &Pose,
        policy: WhitenerPolicy,
    ) -> PairQuadratic {
        linearize_pair_full(&self.correspondences, &PairGeometry::new(target, source, t_i, t_j, policy))
    }

    pub fn cost(
        &self,
        target: &GaussianPointCloud,
        source: &GaussianPointCloud,
        t_i: &Pose,
        t_j: &Pose,
        policy: WhitenerPolicy,
    ) -> f64 {
        pair_cost(&self.correspondences, &PairGeometry::new(target, source, t_i, t_j, policy))
    }

    /// Stacked residual system w.r.t. `T_j`.
    pub fn system(
        &self,
        target: &GaussianPointCloud,
        source: &GaussianPointCloud,
        t_i: &Pose,
        t_j: &Pose,
    ) -> Result<ResidualSystem> {
        linearize_pair(&self.correspondences, target, source, t_i, t_j)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::registration::estimate_covariances;
    use nalgebra::{Vector3, Vector6};
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Target and source clouds of one noisy curved surface patch, with the
    /// source expressed in frame `pose_j`.
    pub(crate) fn surface_pair(n: usize, seed: u64) -> (GaussianPointCloud, GaussianPointCloud, Pose, Pose) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let surface = |u: f64, v: f64| Vector3::new(u, v, 0.3 * (1.3 * u).sin() * (0.9 * v).cos() + 0.05 * u * v);
        let sample = |rng: &mut ChaCha8Rng| -> Vec<Vector3<f64>> {
            (0..n)
                .map(|_| {
                    let p = surface(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                    p + Vector3::from_fn(|_, _| 0.003 * rng.sample::<f64, _>(StandardNormal))
                })
                .collect()
        };
        let world_i = sample(&mut rng);
        let world_j = sample(&mut rng);
        let pose_i = Pose::identity();
        let pose_j = Pose::exp(&Vector6::new(0.05, -0.03, 0.1, 0.2, -0.1, 0.05));
        let inv = pose_j.inverse();
        let local_j: Vec<Vector3<f64>> = world_j.iter().map(|p| inv.transform_point(p)).collect();
        (
            estimate_covariances(&world_i, 10).unwrap(),
            estimate_covariances(&local_j, 10).unwrap(),
            pose_i,
            pose_j,
        )
    }

    fn cfg(m: usize) -> DownsampleConfig {
        DownsampleConfig::new(m).with_seed(11).with_max_distance(0.3)
    }

    #[test]
    fn minimum_selection_reproduces_pair_system() {
        let (ci, cj, pi, pj) = surface_pair(3000, 1);
        let f = exact_downsample(0, 1, &ci, &cj, &pi, &pj, &cfg(29)).unwrap();
        assert_eq!(f.len(), 29);
        assert!(f.rows.iter().all(|r| r.weight > 0.0));
        let full = FullFactor::new(0, 1, &ci, &cj, &pi, &pj, 0.3).unwrap();
        let fq = full.relinearize(&ci, &cj, &pi, &pj, WhitenerPolicy::Fixed);
        let sq = f.relinearize(&ci, &cj, &pi, &pj, WhitenerPolicy::Fixed).unwrap();
        assert!(sq.relative_error(&fq) < 1e-9, "{}", sq.relative_error(&fq));
        assert_eq!(sq.rows_evaluated, 29);
        let c_full = full.cost(&ci, &cj, &pi, &pj, WhitenerPolicy::Fixed);
        let c_sampled = f.cost(&ci, &cj, &pi, &pj, WhitenerPolicy::Fixed);
        assert!((c_full - c_sampled).abs() <= 1e-9 * c_full);
    }

    #[test]
    fn exactness_across_budgets() {
        let (ci, cj, pi, pj) = surface_pair(3000, 2);
        let full = FullFactor::new(0, 1, &ci, &cj, &pi, &pj, 0.3).unwrap();
        let fq = full.relinearize(&ci, &cj, &pi, &pj, WhitenerPolicy::Fixed);
        for m in [29, 64, 256, 1024] {
            let f = exact_downsample(0, 1, &ci, &cj, &pi, &pj, &cfg(m)).unwrap();
            let sq = f.relinearize(&ci, &cj, &pi, &pj, WhitenerPolicy::Fixed).unwrap();
            assert!(sq.relative_error(&fq) < 1e-9, "M={m}: {}", sq.relative_error(&fq));
            assert_eq!(sq.rows_evaluated, f.len());
            assert!(f.len() <= m && f.len() >= m.saturating_sub(64).max(29));
        }
    }

    #[test]
    fn larger_budgets_select_whole_points() {
        let (ci, cj, pi, pj) = surface_pair(3000, 3);
        let small = exact_downsample(0, 1, &ci, &cj, &pi, &pj, &cfg(29)).unwrap();
        let large = exact_downsample(0, 1, &ci, &cj, &pi, &pj, &cfg(512)).unwrap();
        assert!(large.fully_selected_fraction() > small.fully_selected_fraction());
    }

    #[test]
    fn too_few_correspondences() {
        let (ci, cj, pi, pj) = surface_pair(200, 4);
        let means: Vec<Vector3<f64>> = cj.means()[..9].to_vec();
        let src = GaussianPointCloud::new(means, cj.covariances()[..9].to_vec()).unwrap();
        let r = exact_downsample(0, 1, &ci, &src, &pi, &pj, &DownsampleConfig::new(29).with_max_distance(10.0));
        assert!(matches!(r, Err(Error::TooFewRows { rows: 27, .. })));
    }

    #[test]
    fn disjoint_pair_has_no_overlap() {
        let (ci, cj, pi, _) = surface_pair(200, 5);
        let far = Pose::from_translation(Vector3::new(100.0, 0.0, 0.0));
        assert!(matches!(exact_downsample(0, 1, &ci, &cj, &pi, &far, &cfg(29)), Err(Error::NoOverlap)));
    }

    #[test]
    fn seeded_determinism() {
        let (ci, cj, pi, pj) = surface_pair(2000, 6);
        let a = exact_downsample(0, 1, &ci, &cj, &pi, &pj, &cfg(64)).unwrap();
        let b = exact_downsample(0, 1, &ci, &cj, &pi, &pj, &cfg(64)).unwrap();
        assert_eq!(a, b);
        let c = exact_downsample(0, 1, &ci, &cj, &pi, &pj, &cfg(64).with_seed(12)).unwrap();
        assert_ne!(a.selection.indices, c.selection.indices);
    }

    #[test]
    fn doubled_weights_double_the_model() {
        let (ci, cj, pi, pj) = surface_pair(2000, 7);
        let f = exact_downsample(0, 1, &ci, &cj, &pi, &pj, &cfg(29)).unwrap();
        let mut g = f.clone();
        for r in &mut g.rows {
            r.weight *= 2.0;
        }
        let a = f.relinearize(&ci, &cj, &pi, &pj, WhitenerPolicy::Fixed).unwrap();
        let b = g.relinearize(&ci, &cj, &pi, &pj, WhitenerPolicy::Fixed).unwrap();
        assert_eq!(b.h, a.h * 2.0);
        assert_eq!(b.b, a.b * 2.0);
        assert_eq!(b.c, a.c * 2.0);
    }

    #[test]
    fn json_round_trip() {
        let (ci, cj, pi, pj) = surface_pair(1000, 8);
        let f = exact_downsample(0, 1, &ci, &cj, &pi, &pj, &cfg(29)).unwrap();
        let s = serde_json::to_string(&f).unwrap();
        let back: SampledFactor = serde_json::from_str(&s).unwrap();
        assert_eq!(back.rows, f.rows);
        assert_eq!(back.selection, f.selection);
    }
}
