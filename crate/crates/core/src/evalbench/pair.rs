//! An aligned frame pair with fixed correspondences, and the random-sampling baseline.

use nalgebra::{Matrix6, Vector6};
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coreset::CoresetConfig;
use crate::downsample::{FullFactor, SampledFactor};
use crate::error::{Error, Result};
use crate::optimizer::synthetic::street_pair;
use crate::quadratic::{extract, ResidualSelection, ResidualSystem};
use crate::registration::{
    find_correspondences, linearize_pair, Correspondence, GaussianPointCloud, PairQuadratic, Pose, WhitenerPolicy,
};

/// Uniformly samples `n_points` whole points (all three rows each) with
/// weight `N_points / n_points`, so the sampled Hessian is unbiased.
pub fn random_sampling_baseline(sys: &ResidualSystem, n_points: usize, seed: u64) -> Result<ResidualSelection> {
    if !sys.len().is_multiple_of(3) {
        return Err(Error::InvalidInput(format!("{} rows do not group into points", sys.len())));
    }
    let total = sys.len() / 3;
    if n_points == 0 || n_points > total {
        return Err(Error::InvalidInput(format!("cannot sample {n_points} of {total} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = index::sample(&mut rng, total, n_points).into_vec();
    points.sort_unstable();
    let weight = total as f64 / n_points as f64;
    let indices: Vec<usize> = points.iter().flat_map(|p| [3 * p, 3 * p + 1, 3 * p + 2]).collect();
    let weights = vec![weight; indices.len()];
    Ok(ResidualSelection { indices, weights, n_source_rows: sys.len() })
}

/// Two frames at an evaluation pose pair with correspondences fixed there.
#[derive(Debug, Clone)]
pub struct PairData {
    pub target: GaussianPointCloud,
    pub source: GaussianPointCloud,
    pub pose_i: Pose,
    pub pose_j: Pose,
    pub correspondences: Vec<Correspondence>,
}

impl PairData {
    pub fn new(target: GaussianPointCloud, source: GaussianPointCloud, pose_i: Pose, pose_j: Pose, max_dist: f64) -> Result<Self> {
        let correspondences = find_correspondences(&target, &source, &pose_i.between(&pose_j), max_dist)?;
        Ok(Self { target, source, pose_i, pose_j, correspondences })
    }

    /// Synthetic street pair with `points` points per frame.
    pub fn synthetic(points: usize, seed: u64, max_dist: f64) -> Result<Self> {
        let seq = street_pair(points, seed)?;
        let [a, b]: [GaussianPointCloud; 2] =
            seq.clouds.try_into().map_err(|_| Error::InvalidInput("expected two frames".into()))?;
        Self::new(a, b, seq.ground_truth[0], seq.ground_truth[1], max_dist)
    }

    pub fn len(&self) -> usize {
        self.correspondences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correspondences.is_empty()
    }

    pub fn shuffled(&self, seed: u64) -> Vec<Correspondence> {
        let mut c = self.correspondences.clone();
        c.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        c
    }

    /// Stacked system w.r.t. `T_j` at the evaluation poses.
    pub fn system(&self) -> Result<ResidualSystem> {
        linearize_pair(&self.correspondences, &self.target, &self.source, &self.pose_i, &self.pose_j)
    }

    pub fn full_factor(&self) -> FullFactor {
        FullFactor { target_frame: 0, source_frame: 1, correspondences: self.correspondences.clone() }
    }

    /// Exact selection of about `m` rows over correspondences shuffled by `seed`.
    pub fn exact_factor(&self, m: usize, clusters: usize, seed: u64) -> Result<SampledFactor> {
        let corrs = self.shuffled(seed);
        let sys = linearize_pair(&corrs, &self.target, &self.source, &self.pose_i, &self.pose_j)?;
        let sel = extract(&sys, &CoresetConfig::new(m).with_clusters(clusters).with_seed(seed))?;
        SampledFactor::from_selection(0, 1, self.pose_i, self.pose_j, &corrs, sel)
    }

    /// `n_points` random whole points.
    pub fn random_factor(&self, n_points: usize, seed: u64) -> Result<SampledFactor> {
        let sys = self.system()?;
        let sel = random_sampling_baseline(&sys, n_points, seed)?;
        SampledFactor::from_selection(0, 1, self.pose_i, self.pose_j, &self.correspondences, sel)
    }

    /// Full 12-dim pair model with `T_j` replaced by `pose_j`.
    pub fn full_model_at(&self, pose_j: &Pose) -> PairQuadratic {
        self.full_factor().relinearize(&self.target, &self.source, &self.pose_i, pose_j, WhitenerPolicy::Fixed)
    }

    pub fn sampled_model_at(&self, f: &SampledFactor, pose_j: &Pose) -> Result<PairQuadratic> {
        f.relinearize(&self.target, &self.source, &self.pose_i, pose_j, WhitenerPolicy::Fixed)
    }
}

/// `(H_jj, b_j)`: the `T_j` block of a pair model.
pub(crate) fn source_block(q: &PairQuadratic) -> (Matrix6<f64>, Vector6<f64>) {
    (q.h.fixed_view::<6, 6>(6, 6).into_owned(), q.b.fixed_rows::<6>(6).into_owned())
}
