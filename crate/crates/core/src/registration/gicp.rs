//! GICP distribution-to-distribution residuals.
//!
//! For a source point `μ` in frame `j` and its target `μ'` in frame `i`,
//! `d = μ' − T_ij μ` with `T_ij = T_i⁻¹ T_j` and
//! `Ω = (C' + R_ij C R_ijᵀ)⁻¹`. With `Ω = ΦΦᵀ` (Cholesky), the whitened
//! residual `e = Φᵀ d` has `eᵀe = dᵀΩd`.

use nalgebra::{Matrix3, Matrix3x6, SMatrix, SVector, Vector3, Vector6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cloud::GaussianPointCloud;
use super::kdtree::KdTree;
use super::pose::{skew, Pose};
use crate::error::{Error, Result};
use crate::quadratic::ResidualSystem;

/// Whether `Φ` stays at its evaluation-pose value or follows the current poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WhitenerPolicy {
    #[default]
    Fixed,
    Refresh,
}

/// A source point matched to a target point, with its whitener `Φ` (lower triangular).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub source_index: usize,
    pub target_index: usize,
    pub phi: Matrix3<f64>,
}

/// `Ω = (C' + R C Rᵀ)⁻¹`.
pub fn fused_information(
    target_cov: &Matrix3<f64>,
    source_cov: &Matrix3<f64>,
    rotation: &Matrix3<f64>,
) -> Result<Matrix3<f64>> {
    let fused = target_cov + rotation * source_cov * rotation.transpose();
    let fused = (fused + fused.transpose()) * 0.5;
    let info = fused
        .cholesky()
        .ok_or_else(|| Error::Degenerate("fused covariance is not positive definite".into()))?
        .inverse();
    Ok((info + info.transpose()) * 0.5)
}

/// Lower-triangular `Φ` with `ΦΦᵀ = Ω`.
pub fn whitener(target_cov: &Matrix3<f64>, source_cov: &Matrix3<f64>, rotation: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    fused_information(target_cov, source_cov, rotation)?
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Degenerate("information matrix is not positive definite".into()))
}

/// Nearest target mean for every source point mapped by `t_ij`, within `max_dist`.
pub fn find_correspondences(
    target: &GaussianPointCloud,
    source: &GaussianPointCloud,
    t_ij: &Pose,
    max_dist: f64,
) -> Result<Vec<Correspondence>> {
    let tree = KdTree::new(target.means());
    find_correspondences_in(&tree, target, source, t_ij, max_dist)
}

/// As [`find_correspondences`], reusing a tree built over `target.means()`.
pub fn find_correspondences_in(
    tree: &KdTree,
    target: &GaussianPointCloud,
    source: &GaussianPointCloud,
    t_ij: &Pose,
    max_dist: f64,
) -> Result<Vec<Correspondence>> {
    let r = t_ij.rotation();
    let max_d2 = max_dist * max_dist;
    let matched: Vec<Option<Correspondence>> = (0..source.len())
        .into_par_iter()
        .map(|k| {
            let q = t_ij.transform_point(source.mean(k));
            let (t, _) = tree.nearest_within(&q, max_d2)?;
            let phi = whitener(target.covariance(t), source.covariance(k), &r).ok()?;
            Some(Correspondence { source_index: k, target_index: t, phi })
        })
        .collect();
    let corrs: Vec<Correspondence> = matched.into_iter().flatten().collect();
    if corrs.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(corrs)
}

/// Fraction of source points with a target neighbor within `max_dist`.
pub fn overlap_ratio(tree: &KdTree, source: &GaussianPointCloud, t_ij: &Pose, max_dist: f64) -> f64 {
    let max_d2 = max_dist * max_dist;
    let hits = source
        .means()
        .par_iter()
        .filter(|m| tree.nearest_within(&t_ij.transform_point(m), max_d2).is_some())
        .count();
    hits as f64 / source.len() as f64
}

/// Evaluation context for one frame pair at poses `(T_i, T_j)`.
#[derive(Debug, Clone, Copy)]
pub struct PairGeometry<'a> {
    pub target: &'a GaussianPointCloud,
    pub source: &'a GaussianPointCloud,
    pub t_ij: Pose,
    rotation: Matrix3<f64>,
    policy: WhitenerPolicy,
}

impl<'a> PairGeometry<'a> {
    pub fn new(
        target: &'a GaussianPointCloud,
        source: &'a GaussianPointCloud,
        t_i: &Pose,
        t_j: &Pose,
        policy: WhitenerPolicy,
    ) -> Self {
        let t_ij = t_i.between(t_j);
        Self { target, source, t_ij, rotation: t_ij.rotation(), policy }
    }

    /// `Φ` under the active policy.
    pub fn whitener(&self, corr: &Correspondence) -> Matrix3<f64> {
        match self.policy {
            WhitenerPolicy::Fixed => corr.phi,
            WhitenerPolicy::Refresh => whitener(
                self.target.covariance(corr.target_index),
                self.source.covariance(corr.source_index),
                &self.rotation,
            )
            .unwrap_or(corr.phi),
        }
    }

    /// `d = μ' − T_ij μ`.
    pub fn displacement(&self, corr: &Correspondence) -> Vector3<f64> {
        self.target.mean(corr.target_index) - self.t_ij.transform_point(self.source.mean(corr.source_index))
    }

    /// `e = Φᵀ d`.
    pub fn residual(&self, corr: &Correspondence) -> Vector3<f64> {
        self.whitener(corr).transpose() * self.displacement(corr)
    }

    /// Residual with `∂e/∂T_i` and `∂e/∂T_j` (3×6 each, `Φ` held constant).
    pub fn linearize(&self, corr: &Correspondence) -> (Vector3<f64>, Matrix3x6<f64>, Matrix3x6<f64>) {
        let phi_t = self.whitener(corr).transpose();
        let mu = self.source.mean(corr.source_index);
        let q = self.t_ij.transform_point(mu);
        let e = phi_t * (self.target.mean(corr.target_index) - q);

        // T_j · Exp(δ): T_ij μ moves by R(ω × μ + ρ) = R(−[μ]× ω + ρ)
        let pr = phi_t * self.rotation;
        let mut jj = Matrix3x6::zeros();
        jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&(pr * skew(mu)));
        jj.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-pr));

        // T_i · Exp(δ): T_ij μ becomes Exp(−δ) q, moving by −(ω × q) − ρ
        let mut ji = Matrix3x6::zeros();
        ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-phi_t * skew(&q)));
        ji.fixed_view_mut::<3, 3>(0, 3).copy_from(&phi_t);
        (e, ji, jj)
    }
}

/// `e = Φᵀ(μ' − T_ij μ)` for one correspondence.
pub fn residual(
    corr: &Correspondence,
    target: &GaussianPointCloud,
    source: &GaussianPointCloud,
    t_i: &Pose,
    t_j: &Pose,
) -> Vector3<f64> {
    PairGeometry::new(target, source, t_i, t_j, WhitenerPolicy::Fixed).residual(corr)
}

/// `∂e/∂T_j` for a right perturbation of the source pose, `[rotation | translation]`.
pub fn jacobian(
    corr: &Correspondence,
    target: &GaussianPointCloud,
    source: &GaussianPointCloud,
    t_i: &Pose,
    t_j: &Pose,
) -> Matrix3x6<f64> {
    PairGeometry::new(target, source, t_i, t_j, WhitenerPolicy::Fixed).linearize(corr).2
}

/// Stacked residual system w.r.t. `T_j`; rows are `(point 0: x, y, z, point 1: x, ...)`.
pub fn linearize_pair(
    corrs: &[Correspondence],
    target: &GaussianPointCloud,
    source: &GaussianPointCloud,
    t_i: &Pose,
    t_j: &Pose,
) -> Result<ResidualSystem> {
    if corrs.is_empty() {
        return Err(Error::NoOverlap);
    }
    let geom = PairGeometry::new(target, source, t_i, t_j, WhitenerPolicy::Fixed);
    let mut res = Vec::with_capacity(3 * corrs.len());
    let mut jac = Vec::with_capacity(3 * corrs.len());
    for c in corrs {
        let (e, _, jj) = geom.linearize(c);
        for axis in 0..3 {
            res.push(e[axis]);
            jac.push(Vector6::from_iterator(jj.row(axis).iter().copied()));
        }
    }
    ResidualSystem::new(res, jac)
}

/// Quadratic model over the 12-dim pair tangent `[δ_i; δ_j]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairQuadratic {
    pub h: SMatrix<f64, 12, 12>,
    pub b: SVector<f64, 12>,
    pub c: f64,
    /// Scalar residual rows evaluated to build this model.
    pub rows_evaluated: usize,
}

impl Default for PairQuadratic {
    fn default() -> Self {
        Self { h: SMatrix::zeros(), b: SVector::zeros(), c: 0.0, rows_evaluated: 0 }
    }
}

impl PairQuadratic {
    /// Adds weighted row `w · ([a_i a_j]ᵀ[a_i a_j], [a_i a_j]ᵀ e, e²)`.
    pub fn add_row(&mut self, a_i: &[f64; 6], a_j: &[f64; 6], e: f64, w: f64) {
        let mut a = [0.0; 12];
        a[..6].copy_from_slice(a_i);
        a[6..].copy_from_slice(a_j);
        for r in 0..12 {
            let wa = w * a[r];
            if wa == 0.0 {
                continue;
            }
            for c in r..12 {
                self.h[(r, c)] += wa * a[c];
            }
            self.b[r] += wa * e;
        }
        self.c += w * e * e;
        self.rows_evaluated += 1;
    }

    /// Copies the accumulated upper triangle of `H` into the lower one.
    pub fn finish(mut self) -> Self {
        for r in 0..12 {
            for c in 0..r {
                self.h[(r, c)] = self.h[(c, r)];
            }
        }
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { h: self.h * s, b: self.b * s, c: self.c * s, rows_evaluated: self.rows_evaluated }
    }

    /// Max-abs-entry difference over `H`, `b` and `c`.
    pub fn max_abs_diff(&self, other: &PairQuadratic) -> f64 {
        (self.h - other.h).amax().max((self.b - other.b).amax()).max((self.c - other.c).abs())
    }

    pub fn relative_error(&self, other: &PairQuadratic) -> f64 {
        self.max_abs_diff(other) / self.h.amax().max(1.0)
    }
}

/// Row `axis` of a 3×6 Jacobian as an array.
pub fn jacobian_row(j: &Matrix3x6<f64>, axis: usize) -> [f64; 6] {
    std::array::from_fn(|c| j[(axis, c)])
}

/// Full-set 12-dim pair model with unit weights on every row.
pub fn linearize_pair_full(corrs: &[Correspondence], geom: &PairGeometry<'_>) -> PairQuadratic {
    let mut q = PairQuadratic::default();
    for c in corrs {
        let (e, ji, jj) = geom.linearize(c);
        for axis in 0..3 {
            q.add_row(&jacobian_row(&ji, axis), &jacobian_row(&jj, axis), e[axis], 1.0);
        }
    }
    q.finish()
}

/// `Σ ‖e_k‖²` over all correspondences.
pub fn pair_cost(corrs: &[Correspondence], geom: &PairGeometry<'_>) -> f64 {
    corrs.iter().map(|c| geom.residual(c).norm_squared()).sum()
}
