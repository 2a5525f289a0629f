use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::kdtree::KdTree;
use crate::error::{Error, Result};

/// Smallest eigenvalue of a regularized covariance relative to the other two.
pub const DEFAULT_PLANE_EPSILON: f64 = 1e-3;

/// Default neighborhood size for covariance estimation.
pub const DEFAULT_K_NEIGHBORS: usize = 10;

/// Points modeled as Gaussians `(μ_k, C_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPointCloud {
    means: Vec<Vector3<f64>>,
    covariances: Vec<Matrix3<f64>>,
}

impl GaussianPointCloud {
    pub fn new(means: Vec<Vector3<f64>>, covariances: Vec<Matrix3<f64>>) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::TooFewPoints { points: 0, required: 1 });
        }
        if means.len() != covariances.len() {
            return Err(Error::LengthMismatch { left: means.len(), right: covariances.len() });
        }
        for c in &covariances {
            if *c != c.transpose() {
                return Err(Error::InvalidInput("covariance is not symmetric".into()));
            }
        }
        Ok(Self { means, covariances })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn means(&self) -> &[Vector3<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Matrix3<f64>] {
        &self.covariances
    }

    pub fn mean(&self, k: usize) -> &Vector3<f64> {
        &self.means[k]
    }

    pub fn covariance(&self, k: usize) -> &Matrix3<f64> {
        &self.covariances[k]
    }
}

/// Per-point covariance of the `k` nearest neighbors (the point included),
/// with eigenvalues replaced by `(ε, 1, 1)` in ascending order.
pub fn estimate_covariances(points: &[Vector3<f64>], k_neighbors: usize) -> Result<GaussianPointCloud> {
    estimate_covariances_with(points, k_neighbors, DEFAULT_PLANE_EPSILON)
}

pub fn estimate_covariances_with(
    points: &[Vector3<f64>],
    k_neighbors: usize,
    epsilon: f64,
) -> Result<GaussianPointCloud> {
    if k_neighbors < 4 {
        return Err(Error::InvalidInput(format!("k_neighbors must be at least 4, got {k_neighbors}")));
    }
    if points.len() < k_neighbors {
        return Err(Error::TooFewPoints { points: points.len(), required: k_neighbors });
    }
    let tree = KdTree::new(points);
    let covariances = points
        .par_iter()
        .map(|p| {
            let nn = tree.knn(p, k_neighbors);
            let n = nn.len() as f64;
            let mean: Vector3<f64> = nn.iter().map(|(i, _)| points[*i]).sum::<Vector3<f64>>() / n;
            let mut cov = Matrix3::zeros();
            for (i, _) in &nn {
                let d = points[*i] - mean;
                cov += d * d.transpose();
            }
            regularize(&(cov / n), epsilon)
        })
        .collect();
    GaussianPointCloud::new(points.to_vec(), covariances)
}

/// `U diag(ε, 1, 1) Uᵀ` for the eigenvectors `U` of `cov` sorted ascending.
pub fn regularize(cov: &Matrix3<f64>, epsilon: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*cov);
    let smallest = eig.eigenvalues.imin();
    let mut diag = Vector3::repeat(1.0);
    diag[smallest] = epsilon;
    let u = eig.eigenvectors;
    let c = u * Matrix3::from_diagonal(&diag) * u.transpose();
    (c + c.transpose()) * 0.5
}
