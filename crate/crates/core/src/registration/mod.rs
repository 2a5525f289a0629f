//! GICP registration residuals on SE(3), covariance estimation,
//! correspondence search and point cloud / pose file formats.

mod cloud;
mod gicp;
pub mod io;
mod kdtree;
mod pose;

pub use cloud::{
    estimate_covariances, estimate_covariances_with, regularize, GaussianPointCloud, DEFAULT_K_NEIGHBORS,
    DEFAULT_PLANE_EPSILON,
};
pub use gicp::{
    find_correspondences, find_correspondences_in, fused_information, jacobian, jacobian_row, linearize_pair,
    linearize_pair_full, overlap_ratio, pair_cost, residual, whitener, Correspondence, PairGeometry, PairQuadratic,
    WhitenerPolicy,
};
pub use kdtree::KdTree;
pub use pose::{skew, Pose, PoseJson, ORTHONORMAL_TOLERANCE};
