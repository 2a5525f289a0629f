//! Exact coreset extraction for point cloud registration residuals.
//!
//! A registration error function linearized at a pose pair is a quadratic
//! `dxᵀ H dx + 2 bᵀ dx + c`. Each scalar residual row contributes a 28-dim
//! vector (21 upper-triangular Hessian terms, 6 gradient terms, 1 squared
//! residual). A Caratheodory set of those vectors is a weighted subset of
//! the rows that reproduces `(H, b, c)` exactly, from as few as 29 rows.
//!
//! Modules, bottom up:
//!
//! * [`coreset`]: Caratheodory elimination and its clustered linear-time variant.
//! * [`quadratic`]: residual systems, flattening and quadratic-model extraction.
//! * [`registration`]: GICP residuals, Jacobians, covariance estimation and I/O.
//! * [`downsample`]: exact downsampling of frame pairs into sampled factors.
//! * [`optimizer`]: Levenberg-Marquardt over SE(3) poses, ATE and synthetic scenes.
//! * [`evalbench`]: numerical validation, KLD and displacement-error experiments.

pub mod coreset;
pub mod downsample;
pub mod error;
pub mod evalbench;
pub mod optimizer;
pub mod quadratic;
pub mod registration;
pub mod seed;

pub use error::{Error, Result};

/// Library version embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
