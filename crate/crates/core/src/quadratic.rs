//! Residual systems and their exact quadratic coresets.
//!
//! A scalar residual `e_i` with Jacobian row `a_i` contributes `a_iᵀa_i` to
//! `H`, `a_iᵀe_i` to `b` and `e_i²` to `c`. Flattening those terms into one
//! 28-dim vector per row turns "reproduce `(H, b, c)`" into "reproduce the
//! weighted sum of the flattened rows", which [`fast_caratheodory`] solves
//! exactly.

use std::time::{Duration, Instant};

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::coreset::{fast_caratheodory_with_stats, CoresetConfig, CoresetStats, WeightedPointSet};
use crate::error::{Error, Result};

/// Tangent dimension of one pose.
pub const TANGENT_DIM: usize = 6;

/// 21 upper-triangular Hessian terms + 6 gradient terms + 1 constant.
pub const FLAT_DIM: usize = TANGENT_DIM * (TANGENT_DIM + 1) / 2 + TANGENT_DIM + 1;

/// Smallest selection that can reproduce a quadratic model.
pub const MIN_SELECTION: usize = FLAT_DIM + 1;

/// Scalar residuals `e` and Jacobian rows `a_i = ∂e_i/∂T` at one linearization point.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSystem {
    residuals: Vec<f64>,
    jacobian: Vec<Vector6<f64>>,
}

impl ResidualSystem {
    pub fn new(residuals: Vec<f64>, jacobian: Vec<Vector6<f64>>) -> Result<Self> {
        if residuals.is_empty() {
            return Err(Error::TooFewRows { rows: 0, min: 0 });
        }
        if residuals.len() != jacobian.len() {
            return Err(Error::LengthMismatch { left: residuals.len(), right: jacobian.len() });
        }
        Ok(Self { residuals, jacobian })
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn jacobian(&self) -> &[Vector6<f64>] {
        &self.jacobian
    }

    pub fn row(&self, i: usize) -> (&Vector6<f64>, f64) {
        (&self.jacobian[i], self.residuals[i])
    }
}

/// `dxᵀ H dx + 2 bᵀ dx + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticModel {
    pub h: Matrix6<f64>,
    pub b: Vector6<f64>,
    pub c: f64,
}

impl QuadraticModel {
    pub fn zero() -> Self {
        Self { h: Matrix6::zeros(), b: Vector6::zeros(), c: 0.0 }
    }

    /// Adds `w · (aᵀa, aᵀe, e²)`, touching only the upper triangle of `H`.
    fn accumulate_upper(&mut self, a: &Vector6<f64>, e: f64, w: f64) {
        for r in 0..TANGENT_DIM {
            let wa = w * a[r];
            for c in r..TANGENT_DIM {
                self.h[(r, c)] += wa * a[c];
            }
            self.b[r] += wa * e;
        }
        self.c += w * e * e;
    }

    fn mirror_upper(&mut self) {
        for r in 0..TANGENT_DIM {
            for c in 0..r {
                self.h[(r, c)] = self.h[(c, r)];
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { h: self.h * s, b: self.b * s, c: self.c * s }
    }

    /// `max(‖H − H'‖, ‖b − b'‖, |c − c'|)` in the max-abs-entry norm.
    pub fn max_abs_diff(&self, other: &QuadraticModel) -> f64 {
        let dh = (self.h - other.h).amax();
        let db = (self.b - other.b).amax();
        dh.max(db).max((self.c - other.c).abs())
    }

    /// Normalizer for relative errors: `max(max_ij |H_ij|, 1)`.
    pub fn scale(&self) -> f64 {
        self.h.amax().max(1.0)
    }

    /// [`max_abs_diff`](Self::max_abs_diff) divided by `self.scale()`.
    pub fn relative_error(&self, other: &QuadraticModel) -> f64 {
        self.max_abs_diff(other) / self.scale()
    }
}

/// Selected residual rows and their weights.
///
/// Serialized as `{"indices": [...], "weights": [...], "n_source_rows": N}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSelection {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub n_source_rows: usize,
}

impl ResidualSelection {
    /// Every row with weight 1.
    pub fn all(n: usize) -> Self {
        Self { indices: (0..n).collect(), weights: vec![1.0; n], n_source_rows: n }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { weights: self.weights.iter().map(|w| w * s).collect(), ..self.clone() }
    }

    /// Orders entries by row index.
    pub fn sorted(mut self) -> Self {
        let mut pairs: Vec<(usize, f64)> = self.indices.into_iter().zip(self.weights).collect();
        pairs.sort_unstable_by_key(|p| p.0);
        (self.indices, self.weights) = pairs.into_iter().unzip();
        self
    }

    /// Checks uniqueness, range and positivity.
    pub fn validate(&self) -> Result<()> {
        if self.indices.len() != self.weights.len() {
            return Err(Error::LengthMismatch { left: self.indices.len(), right: self.weights.len() });
        }
        for (k, &i) in self.indices.iter().enumerate() {
            if i >= self.n_source_rows {
                return Err(Error::IndexOutOfRange { index: i, len: self.n_source_rows });
            }
            if k > 0 && self.indices[k - 1] >= i {
                return Err(Error::InvalidInput("selection indices must be sorted and unique".into()));
            }
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::InvalidInput(format!("nonpositive selection weight {w}")));
        }
        Ok(())
    }
}

/// `[upper(aᵀa) row-major, aᵀe, e²]`.
pub fn flatten_row(a: &Vector6<f64>, e: f64) -> [f64; FLAT_DIM] {
    let mut out = [0.0; FLAT_DIM];
    let mut k = 0;
    for r in 0..TANGENT_DIM {
        for c in r..TANGENT_DIM {
            out[k] = a[r] * a[c];
            k += 1;
        }
    }
    for r in 0..TANGENT_DIM {
        out[k] = a[r] * e;
        k += 1;
    }
    out[k] = e * e;
    out
}

/// Inverse of the summed flattening: rebuilds `(H, b, c)` from a 28-vector.
pub fn unflatten(flat: &[f64]) -> Result<QuadraticModel> {
    if flat.len() != FLAT_DIM {
        return Err(Error::DimensionMismatch { expected: FLAT_DIM, got: flat.len() });
    }
    let mut q = QuadraticModel::zero();
    let mut k = 0;
    for r in 0..TANGENT_DIM {
        for c in r..TANGENT_DIM {
            q.h[(r, c)] = flat[k];
            k += 1;
        }
    }
    q.mirror_upper();
    for r in 0..TANGENT_DIM {
        q.b[r] = flat[k];
        k += 1;
    }
    q.c = flat[k];
    Ok(q)
}

/// Full-set `H = JᵀJ`, `b = Jᵀe`, `c = eᵀe`.
pub fn quadratic_of(sys: &ResidualSystem) -> QuadraticModel {
    let mut q = QuadraticModel::zero();
    for (a, e) in sys.jacobian.iter().zip(&sys.residuals) {
        q.accumulate_upper(a, *e, 1.0);
    }
    q.mirror_upper();
    q
}

/// `H̃ = J̃ᵀWJ̃`, `b̃ = J̃ᵀWẽ`, `c̃ = ẽᵀWẽ` over the selected rows.
pub fn reconstruct(sys: &ResidualSystem, sel: &ResidualSelection) -> Result<QuadraticModel> {
    if sel.indices.len() != sel.weights.len() {
        return Err(Error::LengthMismatch { left: sel.indices.len(), right: sel.weights.len() });
    }
    let mut q = QuadraticModel::zero();
    for (&i, &w) in sel.indices.iter().zip(&sel.weights) {
        if i >= sys.len() {
            return Err(Error::IndexOutOfRange { index: i, len: sys.len() });
        }
        q.accumulate_upper(&sys.jacobian[i], sys.residuals[i], w);
    }
    q.mirror_upper();
    Ok(q)
}

/// Timing of one [`extract_with_stats`] call.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractStats {
    pub flatten: Duration,
    pub coreset: CoresetStats,
    pub total: Duration,
}

/// Weighted row subset reproducing `quadratic_of(sys)` exactly.
///
/// Rows start with weight `1/N`; returned weights are multiplied by `N`
/// so they plug straight into [`reconstruct`].
pub fn extract(sys: &ResidualSystem, cfg: &CoresetConfig) -> Result<ResidualSelection> {
    extract_with_stats(sys, cfg, &mut ExtractStats::default())
}

pub fn extract_with_stats(
    sys: &ResidualSystem,
    cfg: &CoresetConfig,
    stats: &mut ExtractStats,
) -> Result<ResidualSelection> {
    let n = sys.len();
    if n < MIN_SELECTION {
        return Err(Error::TooFewRows { rows: n, min: FLAT_DIM });
    }
    if cfg.target_size < MIN_SELECTION {
        return Err(Error::InvalidTarget { target: cfg.target_size, min: MIN_SELECTION });
    }
    let total = Instant::now();

    let start = Instant::now();
    let mut flat = Vec::with_capacity(n * FLAT_DIM);
    for (a, e) in sys.jacobian.iter().zip(&sys.residuals) {
        flat.extend_from_slice(&flatten_row(a, *e));
    }
    let set = WeightedPointSet::new(FLAT_DIM, flat, vec![1.0 / n as f64; n])?;
    stats.flatten += start.elapsed();

    let cs = fast_caratheodory_with_stats(&set, cfg, &mut stats.coreset)?;
    let scale = n as f64;
    let sel = ResidualSelection {
        indices: cs.indices,
        weights: cs.weights.into_iter().map(|w| w * scale).collect(),
        n_source_rows: n,
    }
    .sorted();

    stats.total += total.elapsed();
    Ok(sel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn random_system(n: usize, seed: u64) -> ResidualSystem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
        let jac = (0..n).map(|_| Vector6::from_fn(|_, _| g())).collect();
        let res = (0..n).map(|_| g()).collect();
        ResidualSystem::new(res, jac).unwrap()
    }

    #[test]
    fn flat_dimension_is_28() {
        assert_eq!(FLAT_DIM, 28);
        assert_eq!(MIN_SELECTION, 29);
        assert_eq!(flatten_row(&Vector6::zeros(), 0.0).len(), 28);
    }

    #[test]
    fn flatten_zero() {
        assert!(flatten_row(&Vector6::zeros(), 0.0).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn flatten_unit_row() {
        let f = flatten_row(&Vector6::x(), 1.0);
        let mut expected = [0.0; 28];
        expected[0] = 1.0;
        expected[21] = 1.0;
        expected[27] = 1.0;
        assert_eq!(f, expected);
    }

    #[test]
    fn flatten_matches_outer_product() {
        let sys = random_system(20, 1);
        for i in 0..sys.len() {
            let (a, e) = sys.row(i);
            let q = unflatten(&flatten_row(a, e)).unwrap();
            assert_eq!(q.h, a * a.transpose());
            assert_eq!(q.b, a * e);
            assert_eq!(q.c, e * e);
        }
    }

    #[test]
    fn quadratic_zero_residual() {
        let sys = random_system(50, 2);
        let zero = ResidualSystem::new(vec![0.0; 50], sys.jacobian().to_vec()).unwrap();
        let q = quadratic_of(&zero);
        assert_eq!(q.b, Vector6::zeros());
        assert_eq!(q.c, 0.0);
        let jtj: Matrix6<f64> = sys.jacobian().iter().map(|a| a * a.transpose()).sum();
        assert!((q.h - jtj).amax() < 1e-12);
    }

    #[test]
    fn quadratic_single_row() {
        let a = Vector6::new(1.0, -2.0, 0.5, 3.0, 0.0, 1.5);
        let sys = ResidualSystem::new(vec![2.0], vec![a]).unwrap();
        let q = quadratic_of(&sys);
        assert_eq!(q.h, a * a.transpose());
        assert_eq!(q.c, 4.0);
        assert_eq!(q.h.rank(1e-12), 1);
    }

    #[test]
    fn quadratic_matches_naive_accumulation() {
        let sys = random_system(100, 3);
        let mut h = Matrix6::zeros();
        let mut b = Vector6::zeros();
        let mut c = 0.0;
        for i in 0..100 {
            let (a, e) = sys.row(i);
            h += a * a.transpose();
            b += a * e;
            c += e * e;
        }
        let q = quadratic_of(&sys);
        assert!((q.h - h).amax() < 1e-12);
        assert!((q.b - b).amax() < 1e-12);
        assert!((q.c - c).abs() < 1e-12);
        assert_eq!(q.h, q.h.transpose());
    }

    #[test]
    fn identity_selection_is_exact() {
        let sys = random_system(64, 4);
        let q = reconstruct(&sys, &ResidualSelection::all(64)).unwrap();
        assert_eq!(q, quadratic_of(&sys));
    }

    #[test]
    fn doubled_weights_double_model() {
        let sys = random_system(200, 5);
        let sel = extract(&sys, &CoresetConfig::new(29)).unwrap();
        let q1 = reconstruct(&sys, &sel).unwrap();
        let q2 = reconstruct(&sys, &sel.scaled(2.0)).unwrap();
        assert_eq!(q2, q1.scaled(2.0));
    }

    #[test]
    fn out_of_range_index() {
        let sys = random_system(10, 6);
        let sel = ResidualSelection { indices: vec![10], weights: vec![1.0], n_source_rows: 10 };
        assert!(matches!(reconstruct(&sys, &sel), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn too_few_rows() {
        let sys = random_system(28, 7);
        assert!(matches!(extract(&sys, &CoresetConfig::new(29)), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn target_below_29_rejected() {
        let sys = random_system(100, 8);
        assert!(matches!(extract(&sys, &CoresetConfig::new(28)), Err(Error::InvalidTarget { .. })));
    }

    #[test]
    fn passthrough_29_rows() {
        let sys = random_system(29, 9);
        let sel = extract(&sys, &CoresetConfig::new(29)).unwrap();
        assert_eq!(sel.indices, (0..29).collect::<Vec<_>>());
        assert!(sel.weights.iter().all(|w| (*w - 1.0).abs() < 1e-15));
    }

    #[test]
    fn extract_30k_rows_exact() {
        let sys = random_system(30_000, 10);
        let full = quadratic_of(&sys);
        for m in [29, 64, 128, 256, 512, 1024] {
            let sel = extract(&sys, &CoresetConfig::new(m)).unwrap();
            sel.validate().unwrap();
            let lo = m.saturating_sub(64).max(29);
            assert!((lo..=m).contains(&sel.len()), "M={m}: size {}", sel.len());
            let err = full.relative_error(&reconstruct(&sys, &sel).unwrap());
            assert!(err < 1e-10, "M={m}: error {err:e}");
        }
    }

    #[test]
    fn selection_json_shape() {
        let sel = ResidualSelection { indices: vec![1, 4], weights: vec![0.5, 2.0], n_source_rows: 9 };
        let v: serde_json::Value = serde_json::to_value(&sel).unwrap();
        assert_eq!(v["indices"], serde_json::json!([1, 4]));
        assert_eq!(v["weights"], serde_json::json!([0.5, 2.0]));
        assert_eq!(v["n_source_rows"], 9);
    }
}
