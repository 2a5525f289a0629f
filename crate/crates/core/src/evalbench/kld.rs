//! Normalized KL divergence between Hessians and the sampling comparison table.

use nalgebra::Matrix6;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pair::{source_block, PairData};
use super::{Check, EvalReport, TrialRecord};
use crate::coreset::DEFAULT_CLUSTER_COUNT;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Generalized eigenvalues of `(H̃, H)` at or below this mark `H̃` as degenerate.
pub const DEGENERATE_EIGENVALUE: f64 = 1e-6;

/// Divergence of the zero-mean Gaussian with information `H̃` from the one with information `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KldScore {
    /// `½(log(|H|/|H̃|) + tr(H⁻¹H̃))`, which equals `D/2` for identical inputs.
    pub raw: Option<f64>,
    /// `raw − D/2`, zero iff `H̃ = H`.
    pub kld: Option<f64>,
    /// `1 − exp(−kld)`, or 1 when degenerate.
    pub normalized: f64,
    pub degenerate: bool,
}

pub fn normalized_kld(h: &Matrix6<f64>, h_tilde: &Matrix6<f64>) -> Result<KldScore> {
    let l = h
        .cholesky()
        .ok_or_else(|| Error::Degenerate("reference Hessian is not positive definite".into()))?
        .l();
    let l_inv = l.try_inverse().ok_or_else(|| Error::Degenerate("reference Hessian is singular".into()))?;
    let m = l_inv * h_tilde * l_inv.transpose();
    let m = (m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigenvalues();
    let degenerate = eig.iter().any(|l| !l.is_finite() || *l <= DEGENERATE_EIGENVALUE);
    if degenerate {
        return Ok(KldScore { raw: None, kld: None, normalized: 1.0, degenerate });
    }
    let raw = 0.5 * eig.iter().map(|l| l - l.ln()).sum::<f64>();
    let kld = 0.5 * eig.iter().map(|l| (l - 1.0) - l.ln()).sum::<f64>();
    let kld = kld.max(0.0);
    Ok(KldScore { raw: Some(raw), kld: Some(kld), normalized: -(-kld).exp_m1(), degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KldConfig {
    pub random_points: Vec<usize>,
    pub exact_targets: Vec<usize>,
    pub trials: usize,
    pub clusters: usize,
    pub seed: u64,
    /// Also score random sampling of every point.
    pub include_all_points: bool,
}

impl Default for KldConfig {
    fn default() -> Self {
        Self {
            random_points: vec![10, 64, 256, 1024],
            exact_targets: vec![29, 64, 256, 1024, 3072],
            trials: 100,
            clusters: DEFAULT_CLUSTER_COUNT,
            seed: 0,
            include_all_points: true,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Method {
    Random(usize),
    Exact(usize),
}

/// Normalized KLD of sampled `T_j` Hessians against the full one at the evaluation pose.
pub fn kld_table(pair: &PairData, cfg: &KldConfig) -> Result<EvalReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidInput("need at least one trial".into()));
    }
    let (h, _) = source_block(&pair.full_model_at(&pair.pose_j));
    let mut methods: Vec<Method> = cfg.random_points.iter().map(|&n| Method::Random(n)).collect();
    if cfg.include_all_points {
        methods.push(Method::Random(pair.len()));
    }
    methods.extend(cfg.exact_targets.iter().map(|&m| Method::Exact(m)));

    let jobs: Vec<(usize, usize)> = (0..methods.len()).flat_map(|g| (0..cfg.trials).map(move |t| (g, t))).collect();
    let records: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(g, t)| {
            let seed = derive_seed(derive_seed(cfg.seed, g as u64), t as u64);
            let (name, method, budget, factor) = match methods[g] {
                Method::Random(n) => ("random", format!("random/points={n}"), n, pair.random_factor(n, seed)?),
                Method::Exact(m) => ("exact", format!("exact/M={m}"), m, pair.exact_factor(m, cfg.clusters, seed)?),
            };
            let (ht, _) = source_block(&pair.sampled_model_at(&factor, &pair.pose_j)?);
            let score = normalized_kld(&h, &ht)?;
            Ok(TrialRecord {
                group: method,
                method: name.into(),
                budget,
                noise_deg: 0.0,
                trial: t,
                seed,
                value: Some(score.normalized),
                raw: score.raw,
                size: factor.len(),
                degenerate: score.degenerate,
            })
        })
        .collect::<Result<_>>()?;

    let report = EvalReport::new("kld", cfg, records, Vec::new())?;
    let checks = kld_checks(&report, cfg, pair.len());
    Ok(EvalReport { passed: checks.iter().all(|c| c.passed), checks, ..report })
}

fn kld_checks(r: &EvalReport, cfg: &KldConfig, all_points: usize) -> Vec<Check> {
    let mut checks = Vec::new();
    let random: Vec<(usize, f64, usize)> = cfg
        .random_points
        .iter()
        .filter_map(|n| r.group(&format!("random/points={n}")).map(|g| (*n, g.mean, g.degenerate)))
        .collect();
    let listing: Vec<String> = random.iter().map(|(n, m, _)| format!("{n}: {m:.3}")).collect();
    checks.push(Check::new(
        "random mean strictly decreases with points",
        random.windows(2).all(|w| w[1].1 < w[0].1),
        listing.join(", "),
    ));
    if let Some(&(n, m, d)) = random.first() {
        checks.push(Check::new("smallest random setting near saturated", m > 0.9, format!("{n} points: mean {m:.3}")));
        checks.push(Check::new(
            "smallest random setting shows degenerate Hessians",
            d > 0,
            format!("{d} of {} trials degenerate", cfg.trials),
        ));
    }
    let worst_exact = r
        .records
        .iter()
        .filter(|x| x.method == "exact")
        .map(|x| x.value.unwrap_or(1.0))
        .fold(0.0, f64::max);
    checks.push(Check::new("exact sampling scores zero", worst_exact <= 1e-9, format!("worst {worst_exact:.3e}")));
    if cfg.include_all_points {
        if let Some(g) = r.group(&format!("random/points={all_points}")) {
            checks.push(Check::new("random over all points scores zero", g.max <= 1e-9, format!("worst {:.3e}", g.max)));
        }
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(seed: u64) -> Matrix6<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        a * a.transpose() + Matrix6::identity() * 0.1
    }

    #[test]
    fn identical_matrices() {
        let h = spd(1);
        let s = normalized_kld(&h, &h).unwrap();
        // the unnormalized expression gives D/2 = 3 for identical inputs
        assert!((s.raw.unwrap() - 3.0).abs() < 1e-10);
        assert!((1.0 - (-s.raw.unwrap()).exp() - 0.950_212_931_632_136).abs() < 1e-10);
        assert!(s.normalized <= 1e-12);
        assert!(!s.degenerate);
    }

    #[test]
    fn matches_direct_determinant_formula() {
        let h = spd(2);
        let ht = spd(3);
        let s = normalized_kld(&h, &ht).unwrap();
        let direct = 0.5 * ((h.determinant() / ht.determinant()).ln() + (h.try_inverse().unwrap() * ht).trace());
        assert!((s.raw.unwrap() - direct).abs() < 1e-9 * direct.abs());
        assert!((s.kld.unwrap() - (direct - 3.0)).abs() < 1e-9);
        assert!(s.normalized > 0.0 && s.normalized < 1.0);
    }

    #[test]
    fn scaled_copy() {
        // H̃ = 2H: kld = ½·6·(2 − 1 − ln 2)
        let h = spd(4);
        let s = normalized_kld(&h, &(h * 2.0)).unwrap();
        let expected = 3.0 * (1.0 - 2f64.ln());
        assert!((s.kld.unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn singular_is_degenerate() {
        let h = spd(5);
        let mut ht = h;
        ht.row_mut(0).fill(0.0);
        ht.column_mut(0).fill(0.0);
        let s = normalized_kld(&h, &ht).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.normalized, 1.0);
        assert!(normalized_kld(&Matrix6::zeros(), &h).is_err());
    }

    #[test]
    fn small_table() {
        let pair = PairData::synthetic(1500, 2, 0.3).unwrap();
        let cfg = KldConfig { random_points: vec![10, 256], exact_targets: vec![29, 256], trials: 8, ..KldConfig::default() };
        let r = kld_table(&pair, &cfg).unwrap();
        let exact = r.group("exact/M=29").unwrap();
        assert!(exact.max <= 1e-9);
        let ten = r.group("random/points=10").unwrap().mean;
        let many = r.group("random/points=256").unwrap().mean;
        assert!(ten > many);
        let again = kld_table(&pair, &cfg).unwrap();
        assert_eq!(r, again);
    }
}
