//! Displacement-vector errors of sampled factors under rotation noise.

use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pair::{source_block, PairData};
use super::{Check, EvalReport, TrialRecord};
use crate::coreset::DEFAULT_CLUSTER_COUNT;
use crate::downsample::SampledFactor;
use crate::error::{Error, Result};
use crate::registration::{PairQuadratic, Pose};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementConfig {
    /// Exact row budgets; random sampling uses `ceil(M / 3)` points.
    pub budgets: Vec<usize>,
    pub noise_deg: Vec<f64>,
    pub trials: usize,
    pub clusters: usize,
    pub seed: u64,
}

impl Default for DisplacementConfig {
    fn default() -> Self {
        Self {
            budgets: vec![29, 64, 256, 1024],
            noise_deg: vec![0.0, 0.5, 1.0, 2.0, 4.0],
            trials: 100,
            clusters: DEFAULT_CLUSTER_COUNT,
            seed: 0,
        }
    }
}

/// Rotation by `deg` degrees about an axis uniform on the sphere.
pub fn random_rotation(rng: &mut impl Rng, deg: f64) -> Pose {
    let axis = loop {
        let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            break v / n;
        }
    };
    let w = axis * deg.to_radians();
    Pose::exp(&Vector6::new(w.x, w.y, w.z, 0.0, 0.0, 0.0))
}

/// `H_jj⁻¹ b_j`, or `None` if the block is singular.
fn displacement(q: &PairQuadratic) -> Option<Vector6<f64>> {
    let (h, b) = source_block(q);
    h.cholesky().map(|c| c.solve(&b))
}

fn group_name(method: &str, budget: usize, noise: f64) -> String {
    format!("{method}/M={budget}/noise={noise}")
}

/// For every budget, trial and noise level: perturb `T_j` by a random
/// rotation, relinearize the full and sampled factors there and compare the
/// displacement vectors. Each trial reuses one rotation axis for all levels.
pub fn displacement_error_sweep(pair: &PairData, cfg: &DisplacementConfig) -> Result<EvalReport> {
    if cfg.trials == 0 || cfg.budgets.is_empty() || cfg.noise_deg.is_empty() {
        return Err(Error::InvalidInput("need trials, budgets and noise levels".into()));
    }
    if let Some(n) = cfg.noise_deg.iter().find(|n| !n.is_finite() || **n < 0.0) {
        return Err(Error::InvalidInput(format!("invalid noise level {n}")));
    }
    let jobs: Vec<(usize, usize)> =
        (0..cfg.budgets.len()).flat_map(|b| (0..cfg.trials).map(move |t| (b, t))).collect();
    let per_job: Vec<Vec<TrialRecord>> = jobs
        .par_iter()
        .map(|&(b, t)| run_job(pair, cfg, cfg.budgets[b], t, derive_seed(derive_seed(cfg.seed, b as u64), t as u64)))
        .collect::<Result<_>>()?;

    // order: method, budget, noise, trial
    let mut records: Vec<TrialRecord> = per_job.into_iter().flatten().collect();
    let key = |r: &TrialRecord| {
        (
            r.method != "exact",
            cfg.budgets.iter().position(|b| *b == r.budget),
            cfg.noise_deg.iter().position(|n| *n == r.noise_deg),
            r.trial,
        )
    };
    records.sort_by_key(key);
    let report = EvalReport::new("displacement", cfg, records, Vec::new())?;
    let checks = displacement_checks(&report, cfg);
    Ok(EvalReport { passed: checks.iter().all(|c| c.passed), checks, ..report })
}

fn run_job(pair: &PairData, cfg: &DisplacementConfig, budget: usize, trial: usize, seed: u64) -> Result<Vec<TrialRecord>> {
    let exact = pair.exact_factor(budget, cfg.clusters, seed)?;
    let points = budget.div_ceil(3).min(pair.len());
    let random = pair.random_factor(points, derive_seed(seed, 1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let axis_seed = rng.random::<u64>();
    let mut out = Vec::with_capacity(2 * cfg.noise_deg.len());
    for &noise in &cfg.noise_deg {
        let rot = random_rotation(&mut ChaCha8Rng::seed_from_u64(axis_seed), noise);
        let pose = pair.pose_j.compose(&rot);
        let full = displacement(&pair.full_model_at(&pose))
            .ok_or_else(|| Error::Degenerate("full source Hessian is singular".into()))?;
        for (method, f, b) in [("exact", &exact, budget), ("random", &random, points)] {
            out.push(record(pair, method, f, b, noise, trial, seed, &pose, &full)?);
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn record(
    pair: &PairData,
    method: &str,
    f: &SampledFactor,
    budget: usize,
    noise: f64,
    trial: usize,
    seed: u64,
    pose: &Pose,
    full: &Vector6<f64>,
) -> Result<TrialRecord> {
    let dx = displacement(&pair.sampled_model_at(f, pose)?);
    let value = dx.map(|d| (d - full).norm());
    Ok(TrialRecord {
        group: group_name(method, budget, noise),
        method: method.into(),
        budget,
        noise_deg: noise,
        trial,
        seed,
        value,
        raw: Some(full.norm()),
        size: f.len(),
        degenerate: value.is_none(),
    })
}

fn displacement_checks(r: &EvalReport, cfg: &DisplacementConfig) -> Vec<Check> {
    let mut checks = Vec::new();
    let mean = |method: &str, b: usize, n: f64| -> Option<f64> {
        // degenerate trials count as unbounded error
        r.group(&group_name(method, b, n)).map(|g| if g.degenerate > 0 { f64::INFINITY } else { g.mean })
    };
    let zero: Vec<f64> = r
        .records
        .iter()
        .filter(|x| x.method == "exact" && x.noise_deg == 0.0)
        .map(|x| x.value.unwrap_or(f64::INFINITY))
        .collect();
    if !zero.is_empty() {
        let worst = zero.iter().copied().fold(0.0, f64::max);
        checks.push(Check::new("exact error vanishes without noise", worst <= 1e-9, format!("worst {worst:.3e}")));
    }
    let mut beaten = Vec::new();
    let mut ok = true;
    for &b in &cfg.budgets {
        for &n in cfg.noise_deg.iter().filter(|n| **n > 0.0) {
            let (e, x) = (mean("exact", b, n).unwrap_or(f64::INFINITY), mean("random", b.div_ceil(3), n).unwrap_or(0.0));
            ok &= e < x;
            beaten.push(format!("M={b} {n}°: {e:.2e} vs {x:.2e}"));
        }
    }
    checks.push(Check::new("exact mean error below random at matched budget", ok, beaten.join(", ")));
    let mut levels: Vec<f64> = cfg.noise_deg.clone();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    for &b in &cfg.budgets {
        let means: Vec<f64> = levels.iter().map(|&n| mean("exact", b, n).unwrap_or(f64::NAN)).collect();
        let listing: Vec<String> = levels.iter().zip(&means).map(|(n, m)| format!("{n}°: {m:.2e}")).collect();
        checks.push(Check::new(
            format!("exact M={b} error grows with noise"),
            means.windows(2).all(|w| w[1] > w[0]),
            listing.join(", "),
        ));
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_angle_and_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for deg in [0.0f64, 0.5, 4.0, 90.0] {
            let p = random_rotation(&mut rng, deg);
            assert!((p.angle() - deg.to_radians()).abs() < 1e-12);
            assert_eq!(p.translation(), Vector3::zeros());
        }
        let mut z = 0.0;
        for _ in 0..2000 {
            z += random_rotation(&mut rng, 10.0).quaternion().scaled_axis().z / 10f64.to_radians();
        }
        assert!((z / 2000.0).abs() < 0.05);
    }

    #[test]
    fn small_sweep() {
        let pair = PairData::synthetic(1500, 4, 0.3).unwrap();
        let cfg = DisplacementConfig { budgets: vec![29, 256], noise_deg: vec![0.0, 1.0, 4.0], trials: 6, ..Default::default() };
        let r = displacement_error_sweep(&pair, &cfg).unwrap();
        assert_eq!(r.records.len(), 2 * 6 * 3 * 2);
        assert!(r.checks[0].passed, "{:?}", r.checks[0]);
        let g = r.group("exact/M=29/noise=0").unwrap();
        assert!(g.max <= 1e-9);
        assert_eq!(r, displacement_error_sweep(&pair, &cfg).unwrap());
    }
}
