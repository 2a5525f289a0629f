//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs sequentially without the libtest harness so the timing sweep is not
//! disturbed by concurrently running tests.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use exactcoreset::coreset::{fast_caratheodory, CoresetConfig, WeightedPointSet};
use exactcoreset::downsample::DownsampleConfig;
use exactcoreset::evalbench::{
    bench, displacement_error_sweep, kld_table, trajectory_comparison, validate_random, BenchConfig, Check,
    DisplacementConfig, KldConfig, PairData, TrajectoryConfig, TrajectoryOutcome, ValidateConfig,
};
use exactcoreset::optimizer::synthetic::{SceneConfig, SyntheticSequence};
use exactcoreset::optimizer::{detect_overlaps, gauss_newton_step, FactorGraph};
use exactcoreset::quadratic::{extract, reconstruct};
use exactcoreset::registration::{
    fused_information, whitener, Correspondence, GaussianPointCloud, PairGeometry, Pose, WhitenerPolicy,
};

const TARGETS: [usize; 6] = [29, 64, 128, 256, 512, 1024];

struct Outcome {
    passed: bool,
    detail: String,
}

fn from_checks(checks: &[Check], names: &[&str]) -> Outcome {
    let picked: Vec<&Check> =
        checks.iter().filter(|c| names.is_empty() || names.iter().any(|n| c.name.contains(n))).collect();
    Outcome {
        passed: !picked.is_empty() && picked.iter().all(|c| c.passed),
        detail: picked
            .iter()
            .map(|c| format!("{}{}: {}", if c.passed { "" } else { "FAILED " }, c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn exactness_and_size() -> (Outcome, Outcome) {
    let cfg = ValidateConfig { trials: 100, rows: 30_000, targets: TARGETS.to_vec(), seed: 1, ..ValidateConfig::default() };
    let (report, _) = validate_random(&cfg).expect("validation runs");
    let exact = from_checks(&report.checks, &["errors below tolerance"]);
    let m29: Vec<usize> = report.records.iter().filter(|r| r.budget == 29).map(|r| r.size).collect();
    let all29 = m29.iter().all(|s| *s == 29);
    let sizes = from_checks(&report.checks, &["selection sizes"]);
    let per_m: Vec<String> = TARGETS
        .iter()
        .map(|&m| {
            let s: Vec<usize> = report.records.iter().filter(|r| r.budget == m).map(|r| r.size).collect();
            format!("M={m}: {}..{}", s.iter().min().unwrap(), s.iter().max().unwrap())
        })
        .collect();
    let size = Outcome {
        passed: all29 && sizes.passed,
        detail: format!("M=29 always 29 rows: {all29}; {}; {}", per_m.join(", "), sizes.detail),
    };
    (exact, size)
}

fn timing() -> (Outcome, Outcome) {
    let (_, t) = bench(&BenchConfig::default()).expect("bench runs");
    (from_checks(&t.checks, &["lu median time"]), from_checks(&t.checks, &["at least 2x"]))
}

fn kld() -> Outcome {
    let pair = PairData::synthetic(10_000, 0, 0.5).expect("pair");
    let r = kld_table(&pair, &KldConfig::default()).expect("kld table");
    from_checks(&r.checks, &[])
}

fn displacement() -> Outcome {
    let pair = PairData::synthetic(10_000, 0, 0.5).expect("pair");
    let r = displacement_error_sweep(&pair, &DisplacementConfig::default()).expect("sweep");
    from_checks(&r.checks, &[])
}

fn first_step() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut graphs = 0;
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let frames = rng.random_range(3..7);
        let points = rng.random_range(1000..3000);
        let scene = SceneConfig { frames, points_per_frame: points, seed, ..SceneConfig::default() };
        let seq = SyntheticSequence::generate(&scene).expect("sequence");
        let pairs = detect_overlaps(&seq.clouds, &seq.initial, 0.5, 0.2).expect("overlaps");
        let full = FactorGraph::with_full_factors(seq.clouds.clone(), seq.initial.clone(), &pairs, 0.5).expect("full");
        let cfg = DownsampleConfig::new(29).with_seed(seed).with_max_distance(0.5);
        let sampled = FactorGraph::with_sampled_factors(seq.clouds, seq.initial.clone(), &pairs, &cfg).expect("sampled");
        let (Ok(a), Ok(b)) = (
            gauss_newton_step(&full, &seq.initial, WhitenerPolicy::Fixed),
            gauss_newton_step(&sampled, &seq.initial, WhitenerPolicy::Fixed),
        ) else {
            continue;
        };
        worst = worst.max((&a - &b).amax() / a.amax());
        graphs += 1;
    }
    Outcome {
        passed: graphs >= 6 && worst <= 1e-8,
        detail: format!("{graphs} graphs, worst relative step difference {worst:.3e}"),
    }
}

fn trajectory() -> (Outcome, TrajectoryOutcome) {
    let (report, out) = trajectory_comparison(&TrajectoryConfig::default()).expect("trajectory");
    let o = from_checks(&report.checks, &["ATE within", "rows"]);
    (Outcome { passed: o.passed, detail: format!("{} factors; {}", out.pairs.len(), o.detail) }, out)
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let w = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize() * rng.random_range(0.0..0.6);
    let t = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
    Pose::exp(&Vector6::new(w.x, w.y, w.z, t.x, t.y, t.z))
}

fn random_cov(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    a * a.transpose() + Matrix3::identity() * 1e-2
}

fn jacobians() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let configs = 200;
    for _ in 0..configs {
        let (t_i, t_j) = (random_pose(&mut rng), random_pose(&mut rng));
        let (ct, cs) = (random_cov(&mut rng), random_cov(&mut rng));
        let mu_s = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let mu_t = t_i.between(&t_j).transform_point(&mu_s) + Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5));
        let tgt = GaussianPointCloud::new(vec![mu_t], vec![ct]).unwrap();
        let src = GaussianPointCloud::new(vec![mu_s], vec![cs]).unwrap();
        let phi = whitener(&ct, &cs, &t_i.between(&t_j).rotation()).unwrap();
        let c = Correspondence { source_index: 0, target_index: 0, phi };
        let res = |a: &Pose, b: &Pose| PairGeometry::new(&tgt, &src, a, b, WhitenerPolicy::Fixed).residual(&c);
        let (_, ji, jj) = PairGeometry::new(&tgt, &src, &t_i, &t_j, WhitenerPolicy::Fixed).linearize(&c);
        let mut fi = ji;
        let mut fj = jj;
        for k in 0..6 {
            let mut d = Vector6::zeros();
            d[k] = h;
            fi.set_column(k, &((res(&t_i.retract(&d), &t_j) - res(&t_i.retract(&-d), &t_j)) / (2.0 * h)));
            fj.set_column(k, &((res(&t_i, &t_j.retract(&d)) - res(&t_i, &t_j.retract(&-d))) / (2.0 * h)));
        }
        worst = worst.max((fi - ji).amax() / ji.amax()).max((fj - jj).amax() / jj.amax());
    }
    Outcome { passed: worst <= 1e-5, detail: format!("{configs} configurations, worst relative deviation {worst:.3e}") }
}

fn conservation(traj: &TrajectoryOutcome) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut notes = Vec::new();

    let mut sum_err: f64 = 0.0;
    for t in 0..20 {
        let dim = rng.random_range(3..30);
        let n = rng.random_range(dim + 2..4000);
        let points: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let set = WeightedPointSet::new(dim, points, weights).unwrap();
        let target = rng.random_range(dim + 1..dim + 200);
        let cs = fast_caratheodory(&set, &CoresetConfig::new(target).with_seed(t)).unwrap();
        let (a, b) = (set.weighted_sum(), set.select(&cs).weighted_sum());
        let scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        sum_err = sum_err.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale);
    }
    let sums_ok = sum_err <= 1e-10;
    notes.push(format!("weighted sums {sum_err:.2e}"));

    let mut white_err: f64 = 0.0;
    for _ in 0..200 {
        let (ct, cs) = (random_cov(&mut rng), random_cov(&mut rng));
        let r = random_pose(&mut rng).rotation();
        let omega = fused_information(&ct, &cs, &r).unwrap();
        let phi = whitener(&ct, &cs, &r).unwrap();
        let d = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let e = phi.transpose() * d;
        let q = (d.transpose() * omega * d)[0];
        white_err = white_err.max((e.dot(&e) - q).abs() / q);
    }
    let white_ok = white_err <= 1e-12;
    notes.push(format!("whitening {white_err:.2e}"));

    let mut min_eig = f64::INFINITY;
    let mut positive = true;
    for t in 0..20u64 {
        let sys = exactcoreset::evalbench::random_system(5000, t).unwrap();
        let sel = extract(&sys, &CoresetConfig::new(TARGETS[(t % 6) as usize]).with_seed(t)).unwrap();
        positive &= sel.weights.iter().all(|w| *w > 0.0);
        let h: Matrix6<f64> = reconstruct(&sys, &sel).unwrap().h;
        let eig = SymmetricEigen::new(h).eigenvalues;
        min_eig = min_eig.min(eig.min() / eig.max());
    }
    let psd_ok = positive && min_eig >= -1e-12;
    notes.push(format!("positive weights {positive}, min eigenvalue ratio {min_eig:.2e}"));

    let monotone = traj.runs.iter().all(|r| r.result.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    notes.push(format!("LM cost monotone over {} runs: {monotone}", traj.runs.len()));

    Outcome { passed: sums_ok && white_ok && psd_ok && monotone, detail: notes.join(", ") }
}

fn report(name: &str, start: Instant, o: &Outcome) -> bool {
    println!("{} {name} ({:.1}s): {}", if o.passed { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64(), o.detail);
    o.passed
}

fn main() -> ExitCode {
    let mut results = Vec::new();

    let t = Instant::now();
    let (exact, size) = exactness_and_size();
    results.push(report("exactness", t, &exact));
    results.push(report("minimum coreset size", t, &size));

    let t = Instant::now();
    let (trend, speedup) = timing();
    results.push(report("timing trend", t, &trend));
    results.push(report("lu vs svd speedup", t, &speedup));

    let t = Instant::now();
    results.push(report("kld table", t, &kld()));
    let t = Instant::now();
    results.push(report("displacement errors", t, &displacement()));
    let t = Instant::now();
    results.push(report("first-step equivalence", t, &first_step()));

    let t = Instant::now();
    let (traj, outcome) = trajectory();
    results.push(report("end-to-end trajectory", t, &traj));

    let t = Instant::now();
    results.push(report("jacobian correctness", t, &jacobians()));
    let t = Instant::now();
    results.push(report("conservation suite", t, &conservation(&outcome)));

    let passed = results.iter().filter(|p| **p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
