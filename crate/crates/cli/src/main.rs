use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use exactcoreset::coreset::{NullspaceMethod, DEFAULT_CLUSTER_COUNT};
use exactcoreset::downsample::{exact_downsample, DownsampleConfig, FullFactor, SampledFactor};
use exactcoreset::evalbench::{
    self, BenchConfig, Check, DisplacementConfig, EvalReport, KldConfig, PairData, TimingReport, TrajectoryConfig,
    ValidateConfig, VALIDATION_TOLERANCE,
};
use exactcoreset::optimizer::synthetic::{street_pair, SceneConfig, SyntheticSequence};
use exactcoreset::optimizer::{read_tum, write_tum, OptimizerConfig};
use exactcoreset::quadratic::MIN_SELECTION;
use exactcoreset::registration::io::{read_points, read_pose, write_ply, write_pose};
use exactcoreset::registration::{estimate_covariances, GaussianPointCloud, Pose, WhitenerPolicy, DEFAULT_K_NEIGHBORS};

#[derive(Parser)]
#[command(name = "exactcoreset", version, about = "Exact coreset downsampling of point cloud registration residuals")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "EXACTCORESET_THREADS")]
    threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exactness of extraction on random residual systems.
    Validate(ValidateArgs),
    /// Extraction timing over target sizes and nullspace methods.
    Bench(BenchArgs),
    /// Normalized KL divergence of sampled Hessians on a frame pair.
    Kld(KldArgs),
    /// Displacement-vector errors under rotation noise on a frame pair.
    Displace(DisplaceArgs),
    /// Exact downsampling of one registration pair.
    Downsample(DownsampleArgs),
    /// Multi-frame optimization with full and downsampled factors.
    Optimize(OptimizeArgs),
    /// Write a synthetic sequence or frame pair to disk.
    Synth(SynthArgs),
}

fn parse_budget(s: &str) -> Result<usize, String> {
    let m: usize = s.trim().parse().map_err(|e| format!("{e}"))?;
    if m < MIN_SELECTION {
        return Err(format!("target size must be at least {MIN_SELECTION}, got {m}"));
    }
    Ok(m)
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("must be positive".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(format!("{e}")),
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Nullspace {
    Lu,
    Svd,
}

impl From<Nullspace> for NullspaceMethod {
    fn from(n: Nullspace) -> Self {
        match n {
            Nullspace::Lu => NullspaceMethod::Lu,
            Nullspace::Svd => NullspaceMethod::Svd,
        }
    }
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 100, value_parser = parse_positive)]
    trials: usize,
    /// Residual rows per system.
    #[arg(long, default_value_t = 30_000)]
    n: usize,
    /// Target sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "29", value_parser = parse_budget)]
    m: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_CLUSTER_COUNT)]
    clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "lu")]
    nullspace: Nullspace,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "29,64,128,256,512,1024", value_parser = parse_budget)]
    m: Vec<usize>,
    #[arg(long, default_value_t = 20, value_parser = parse_positive)]
    trials: usize,
    #[arg(long, default_value_t = 30_000)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_CLUSTER_COUNT)]
    clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Nullspace methods to time.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "lu,svd")]
    methods: Vec<Nullspace>,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

/// A frame pair from files, or a synthetic street pair.
#[derive(Args)]
struct PairArgs {
    /// Target cloud (.xyz or .ply); requires --source.
    #[arg(long, requires = "source")]
    target: Option<PathBuf>,
    /// Source cloud (.xyz or .ply); requires --target.
    #[arg(long, requires = "target")]
    source: Option<PathBuf>,
    /// Target pose JSON (default identity).
    #[arg(long)]
    target_pose: Option<PathBuf>,
    /// Source pose JSON (default identity).
    #[arg(long)]
    source_pose: Option<PathBuf>,
    /// Points per synthetic frame.
    #[arg(long, default_value_t = 10_000)]
    pair_points: usize,
    #[arg(long, default_value_t = 0)]
    pair_seed: u64,
    #[arg(long, default_value_t = 0.5)]
    max_dist: f64,
    #[arg(long, default_value_t = DEFAULT_K_NEIGHBORS)]
    k_neighbors: usize,
}

#[derive(Args)]
struct KldArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// Random sampling sizes in points.
    #[arg(long, value_delimiter = ',', default_value = "10,64,256,1024", value_parser = parse_positive)]
    points: Vec<usize>,
    /// Exact sampling sizes in residual rows.
    #[arg(long, value_delimiter = ',', default_value = "29,64,256,1024,3072", value_parser = parse_budget)]
    exact: Vec<usize>,
    #[arg(long, default_value_t = 100, value_parser = parse_positive)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_CLUSTER_COUNT)]
    clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct DisplaceArgs {
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long, value_delimiter = ',', default_value = "29,64,256,1024", value_parser = parse_budget)]
    m: Vec<usize>,
    /// Rotation noise levels in degrees.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2,4")]
    noise: Vec<f64>,
    #[arg(long, default_value_t = 100, value_parser = parse_positive)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_CLUSTER_COUNT)]
    clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct DownsampleArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target_pose: Option<PathBuf>,
    #[arg(long)]
    source_pose: Option<PathBuf>,
    #[arg(long, default_value_t = 29, value_parser = parse_budget)]
    m: usize,
    #[arg(long, default_value_t = DEFAULT_CLUSTER_COUNT)]
    clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    max_dist: f64,
    #[arg(long, default_value_t = DEFAULT_K_NEIGHBORS)]
    k_neighbors: usize,
    /// Output JSON file.
    #[arg(long, default_value = "factor.json")]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long, default_value_t = 20, value_parser = parse_positive)]
    frames: usize,
    #[arg(long, default_value_t = 4000)]
    points: usize,
    /// Exact row budgets, one run each.
    #[arg(long, value_delimiter = ',', value_parser = parse_budget)]
    m: Vec<usize>,
    /// Also run with full factors.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100, value_parser = parse_positive)]
    max_iterations: usize,
    /// Recompute whitening matrices at every linearization.
    #[arg(long)]
    refresh_whitener: bool,
    #[arg(long, default_value_t = 0.5)]
    max_dist: f64,
    #[arg(long, default_value_t = 0.3)]
    min_overlap: f64,
    #[arg(long, default_value_t = DEFAULT_CLUSTER_COUNT)]
    clusters: usize,
    /// Read a sequence written by `synth` instead of generating one.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K_NEIGHBORS)]
    k_neighbors: usize,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20, value_parser = parse_positive)]
    frames: usize,
    #[arg(long, default_value_t = 4000)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the two-frame street pair instead of the loop.
    #[arg(long)]
    pair: bool,
    #[arg(long, default_value = "synthetic")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = ["warn", "info", "debug", "trace"][usize::from(cli.verbose).min(3)];
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Kld(a) => cmd_kld(a),
        Command::Displace(a) => cmd_displace(a),
        Command::Downsample(a) => cmd_downsample(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}

fn write_report(out: &Path, name: &str, report: &EvalReport) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    report.write_json(out.join(format!("{name}.json")))?;
    report.write_csv(out.join(format!("{name}.csv")))?;
    report.write_summary_csv(out.join(format!("{name}_summary.csv")))?;
    print_checks(&report.checks);
    Ok(())
}

fn write_timing(out: &Path, name: &str, timing: &TimingReport) -> anyhow::Result<()> {
    timing.write_json(out.join(format!("{name}_timing.json")))?;
    timing.write_csv(out.join(format!("{name}_timing.csv")))?;
    print_checks(&timing.checks);
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> anyhow::Result<bool> {
    let cfg = ValidateConfig {
        trials: a.trials,
        rows: a.n,
        targets: a.m,
        clusters: a.clusters,
        seed: a.seed,
        nullspace: a.nullspace.into(),
    };
    let (report, timing) = evalbench::validate_random(&cfg)?;
    write_report(&a.out, "validate", &report)?;
    timing.write_json(a.out.join("validate_timing.json"))?;
    Ok(report.passed)
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<bool> {
    let cfg = BenchConfig {
        targets: a.m,
        trials: a.trials,
        rows: a.n,
        clusters: a.clusters,
        seed: a.seed,
        methods: a.methods.into_iter().map(Into::into).collect(),
        warmup: a.warmup,
    };
    let (report, timing) = evalbench::bench(&cfg)?;
    write_report(&a.out, "bench", &report)?;
    write_timing(&a.out, "bench", &timing)?;
    for s in &timing.summary {
        println!("{}: median {:.2} ms (nullspace {:.2} ms)", s.group, s.median_total_ms, s.median_nullspace_ms);
    }
    Ok(report.passed && timing.checks.iter().all(|c| c.passed))
}

fn load_cloud(path: &Path, k: usize) -> anyhow::Result<GaussianPointCloud> {
    let points = read_points(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(estimate_covariances(&points, k)?)
}

fn load_pose(path: Option<&PathBuf>) -> anyhow::Result<Pose> {
    match path {
        Some(p) => read_pose(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(Pose::identity()),
    }
}

impl PairArgs {
    fn load(&self) -> anyhow::Result<PairData> {
        let pair = match (&self.target, &self.source) {
            (Some(t), Some(s)) => PairData::new(
                load_cloud(t, self.k_neighbors)?,
                load_cloud(s, self.k_neighbors)?,
                load_pose(self.target_pose.as_ref())?,
                load_pose(self.source_pose.as_ref())?,
                self.max_dist,
            )?,
            _ => PairData::synthetic(self.pair_points, self.pair_seed, self.max_dist)?,
        };
        log::info!("pair with {} correspondences", pair.len());
        Ok(pair)
    }
}

fn cmd_kld(a: KldArgs) -> anyhow::Result<bool> {
    let pair = a.pair.load()?;
    let cfg = KldConfig {
        random_points: a.points,
        exact_targets: a.exact,
        trials: a.trials,
        clusters: a.clusters,
        seed: a.seed,
        include_all_points: true,
    };
    let report = evalbench::kld_table(&pair, &cfg)?;
    write_report(&a.out, "kld", &report)?;
    for g in &report.summary {
        println!("{}: {:.3} ± {:.3} ({} degenerate)", g.group, g.mean, g.std, g.degenerate);
    }
    Ok(report.passed)
}

fn cmd_displace(a: DisplaceArgs) -> anyhow::Result<bool> {
    let pair = a.pair.load()?;
    let cfg = DisplacementConfig { budgets: a.m, noise_deg: a.noise, trials: a.trials, clusters: a.clusters, seed: a.seed };
    let report = evalbench::displacement_error_sweep(&pair, &cfg)?;
    write_report(&a.out, "displacement", &report)?;
    Ok(report.passed)
}

#[derive(Serialize)]
struct DownsampleSummary {
    correspondences: usize,
    residual_rows: usize,
    selected_rows: usize,
    selected_points: usize,
    /// Selected rows per residual axis.
    axes: [usize; 3],
    fully_selected_fraction: f64,
    relative_error: f64,
}

#[derive(Serialize)]
struct DownsampleOutput<'a> {
    version: &'a str,
    config: &'a DownsampleConfig,
    summary: DownsampleSummary,
    factor: &'a SampledFactor,
}

fn cmd_downsample(a: DownsampleArgs) -> anyhow::Result<bool> {
    let target = load_cloud(&a.target, a.k_neighbors)?;
    let source = load_cloud(&a.source, a.k_neighbors)?;
    let pose_t = load_pose(a.target_pose.as_ref())?;
    let pose_s = load_pose(a.source_pose.as_ref())?;
    let mut cfg = DownsampleConfig::new(a.m).with_seed(a.seed).with_max_distance(a.max_dist);
    cfg.coreset.cluster_count = a.clusters;
    let factor = exact_downsample(0, 1, &target, &source, &pose_t, &pose_s, &cfg)?;
    let full = FullFactor::new(0, 1, &target, &source, &pose_t, &pose_s, a.max_dist)?;
    let q_full = full.relinearize(&target, &source, &pose_t, &pose_s, WhitenerPolicy::Fixed);
    let q = factor.relinearize(&target, &source, &pose_t, &pose_s, WhitenerPolicy::Fixed)?;
    let err = q.relative_error(&q_full);
    let summary = DownsampleSummary {
        correspondences: full.correspondences.len(),
        residual_rows: 3 * full.correspondences.len(),
        selected_rows: factor.len(),
        selected_points: factor.correspondences.len(),
        axes: factor.axes_histogram(),
        fully_selected_fraction: factor.fully_selected_fraction(),
        relative_error: err,
    };
    println!(
        "{} of {} residual rows selected from {} points, relative error {:.3e}",
        summary.selected_rows, summary.residual_rows, summary.selected_points, err
    );
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let out = DownsampleOutput { version: exactcoreset::VERSION, config: &cfg, summary, factor: &factor };
    fs::write(&a.out, serde_json::to_string_pretty(&out)? + "\n")?;
    Ok(err < VALIDATION_TOLERANCE)
}

fn frame_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("frame_{k:03}.ply"))
}

fn read_sequence(dir: &Path, k_neighbors: usize) -> anyhow::Result<SyntheticSequence> {
    let poses = |name: &str| -> anyhow::Result<Vec<Pose>> {
        let p = dir.join(name);
        Ok(read_tum(&p).with_context(|| format!("reading {}", p.display()))?.into_iter().map(|(_, x)| x).collect())
    };
    let ground_truth = poses("ground_truth.txt")?;
    let initial = poses("initial.txt")?;
    if ground_truth.len() != initial.len() {
        bail!("{} ground-truth poses but {} initial poses", ground_truth.len(), initial.len());
    }
    let clouds = (0..ground_truth.len()).map(|k| load_cloud(&frame_path(dir, k), k_neighbors)).collect::<anyhow::Result<_>>()?;
    Ok(SyntheticSequence { clouds, ground_truth, initial })
}

fn cmd_optimize(a: OptimizeArgs) -> anyhow::Result<bool> {
    let (full, budgets) = if a.m.is_empty() && !a.full { (true, vec![29]) } else { (a.full, a.m.clone()) };
    let cfg = TrajectoryConfig {
        scene: SceneConfig { frames: a.frames, points_per_frame: a.points, seed: a.seed, ..SceneConfig::default() },
        full,
        budgets,
        clusters: a.clusters,
        max_correspondence_distance: a.max_dist,
        min_overlap: a.min_overlap,
        optimizer: OptimizerConfig {
            max_iterations: a.max_iterations,
            whitener: if a.refresh_whitener { WhitenerPolicy::Refresh } else { WhitenerPolicy::Fixed },
            ..OptimizerConfig::default()
        },
        seed: a.seed,
    };
    let (report, outcome) = match &a.input {
        Some(dir) => evalbench::trajectory_comparison_on(&cfg, read_sequence(dir, a.k_neighbors)?)?,
        None => evalbench::trajectory_comparison(&cfg)?,
    };
    write_report(&a.out, "trajectory", &report)?;
    write_tum(a.out.join("ground_truth.txt"), &outcome.sequence.ground_truth)?;
    write_tum(a.out.join("initial.txt"), &outcome.sequence.initial)?;
    let mut trace = csv::Writer::from_path(a.out.join("cost_trace.csv"))?;
    trace.write_record(["run", "step", "cost"])?;
    for r in &outcome.runs {
        let label = r.label().replace(['/', '='], "_");
        write_tum(a.out.join(format!("trajectory_{label}.txt")), &r.result.poses)?;
        for (k, c) in r.result.cost_trace.iter().enumerate() {
            trace.write_record([r.label(), k.to_string(), format!("{c:e}")])?;
        }
        println!(
            "{}: ATE {:.5} (initial {:.5}), {} iterations, {} rows evaluated",
            r.label(),
            r.ate.rmse,
            r.initial_ate.rmse,
            r.result.iterations,
            r.result.rows_evaluated
        );
    }
    trace.flush()?;
    println!("{} frames, {} factors", outcome.sequence.clouds.len(), outcome.pairs.len());
    Ok(report.passed)
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<bool> {
    let seq = if a.pair {
        street_pair(a.points, a.seed)?
    } else {
        SyntheticSequence::generate(&SceneConfig {
            frames: a.frames,
            points_per_frame: a.points,
            seed: a.seed,
            ..SceneConfig::default()
        })?
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (k, c) in seq.clouds.iter().enumerate() {
        write_ply(frame_path(&a.out, k), c.means())?;
        write_pose(a.out.join(format!("frame_{k:03}_pose.json")), &seq.ground_truth[k])?;
    }
    write_tum(a.out.join("ground_truth.txt"), &seq.ground_truth)?;
    write_tum(a.out.join("initial.txt"), &seq.initial)?;
    println!("wrote {} frames to {}", seq.clouds.len(), a.out.display());
    Ok(true)
}
