//! Command-line front end of the `voxreg` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{ate, kitti_stats, AteResult, KittiStats};
use crate::io::{
    change_body_frame, list_scans, read_kitti_calibration, read_trajectory, read_velodyne_bin,
    write_trajectory, TrajectoryFormat,
};
use crate::metrics::{CostKind, CostParams};
use crate::odometry::{run_odometry, FrameTiming, MotionModel, OdometryRun, PipelineConfig, TimingStats, VoxelMap};
use crate::optimizer::{check_derivatives, Objective};
use crate::se3::Pose;
use crate::synthetic::{random_correspondences, random_pose, simulate_sequence, LidarModel};
use crate::trajectory::Trajectory;
use crate::voxel::PointCloud;

#[derive(Debug, Parser)]
#[command(name = "voxreg", version, about = "Voxel Gaussian registration, LiDAR odometry and KITTI evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Pipeline settings. Precedence: defaults, then `--config`, then flags.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat key-value config file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub voxel_size: Option<f64>,
    #[arg(long, global = true)]
    pub map_voxel_size: Option<f64>,
    #[arg(long, global = true)]
    pub min_points: Option<usize>,
    /// icp, ndt, gicp, litamin, litamin2-icp or litamin2-icp-cov.
    #[arg(long, global = true)]
    pub cost: Option<CostKind>,
    #[arg(long, global = true)]
    pub sigma_icp: Option<f64>,
    #[arg(long, global = true)]
    pub sigma_cov: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Correspondence gate in meters (default: twice the voxel size).
    #[arg(long, global = true)]
    pub max_corr_dist: Option<f64>,
    /// Newton iterations per correspondence round.
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    #[arg(long, global = true)]
    pub step_tolerance: Option<f64>,
    #[arg(long, global = true)]
    pub hessian_reg: Option<f64>,
    #[arg(long, global = true)]
    pub max_step: Option<f64>,
    /// identity or constant-velocity.
    #[arg(long, global = true)]
    pub motion_model: Option<MotionModel>,
    #[arg(long, global = true)]
    pub max_rounds: Option<usize>,
    #[arg(long, global = true)]
    pub max_map_voxels: Option<usize>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$field = v; })*
            };
        }
        set!(
            voxel_size => voxel_size,
            min_points => min_points,
            cost => cost,
            sigma_icp => sigma_icp,
            sigma_cov => sigma_cov,
            lambda => lambda,
            max_iters => max_iterations,
            step_tolerance => step_norm_tolerance,
            hessian_reg => hessian_regularization,
            max_step => max_step_norm,
            motion_model => motion_model,
            max_rounds => max_rounds,
        );
        if self.map_voxel_size.is_some() {
            cfg.map_voxel_size = self.map_voxel_size;
        }
        if self.max_corr_dist.is_some() {
            cfg.max_correspondence_distance = self.max_corr_dist;
        }
        if self.max_map_voxels.is_some() {
            cfg.max_map_voxels = self.max_map_voxels;
        }
        if self.output.is_some() {
            cfg.output_dir = self.output.clone();
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// KITTI sequence directory (containing `velodyne/`) or a directory of `.bin` scans.
    #[arg(long)]
    pub sequence: Option<PathBuf>,
    /// Ground-truth poses (KITTI or TUM rows). Looked up next to a KITTI
    /// sequence (`../../poses/<seq>.txt`) when omitted.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    /// Use a simulated drive of this many frames instead of a dataset.
    #[arg(long, conflicts_with = "sequence")]
    pub synthetic: Option<usize>,
    /// Seed of the simulated drive.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run odometry over a sequence; writes the trajectory and timing.
    Odometry {
        #[command(flatten)]
        source: SourceArgs,
        /// kitti or tum.
        #[arg(long)]
        format: Option<TrajectoryFormat>,
        /// Also write the final voxel map as CSV.
        #[arg(long)]
        dump_map: bool,
    },
    /// Compare an estimated trajectory file against ground truth.
    Evaluate {
        estimated: PathBuf,
        truth: PathBuf,
    },
    /// Per-stage timing histogram of an odometry run.
    Bench {
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Repeat odometry over several voxel sizes and write a CSV summary.
    VoxelSweep {
        #[command(flatten)]
        source: SourceArgs,
        /// Comma-separated voxel sizes in meters.
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,2.5,3,3.5,4,4.5,5,5.5,6,6.5,7,7.5,8,8.5,9,9.5,10")]
        sizes: Vec<f64>,
    },
    /// Compare analytic derivatives with finite differences on random problems.
    CheckDerivatives {
        #[arg(long, default_value_t = 100)]
        configs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        fd_step: f64,
        #[arg(long, default_value_t = 1e-5)]
        gradient_tolerance: f64,
        #[arg(long, default_value_t = 1e-4)]
        hessian_tolerance: f64,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    let cfg = cli.overrides.resolve()?;
    let cost_flag = cli.overrides.cost;
    match cli.command {
        Command::Odometry { source, format, dump_map } => odometry(cfg, &source, format, dump_map),
        Command::Evaluate { estimated, truth } => evaluate(&cfg, &estimated, &truth),
        Command::Bench { source } => bench(cfg, &source),
        Command::VoxelSweep { source, sizes } => voxel_sweep(cfg, &source, &sizes),
        Command::CheckDerivatives {
            configs,
            seed,
            fd_step,
            gradient_tolerance,
            hessian_tolerance,
        } => derivatives(&cfg, cost_flag, configs, seed, fd_step, gradient_tolerance, hessian_tolerance),
    }
}

type Scans = Box<dyn Iterator<Item = Result<PointCloud>>>;

/// Ground truth and the frame trajectories are reported in.
struct Reference {
    truth: Option<Trajectory>,
    /// Sensor-to-reporting-frame transform (KITTI camera frame when a
    /// calibration file is present).
    body: Option<Pose>,
}

impl Reference {
    fn report_frame(&self, traj: &Trajectory) -> Trajectory {
        match &self.body {
            Some(x) => change_body_frame(traj, x),
            None => traj.clone(),
        }
    }

    fn truth_for(&self, frames: usize) -> Option<Trajectory> {
        let truth = self.truth.as_ref()?;
        let mut out = Trajectory::new();
        for (i, p) in truth.entries().iter().take(frames) {
            out.push(*i, *p).ok()?;
        }
        Some(out)
    }
}

fn open_input(cfg: &RunConfig, source: &SourceArgs) -> Result<(Scans, Reference)> {
    let max_frames = source.max_frames.or(cfg.max_frames).unwrap_or(usize::MAX);
    if let Some(frames) = source.synthetic {
        let seq = simulate_sequence(frames.min(max_frames), 1.0, &LidarModel::default(), source.seed);
        let reference = Reference {
            truth: Some(seq.truth),
            body: None,
        };
        return Ok((Box::new(seq.scans.into_iter().map(Ok)), reference));
    }
    let dir = source
        .sequence
        .clone()
        .or_else(|| cfg.sequence_dir.clone())
        .ok_or_else(|| Error::invalid("no --sequence, --synthetic or sequence_dir given"))?;
    if !dir.is_dir() {
        return Err(Error::invalid(format!("sequence directory {} does not exist", dir.display())));
    }
    let files = list_scans(&dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no .bin scans under {}", dir.display())));
    }
    let calib = dir.join("calib.txt");
    let body = if calib.is_file() { Some(read_kitti_calibration(&calib)?) } else { None };
    let gt_path = source
        .ground_truth
        .clone()
        .or_else(|| cfg.ground_truth.clone())
        .or_else(|| kitti_poses_path(&dir));
    let truth = match gt_path {
        Some(p) => Some(read_trajectory(&p)?),
        None => None,
    };
    Ok((
        Box::new(files.into_iter().take(max_frames).map(read_velodyne_bin)),
        Reference { truth, body },
    ))
}

/// `<root>/poses/<seq>.txt` for a `<root>/sequences/<seq>` directory.
fn kitti_poses_path(dir: &Path) -> Option<PathBuf> {
    let dir = dir.canonicalize().ok()?;
    let seq = dir.file_name()?;
    let root = dir.parent()?.parent()?;
    let p = root.join("poses").join(seq).with_extension("txt");
    p.is_file().then_some(p)
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("voxreg-output"));
    fs::create_dir_all(&dir).map_err(Error::io_at(&dir))?;
    Ok(dir)
}

#[derive(Debug, Serialize)]
pub struct Evaluation {
    pub kitti: Option<KittiStats>,
    pub kitti_note: Option<String>,
    pub ate: Option<AteResult>,
    pub ate_note: Option<String>,
}

/// Runs both evaluators; too-short or degenerate inputs are reported, not fatal.
pub fn evaluate_trajectories(estimated: &Trajectory, truth: &Trajectory) -> Result<Evaluation> {
    let soft = |e: Error| match e {
        Error::TooShort(_) | Error::DegenerateAlignment(_) => Ok(e.to_string()),
        other => Err(other),
    };
    let (kitti, kitti_note) = match kitti_stats(estimated, truth) {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(soft(e)?)),
    };
    let (ate, ate_note) = match ate(estimated, truth) {
        Ok(a) => (Some(a), None),
        Err(e) => (None, Some(soft(e)?)),
    };
    Ok(Evaluation {
        kitti,
        kitti_note,
        ate,
        ate_note,
    })
}

fn print_evaluation(ev: &Evaluation) {
    match (&ev.kitti, &ev.kitti_note) {
        (Some(k), _) => {
            println!(
                "kitti: rotation {:.6} deg/100m, translation {:.6} % ({} segments)",
                k.rotation_error, k.translation_error, k.samples
            );
            for s in &k.per_length {
                println!(
                    "  {:>4.0} m: rotation {:.6} deg/100m, translation {:.6} % ({} segments)",
                    s.length, s.rotation_error, s.translation_error, s.samples
                );
            }
        }
        (None, Some(note)) => println!("kitti: skipped ({note})"),
        _ => {}
    }
    match (&ev.ate, &ev.ate_note) {
        (Some(a), _) => println!(
            "ate: rotation {:.6} deg, translation {:.6} m",
            a.rotation_rmse, a.translation_rmse
        ),
        (None, Some(note)) => println!("ate: skipped ({note})"),
        _ => {}
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(Error::io_at(path))?;
    Ok(())
}

fn evaluate(cfg: &RunConfig, estimated: &Path, truth: &Path) -> Result<i32> {
    let est = read_trajectory(estimated)?;
    let gt = read_trajectory(truth)?;
    let ev = evaluate_trajectories(&est, &gt)?;
    print_evaluation(&ev);
    if cfg.output_dir.is_some() {
        write_json(&output_dir(cfg)?.join("evaluation.json"), &ev)?;
    }
    Ok(0)
}

#[derive(Serialize)]
struct TimingReport<'a> {
    config: &'a PipelineConfig,
    stats: &'a TimingStats,
    frames: &'a [FrameTiming],
}

fn odometry(
    cfg: RunConfig,
    source: &SourceArgs,
    format: Option<TrajectoryFormat>,
    dump_map: bool,
) -> Result<i32> {
    cfg.validate()?;
    let pipeline = cfg.pipeline();
    let (scans, reference) = open_input(&cfg, source)?;
    let out = output_dir(&cfg)?;
    let run = run_odometry(scans, &pipeline)?;

    // Outputs are written before any stream error is reported.
    let traj = reference.report_frame(&run.trajectory);
    write_trajectory(&traj, out.join("trajectory.txt"), format.unwrap_or(cfg.trajectory_format))?;
    write_json(
        &out.join("timing.json"),
        &TimingReport {
            config: &pipeline,
            stats: &run.stats,
            frames: &run.timing,
        },
    )?;
    if dump_map || cfg.dump_map {
        write_map_csv(&run.map, &out.join("map.csv"))?;
    }
    println!(
        "frames {} fps {:.1} mean reduction {:.3} %",
        run.stats.frames,
        run.stats.fps,
        100.0 * run.stats.mean_reduction_ratio
    );
    if cfg.evaluate {
        if let Some(gt) = reference.truth_for(run.trajectory.len()) {
            let ev = evaluate_trajectories(&traj, &gt)?;
            print_evaluation(&ev);
            write_json(&out.join("evaluation.json"), &ev)?;
        }
    }
    match run.stream_error {
        Some(e) => Err(e),
        None => Ok(0),
    }
}

fn write_map_csv(map: &VoxelMap, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["i", "j", "k", "count", "x", "y", "z", "cxx", "cxy", "cxz", "cyy", "cyz", "czz"])
        .map_err(csv_error)?;
    for (idx, g) in map.voxels() {
        let c = &g.cov;
        let mut row = vec![idx.i.to_string(), idx.j.to_string(), idx.k.to_string(), g.count.to_string()];
        row.extend(
            [g.mean.x, g.mean.y, g.mean.z, c[(0, 0)], c[(0, 1)], c[(0, 2)], c[(1, 1)], c[(1, 2)], c[(2, 2)]]
                .iter()
                .map(|v| v.to_string()),
        );
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("csv: {other:?}")),
    }
}

/// Bucket upper edges of the timing histogram, in milliseconds.
const HISTOGRAM_EDGES_MS: [f64; 12] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0];

#[derive(Debug, Serialize)]
pub struct StageHistogram {
    pub stage: &'static str,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub max_ms: f64,
    /// Counts per bucket; bucket `i` holds samples up to `edges_ms[i]`, the
    /// last one everything above.
    pub counts: Vec<usize>,
}

pub fn stage_histogram(stage: &'static str, samples_s: &[f64]) -> StageHistogram {
    let mut ms: Vec<f64> = samples_s.iter().map(|s| s * 1e3).collect();
    ms.sort_by(f64::total_cmp);
    let pick = |q: f64| {
        if ms.is_empty() {
            0.0
        } else {
            ms[((ms.len() - 1) as f64 * q).round() as usize]
        }
    };
    let mut counts = vec![0; HISTOGRAM_EDGES_MS.len() + 1];
    for v in &ms {
        let b = HISTOGRAM_EDGES_MS.iter().position(|e| v <= e).unwrap_or(HISTOGRAM_EDGES_MS.len());
        counts[b] += 1;
    }
    StageHistogram {
        stage,
        mean_ms: if ms.is_empty() { 0.0 } else { ms.iter().sum::<f64>() / ms.len() as f64 },
        min_ms: pick(0.0),
        p50_ms: pick(0.5),
        p90_ms: pick(0.9),
        max_ms: pick(1.0),
        counts,
    }
}

fn bench(cfg: RunConfig, source: &SourceArgs) -> Result<i32> {
    cfg.validate()?;
    let (scans, _) = open_input(&cfg, source)?;
    // Load everything first so file reads stay out of the measurements.
    let scans: Vec<PointCloud> = scans.collect::<Result<_>>()?;
    let run = run_odometry(scans.into_iter().map(Ok), &cfg.pipeline())?;
    type Stage = (&'static str, fn(&FrameTiming) -> f64);
    let stages: [Stage; 4] = [
        ("voxelize", |f| f.voxelize_s),
        ("register", |f| f.register_s),
        ("fuse", |f| f.fuse_s),
        ("total", |f| f.total_s),
    ];
    let histograms: Vec<StageHistogram> = stages
        .iter()
        .map(|(name, get)| stage_histogram(name, &run.timing.iter().map(get).collect::<Vec<_>>()))
        .collect();
    println!("frames {} fps {:.1}", run.stats.frames, run.stats.fps);
    let header: Vec<String> = HISTOGRAM_EDGES_MS
        .iter()
        .map(|e| format!("<={e}"))
        .chain(std::iter::once(">".into()))
        .collect();
    println!(
        "{:<9} {:>9} {:>9} {:>9} {:>9}  buckets(ms) {}",
        "stage", "mean_ms", "p50_ms", "p90_ms", "max_ms",
        header.join(" ")
    );
    for h in &histograms {
        let counts: Vec<String> = h.counts.iter().map(|c| c.to_string()).collect();
        println!(
            "{:<9} {:>9.3} {:>9.3} {:>9.3} {:>9.3}  {}",
            h.stage, h.mean_ms, h.p50_ms, h.p90_ms, h.max_ms,
            counts.join(" ")
        );
    }
    if cfg.output_dir.is_some() {
        write_json(
            &output_dir(&cfg)?.join("bench.json"),
            &json!({
                "stats": run.stats,
                "edges_ms": HISTOGRAM_EDGES_MS,
                "stages": histograms,
            }),
        )?;
    }
    Ok(0)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub voxel_size: f64,
    pub total_time_s: f64,
    pub fps: f64,
    pub rot_err_deg_per_100m: Option<f64>,
    pub trans_err_pct: Option<f64>,
    /// Mean voxels per input point, in percent.
    pub reduction_ratio: f64,
}

pub const SWEEP_HEADER: &str = "voxel_size,total_time_s,fps,rot_err_deg_per_100m,trans_err_pct,reduction_ratio";

/// One odometry run per voxel size over in-memory scans. The correspondence
/// gate follows the voxel size unless `cfg` fixes it.
pub fn sweep(
    cfg: &RunConfig,
    scans: &[PointCloud],
    truth: Option<&Trajectory>,
    to_report: impl Fn(&Trajectory) -> Trajectory,
    sizes: &[f64],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut c = cfg.clone();
        c.voxel_size = size;
        let pipeline = c.pipeline();
        let run: OdometryRun = run_odometry(scans.iter().cloned().map(Ok), &pipeline)?;
        let kitti = match truth {
            Some(gt) => kitti_stats(&to_report(&run.trajectory), gt).ok(),
            None => None,
        };
        log::info!("voxel {size} m: {:.1} fps", run.stats.fps);
        rows.push(SweepRow {
            voxel_size: size,
            total_time_s: run.stats.total_s,
            fps: run.stats.fps,
            rot_err_deg_per_100m: kitti.as_ref().map(|k| k.rotation_error),
            trans_err_pct: kitti.as_ref().map(|k| k.translation_error),
            reduction_ratio: 100.0 * run.stats.mean_reduction_ratio,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_error)?;
    w.write_record(SWEEP_HEADER.split(',')).map_err(csv_error)?;
    for r in rows {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.voxel_size.to_string(),
            r.total_time_s.to_string(),
            r.fps.to_string(),
            opt(r.rot_err_deg_per_100m),
            opt(r.trans_err_pct),
            r.reduction_ratio.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn voxel_sweep(cfg: RunConfig, source: &SourceArgs, sizes: &[f64]) -> Result<i32> {
    cfg.validate()?;
    if sizes.is_empty() || sizes.iter().any(|s| s.is_nan() || *s <= 0.0) {
        return Err(Error::invalid("voxel sizes must be positive"));
    }
    let (scans, reference) = open_input(&cfg, source)?;
    let out = output_dir(&cfg)?;
    let scans: Vec<PointCloud> = scans.collect::<Result<_>>()?;
    let truth = reference.truth_for(scans.len());
    let rows = sweep(&cfg, &scans, truth.as_ref(), |t| reference.report_frame(t), sizes)?;
    let path = out.join("voxel_sweep.csv");
    write_sweep_csv(&rows, &path)?;
    println!("{SWEEP_HEADER}");
    for r in &rows {
        println!(
            "{},{:.3},{:.1},{},{},{:.3}",
            r.voxel_size,
            r.total_time_s,
            r.fps,
            r.rot_err_deg_per_100m.map(|v| format!("{v:.3}")).unwrap_or_default(),
            r.trans_err_pct.map(|v| format!("{v:.3}")).unwrap_or_default(),
            r.reduction_ratio
        );
    }
    Ok(0)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DerivativeSummary {
    pub configs: usize,
    pub max_gradient_deviation: f64,
    pub max_hessian_deviation: f64,
}

/// Derivative check over `configs` random problems cycling through every
/// cost kind, or only `kind` when given.
pub fn derivative_sweep(
    params: &CostParams,
    kind: Option<CostKind>,
    configs: usize,
    seed: u64,
    fd_step: f64,
) -> Result<DerivativeSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = DerivativeSummary {
        configs,
        max_gradient_deviation: 0.0,
        max_hessian_deviation: 0.0,
    };
    for c in 0..configs {
        let k = kind.unwrap_or(CostKind::ALL[c % CostKind::ALL.len()]);
        let truth = random_pose(&mut rng, 0.5, 2.0);
        let n = 5 + c % 20;
        let corr = random_correspondences(&mut rng, n, &truth, 0.3, 0.2);
        let at = random_pose(&mut rng, 0.1, 0.3).compose(&truth);
        let obj = Objective::new(&corr, CostParams { kind: k, ..*params })?;
        let report = check_derivatives(&obj, &at, fd_step)?;
        summary.max_gradient_deviation = summary.max_gradient_deviation.max(report.gradient_deviation);
        summary.max_hessian_deviation = summary.max_hessian_deviation.max(report.hessian_deviation);
    }
    Ok(summary)
}

fn derivatives(
    cfg: &RunConfig,
    kind: Option<CostKind>,
    configs: usize,
    seed: u64,
    fd_step: f64,
    gradient_tolerance: f64,
    hessian_tolerance: f64,
) -> Result<i32> {
    let params = cfg.pipeline().cost;
    params.validate()?;
    let summary = derivative_sweep(&params, kind, configs, seed, fd_step)?;
    let pass = summary.max_gradient_deviation <= gradient_tolerance
        && summary.max_hessian_deviation <= hessian_tolerance;
    println!(
        "{} configs: max gradient deviation {:.3e} (tol {gradient_tolerance:.0e}), max Hessian deviation {:.3e} (tol {hessian_tolerance:.0e}): {}",
        summary.configs,
        summary.max_gradient_deviation,
        summary.max_hessian_deviation,
        if pass { "PASS" } else { "FAIL" }
    );
    if cfg.output_dir.is_some() {
        write_json(&output_dir(cfg)?.join("derivatives.json"), &summary)?;
    }
    Ok(if pass { 0 } else { 1 })
}
