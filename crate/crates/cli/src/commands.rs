//! Subcommand implementations.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, Context as _};
use clap::Args;

use mouselift::camera::CalibrationDoc;
use mouselift::gait::{spectrum, stride_report, FootTrace};
use mouselift::metrics::{
    default_oks_groups, oks_accuracy_table, registered_3d_error, KeypointFrame,
    DEFAULT_OKS_FALLOFF, DEFAULT_OKS_THRESHOLDS,
};
use mouselift::optimizer::{fit_pose as core_fit_pose, FitConfig};
use mouselift::pipeline::formats::{
    read_toml, write_toml, FrameDiagnostics, MultiviewLabelFile, PoseFile, PoseFrame, TrackFile,
    TrackFrame,
};
use mouselift::pipeline::{
    export_features as core_export_features, synth_generate, CameraLayout, Representation,
    SynthSpec,
};
use mouselift::prior::{fit_gmm, GaussianMixture, PriorDoc};
use mouselift::skeleton::{Skeleton, SkeletonDoc};
use mouselift::triangulation::triangulate_pose;
use mouselift::{CameraModel, KeypointName};

use crate::config::FileConfig;
use crate::UsageError;

pub struct Context {
    pub seed: u64,
    pub threads: usize,
    pub config: FileConfig,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn load_skeleton(path: Option<&Path>) -> anyhow::Result<Skeleton> {
    match path {
        Some(p) => {
            let doc: SkeletonDoc = read_toml(p)?;
            Ok(Skeleton::from_doc(&doc)?)
        }
        None => Ok(Skeleton::default_mouse()),
    }
}

fn load_cameras(path: &Path) -> anyhow::Result<Vec<CameraModel>> {
    let doc: CalibrationDoc = read_toml(path)?;
    Ok(doc.to_cameras()?)
}

fn pick_camera(cameras: Vec<CameraModel>, id: Option<&str>) -> anyhow::Result<CameraModel> {
    match id {
        Some(id) => cameras
            .into_iter()
            .find(|c| c.id.as_deref() == Some(id))
            .ok_or_else(|| usage(format!("calibration has no camera '{id}'"))),
        None => {
            if cameras.len() == 1 {
                Ok(cameras.into_iter().next().unwrap())
            } else {
                Err(usage(
                    "calibration holds several cameras; pass --camera-id",
                ))
            }
        }
    }
}

/// Writes to the path, or to standard output when the path is absent.
fn emit(path: Option<&Path>, content: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, content).with_context(|| format!("cannot write {}", p.display()))
        }
        None => {
            std::io::stdout()
                .write_all(content.as_bytes())
                .context("cannot write to stdout")
        }
    }
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 24.0)]
    fps: f64,
    #[arg(long, default_value_t = 3.0)]
    gait_hz: f64,
    #[arg(long, default_value_t = 20.0)]
    belt_speed: f64,
    /// Gaussian pixel noise sigma.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Per-frame, per-joint dropout probability.
    #[arg(long, default_value_t = 0.0)]
    occlusion: f64,
    /// Per-joint overrides, e.g. --occlude-joint left_wrist=1.0 (repeatable).
    #[arg(long = "occlude-joint")]
    occlude_joint: Vec<String>,
    #[arg(long, value_enum, default_value_t = LayoutArg::SingleTopDown)]
    layout: LayoutArg,
    /// Joint-angle envelope scale (1 keeps poses single-view identifiable).
    #[arg(long, default_value_t = 1.0)]
    amplitude_scale: f64,
    /// Planar body wander in millimeters (0 = treadmill).
    #[arg(long, default_value_t = 30.0)]
    wander: f64,
    /// Resting-posture offset range in radians.
    #[arg(long, default_value_t = 0.0)]
    posture_bias: f64,
    /// Skeleton file; the bundled default when absent.
    #[arg(long)]
    skeleton: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LayoutArg {
    SingleTopDown,
    ThreeViewRig,
}

pub fn synth(ctx: &Context, args: SynthArgs) -> anyhow::Result<()> {
    let skeleton = load_skeleton(args.skeleton.as_deref())?;
    let mut spec = SynthSpec {
        seed: ctx.seed,
        frames: args.frames,
        fps: args.fps,
        gait_hz: args.gait_hz,
        belt_speed_cm_s: args.belt_speed,
        noise_px: args.noise,
        occlusion: args.occlusion,
        occlusion_per_joint: Vec::new(),
        layout: match args.layout {
            LayoutArg::SingleTopDown => CameraLayout::SingleTopDown,
            LayoutArg::ThreeViewRig => CameraLayout::ThreeViewRig,
        },
        amplitude_scale: args.amplitude_scale,
        wander_mm: args.wander,
        posture_bias: args.posture_bias,
    };
    for entry in &args.occlude_joint {
        let (name, prob) = entry
            .split_once('=')
            .ok_or_else(|| usage(format!("expected joint=probability, got '{entry}'")))?;
        let joint = KeypointName::from_str(name.trim())
            .map_err(|_| usage(format!("unknown joint '{name}'")))?;
        let probability: f64 = prob
            .trim()
            .parse()
            .map_err(|_| usage(format!("invalid probability '{prob}'")))?;
        spec.occlusion_per_joint
            .push(mouselift::pipeline::synth::OcclusionOverride { joint, probability });
    }

    let out = synth_generate(&spec, &skeleton)?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    write_toml(&args.out_dir.join("skeleton.toml"), &skeleton.to_doc())?;
    write_toml(
        &args.out_dir.join("calibration.toml"),
        &CalibrationDoc::from_cameras(&out.cameras),
    )?;
    out.truth.save(&args.out_dir.join("truth.track.toml"))?;
    for track in &out.observed {
        let id = track.camera_id.clone().unwrap_or_else(|| "camera".into());
        track.save(&args.out_dir.join(format!("observed_{id}.track.toml")))?;
    }
    if let Some(labels) = &out.labels {
        labels.save(&args.out_dir.join("labels.toml"))?;
    }
    log::info!(
        "wrote {} frames ({} cameras) to {}",
        args.frames,
        out.cameras.len(),
        args.out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit-prior

#[derive(Debug, Args)]
pub struct FitPriorArgs {
    /// Pose files (triangulated or externally authored), one or more.
    #[arg(long, required = true, num_args = 1..)]
    poses: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    components: usize,
    #[arg(long)]
    out: PathBuf,
}

pub fn fit_prior(ctx: &Context, args: FitPriorArgs) -> anyhow::Result<()> {
    let mut samples: Vec<Vec<f64>> = Vec::new();
    let mut skipped = 0usize;
    for path in &args.poses {
        let file = PoseFile::load(path)?;
        for frame in &file.frames {
            match frame.full_pose() {
                Some(pose) => samples.push(mouselift::skeleton::normalize_pose(&pose)?.to_vec()),
                None => skipped += 1,
            }
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} frames with missing joints");
    }
    let gmm = fit_gmm(&samples, args.components, ctx.seed)?;
    write_toml(&args.out, &gmm.to_doc())?;
    log::info!(
        "fitted {}-component prior on {} poses -> {}",
        args.components,
        samples.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit-pose

#[derive(Debug, Args)]
pub struct FitPoseArgs {
    /// Observed keypoint track.
    #[arg(long)]
    keypoints: PathBuf,
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    camera_id: Option<String>,
    #[arg(long)]
    skeleton: Option<PathBuf>,
    /// Prior file; omitting it forces a data-term-only fit.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Prior weight; defaults to the config value (or 1 with a prior,
    /// 0 without).
    #[arg(long)]
    lambda: Option<f64>,
    /// Fixed camera distance in millimeters.
    #[arg(long)]
    distance: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    visibility_threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn build_fit_config(ctx: &Context, args: &FitPoseArgs, has_prior: bool) -> FitConfig {
    let defaults = FitConfig::default();
    let file = &ctx.config.fit;
    let lambda = args
        .lambda
        .or(file.lambda)
        .unwrap_or(if has_prior { defaults.lambda } else { 0.0 });
    FitConfig {
        lambda,
        fixed_distance_mm: args
            .distance
            .or(file.distance_mm)
            .unwrap_or(defaults.fixed_distance_mm),
        max_iterations: args
            .max_iterations
            .or(file.max_iterations)
            .unwrap_or(defaults.max_iterations),
        step_tolerance: file.step_tolerance.unwrap_or(defaults.step_tolerance),
        objective_tolerance: file
            .objective_tolerance
            .unwrap_or(defaults.objective_tolerance),
        restarts: args.restarts.or(file.restarts).unwrap_or(defaults.restarts),
        seed: ctx.seed,
        visibility_threshold: args
            .visibility_threshold
            .or(file.visibility_threshold)
            .unwrap_or(defaults.visibility_threshold),
    }
}

pub fn fit_pose(ctx: &Context, args: FitPoseArgs) -> anyhow::Result<()> {
    let skeleton = load_skeleton(args.skeleton.as_deref())?;
    let camera = pick_camera(load_cameras(&args.calibration)?, args.camera_id.as_deref())?;
    let prior: Option<GaussianMixture> = match &args.prior {
        Some(p) => {
            let doc: PriorDoc = read_toml(p)?;
            Some(GaussianMixture::from_doc(&doc)?)
        }
        None => None,
    };
    let track = TrackFile::load(&args.keypoints)?;
    let base_config = build_fit_config(ctx, &args, prior.is_some());
    base_config.validate()?;

    struct Job {
        index: u64,
        frame: KeypointFrame,
    }
    let jobs: Vec<Job> = track
        .frames
        .iter()
        .filter_map(|f| {
            f.keypoint_frame().map(|frame| Job {
                index: f.index,
                frame,
            })
        })
        .collect();
    if jobs.is_empty() {
        return Err(mouselift::Error::NoObservations(
            "track has no keypoint frames".into(),
        )
        .into());
    }

    let fit_one = |job: &Job| {
        // Per-frame seeding keeps restarts diverse across the video while
        // remaining reproducible.
        let config = FitConfig {
            seed: ctx.seed.wrapping_add(job.index),
            ..base_config.clone()
        };
        (
            job.index,
            core_fit_pose(&skeleton, &camera, &job.frame, prior.as_ref(), &config),
        )
    };
    let results: Vec<(u64, mouselift::Result<mouselift::FitResult>)> = if ctx.threads == 1 {
        jobs.iter().map(fit_one).collect()
    } else {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if ctx.threads > 0 {
            builder = builder.num_threads(ctx.threads);
        }
        let pool = builder.build().context("cannot build worker pool")?;
        pool.install(|| {
            use rayon::prelude::*;
            jobs.par_iter().map(fit_one).collect()
        })
    };

    // Single ordered writer: results are collected in frame order, so the
    // output is identical for any worker count.
    let mut out = TrackFile::new(track.fps);
    out.camera_id = camera.id.clone();
    out.skeleton_hash = Some(skeleton.content_hash());
    let mut failures = 0usize;
    for (index, result) in results {
        match result {
            Ok(fit) => {
                let mut frame = TrackFrame::new(index);
                frame.params = Some(fit.params.clone());
                frame.set_pose(&fit.pose);
                frame.diagnostics = Some(FrameDiagnostics {
                    objective: fit.objective,
                    reprojection_rms_px: fit.reprojection_rms_px,
                    prior_log_likelihood: fit.prior_log_likelihood,
                    iterations: fit.iterations as u64,
                    converged: fit.converged,
                });
                out.frames.push(frame);
            }
            Err(e) => {
                failures += 1;
                log::warn!("frame {index}: {e}");
            }
        }
    }
    if out.frames.is_empty() {
        return Err(anyhow!("every frame failed to fit ({failures} failures)"));
    }
    if failures > 0 {
        log::warn!("{failures} frames failed and were omitted");
    }
    out.save(&args.out)?;
    log::info!("fitted {} frames -> {}", out.frames.len(), args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// triangulate

#[derive(Debug, Args)]
pub struct TriangulateArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

pub fn triangulate(_ctx: &Context, args: TriangulateArgs) -> anyhow::Result<()> {
    let labels = MultiviewLabelFile::load(&args.labels)?;
    let cameras = load_cameras(&args.calibration)?;
    let mut out = PoseFile::new(labels.fps);
    for frame in &labels.frames {
        let observations = labels.observations(frame);
        match triangulate_pose(&cameras, frame.index, &observations) {
            Ok(pose) => {
                for (joint, reason) in &pose.failures {
                    log::warn!("frame {}: joint {joint}: {reason}", frame.index);
                }
                out.frames.push(PoseFrame::from_triangulated(&pose));
            }
            Err(e) => log::warn!("frame {}: {e}", frame.index),
        }
    }
    if out.frames.is_empty() {
        return Err(anyhow!("no frame could be triangulated"));
    }
    out.save(&args.out)?;
    log::info!(
        "triangulated {} frames -> {}",
        out.frames.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval-oks

#[derive(Debug, Args)]
pub struct EvalOksArgs {
    /// Predicted keypoint track.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth keypoint track.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    falloff: Option<f64>,
    /// Comma-separated thresholds, e.g. 0.5,0.7,0.9.
    #[arg(long, value_delimiter = ',')]
    thresholds: Vec<f64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval_oks(ctx: &Context, args: EvalOksArgs) -> anyhow::Result<()> {
    let pred = TrackFile::load(&args.pred)?;
    let truth = TrackFile::load(&args.truth)?;
    let falloff = args
        .falloff
        .or(ctx.config.oks.falloff)
        .unwrap_or(DEFAULT_OKS_FALLOFF);
    let thresholds = if args.thresholds.is_empty() {
        ctx.config
            .oks
            .thresholds
            .clone()
            .unwrap_or_else(|| DEFAULT_OKS_THRESHOLDS.to_vec())
    } else {
        args.thresholds.clone()
    };

    let mut pairs = Vec::new();
    for t_frame in &truth.frames {
        let Some(t_kf) = t_frame.keypoint_frame() else { continue };
        let Some(p_frame) = pred.frames.iter().find(|p| p.index == t_frame.index) else {
            continue;
        };
        let Some(p_kf) = p_frame.keypoint_frame() else { continue };
        pairs.push((p_kf, t_kf));
    }
    if pairs.is_empty() {
        return Err(mouselift::Error::InsufficientData(
            "no frame index is present in both tracks".into(),
        )
        .into());
    }
    let table = oks_accuracy_table(&pairs, &thresholds, &default_oks_groups(), falloff)?;
    let mut text = format!(
        "# oks accuracy v1\n# pairs: {}\n# falloff: {falloff}\n",
        pairs.len()
    );
    text.push_str(&table.to_tsv());
    emit(args.out.as_deref(), &text)
}

// ---------------------------------------------------------------------------
// eval-3d

#[derive(Debug, Args)]
pub struct Eval3dArgs {
    /// Fitted track (with 3D poses).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth pose file.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval_3d(_ctx: &Context, args: Eval3dArgs) -> anyhow::Result<()> {
    let pred = TrackFile::load(&args.pred)?;
    let truth = PoseFile::load(&args.truth)?;

    let mut per_joint_sum = [0.0f64; mouselift::skeleton::N_CHAIN_JOINTS];
    let mut per_joint_count = [0usize; mouselift::skeleton::N_CHAIN_JOINTS];
    let mut frames_used = 0usize;
    for t_frame in &truth.frames {
        let Some(p_frame) = pred.frames.iter().find(|p| p.index == t_frame.index) else {
            continue;
        };
        let Some(pose) = p_frame.pose() else { continue };
        let masked = t_frame.to_masked();
        match registered_3d_error(&pose, &masked) {
            Ok(err) => {
                frames_used += 1;
                for (ci, e) in err.per_joint_mm.iter().enumerate() {
                    if let Some(e) = e {
                        per_joint_sum[ci] += e;
                        per_joint_count[ci] += 1;
                    }
                }
            }
            Err(e) => log::warn!("frame {}: {e}", t_frame.index),
        }
    }
    if frames_used == 0 {
        return Err(mouselift::Error::InsufficientData(
            "no frame could be registered".into(),
        )
        .into());
    }

    let mut text = format!("# registered 3d error v1\n# frames: {frames_used}\n");
    text.push_str("joint\tmean_mm\tjoints_scored\n");
    let mut total = 0.0;
    let mut count = 0usize;
    for (ci, joint) in KeypointName::CHAIN.iter().enumerate() {
        if per_joint_count[ci] > 0 {
            let mean = per_joint_sum[ci] / per_joint_count[ci] as f64;
            text.push_str(&format!("{joint}\t{mean}\t{}\n", per_joint_count[ci]));
            total += per_joint_sum[ci];
            count += per_joint_count[ci];
        }
    }
    text.push_str(&format!("overall\t{}\t{count}\n", total / count as f64));
    emit(args.out.as_deref(), &text)
}

// ---------------------------------------------------------------------------
// gait

#[derive(Debug, Args)]
pub struct GaitArgs {
    /// Fitted track to read foot positions from.
    #[arg(long, conflicts_with = "trace")]
    track: Option<PathBuf>,
    /// Raw delimited trace (one value per line, `#` comments allowed).
    #[arg(long, requires = "rate")]
    trace: Option<PathBuf>,
    /// Sample rate of a raw trace, Hz.
    #[arg(long)]
    rate: Option<f64>,
    /// Foot joint to analyze.
    #[arg(long)]
    joint: Option<String>,
    /// Travel axis of the foot coordinate (x, y or z, camera frame).
    #[arg(long)]
    axis: Option<String>,
    /// Treadmill belt speed, cm/s.
    #[arg(long)]
    belt_speed: Option<f64>,
    #[arg(long)]
    outlier_sigma: Option<f64>,
    /// Stride report output; standard output when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Plot-ready trace with peak markers.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Plot-ready magnitude spectrum.
    #[arg(long)]
    spectrum_out: Option<PathBuf>,
}

pub fn gait(ctx: &Context, args: GaitArgs) -> anyhow::Result<()> {
    let joint_name = args
        .joint
        .clone()
        .or_else(|| ctx.config.gait.joint.clone())
        .unwrap_or_else(|| "left_ankle".into());
    let joint = KeypointName::from_str(&joint_name)
        .map_err(|_| usage(format!("unknown joint '{joint_name}'")))?;
    let axis_name = args
        .axis
        .clone()
        .or_else(|| ctx.config.gait.axis.clone())
        .unwrap_or_else(|| "x".into());
    let axis = match axis_name.as_str() {
        "x" => 0,
        "y" => 1,
        "z" => 2,
        other => return Err(usage(format!("axis must be x, y or z, got '{other}'"))),
    };
    let belt = args
        .belt_speed
        .or(ctx.config.gait.belt_speed_cm_s)
        .unwrap_or(0.0);
    let sigma = args
        .outlier_sigma
        .or(ctx.config.gait.outlier_sigma)
        .unwrap_or(mouselift::gait::DEFAULT_OUTLIER_SIGMA);

    let trace = match (&args.track, &args.trace) {
        (Some(track_path), None) => {
            let track = TrackFile::load(track_path)?;
            let ci = joint
                .chain_index()
                .ok_or_else(|| usage(format!("'{joint}' is not a chain joint")))?;
            let mut samples = Vec::with_capacity(track.frames.len());
            let mut expected = None;
            for frame in &track.frames {
                if let Some(e) = expected {
                    if frame.index != e {
                        return Err(mouselift::Error::InsufficientData(format!(
                            "track is not uniformly sampled: expected frame {e}, found {}",
                            frame.index
                        ))
                        .into());
                    }
                }
                expected = Some(frame.index + 1);
                let pose = frame.pose().ok_or_else(|| {
                    mouselift::Error::StageMissing(format!(
                        "frame {} carries no 3D pose",
                        frame.index
                    ))
                })?;
                samples.push(pose.positions[ci][axis]);
            }
            FootTrace {
                samples,
                sample_rate_hz: track.fps,
                joint,
                belt_speed_cm_s: belt,
            }
        }
        (None, Some(trace_path)) => {
            let text = std::fs::read_to_string(trace_path)
                .with_context(|| format!("cannot read {}", trace_path.display()))?;
            let mut samples = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                // Take the last field so `time value` rows also work.
                let field = line.split_whitespace().last().unwrap();
                let value: f64 = field.parse().map_err(|_| {
                    mouselift::Error::Format(format!(
                        "{}:{}: not a number: '{field}'",
                        trace_path.display(),
                        lineno + 1
                    ))
                })?;
                samples.push(value);
            }
            FootTrace {
                samples,
                sample_rate_hz: args.rate.unwrap(),
                joint,
                belt_speed_cm_s: belt,
            }
        }
        _ => return Err(usage("pass exactly one of --track or --trace")),
    };

    let report = stride_report(&trace, sigma)?;
    let mut text = String::from("# stride report v1\n");
    text.push_str(&format!("# joint: {}\n", report.joint));
    text.push_str(&format!("# belt_speed_cm_s: {}\n", report.belt_speed_cm_s));
    text.push_str(&format!("# outlier_sigma: {}\n", report.outlier_sigma));
    text.push_str(&format!(
        "# dominant_duration_s: {}\n",
        report.dominant_duration_s
    ));
    text.push_str(&format!(
        "# aggregate_length_cm: {}\n",
        report.aggregate_length_cm
    ));
    if let (Some(mean), Some(sd)) = (report.inlier_mean_cm, report.inlier_sigma_cm) {
        text.push_str(&format!("# inlier_mean_cm: {mean}\n"));
        text.push_str(&format!("# inlier_sigma_cm: {sd}\n"));
    }
    text.push_str("stride\tduration_s\tlength_cm\toutlier\n");
    for (i, ((d, l), o)) in report
        .durations_s
        .iter()
        .zip(&report.lengths_cm)
        .zip(&report.outlier_mask)
        .enumerate()
    {
        text.push_str(&format!("{i}\t{d}\t{l}\t{o}\n"));
    }
    emit(args.report.as_deref(), &text)?;

    if let Some(path) = &args.trace_out {
        let mut text = String::from("# foot trace v1\nsample\ttime_s\tvalue\tpeak\n");
        let mut peaks = report.peak_indices.iter().peekable();
        for (i, v) in trace.samples.iter().enumerate() {
            let is_peak = peaks.peek() == Some(&&i);
            if is_peak {
                peaks.next();
            }
            text.push_str(&format!(
                "{i}\t{}\t{v}\t{is_peak}\n",
                i as f64 / trace.sample_rate_hz
            ));
        }
        emit(Some(path), &text)?;
    }
    if let Some(path) = &args.spectrum_out {
        let bins = spectrum(&trace)?;
        let mut text = String::from("# spectrum v1\nfrequency_hz\tmagnitude\n");
        for bin in bins {
            text.push_str(&format!("{}\t{}\n", bin.frequency_hz, bin.magnitude));
        }
        emit(Some(path), &text)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// export-features

#[derive(Debug, Args)]
pub struct ExportFeaturesArgs {
    #[arg(long)]
    track: PathBuf,
    /// One of 2d_box, 2d_points, 3d_points, 3d_angles.
    #[arg(long)]
    representation: String,
    /// Window length in seconds.
    #[arg(long, default_value_t = 10.0)]
    window: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn export_features(_ctx: &Context, args: ExportFeaturesArgs) -> anyhow::Result<()> {
    let track = TrackFile::load(&args.track)?;
    let representation = Representation::from_str(&args.representation)
        .map_err(|e| usage(e.to_string()))?;
    let matrix = core_export_features(&track, representation, args.window)?;
    if matrix.windows.is_empty() {
        log::warn!("track shorter than one window: exporting an empty matrix");
    }
    emit(args.out.as_deref(), &matrix.to_tsv())
}
