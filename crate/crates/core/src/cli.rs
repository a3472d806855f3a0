//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors. Every
//! output file is written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::geometry::{CameraIntrinsics, Pose, RoiTransform, Vec2, Vec3};
use crate::heatmap::{decode, render, GaussianParams, HeatmapStack};
use crate::mesh_io::{load_ply, KeypointFile, PointCloud};
use crate::metrics::{evaluate, Metric, ObjectModel, PoseSample, DEFAULT_DIAMETER_FRACTION};
use crate::pnp::{solve_pnp_ransac, CorrespondenceSet, RansacConfig};
use crate::sampling::{select_keypoints, CurvatureParams, Strategy};
use crate::simulator::{generate_scene, run_pipeline, NoiseConfig, SceneConfig, DEFAULT_MIN_PEAK};
use crate::trainmath::{schedule, ScheduleConfig, ScheduleVariant, DEFAULT_BASE_LR};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Integer count parser with a lower bound.
fn at_least(min: usize) -> impl Fn(&str) -> Result<usize, String> + Clone + Send + Sync + 'static {
    move |s: &str| {
        let v: usize = s.parse().map_err(|_| format!("expected a whole number, got '{s}'"))?;
        if v < min {
            return Err(format!("must be at least {min}, got {v}"));
        }
        Ok(v)
    }
}

#[derive(Debug, Parser)]
#[command(name = "keypose", version, about = "Keypoint-based 6D pose estimation toolkit")]
pub struct Cli {
    /// Suppress informational output on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select 3D keypoints on a PLY model.
    SampleKeypoints(SampleArgs),
    /// Render Gaussian heatmaps for 2D keypoints into an HMAP file.
    RenderHeatmaps(RenderArgs),
    /// Decode per-channel argmax peaks from an HMAP file.
    DecodeHeatmaps(DecodeArgs),
    /// Estimate object pose from 2D-3D correspondences with PnP + RANSAC.
    EstimatePose(EstimateArgs),
    /// Score predicted poses with ADD / ADD-S.
    Evaluate(EvaluateArgs),
    /// Run the synthetic end-to-end pipeline on a model.
    Simulate(SimulateArgs),
    /// Tabulate a learning-rate schedule as (step, lr) rows.
    PlotSchedule(ScheduleArgs),
    /// Print vertex count, face count, diameter and centroid of a model.
    ModelInfo(ModelInfoArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Fps,
    Cps,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Fps => Strategy::Fps,
            StrategyArg::Cps => Strategy::Cps,
        }
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "fps")]
    pub strategy: StrategyArg,
    /// Number of keypoints.
    #[arg(long, default_value_t = 50, value_parser = at_least(1))]
    pub k: usize,
    /// Neighborhood size for CPS curvature.
    #[arg(long, default_value_t = 16, value_parser = at_least(3))]
    pub neighbors: usize,
    /// Seeds the surface densification used by CPS on sparse meshes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to the model file stem.
    #[arg(long)]
    pub object_id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// 2D keypoint JSON; image-frame points need an embedded "roi".
    #[arg(long)]
    pub keypoints: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,
    /// Heatmap side length in cells.
    #[arg(long, default_value_t = 64, value_parser = at_least(1))]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub heatmaps: PathBuf,
    /// ROI JSON (bare, or any JSON object with a "roi" field) to map peaks
    /// back to original image pixels; without it points stay in heatmap cells.
    #[arg(long)]
    pub roi: Option<PathBuf>,
    #[arg(long, default_value = "")]
    pub object_id: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RansacArgs {
    /// Inlier reprojection threshold in pixels.
    #[arg(long, default_value_t = 3.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 300, value_parser = at_least(1))]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 6)]
    pub min_inliers: usize,
    #[arg(long, default_value_t = 0.999)]
    pub confidence: f64,
}

impl RansacArgs {
    fn config(&self, seed: u64) -> RansacConfig {
        RansacConfig {
            max_iterations: self.max_iterations,
            reproj_threshold: self.threshold,
            min_inliers: self.min_inliers,
            confidence: self.confidence,
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub keypoints3d: PathBuf,
    #[arg(long)]
    pub keypoints2d: PathBuf,
    /// JSON {"fx", "fy", "cx", "cy"}.
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Keypoints whose score is below this are dropped before PnP.
    #[arg(long, default_value_t = DEFAULT_MIN_PEAK)]
    pub min_score: f64,
    #[command(flatten)]
    pub ransac: RansacArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted poses: a record or a list of records.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth poses, index-aligned with --pred.
    #[arg(long)]
    pub gt: PathBuf,
    /// Directory holding <object_id>.ply for every object.
    #[arg(long)]
    pub models: PathBuf,
    /// Comma-separated object ids scored with ADD-S.
    #[arg(long, value_delimiter = ',')]
    pub symmetric: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_DIAMETER_FRACTION)]
    pub diameter_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub object_id: Option<String>,
    /// Score with ADD-S instead of ADD.
    #[arg(long)]
    pub symmetric: bool,
    #[arg(long, value_enum, default_value = "fps")]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = 50, value_parser = at_least(6))]
    pub k: usize,
    /// Number of synthetic views.
    #[arg(long, default_value_t = 200, value_parser = at_least(1))]
    pub n: usize,
    /// Gaussian pixel noise sigma.
    #[arg(long, default_value_t = 0.0)]
    pub pixel_noise: f64,
    /// Fraction of keypoints replaced by random points inside the box.
    #[arg(long, default_value_t = 0.0)]
    pub outliers: f64,
    /// Fraction of keypoints removed.
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Box origin and size jitter sigma in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub bbox_jitter: f64,
    #[command(flatten)]
    pub ransac: RansacArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Constant,
    Onecycle,
    Polynomial,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, value_enum, default_value = "onecycle")]
    pub variant: VariantArg,
    /// Total optimizer steps, e.g. 30 epochs × batches per epoch at batch size 16.
    #[arg(long, value_parser = at_least(1))]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_BASE_LR)]
    pub base_lr: f64,
    /// OneCycle warmup fraction [default: 0.3].
    #[arg(long)]
    pub warmup: Option<f64>,
    /// OneCycle peak [default: 10 × base-lr].
    #[arg(long)]
    pub max_lr: Option<f64>,
    /// OneCycle start divisor [default: 25].
    #[arg(long)]
    pub div: Option<f64>,
    /// OneCycle end value [default: base-lr / 1e4].
    #[arg(long)]
    pub final_lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModelInfoArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Also write the summary as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Coordinate frame of a 2D keypoint file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Image,
    Heatmap,
}

/// 2D keypoint exchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoints2dFile {
    #[serde(default)]
    pub object_id: String,
    pub frame: Frame,
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi: Option<RoiTransform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

impl Keypoints2dFile {
    fn vectors(&self) -> Vec<Vec2> {
        self.points.iter().map(|p| Vec2::new(p[0], p[1])).collect()
    }

    /// Points in original image pixels.
    fn image_points(&self) -> Result<Vec<Vec2>, CliError> {
        match (self.frame, &self.roi) {
            (Frame::Image, _) => Ok(self.vectors()),
            (Frame::Heatmap, Some(roi)) => Ok(self.vectors().iter().map(|p| roi.heatmap_to_original(p)).collect()),
            (Frame::Heatmap, None) => Err(CliError::Data(
                "heatmap-frame keypoints need a \"roi\" to map to image pixels".into(),
            )),
        }
    }
}

/// Pose record used by `estimate-pose` output and `evaluate` input. A
/// record without rotation and translation is a missing prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    #[serde(default)]
    pub object_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[f64; 9]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub translation: Option<[f64; 3]>,
}

impl PoseRecord {
    fn from_pose(object_id: &str, pose: &Pose) -> Self {
        let r = pose.rotation();
        let t = pose.translation();
        Self {
            object_id: object_id.to_string(),
            rotation: Some([
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
            ]),
            translation: Some([t.x, t.y, t.z]),
        }
    }

    fn pose(&self) -> Result<Option<Pose>, CliError> {
        match (self.rotation, self.translation) {
            (Some(r), Some(t)) => Pose::new(crate::geometry::Mat3::from_row_slice(&r), Vec3::from(t))
                .map(Some)
                .map_err(|e| CliError::Data(format!("pose for '{}': {e}", self.object_id))),
            (None, None) => Ok(None),
            _ => Err(CliError::Data(format!(
                "pose for '{}' has only one of rotation and translation",
                self.object_id
            ))),
        }
    }
}

#[derive(Debug, Serialize)]
struct PoseOutput {
    #[serde(flatten)]
    record: PoseRecord,
    inliers: Vec<bool>,
    n_inliers: usize,
    mean_reproj_error: f64,
    iterations: usize,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    Many(Vec<PoseRecord>),
    One(PoseRecord),
}

#[derive(Debug, Serialize)]
struct ModelInfo {
    vertices: usize,
    faces: usize,
    diameter: f64,
    centroid: [f64; 3],
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

fn data<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{context}: {e}"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let what = path.display().to_string();
    let bytes = fs::read(path).map_err(data(&what))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{what}: {e}")))
}

/// Writes `bytes` to a temporary file beside `path` and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let what = path.display().to_string();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(data(&what))?;
    tmp.write_all(bytes).map_err(data(&what))?;
    tmp.as_file().sync_all().map_err(data(&what))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o644)).map_err(data(&what))?;
    }
    tmp.persist(path).map_err(|e| CliError::Data(format!("{what}: {}", e.error)))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(data("serializing JSON"))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let say = |msg: String| {
        if !cli.quiet {
            println!("{msg}");
        }
    };
    match &cli.command {
        Command::SampleKeypoints(a) => sample_keypoints(a, say),
        Command::RenderHeatmaps(a) => render_heatmaps(a, say),
        Command::DecodeHeatmaps(a) => decode_heatmaps(a, say),
        Command::EstimatePose(a) => estimate_pose(a, say),
        Command::Evaluate(a) => evaluate_poses(a, say),
        Command::Simulate(a) => simulate(a, say),
        Command::PlotSchedule(a) => plot_schedule(a, say),
        Command::ModelInfo(a) => model_info(a, say),
    }
}

fn sample_keypoints(a: &SampleArgs, say: impl Fn(String)) -> Result<(), CliError> {
    let mesh = load_ply(&a.model).map_err(data("loading model"))?;
    let params = CurvatureParams {
        k_neighbors: a.neighbors,
        ..Default::default()
    };
    let object_id = a.object_id.clone().unwrap_or_else(|| file_stem(&a.model));
    let set = select_keypoints(&mesh, a.strategy.into(), a.k, &params, a.seed)
        .map_err(data("keypoint selection"))?
        .with_object_id(object_id);
    write_json(&a.out, &set.to_file())?;
    say(format!("wrote {} {} keypoints to {}", set.len(), set.strategy, a.out.display()));
    Ok(())
}

fn render_heatmaps(a: &RenderArgs, say: impl Fn(String)) -> Result<(), CliError> {
    let kp: Keypoints2dFile = read_json(&a.keypoints)?;
    let size = a.size;
    let points: Vec<Vec2> = match kp.frame {
        Frame::Heatmap => kp.vectors(),
        Frame::Image => {
            let roi = kp.roi.ok_or_else(|| {
                CliError::Data("image-frame keypoints need a \"roi\" to place them on the heatmap".into())
            })?;
            let roi = RoiTransform::with_sizes(roi.bbox_origin(), roi.bbox_size(), roi.crop_size(), Vec2::repeat(size as f64))
                .map_err(data("roi"))?;
            kp.vectors().iter().map(|p| roi.original_to_heatmap(p)).collect()
        }
    };
    let stack = render(&points, &GaussianParams { sigma: a.sigma }, size, size).map_err(data("render"))?;
    write_atomic(&a.out, &stack.to_bytes())?;
    say(format!("wrote {}×{}×{} heatmaps to {}", stack.channels(), size, size, a.out.display()));
    Ok(())
}

fn load_roi(path: &Path) -> Result<RoiTransform, CliError> {
    let value: serde_json::Value = read_json(path)?;
    let roi = match value.get("roi") {
        Some(inner) => inner.clone(),
        None => value,
    };
    serde_json::from_value(roi).map_err(data(&path.display().to_string()))
}

fn decode_heatmaps(a: &DecodeArgs, say: impl Fn(String)) -> Result<(), CliError> {
    let bytes = fs::read(&a.heatmaps).map_err(data(&a.heatmaps.display().to_string()))?;
    let stack = HeatmapStack::from_bytes(&bytes).map_err(data(&a.heatmaps.display().to_string()))?;
    let peaks = decode(&stack);
    let scores = Some(peaks.iter().map(|p| p.value).collect());
    let out = match &a.roi {
        Some(path) => {
            let roi = load_roi(path)?;
            let roi = RoiTransform::with_sizes(
                roi.bbox_origin(),
                roi.bbox_size(),
                roi.crop_size(),
                Vec2::new(stack.width() as f64, stack.height() as f64),
            )
            .map_err(data("roi"))?;
            Keypoints2dFile {
                object_id: a.object_id.clone(),
                frame: Frame::Image,
                points: peaks.iter().map(|p| roi.heatmap_to_original(&p.position).into()).collect(),
                roi: Some(roi),
                scores,
            }
        }
        None => Keypoints2dFile {
            object_id: a.object_id.clone(),
            frame: Frame::Heatmap,
            points: peaks.iter().map(|p| p.position.into()).collect(),
            roi: None,
            scores,
        },
    };
    write_json(&a.out, &out)?;
    say(format!("decoded {} peaks to {}", peaks.len(), a.out.display()));
    Ok(())
}

fn estimate_pose(a: &EstimateArgs, say: impl Fn(String)) -> Result<(), CliError> {
    let kp3: KeypointFile = read_json(&a.keypoints3d)?;
    let kp2: Keypoints2dFile = read_json(&a.keypoints2d)?;
    let intr: CameraIntrinsics = read_json(&a.intrinsics)?;
    intr.validate().map_err(data("intrinsics"))?;
    if kp3.points.len() != kp2.points.len() {
        return Err(CliError::Data(format!(
            "{} 3D keypoints but {} 2D keypoints",
            kp3.points.len(),
            kp2.points.len()
        )));
    }
    let image = kp2.image_points()?;
    let model = kp3.vectors();
    let keep: Vec<usize> = (0..model.len())
        .filter(|&i| kp2.scores.as_ref().is_none_or(|s| s[i] >= a.min_score))
        .collect();
    let mut corr = CorrespondenceSet::new(
        keep.iter().map(|&i| model[i]).collect(),
        keep.iter().map(|&i| image[i]).collect(),
    )
    .map_err(data("correspondences"))?;
    if let Some(scores) = &kp2.scores {
        corr = corr
            .with_weights(keep.iter().map(|&i| scores[i].clamp(0.0, 1.0)).collect())
            .map_err(data("scores"))?;
    }
    let cfg = a.ransac.config(a.seed);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let est = solve_pnp_ransac(&corr, &intr, &cfg).map_err(data("pose estimation"))?;

    let mut inliers = vec![false; model.len()];
    for (slot, &i) in keep.iter().enumerate() {
        inliers[i] = est.inlier_mask[slot];
    }
    let object_id = if kp3.object_id.is_empty() { kp2.object_id.clone() } else { kp3.object_id.clone() };
    let out = PoseOutput {
        record: PoseRecord::from_pose(&object_id, &est.pose),
        n_inliers: est.inlier_count(),
        inliers,
        mean_reproj_error: est.mean_reproj_error,
        iterations: est.iterations,
    };
    write_json(&a.out, &out)?;
    say(format!(
        "pose from {} of {} correspondences, mean reprojection error {:.4} px",
        est.inlier_count(),
        corr.len(),
        est.mean_reproj_error
    ));
    Ok(())
}

fn read_pose_records(path: &Path) -> Result<Vec<PoseRecord>, CliError> {
    Ok(match read_json::<OneOrMany>(path)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(r) => vec![r],
    })
}

fn evaluate_poses(a: &EvaluateArgs, say: impl Fn(String)) -> Result<(), CliError> {
    let preds = read_pose_records(&a.pred)?;
    let gts = read_pose_records(&a.gt)?;
    if preds.len() != gts.len() {
        return Err(CliError::Data(format!(
            "{} predictions but {} ground-truth poses",
            preds.len(),
            gts.len()
        )));
    }
    let mut models: std::collections::BTreeMap<String, ObjectModel> = Default::default();
    for gt in &gts {
        if !models.contains_key(&gt.object_id) {
            let path = a.models.join(format!("{}.ply", gt.object_id));
            let mesh = load_ply(&path).map_err(data(&path.display().to_string()))?;
            let symmetric = a.symmetric.iter().any(|s| s == &gt.object_id);
            let model = ObjectModel::new(gt.object_id.clone(), mesh.vertices(), symmetric)
                .map_err(data(&path.display().to_string()))?;
            models.insert(gt.object_id.clone(), model);
        }
    }
    let mut samples = Vec::with_capacity(gts.len());
    for (i, (pred, gt)) in preds.iter().zip(&gts).enumerate() {
        if !pred.object_id.is_empty() && pred.object_id != gt.object_id {
            return Err(CliError::Data(format!(
                "record {i}: prediction for '{}' paired with ground truth for '{}'",
                pred.object_id, gt.object_id
            )));
        }
        let gt_pose = gt
            .pose()?
            .ok_or_else(|| CliError::Data(format!("record {i}: ground truth has no pose")))?;
        samples.push(PoseSample {
            model: &models[&gt.object_id],
            gt: gt_pose,
            pred: pred.pose()?,
        });
    }
    if !(a.diameter_fraction > 0.0) {
        return Err(CliError::Usage(format!(
            "--diameter-fraction must be positive, got {}",
            a.diameter_fraction
        )));
    }
    let summary = evaluate(&samples, a.diameter_fraction).map_err(data("evaluation"))?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = data("CSV");
    let rows = summary
        .per_object
        .iter()
        .map(|o| [o.object_id.clone(), o.n.to_string(), o.accuracy.to_string(), o.metric.to_string()])
        .chain(std::iter::once([
            "mean".to_string(),
            summary.records.len().to_string(),
            summary.mean_accuracy.to_string(),
            String::new(),
        ]));
    let result: Result<(), csv::Error> = (|| {
        w.write_record(["object_id", "n", "accuracy", "metric"])?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    })();
    result.map_err(csv_err)?;
    let bytes = w.into_inner().map_err(|e| CliError::Data(format!("CSV: {e}")))?;
    write_atomic(&a.out, &bytes)?;
    for o in &summary.per_object {
        let metric = match o.metric {
            Metric::Add => "ADD",
            Metric::Adds => "ADD-S",
        };
        say(format!("{:<16} {:>6} {:>8.4} {metric}", o.object_id, o.n, o.accuracy));
    }
    say(format!("{:<16} {:>6} {:>8.4}", "mean", summary.records.len(), summary.mean_accuracy));
    Ok(())
}

fn simulate(a: &SimulateArgs, say: impl Fn(String)) -> Result<(), CliError> {
    let mesh = load_ply(&a.model).map_err(data("loading model"))?;
    let object_id = a.object_id.clone().unwrap_or_else(|| file_stem(&a.model));
    // Independent seeds for scene, corruption and RANSAC.
    let mut master = ChaCha8Rng::seed_from_u64(a.seed);
    let (scene_seed, noise_seed, ransac_seed) = (master.next_u64(), master.next_u64(), master.next_u64());
    let scene_cfg = SceneConfig {
        strategy: a.strategy.into(),
        n_keypoints: a.k,
        n_samples: a.n,
        seed: scene_seed,
        ..Default::default()
    };
    let noise = NoiseConfig {
        pixel_noise_sigma: a.pixel_noise,
        outlier_fraction: a.outliers,
        dropout_fraction: a.dropout,
        bbox_jitter: a.bbox_jitter,
        min_peak: DEFAULT_MIN_PEAK,
        seed: noise_seed,
    };
    noise.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let ransac = a.ransac.config(ransac_seed);
    ransac.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let scene = generate_scene(&mesh, &object_id, a.symmetric, &scene_cfg).map_err(data("scene"))?;
    let run = run_pipeline(&scene, &noise, &ransac).map_err(data("pipeline"))?;
    let mut bytes = Vec::new();
    run.write_csv(&mut bytes).map_err(data("CSV"))?;
    write_atomic(&a.out, &bytes)?;
    say(format!(
        "{object_id}: {} of {} correct (accuracy {:.4}), diameter {:.3} mm",
        run.summary.correct_count(),
        run.outcomes.len(),
        run.accuracy(),
        scene.model.diameter
    ));
    Ok(())
}

fn plot_schedule(a: &ScheduleArgs, say: impl Fn(String)) -> Result<(), CliError> {
    let variant = match a.variant {
        VariantArg::Constant => ScheduleVariant::Constant,
        VariantArg::Onecycle => ScheduleVariant::OneCycleCosine,
        VariantArg::Polynomial => ScheduleVariant::PolynomialQuadratic,
    };
    let mut cfg = ScheduleConfig::new(variant, a.base_lr, a.steps);
    if let Some(v) = a.warmup {
        cfg.warmup_fraction = v;
    }
    if let Some(v) = a.max_lr {
        cfg.max_lr = v;
    }
    if let Some(v) = a.div {
        cfg.div = v;
    }
    if let Some(v) = a.final_lr {
        cfg.final_lr = v;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let lrs = schedule(&cfg).map_err(data("schedule"))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let result: Result<(), csv::Error> = (|| {
        w.write_record(["step", "lr"])?;
        for (step, lr) in lrs.iter().enumerate() {
            w.write_record([step.to_string(), format!("{lr:e}")])?;
        }
        w.flush()?;
        Ok(())
    })();
    result.map_err(data("CSV"))?;
    let bytes = w.into_inner().map_err(|e| CliError::Data(format!("CSV: {e}")))?;
    write_atomic(&a.out, &bytes)?;
    say(format!("wrote {} {} rows to {}", lrs.len(), variant, a.out.display()));
    Ok(())
}

fn model_info(a: &ModelInfoArgs, say: impl Fn(String)) -> Result<(), CliError> {
    let what = a.model.display().to_string();
    let mesh = load_ply(&a.model).map_err(data("loading model"))?;
    let cloud: &PointCloud = mesh.vertices();
    let diameter = cloud.diameter().map_err(data(&what))?;
    let c = cloud.centroid();
    let info = ModelInfo {
        vertices: cloud.len(),
        faces: mesh.faces().len(),
        diameter,
        centroid: [c.x, c.y, c.z],
    };
    say(format!("vertices: {}", info.vertices));
    say(format!("faces: {}", info.faces));
    say(format!("diameter: {}", info.diameter));
    say(format!("centroid: [{}, {}, {}]", c.x, c.y, c.z));
    if let Some(out) = &a.out {
        write_json(out, &info)?;
    }
    Ok(())
}
