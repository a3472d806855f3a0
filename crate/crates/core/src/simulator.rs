//! Synthetic scenes and the full decode → PnP → ADD pipeline.
//!
//! Stands in for a detector and a heatmap network: ground-truth keypoints
//! are projected, corrupted, rendered to heatmaps, decoded and handed to
//! PnP-RANSAC. Every sample draws from its own ChaCha8 stream (the master
//! seed with the stream number set to the sample index), so results do not
//! depend on thread scheduling.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{random_rotation, CameraIntrinsics, GeometryError, Pose, RoiTransform, Vec2, Vec3};
use crate::heatmap::{decode, render, GaussianParams, HeatmapError};
use crate::mesh_io::{MeshError, PointCloud, TriangleMesh};
use crate::metrics::{EvalRecord, EvalSummary, MetricsError, ObjectModel, DEFAULT_DIAMETER_FRACTION};
use crate::pnp::{solve_pnp_ransac, CorrespondenceSet, PnpError, RansacConfig, MIN_CORRESPONDENCES};
use crate::sampling::{select_keypoints, CurvatureParams, KeypointSet, SamplingError, Strategy};

/// Padding added on every side of the tight keypoint box, as a fraction of its extent.
pub const BBOX_PAD_FRACTION: f64 = 0.1;
/// Decoded peaks weaker than this are treated as missing keypoints.
pub const DEFAULT_MIN_PEAK: f64 = 0.5;
const MAX_POSE_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("could not place the object in front of the camera after {0} attempts")]
    PosePlacement(usize),
    #[error("correctness recount disagrees: pipeline counted {pipeline}, second pass counted {recount}")]
    BookkeepingMismatch { pipeline: usize, recount: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Pnp(#[from] PnpError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Independent ChaCha8 stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub strategy: Strategy,
    pub n_keypoints: usize,
    pub n_samples: usize,
    /// Translation x and y are drawn from `[-t, t]` mm.
    pub translation_xy: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub intrinsics: CameraIntrinsics,
    pub curvature: CurvatureParams,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Fps,
            n_keypoints: 50,
            n_samples: 200,
            translation_xy: 100.0,
            z_min: 400.0,
            z_max: 1500.0,
            intrinsics: CameraIntrinsics::linemod(),
            curvature: CurvatureParams::default(),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.n_keypoints < MIN_CORRESPONDENCES {
            return bad(format!("n_keypoints must be at least {MIN_CORRESPONDENCES}"));
        }
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1".into());
        }
        if !(self.translation_xy >= 0.0) || !(self.z_min > 0.0) || !(self.z_max >= self.z_min) || !self.z_max.is_finite() {
            return bad("need translation_xy >= 0 and 0 < z_min <= z_max".into());
        }
        self.intrinsics.validate()?;
        self.curvature.validate()?;
        Ok(())
    }
}

/// One ground-truth view.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub index: usize,
    pub gt: Pose,
    pub roi: RoiTransform,
    /// Exact projections of the 3D keypoints, original image pixels.
    pub keypoints_2d: Vec<Vec2>,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub model: ObjectModel,
    pub keypoints: KeypointSet,
    pub intrinsics: CameraIntrinsics,
    pub samples: Vec<SceneSample>,
}

/// Selects keypoints on `mesh` and draws `n_samples` poses with every
/// keypoint and model vertex in front of the camera.
pub fn generate_scene(
    mesh: &TriangleMesh,
    object_id: &str,
    symmetric: bool,
    cfg: &SceneConfig,
) -> Result<Scene, SimError> {
    cfg.validate()?;
    let model = ObjectModel::new(object_id, mesh.vertices(), symmetric)?;
    let keypoints = select_keypoints(mesh, cfg.strategy, cfg.n_keypoints, &cfg.curvature, cfg.seed)?
        .with_object_id(object_id);
    // Stream 0 is reserved for keypoint selection; samples use 1, 2, ...
    let samples = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| sample_view(i, &keypoints.points, model.points.points(), cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Scene {
        model,
        keypoints,
        intrinsics: cfg.intrinsics,
        samples,
    })
}

fn sample_view(index: usize, keypoints: &[Vec3], vertices: &[Vec3], cfg: &SceneConfig) -> Result<SceneSample, SimError> {
    let mut rng = stream_rng(cfg.seed, index as u64 + 1);
    for _ in 0..MAX_POSE_ATTEMPTS {
        let rotation = random_rotation(&mut rng);
        let t = Vec3::new(
            rng.random_range(-cfg.translation_xy..=cfg.translation_xy),
            rng.random_range(-cfg.translation_xy..=cfg.translation_xy),
            rng.random_range(cfg.z_min..=cfg.z_max),
        );
        let gt = Pose::new(rotation, t)?;
        let in_front = keypoints.iter().chain(vertices).all(|x| gt.transform_point(x).z > 0.0);
        if !in_front {
            continue;
        }
        let keypoints_2d = keypoints
            .iter()
            .map(|x| cfg.intrinsics.project(&gt.transform_point(x)))
            .collect::<Result<Vec<_>, _>>()?;
        let roi = RoiTransform::around_points(&keypoints_2d, BBOX_PAD_FRACTION)?;
        return Ok(SceneSample {
            index,
            gt,
            roi,
            keypoints_2d,
        });
    }
    Err(SimError::PosePlacement(MAX_POSE_ATTEMPTS))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Standard deviation of Gaussian pixel noise on each keypoint coordinate.
    pub pixel_noise_sigma: f64,
    /// Fraction of keypoints replaced by uniform points inside the box.
    pub outlier_fraction: f64,
    /// Fraction of keypoints removed before rendering.
    pub dropout_fraction: f64,
    /// Standard deviation, in pixels, of the perturbation on box origin and size.
    pub bbox_jitter: f64,
    /// Decoded peaks below this value are discarded before PnP.
    pub min_peak: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            pixel_noise_sigma: 0.0,
            outlier_fraction: 0.0,
            dropout_fraction: 0.0,
            bbox_jitter: 0.0,
            min_peak: DEFAULT_MIN_PEAK,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let fraction = |v: f64| (0.0..=1.0).contains(&v);
        let sigma = |v: f64| v >= 0.0 && v.is_finite();
        if !fraction(self.outlier_fraction) || !fraction(self.dropout_fraction) || !fraction(self.min_peak) {
            return Err(SimError::InvalidConfig(
                "outlier_fraction, dropout_fraction and min_peak must lie in [0, 1]".into(),
            ));
        }
        if !sigma(self.pixel_noise_sigma) || !sigma(self.bbox_jitter) {
            return Err(SimError::InvalidConfig(
                "pixel_noise_sigma and bbox_jitter must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-sample pipeline result.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub index: usize,
    pub record: EvalRecord,
    pub pose: Option<Pose>,
    pub n_inliers: usize,
    pub reproj_err_px: Option<f64>,
    /// Why no pose was produced, when applicable.
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub summary: EvalSummary,
    pub outcomes: Vec<SampleOutcome>,
}

#[derive(Debug, Serialize)]
struct CsvRow {
    index: usize,
    add_mm: f64,
    threshold_mm: f64,
    correct: bool,
    n_inliers: usize,
    reproj_err_px: Option<f64>,
}

impl PipelineRun {
    pub fn accuracy(&self) -> f64 {
        self.summary.mean_accuracy
    }

    /// Columns: index, add_mm, threshold_mm, correct, n_inliers, reproj_err_px.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        for o in &self.outcomes {
            w.serialize(CsvRow {
                index: o.index,
                add_mm: o.record.add_value,
                threshold_mm: o.record.threshold,
                correct: o.record.correct,
                n_inliers: o.n_inliers,
                reproj_err_px: o.reproj_err_px,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Applies jitter, pixel noise, outliers and dropout; returns the observed
/// box and per-keypoint observations (`None` when dropped).
fn corrupt(sample: &SceneSample, noise: &NoiseConfig, rng: &mut ChaCha8Rng) -> Result<(RoiTransform, Vec<Option<Vec2>>), SimError> {
    let n = sample.keypoints_2d.len();
    let roi = if noise.bbox_jitter > 0.0 {
        let normal = Normal::new(0.0, noise.bbox_jitter).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        let origin = sample.roi.bbox_origin() + Vec2::new(normal.sample(rng), normal.sample(rng));
        let size = (sample.roi.bbox_size() + Vec2::new(normal.sample(rng), normal.sample(rng))).map(|v| v.max(1.0));
        RoiTransform::new(origin, size)?
    } else {
        sample.roi
    };

    let mut observed: Vec<Option<Vec2>> = if noise.pixel_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise.pixel_noise_sigma).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        sample
            .keypoints_2d
            .iter()
            .map(|p| Some(p + Vec2::new(normal.sample(rng), normal.sample(rng))))
            .collect()
    } else {
        sample.keypoints_2d.iter().copied().map(Some).collect()
    };

    let n_outliers = (noise.outlier_fraction * n as f64).round() as usize;
    if n_outliers > 0 {
        let (lo, size) = (roi.bbox_origin(), roi.bbox_size());
        for i in index::sample(rng, n, n_outliers.min(n)) {
            observed[i] = Some(Vec2::new(
                lo.x + rng.random::<f64>() * size.x,
                lo.y + rng.random::<f64>() * size.y,
            ));
        }
    }

    let n_dropped = (noise.dropout_fraction * n as f64).round() as usize;
    if n_dropped > 0 {
        for i in index::sample(rng, n, n_dropped.min(n)) {
            observed[i] = None;
        }
    }
    Ok((roi, observed))
}

fn run_sample(
    scene: &Scene,
    sample: &SceneSample,
    noise: &NoiseConfig,
    ransac: &RansacConfig,
) -> Result<SampleOutcome, SimError> {
    let mut rng = stream_rng(noise.seed, sample.index as u64);
    let (roi, observed) = corrupt(sample, noise, &mut rng)?;

    let (rows, cols) = roi.heatmap_dims();
    let in_heatmap: Vec<Vec2> = observed
        .iter()
        .map(|o| o.map_or(Vec2::repeat(f64::NAN), |p| roi.original_to_heatmap(&p)))
        .collect();
    let stack = render(&in_heatmap, &GaussianParams::default(), rows, cols)?;

    let mut points_3d = Vec::new();
    let mut points_2d = Vec::new();
    for (c, peak) in decode(&stack).iter().enumerate() {
        if peak.value >= noise.min_peak && peak.value > 0.0 {
            points_3d.push(scene.keypoints.points[c]);
            points_2d.push(roi.heatmap_to_original(&peak.position));
        }
    }

    let cfg = RansacConfig {
        seed: stream_rng(ransac.seed, sample.index as u64).next_u64(),
        ..*ransac
    };
    let estimate = CorrespondenceSet::new(points_3d, points_2d)
        .and_then(|corr| solve_pnp_ransac(&corr, &scene.intrinsics, &cfg));
    let (pose, n_inliers, reproj, failure) = match estimate {
        Ok(e) => (Some(e.pose), e.inlier_count(), Some(e.mean_reproj_error), None),
        Err(
            err @ (PnpError::NoConsensus { .. }
            | PnpError::TooFewCorrespondences { .. }
            | PnpError::DegenerateConfiguration(_)),
        ) => (None, 0, None, Some(err.to_string())),
        Err(other) => return Err(other.into()),
    };
    Ok(SampleOutcome {
        index: sample.index,
        record: EvalRecord::score(&scene.model, &sample.gt, pose.as_ref(), DEFAULT_DIAMETER_FRACTION),
        pose,
        n_inliers,
        reproj_err_px: reproj,
        failure,
    })
}

/// Runs every sample through corruption, heatmaps, PnP-RANSAC and ADD
/// (ADD-S for symmetric models). Failed estimates count as incorrect.
/// The number of correct samples is recomputed from the stored poses by a
/// separate routine and the run fails if the two counts differ.
pub fn run_pipeline(scene: &Scene, noise: &NoiseConfig, ransac: &RansacConfig) -> Result<PipelineRun, SimError> {
    noise.validate()?;
    ransac.validate()?;
    let outcomes = scene
        .samples
        .par_iter()
        .map(|s| run_sample(scene, s, noise, ransac))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = EvalSummary::from_records(outcomes.iter().map(|o| o.record.clone()).collect())?;

    let recount = recount_correct(scene, &outcomes);
    if recount != summary.correct_count() {
        return Err(SimError::BookkeepingMismatch {
            pipeline: summary.correct_count(),
            recount,
        });
    }
    Ok(PipelineRun { summary, outcomes })
}

/// Second, independent tally: recomputes each error from the raw model
/// points with plain loops and compares against the threshold.
fn recount_correct(scene: &Scene, outcomes: &[SampleOutcome]) -> usize {
    let pts = scene.model.points.points();
    let threshold = DEFAULT_DIAMETER_FRACTION * scene.model.diameter;
    let by_index: BTreeMap<usize, &SceneSample> = scene.samples.iter().map(|s| (s.index, s)).collect();
    outcomes
        .iter()
        .filter(|o| {
            let Some(pred) = o.pose else { return false };
            let gt = by_index[&o.index].gt;
            let moved_gt: Vec<Vec3> = pts.iter().map(|x| gt.rotation() * x + gt.translation()).collect();
            let moved_pred: Vec<Vec3> = pts.iter().map(|x| pred.rotation() * x + pred.translation()).collect();
            let mut total = 0.0;
            for (i, g) in moved_gt.iter().enumerate() {
                total += if scene.model.symmetric {
                    moved_pred.iter().map(|p| (g - p).norm()).fold(f64::INFINITY, f64::min)
                } else {
                    (g - moved_pred[i]).norm()
                };
            }
            (total / pts.len() as f64) < threshold
        })
        .count()
}

/// Projected-size bound on decode error: one heatmap cell back-projected at the sample depth.
pub fn quantization_bound_mm(sample: &SceneSample, intr: &CameraIntrinsics) -> f64 {
    let cell = sample.roi.heatmap_cell_size();
    let f = intr.fx.min(intr.fy);
    cell.x.max(cell.y) * sample.gt.translation().z / f
}

/// Closed box of the given extents with each face split into an `n × n`
/// grid of squares (two triangles each); vertices are shared between faces.
pub fn box_mesh(extent: Vec3, n: usize) -> TriangleMesh {
    let n = n.max(1);
    let mut ids: BTreeMap<[usize; 3], usize> = BTreeMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vertex = |key: [usize; 3]| -> usize {
        *ids.entry(key).or_insert_with(|| {
            vertices.push(Vec3::new(
                extent.x * (key[0] as f64 / n as f64 - 0.5),
                extent.y * (key[1] as f64 / n as f64 - 0.5),
                extent.z * (key[2] as f64 / n as f64 - 0.5),
            ));
            vertices.len() - 1
        })
    };
    // For each face: the fixed axis, its lattice value and the two in-plane axes.
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, n] {
            for i in 0..n {
                for j in 0..n {
                    let corner = |di: usize, dj: usize| {
                        let mut key = [0; 3];
                        key[axis] = side;
                        key[u] = i + di;
                        key[v] = j + dj;
                        key
                    };
                    let q = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)].map(&mut vertex);
                    // Outward winding on the positive side.
                    if side == n {
                        faces.push([q[0], q[1], q[2]]);
                        faces.push([q[0], q[2], q[3]]);
                    } else {
                        faces.push([q[0], q[2], q[1]]);
                        faces.push([q[0], q[3], q[2]]);
                    }
                }
            }
        }
    }
    let cloud = PointCloud::new(vertices).expect("box vertices are finite and non-empty");
    TriangleMesh::new(cloud, faces).expect("box faces index existing vertices")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(n: usize, seed: u64) -> Scene {
        let mesh = box_mesh(Vec3::new(120.0, 80.0, 60.0), 8);
        let cfg = SceneConfig {
            n_samples: n,
            seed,
            ..Default::default()
        };
        generate_scene(&mesh, "box", false, &cfg).unwrap()
    }

    #[test]
    fn box_mesh_shares_vertices() {
        let m = box_mesh(Vec3::new(2.0, 2.0, 2.0), 2);
        // 6·(n+1)² minus shared edges and corners: 8 + 12·(n−1) + 6·(n−1)².
        assert_eq!(m.vertices().len(), 8 + 12 + 6);
        assert_eq!(m.faces().len(), 6 * 2 * 2 * 2);
        assert!((m.surface_area() - 24.0).abs() < 1e-12);
        assert!((m.vertices().diameter().unwrap() - 12f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn keypoints_project_inside_bbox() {
        let s = scene(20, 3);
        for sample in &s.samples {
            let lo = sample.roi.bbox_origin();
            let hi = lo + sample.roi.bbox_size();
            for p in &sample.keypoints_2d {
                assert!(p.x > lo.x && p.y > lo.y && p.x < hi.x && p.y < hi.y);
                let back = sample.roi.heatmap_to_original(&sample.roi.original_to_heatmap(p));
                assert!((back - p).norm() < 1e-9);
            }
            assert!(sample.gt.translation().z >= 400.0 && sample.gt.translation().z <= 1500.0);
        }
    }

    #[test]
    fn identity_view_fits_in_bbox() {
        let mesh = box_mesh(Vec3::new(100.0, 100.0, 100.0), 4);
        let keypoints = select_keypoints(&mesh, Strategy::Fps, 50, &CurvatureParams::default(), 0).unwrap();
        let intr = CameraIntrinsics::linemod();
        let gt = Pose::new(crate::geometry::Mat3::identity(), Vec3::new(0.0, 0.0, 500.0)).unwrap();
        let kp: Vec<Vec2> = keypoints.points.iter().map(|x| intr.project(&gt.transform_point(x)).unwrap()).collect();
        let roi = RoiTransform::around_points(&kp, BBOX_PAD_FRACTION).unwrap();
        for p in &kp {
            let h = roi.original_to_heatmap(p);
            assert!(h.x > 0.0 && h.y > 0.0 && h.x < 64.0 && h.y < 64.0);
        }
    }

    #[test]
    fn scenes_and_runs_are_deterministic() {
        let a = scene(12, 9);
        let b = scene(12, 9);
        assert_eq!(a.samples, b.samples);
        let noise = NoiseConfig {
            pixel_noise_sigma: 1.0,
            outlier_fraction: 0.1,
            dropout_fraction: 0.1,
            bbox_jitter: 2.0,
            seed: 5,
            ..Default::default()
        };
        let ra = run_pipeline(&a, &noise, &RansacConfig::default()).unwrap();
        let rb = run_pipeline(&b, &noise, &RansacConfig::default()).unwrap();
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        ra.write_csv(&mut ca).unwrap();
        rb.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        let header = String::from_utf8(ca).unwrap();
        assert!(header.starts_with("index,add_mm,threshold_mm,correct,n_inliers,reproj_err_px\n"));
    }

    #[test]
    fn noiseless_run_is_accurate() {
        let s = scene(30, 1);
        let run = run_pipeline(&s, &NoiseConfig::default(), &RansacConfig::default()).unwrap();
        assert_eq!(run.accuracy(), 1.0);
    }

    #[test]
    fn all_outliers_never_reach_consensus() {
        let s = scene(10, 2);
        let noise = NoiseConfig {
            outlier_fraction: 1.0,
            seed: 3,
            ..Default::default()
        };
        let run = run_pipeline(&s, &noise, &RansacConfig::default()).unwrap();
        assert_eq!(run.accuracy(), 0.0);
        assert!(run.outcomes.iter().all(|o| o.pose.is_none() && o.failure.is_some()));
    }

    #[test]
    fn config_validation() {
        let noise = NoiseConfig {
            outlier_fraction: 1.5,
            ..Default::default()
        };
        assert!(noise.validate().is_err());
        let cfg = SceneConfig {
            n_keypoints: 3,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
