//! Rigid transforms, pinhole projection and the region-of-interest chain
//! `original image <-> crop <-> heatmap`.
//!
//! Pixel coordinates are continuous with `(0, 0)` at the center of the
//! top-left pixel, x to the right and y downward. Nothing in this module
//! rounds; quantization only happens when heatmaps are rasterized.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance on `‖RᵀR − I‖_max` and `|det R − 1|` for a matrix to count as a rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_CROP_SIZE: f64 = 256.0;
pub const DEFAULT_HEATMAP_SIZE: f64 = 64.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth z = {z}")]
    NonPositiveDepth { z: f64 },
    #[error("matrix is not a proper rotation (orthonormality error {ortho_error:e}, det {det})")]
    NotARotation { ortho_error: f64, det: f64 },
    #[error("pose translation is not finite")]
    NonFiniteTranslation,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid region of interest: {0}")]
    InvalidRoi(String),
}

/// Rigid transform `x -> R x + t` from the model frame into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseJson", into = "PoseJson")]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct PoseJson {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl TryFrom<PoseJson> for Pose {
    type Error = GeometryError;

    fn try_from(value: PoseJson) -> Result<Self, Self::Error> {
        // JSON rotation is row-major.
        let r = Mat3::from_row_slice(&value.rotation);
        Pose::new(r, Vec3::from(value.translation))
    }
}

impl From<Pose> for PoseJson {
    fn from(pose: Pose) -> Self {
        let r = pose.rotation;
        let mut rotation = [0.0; 9];
        for row in 0..3 {
            for col in 0..3 {
                rotation[row * 3 + col] = r[(row, col)];
            }
        }
        PoseJson {
            rotation,
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
        }
    }
}

impl Pose {
    /// Builds a pose, rejecting matrices that are not orthonormal with det 1.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let ortho_error = (rotation.transpose() * rotation - Mat3::identity()).amax();
        let det = rotation.determinant();
        if !(ortho_error < ROTATION_TOLERANCE && (det - 1.0).abs() < ROTATION_TOLERANCE) {
            return Err(GeometryError::NotARotation { ortho_error, det });
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFiniteTranslation);
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Pose from an axis-angle vector (direction = axis, norm = angle in radians).
    pub fn from_axis_angle(axis_angle: &Vec3, translation: Vec3) -> Self {
        Self {
            rotation: rotation_from_axis_angle(axis_angle),
            translation,
        }
    }

    pub(crate) fn from_parts_unchecked(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn axis_angle(&self) -> Vec3 {
        axis_angle_from_rotation(&self.rotation)
    }

    /// `R p + t`
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Geodesic angle in radians between the two rotations.
    pub fn rotation_error(&self, other: &Pose) -> f64 {
        let d = self.rotation.transpose() * other.rotation;
        // atan2 form stays accurate near 0 and π, unlike acos of the trace.
        let sin2 = Vec3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]).norm();
        sin2.atan2(d.trace() - 1.0)
    }

    pub fn translation_error(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

/// Rodrigues' formula.
pub fn rotation_from_axis_angle(axis_angle: &Vec3) -> Mat3 {
    Rotation3::from_scaled_axis(*axis_angle).into_inner()
}

pub fn axis_angle_from_rotation(rotation: &Mat3) -> Vec3 {
    Rotation3::from_matrix_unchecked(*rotation).scaled_axis()
}

pub fn rot_x(angle: f64) -> Mat3 {
    rotation_from_axis_angle(&Vec3::new(angle, 0.0, 0.0))
}

pub fn rot_y(angle: f64) -> Mat3 {
    rotation_from_axis_angle(&Vec3::new(0.0, angle, 0.0))
}

pub fn rot_z(angle: f64) -> Mat3 {
    rotation_from_axis_angle(&Vec3::new(0.0, 0.0, angle))
}

/// Closest rotation to `m` in the Frobenius norm (`U diag(1, 1, det(UVᵀ)) Vᵀ`).
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Rotation drawn uniformly from SO(3) (normalized 4D Gaussian quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    loop {
        let q = Vector4::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = q.norm();
        if n > 1e-8 {
            let q = nalgebra::Quaternion::new(q[0] / n, q[1] / n, q[2] / n, q[3] / n);
            return UnitQuaternion::new_unchecked(q).to_rotation_matrix().into_inner();
        }
    }
}

/// Ideal pinhole camera, no distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let intr = Self { fx, fy, cx, cy };
        intr.validate()?;
        Ok(intr)
    }

    /// LINEMOD camera.
    pub fn linemod() -> Self {
        Self {
            fx: 572.4114,
            fy: 573.57043,
            cx: 325.2611,
            cy: 242.04899,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "need finite values with fx > 0 and fy > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn project(&self, p_cam: &Vec3) -> Result<Vec2, GeometryError> {
        if !(p_cam.z > 0.0) {
            return Err(GeometryError::NonPositiveDepth { z: p_cam.z });
        }
        Ok(Vec2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }

    /// Pixel to normalized image plane coordinates (`z = 1`).
    pub fn normalize(&self, p_px: &Vec2) -> Vec2 {
        Vec2::new((p_px.x - self.cx) / self.fx, (p_px.y - self.cy) / self.fy)
    }
}

/// Affine chain from a detection box in the original image to the fixed-size
/// crop and on to the heatmap grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RoiJson", into = "RoiJson")]
pub struct RoiTransform {
    bbox_origin: Vec2,
    bbox_size: Vec2,
    crop_size: Vec2,
    heatmap_size: Vec2,
}

#[derive(Serialize, Deserialize)]
struct RoiJson {
    bbox_origin: [f64; 2],
    bbox_size: [f64; 2],
    #[serde(default = "default_crop")]
    crop_size: [f64; 2],
    #[serde(default = "default_heatmap")]
    heatmap_size: [f64; 2],
}

fn default_crop() -> [f64; 2] {
    [DEFAULT_CROP_SIZE; 2]
}

fn default_heatmap() -> [f64; 2] {
    [DEFAULT_HEATMAP_SIZE; 2]
}

impl TryFrom<RoiJson> for RoiTransform {
    type Error = GeometryError;

    fn try_from(v: RoiJson) -> Result<Self, Self::Error> {
        RoiTransform::with_sizes(
            Vec2::from(v.bbox_origin),
            Vec2::from(v.bbox_size),
            Vec2::from(v.crop_size),
            Vec2::from(v.heatmap_size),
        )
    }
}

impl From<RoiTransform> for RoiJson {
    fn from(r: RoiTransform) -> Self {
        RoiJson {
            bbox_origin: [r.bbox_origin.x, r.bbox_origin.y],
            bbox_size: [r.bbox_size.x, r.bbox_size.y],
            crop_size: [r.crop_size.x, r.crop_size.y],
            heatmap_size: [r.heatmap_size.x, r.heatmap_size.y],
        }
    }
}

impl RoiTransform {
    /// Box in the original image with the default 256×256 crop and 64×64 heatmap.
    pub fn new(bbox_origin: Vec2, bbox_size: Vec2) -> Result<Self, GeometryError> {
        Self::with_sizes(
            bbox_origin,
            bbox_size,
            Vec2::repeat(DEFAULT_CROP_SIZE),
            Vec2::repeat(DEFAULT_HEATMAP_SIZE),
        )
    }

    pub fn with_sizes(
        bbox_origin: Vec2,
        bbox_size: Vec2,
        crop_size: Vec2,
        heatmap_size: Vec2,
    ) -> Result<Self, GeometryError> {
        let all = [bbox_origin, bbox_size, crop_size, heatmap_size];
        if !all.iter().all(|v| v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::InvalidRoi("non-finite value".into()));
        }
        for (name, v) in [("bbox_size", bbox_size), ("crop_size", crop_size), ("heatmap_size", heatmap_size)] {
            if v.x <= 0.0 || v.y <= 0.0 {
                return Err(GeometryError::InvalidRoi(format!(
                    "{name} must be positive, got ({}, {})",
                    v.x, v.y
                )));
            }
        }
        Ok(Self {
            bbox_origin,
            bbox_size,
            crop_size,
            heatmap_size,
        })
    }

    pub fn bbox_origin(&self) -> Vec2 {
        self.bbox_origin
    }

    pub fn bbox_size(&self) -> Vec2 {
        self.bbox_size
    }

    pub fn crop_size(&self) -> Vec2 {
        self.crop_size
    }

    pub fn heatmap_size(&self) -> Vec2 {
        self.heatmap_size
    }

    /// Heatmap rows and columns as integers.
    pub fn heatmap_dims(&self) -> (usize, usize) {
        (self.heatmap_size.y as usize, self.heatmap_size.x as usize)
    }

    /// Original-image pixels covered by one heatmap cell along (x, y).
    pub fn heatmap_cell_size(&self) -> Vec2 {
        self.bbox_size.component_div(&self.heatmap_size)
    }

    pub fn heatmap_to_crop(&self, p_hm: &Vec2) -> Vec2 {
        p_hm.component_mul(&self.crop_size.component_div(&self.heatmap_size))
    }

    pub fn crop_to_heatmap(&self, p_crop: &Vec2) -> Vec2 {
        p_crop.component_mul(&self.heatmap_size.component_div(&self.crop_size))
    }

    pub fn crop_to_original(&self, p_crop: &Vec2) -> Vec2 {
        self.bbox_origin + p_crop.component_mul(&self.bbox_size.component_div(&self.crop_size))
    }

    pub fn original_to_crop(&self, p_img: &Vec2) -> Vec2 {
        (p_img - self.bbox_origin).component_mul(&self.crop_size.component_div(&self.bbox_size))
    }

    pub fn heatmap_to_original(&self, p_hm: &Vec2) -> Vec2 {
        self.crop_to_original(&self.heatmap_to_crop(p_hm))
    }

    pub fn original_to_heatmap(&self, p_img: &Vec2) -> Vec2 {
        self.crop_to_heatmap(&self.original_to_crop(p_img))
    }

    /// Tight axis-aligned bound of `points` grown by `pad_fraction` of its
    /// extent on every side.
    pub fn around_points(points: &[Vec2], pad_fraction: f64) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::InvalidRoi("no points to bound".into()));
        }
        let mut lo = Vec2::repeat(f64::INFINITY);
        let mut hi = Vec2::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        // Degenerate extents get a one pixel floor.
        let extent = (hi - lo).map(|e| e.max(1.0));
        let pad = extent * pad_fraction;
        Self::new(lo - pad, extent + pad * 2.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn transform_point_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().transform_point(&p), p);

        let shift = Pose::new(Mat3::identity(), Vec3::new(0.0, 0.0, 10.0)).unwrap();
        assert_eq!(shift.transform_point(&Vec3::zeros()), Vec3::new(0.0, 0.0, 10.0));

        let rz = Pose::new(rot_z(FRAC_PI_2), Vec3::zeros()).unwrap();
        let q = rz.transform_point(&Vec3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(q, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn pose_rejects_non_rotation() {
        let scaled = Mat3::identity() * 1.01;
        assert!(matches!(
            Pose::new(scaled, Vec3::zeros()),
            Err(GeometryError::NotARotation { .. })
        ));
        let mut reflect = Mat3::identity();
        reflect[(2, 2)] = -1.0;
        assert!(Pose::new(reflect, Vec3::zeros()).is_err());
    }

    #[test]
    fn project_examples() {
        let intr = CameraIntrinsics::new(500.0, 500.0, 128.0, 128.0).unwrap();
        assert_eq!(intr.project(&Vec3::new(0.0, 0.0, 500.0)).unwrap(), Vec2::new(128.0, 128.0));
        assert_eq!(intr.project(&Vec3::new(100.0, 0.0, 500.0)).unwrap(), Vec2::new(228.0, 128.0));
        assert_eq!(
            intr.project(&Vec3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::NonPositiveDepth { z: -1.0 })
        );
        assert!(intr.project(&Vec3::new(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn roi_examples() {
        let roi = RoiTransform::new(Vec2::new(100.0, 50.0), Vec2::new(128.0, 64.0)).unwrap();
        let hm = Vec2::new(16.0, 8.0);
        assert_eq!(roi.heatmap_to_crop(&hm), Vec2::new(64.0, 32.0));
        assert_eq!(roi.heatmap_to_original(&hm), Vec2::new(132.0, 58.0));
        assert_eq!(roi.original_to_heatmap(&Vec2::new(132.0, 58.0)), hm);
        assert_eq!(roi.heatmap_to_original(&Vec2::zeros()), roi.bbox_origin());
        assert_eq!(roi.original_to_heatmap(&roi.bbox_origin()), Vec2::zeros());

        let full = RoiTransform::new(Vec2::zeros(), Vec2::new(256.0, 256.0)).unwrap();
        assert_eq!(full.heatmap_to_original(&Vec2::new(32.0, 32.0)), Vec2::new(128.0, 128.0));
        assert_eq!(full.original_to_heatmap(&Vec2::new(128.0, 128.0)), Vec2::new(32.0, 32.0));
    }

    #[test]
    fn roi_rejects_empty_box() {
        assert!(RoiTransform::new(Vec2::zeros(), Vec2::new(0.0, 10.0)).is_err());
        assert!(RoiTransform::new(Vec2::zeros(), Vec2::new(10.0, -1.0)).is_err());
    }

    #[test]
    fn roi_around_points_contains_points() {
        let pts = [Vec2::new(10.0, 20.0), Vec2::new(30.0, 60.0), Vec2::new(15.0, 25.0)];
        let roi = RoiTransform::around_points(&pts, 0.1).unwrap();
        assert_relative_eq!(roi.bbox_origin(), Vec2::new(8.0, 16.0), epsilon = 1e-12);
        assert_relative_eq!(roi.bbox_size(), Vec2::new(24.0, 48.0), epsilon = 1e-12);
    }

    #[test]
    fn pose_json_is_row_major() {
        let pose = Pose::new(rot_z(FRAC_PI_2), Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let json = serde_json::to_value(pose).unwrap();
        let rot: Vec<f64> = serde_json::from_value(json["rotation"].clone()).unwrap();
        // rot_z(90°) first row is (cos, -sin, 0).
        assert_relative_eq!(rot[1], -1.0, epsilon = 1e-15);
        assert_relative_eq!(rot[3], 1.0, epsilon = 1e-15);
        let back: Pose = serde_json::from_value(json).unwrap();
        assert_eq!(back, pose);

        let bad = r#"{"rotation":[2,0,0,0,1,0,0,0,1],"translation":[0,0,0]}"#;
        assert!(serde_json::from_str::<Pose>(bad).is_err());
    }

    #[test]
    fn intrinsics_json_shape() {
        let intr: CameraIntrinsics =
            serde_json::from_str(r#"{"fx":500,"fy":510,"cx":128,"cy":120}"#).unwrap();
        assert_eq!(intr, CameraIntrinsics::new(500.0, 510.0, 128.0, 120.0).unwrap());
    }

    #[test]
    fn nearest_rotation_fixes_perturbation() {
        let r = rot_y(0.3) * rot_x(-1.1);
        let mut noisy = r;
        noisy[(0, 1)] += 1e-3;
        let fixed = nearest_rotation(&noisy);
        assert!(Pose::new(fixed, Vec3::zeros()).is_ok());
        assert!((fixed - r).amax() < 2e-3);
    }

    #[test]
    fn random_rotations_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r = random_rotation(&mut rng);
            assert!(Pose::new(r, Vec3::zeros()).is_ok());
        }
    }

    #[test]
    fn axis_angle_round_trip() {
        let aa = Vec3::new(0.3, -0.2, 1.4);
        let r = rotation_from_axis_angle(&aa);
        assert_relative_eq!(axis_angle_from_rotation(&r), aa, epsilon = 1e-12);
    }

    #[test]
    fn compose_and_inverse() {
        let a = Pose::from_axis_angle(&Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, 2.0, 3.0));
        let id = a.compose(&a.inverse());
        assert!(id.rotation_error(&Pose::identity()) < 1e-12);
        assert!(id.translation().norm() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
            (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn transform_preserves_distances(aa in vec3(3.0), t in vec3(1000.0), p in vec3(500.0), q in vec3(500.0)) {
                let pose = Pose::from_axis_angle(&aa, t);
                let d0 = (p - q).norm();
                let d1 = (pose.transform_point(&p) - pose.transform_point(&q)).norm();
                prop_assert!((d0 - d1).abs() < 1e-9);
            }

            #[test]
            fn roi_round_trip(
                ox in -500.0..1500.0f64, oy in -500.0..1500.0f64,
                w in 1.0..800.0f64, h in 1.0..800.0f64,
                px in -2000.0..2000.0f64, py in -2000.0..2000.0f64,
            ) {
                let roi = RoiTransform::new(Vec2::new(ox, oy), Vec2::new(w, h)).unwrap();
                let p = Vec2::new(px, py);
                let back = roi.heatmap_to_original(&roi.original_to_heatmap(&p));
                prop_assert!((back - p).amax() < 1e-9);
                let hm = Vec2::new(px / 30.0, py / 30.0);
                let back = roi.original_to_heatmap(&roi.heatmap_to_original(&hm));
                prop_assert!((back - hm).amax() < 1e-9);
            }

            #[test]
            fn projection_depth_scale_invariant(p in vec3(300.0), z in 10.0..2000.0f64, lambda in 0.01..100.0f64) {
                let intr = CameraIntrinsics::linemod();
                let p = Vec3::new(p.x, p.y, z);
                let a = intr.project(&p).unwrap();
                let b = intr.project(&(p * lambda)).unwrap();
                prop_assert!((a - b).amax() < 1e-9);
            }
        }
    }
}
