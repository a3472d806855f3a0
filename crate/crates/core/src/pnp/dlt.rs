//! Linear pose initialization.

use nalgebra::{DMatrix, Matrix3x4, Matrix4, SymmetricEigen};

use super::{CorrespondenceSet, PnpError};
use crate::geometry::{nearest_rotation, CameraIntrinsics, Mat3, Pose, Vec2, Vec3};

/// Relative singular value below which the DLT system counts as rank deficient.
const RANK_TOLERANCE: f64 = 1e-9;
/// Relative spread below which the model points count as planar.
const PLANAR_TOLERANCE: f64 = 1e-12;

/// Similarity taking `points` to zero mean and RMS distance `sqrt(dim)`.
fn normalize_3d(points: &[Vec3]) -> (Vec<Vec3>, Matrix4<f64>) {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vec3>() / n;
    let rms = (points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / n).sqrt();
    let s = if rms > 0.0 { 3f64.sqrt() / rms } else { 1.0 };
    let t = Matrix4::new(
        s, 0.0, 0.0, -s * c.x, //
        0.0, s, 0.0, -s * c.y, //
        0.0, 0.0, s, -s * c.z, //
        0.0, 0.0, 0.0, 1.0,
    );
    (points.iter().map(|p| (p - c) * s).collect(), t)
}

fn normalize_2d(points: &[Vec2]) -> (Vec<Vec2>, Mat3) {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vec2>() / n;
    let rms = (points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / n).sqrt();
    let s = if rms > 0.0 { 2f64.sqrt() / rms } else { 1.0 };
    let t = Mat3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0);
    (points.iter().map(|p| (p - c) * s).collect(), t)
}

fn check_spread(points: &[Vec3]) -> Result<(), PnpError> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vec3>() / n;
    let cov = points
        .iter()
        .map(|p| (p - c) * (p - c).transpose())
        .sum::<Mat3>()
        / n;
    let eig = SymmetricEigen::new(cov).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo <= PLANAR_TOLERANCE * hi {
        return Err(PnpError::DegenerateConfiguration(
            "model points are collinear or coplanar".into(),
        ));
    }
    Ok(())
}

/// Normalized DLT for the 3×4 calibrated projection, projected onto SE(3).
pub(super) fn initial_pose(corr: &CorrespondenceSet, intr: &CameraIntrinsics) -> Result<Pose, PnpError> {
    check_spread(&corr.points_3d)?;
    let calibrated: Vec<Vec2> = corr.points_2d.iter().map(|p| intr.normalize(p)).collect();
    let (xs, t3) = normalize_3d(&corr.points_3d);
    let (us, t2) = normalize_2d(&calibrated);

    let n = xs.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (x, u)) in xs.iter().zip(&us).enumerate() {
        let xh = [x.x, x.y, x.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = xh[j];
            a[(2 * i, 8 + j)] = -u.x * xh[j];
            a[(2 * i + 1, 4 + j)] = xh[j];
            a[(2 * i + 1, 8 + j)] = -u.y * xh[j];
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| PnpError::DegenerateConfiguration("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |k: usize| svd.singular_values[order[k]];
    if sv(0) <= 0.0 || sv(10) <= RANK_TOLERANCE * sv(0) {
        return Err(PnpError::DegenerateConfiguration(format!(
            "DLT system is rank deficient (σ₁₁/σ₁ = {:e})",
            sv(10) / sv(0)
        )));
    }
    let null = order[11];
    let p_n = Matrix3x4::from_fn(|r, c| v_t[(null, 4 * r + c)]);
    let p = t2.try_inverse().unwrap_or_else(Mat3::identity) * p_n * t3;

    // Fix the projective sign so that most points land in front of the camera.
    let in_front = corr
        .points_3d
        .iter()
        .filter(|x| (p.row(2) * x.push(1.0))[0] > 0.0)
        .count();
    let p = if 2 * in_front >= corr.len() { p } else { -p };
    let m: Mat3 = p.fixed_view::<3, 3>(0, 0).into_owned();
    let t: Vec3 = p.column(3).into_owned();
    let scale = m.determinant().abs().cbrt();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(PnpError::DegenerateConfiguration("DLT produced a singular rotation block".into()));
    }
    let rotation = nearest_rotation(&(m / scale));
    Ok(Pose::from_parts_unchecked(rotation, t / scale))
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dlt_alone_is_exact_on_noiseless_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = CameraIntrinsics::linemod();
        for _ in 0..20 {
            let gt = random_pose(&mut rng);
            let pts = random_model(&mut rng, 10);
            let corr = CorrespondenceSet::new(pts.clone(), project_all(&gt, &pts, &cam)).unwrap();
            let pose = initial_pose(&corr, &cam).unwrap();
            assert!(pose.rotation_error(&gt) < 1e-6);
            assert!(pose.translation_error(&gt) < 1e-3);
        }
    }

    #[test]
    fn normalizations_hit_target_rms() {
        let pts = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(10.0, -4.0, 0.0), Vec3::new(0.0, 0.0, 7.0)];
        let (xs, t) = normalize_3d(&pts);
        let rms = (xs.iter().map(|p| p.norm_squared()).sum::<f64>() / 3.0).sqrt();
        assert!((rms - 3f64.sqrt()).abs() < 1e-12);
        let mapped = t * pts[1].push(1.0);
        assert!((mapped.xyz() - xs[1]).norm() < 1e-12);
    }
}
