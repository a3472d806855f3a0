//! Levenberg–Marquardt refinement of the reprojection error.

use nalgebra::{Matrix2x3, Matrix6, Vector6};

use super::{CorrespondenceSet, PnpSolution};
use crate::geometry::{rotation_from_axis_angle, CameraIntrinsics, Pose, Vec3};

pub(super) const MAX_ITERATIONS: usize = 100;
pub(super) const RELATIVE_DECREASE_TOL: f64 = 1e-10;
const INITIAL_DAMPING: f64 = 1e-3;
const DAMPING_UP: f64 = 10.0;
const DAMPING_DOWN: f64 = 0.1;
/// Once damping exceeds this, no step can lower the cost in floating point.
const DAMPING_CEILING: f64 = 1e12;
/// Squared pixel residual per point treated as an exact fit.
const NEGLIGIBLE_COST_PER_POINT: f64 = 1e-24;

fn weight(corr: &CorrespondenceSet, i: usize) -> f64 {
    corr.weights.as_ref().map_or(1.0, |w| w[i])
}

/// Weighted sum of squared pixel residuals; `None` if any point has `z <= 0`.
pub(super) fn cost(pose: &Pose, corr: &CorrespondenceSet, intr: &CameraIntrinsics) -> Option<f64> {
    let mut total = 0.0;
    for (i, (x, obs)) in corr.points_3d.iter().zip(&corr.points_2d).enumerate() {
        let p = intr.project(&pose.transform_point(x)).ok()?;
        total += weight(corr, i) * (p - obs).norm_squared();
    }
    Some(total)
}

/// Gauss–Newton normal equations for a left-multiplied rotation increment
/// `exp([ω]×) R` and an additive translation increment.
fn normal_equations(pose: &Pose, corr: &CorrespondenceSet, intr: &CameraIntrinsics) -> (Matrix6<f64>, Vector6<f64>) {
    let mut jtj = Matrix6::zeros();
    let mut jtr = Vector6::zeros();
    for (i, (x, obs)) in corr.points_3d.iter().zip(&corr.points_2d).enumerate() {
        let w = weight(corr, i);
        let rx: Vec3 = pose.rotation() * x;
        let y = rx + pose.translation();
        let inv_z = 1.0 / y.z;
        let d_proj = Matrix2x3::new(
            intr.fx * inv_z, 0.0, -intr.fx * y.x * inv_z * inv_z, //
            0.0, intr.fy * inv_z, -intr.fy * y.y * inv_z * inv_z,
        );
        // d(ω × Rx)/dω = -[Rx]×
        let neg_skew = -rx.cross_matrix();
        let mut j = nalgebra::Matrix2x6::zeros();
        j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(d_proj * neg_skew));
        j.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_proj);
        let r = nalgebra::Vector2::new(
            intr.fx * y.x * inv_z + intr.cx - obs.x,
            intr.fy * y.y * inv_z + intr.cy - obs.y,
        );
        jtj += w * j.transpose() * j;
        jtr += w * j.transpose() * r;
    }
    (jtj, jtr)
}

fn apply(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    let omega = Vec3::new(delta[0], delta[1], delta[2]);
    let dt = Vec3::new(delta[3], delta[4], delta[5]);
    let rotation = rotation_from_axis_angle(&omega) * pose.rotation();
    Pose::from_parts_unchecked(rotation, pose.translation() + dt)
}

pub(super) fn refine(corr: &CorrespondenceSet, intr: &CameraIntrinsics, init: &Pose) -> PnpSolution {
    let mut pose = *init;
    let Some(mut current) = cost(&pose, corr, intr) else {
        return PnpSolution {
            pose,
            converged: false,
            iterations: 0,
            cost: f64::INFINITY,
        };
    };
    let negligible = NEGLIGIBLE_COST_PER_POINT * corr.len() as f64;
    let mut lambda = INITIAL_DAMPING;
    let mut converged = current <= negligible;
    let mut iterations = 0;

    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&pose, corr, intr);
        let mut damped = jtj;
        for d in 0..6 {
            damped[(d, d)] += lambda * jtj[(d, d)].max(f64::MIN_POSITIVE);
        }
        let step = damped.cholesky().map(|c| c.solve(&(-jtr)));
        let candidate = step.map(|s| apply(&pose, &s));
        let new_cost = candidate.as_ref().and_then(|p| cost(p, corr, intr));

        match (candidate, new_cost) {
            (Some(p), Some(c)) if c < current => {
                let relative = (current - c) / current;
                pose = p;
                current = c;
                lambda *= DAMPING_DOWN;
                converged = relative < RELATIVE_DECREASE_TOL || current <= negligible;
            }
            _ => {
                lambda *= DAMPING_UP;
                converged = lambda > DAMPING_CEILING;
            }
        }
    }

    PnpSolution {
        pose,
        converged,
        iterations,
        cost: current,
    }
}
