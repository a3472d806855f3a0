//! Pose from 2D–3D correspondences.
//!
//! [`solve_pnp`] initializes with a normalized DLT on the calibrated image
//! plane and refines the six pose parameters with Levenberg–Marquardt on
//! the pixel reprojection error. [`solve_pnp_ransac`] wraps it in a seeded
//! RANSAC over 6-point samples.

mod dlt;
mod lm;
mod ransac;

use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose, Vec2, Vec3};

pub use ransac::{solve_pnp_ransac, PoseEstimate, RansacConfig};

/// Smallest sample the DLT initializer can solve.
pub const MIN_CORRESPONDENCES: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { got: usize, needed: usize },
    #[error("correspondence lists differ in length: {points_3d} 3D vs {points_2d} 2D vs {weights} weights")]
    LengthMismatch { points_3d: usize, points_2d: usize, weights: usize },
    #[error("non-finite coordinate or weight at correspondence {0}")]
    NonFinite(usize),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("Levenberg-Marquardt did not converge in {iterations} iterations")]
    NotConverged { best: Pose, iterations: usize },
    #[error("no consensus: best hypothesis had {best_inliers} inliers, need {min_inliers}")]
    NoConsensus { best_inliers: usize, min_inliers: usize },
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(String),
}

/// Paired model points (mm) and image observations (px).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub points_3d: Vec<Vec3>,
    pub points_2d: Vec<Vec2>,
    /// Optional per-correspondence confidence in `[0, 1]`.
    pub weights: Option<Vec<f64>>,
}

impl CorrespondenceSet {
    pub fn new(points_3d: Vec<Vec3>, points_2d: Vec<Vec2>) -> Result<Self, PnpError> {
        let set = Self {
            points_3d,
            points_2d,
            weights: None,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self, PnpError> {
        self.weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points_3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points_3d.is_empty()
    }

    pub fn validate(&self) -> Result<(), PnpError> {
        let weights_len = self.weights.as_ref().map_or(self.points_3d.len(), Vec::len);
        if self.points_3d.len() != self.points_2d.len() || weights_len != self.points_3d.len() {
            return Err(PnpError::LengthMismatch {
                points_3d: self.points_3d.len(),
                points_2d: self.points_2d.len(),
                weights: weights_len,
            });
        }
        for i in 0..self.len() {
            let finite = self.points_3d[i].iter().all(|v| v.is_finite())
                && self.points_2d[i].iter().all(|v| v.is_finite());
            let weight_ok = self
                .weights
                .as_ref()
                .is_none_or(|w| (0.0..=1.0).contains(&w[i]));
            if !finite || !weight_ok {
                return Err(PnpError::NonFinite(i));
            }
        }
        Ok(())
    }

    /// Subset by index, weights included.
    pub fn select(&self, indices: &[usize]) -> CorrespondenceSet {
        CorrespondenceSet {
            points_3d: indices.iter().map(|&i| self.points_3d[i]).collect(),
            points_2d: indices.iter().map(|&i| self.points_2d[i]).collect(),
            weights: self.weights.as_ref().map(|w| indices.iter().map(|&i| w[i]).collect()),
        }
    }

    fn without_weights(&self) -> CorrespondenceSet {
        CorrespondenceSet {
            points_3d: self.points_3d.clone(),
            points_2d: self.points_2d.clone(),
            weights: None,
        }
    }
}

/// Outcome of [`solve_pnp_detailed`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    pub pose: Pose,
    pub converged: bool,
    pub iterations: usize,
    /// Weighted sum of squared pixel residuals.
    pub cost: f64,
}

/// DLT + Levenberg–Marquardt pose; `NotConverged` carries the best iterate.
pub fn solve_pnp(corr: &CorrespondenceSet, intr: &CameraIntrinsics) -> Result<Pose, PnpError> {
    let sol = solve_pnp_detailed(corr, intr)?;
    if sol.converged {
        Ok(sol.pose)
    } else {
        Err(PnpError::NotConverged {
            best: sol.pose,
            iterations: sol.iterations,
        })
    }
}

/// Like [`solve_pnp`] but reports convergence as a flag instead of an error.
pub fn solve_pnp_detailed(corr: &CorrespondenceSet, intr: &CameraIntrinsics) -> Result<PnpSolution, PnpError> {
    corr.validate()?;
    intr.validate()
        .map_err(|e| PnpError::DegenerateConfiguration(e.to_string()))?;
    if corr.len() < MIN_CORRESPONDENCES {
        return Err(PnpError::TooFewCorrespondences {
            got: corr.len(),
            needed: MIN_CORRESPONDENCES,
        });
    }
    let init = dlt::initial_pose(corr, intr)?;
    Ok(lm::refine(corr, intr, &init))
}

/// Pixel distance between each projected model point and its observation;
/// `+∞` when the transformed point is not in front of the camera.
pub fn reprojection_errors(pose: &Pose, corr: &CorrespondenceSet, intr: &CameraIntrinsics) -> Vec<f64> {
    corr.points_3d
        .iter()
        .zip(&corr.points_2d)
        .map(|(x, obs)| match intr.project(&pose.transform_point(x)) {
            Ok(p) => (p - obs).norm(),
            Err(_) => f64::INFINITY,
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::geometry::random_rotation;
    use rand::Rng;

    pub fn cube_corners(half: f64) -> Vec<Vec3> {
        (0..8)
            .map(|i| {
                Vec3::new(
                    if i & 1 == 0 { -half } else { half },
                    if i & 2 == 0 { -half } else { half },
                    if i & 4 == 0 { -half } else { half },
                )
            })
            .collect()
    }

    pub fn project_all(pose: &Pose, pts: &[Vec3], intr: &CameraIntrinsics) -> Vec<Vec2> {
        pts.iter()
            .map(|p| intr.project(&pose.transform_point(p)).unwrap())
            .collect()
    }

    pub fn random_pose<R: Rng>(rng: &mut R) -> Pose {
        Pose::new(
            random_rotation(rng),
            Vec3::new(
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
                rng.random_range(400.0..1500.0),
            ),
        )
        .unwrap()
    }

    pub fn random_model<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-60.0..60.0),
                    rng.random_range(-60.0..60.0),
                    rng.random_range(-60.0..60.0),
                )
            })
            .collect()
    }
}
