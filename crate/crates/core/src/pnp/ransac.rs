//! Hypothesize-and-verify wrapper around [`solve_pnp`](super::solve_pnp).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{reprojection_errors, solve_pnp_detailed, CorrespondenceSet, PnpError, MIN_CORRESPONDENCES};
use crate::geometry::{CameraIntrinsics, Pose};

/// Hypotheses evaluated per parallel batch before the sequential bookkeeping.
const BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Pixels; a correspondence is an inlier when its error is strictly below.
    pub reproj_threshold: f64,
    /// Values below the minimal sample size are raised to it.
    pub min_inliers: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            reproj_threshold: 3.0,
            min_inliers: MIN_CORRESPONDENCES,
            confidence: 0.999,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), PnpError> {
        if !(self.reproj_threshold > 0.0) || !self.reproj_threshold.is_finite() {
            return Err(PnpError::InvalidConfig(format!(
                "reproj_threshold must be positive, got {}",
                self.reproj_threshold
            )));
        }
        if self.max_iterations == 0 {
            return Err(PnpError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(PnpError::InvalidConfig(format!(
                "confidence must lie in (0, 1), got {}",
                self.confidence
            )));
        }
        Ok(())
    }

    fn effective_min_inliers(&self) -> usize {
        self.min_inliers.max(MIN_CORRESPONDENCES)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    pub inlier_mask: Vec<bool>,
    /// Mean reprojection error over the inliers, in pixels.
    pub mean_reproj_error: f64,
    /// Hypotheses evaluated before stopping.
    pub iterations: usize,
}

impl PoseEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

/// Iterations needed to draw one all-inlier sample with probability `confidence`.
pub(crate) fn adaptive_iterations(inlier_ratio: f64, confidence: f64, sample: usize) -> f64 {
    let good = inlier_ratio.powi(sample as i32);
    if good >= 1.0 {
        return 0.0;
    }
    if good <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / (1.0 - good).ln()).ceil()
}

struct Hypothesis {
    pose: Pose,
    mask: Vec<bool>,
    inliers: usize,
    mean_error: f64,
}

fn score(pose: Pose, corr: &CorrespondenceSet, intr: &CameraIntrinsics, threshold: f64) -> Hypothesis {
    let errors = reprojection_errors(&pose, corr, intr);
    let mask: Vec<bool> = errors.iter().map(|&e| e < threshold).collect();
    let inliers = mask.iter().filter(|&&b| b).count();
    let sum: f64 = errors.iter().zip(&mask).filter(|(_, &m)| m).map(|(e, _)| e).sum();
    let mean_error = if inliers > 0 { sum / inliers as f64 } else { f64::INFINITY };
    Hypothesis {
        pose,
        mask,
        inliers,
        mean_error,
    }
}

fn better(a: &Hypothesis, b: &Hypothesis) -> bool {
    a.inliers > b.inliers || (a.inliers == b.inliers && a.mean_error < b.mean_error)
}

fn indices_of(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

/// Seeded RANSAC over 6-point DLT+LM hypotheses, then a weighted refit on the
/// consensus set.
///
/// Samples are drawn sequentially from a ChaCha8 stream seeded with
/// `cfg.seed`; hypotheses are scored in parallel batches but folded in draw
/// order, so the result depends only on the inputs and the seed. Ties in
/// inlier count go to the lower mean inlier error, then to the earlier draw.
pub fn solve_pnp_ransac(
    corr: &CorrespondenceSet,
    intr: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<PoseEstimate, PnpError> {
    corr.validate()?;
    cfg.validate()?;
    intr.validate()
        .map_err(|e| PnpError::DegenerateConfiguration(e.to_string()))?;
    let n = corr.len();
    if n < MIN_CORRESPONDENCES {
        return Err(PnpError::TooFewCorrespondences {
            got: n,
            needed: MIN_CORRESPONDENCES,
        });
    }
    let min_inliers = cfg.effective_min_inliers();
    let unweighted = corr.without_weights();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<Vec<usize>> = (0..cfg.max_iterations)
        .map(|_| rand::seq::index::sample(&mut rng, n, MIN_CORRESPONDENCES).into_vec())
        .collect();

    let mut best: Option<Hypothesis> = None;
    let mut limit = cfg.max_iterations;
    let mut done = 0;
    'outer: for batch in samples.chunks(BATCH) {
        let results: Vec<Option<Hypothesis>> = batch
            .par_iter()
            .map(|idx| {
                let sol = solve_pnp_detailed(&unweighted.select(idx), intr).ok()?;
                Some(score(sol.pose, &unweighted, intr, cfg.reproj_threshold))
            })
            .collect();
        for hyp in results {
            if done >= limit {
                break 'outer;
            }
            done += 1;
            let Some(hyp) = hyp else { continue };
            if best.as_ref().is_none_or(|b| better(&hyp, b)) {
                let needed = adaptive_iterations(hyp.inliers as f64 / n as f64, cfg.confidence, MIN_CORRESPONDENCES);
                if needed < limit as f64 {
                    limit = (needed as usize).max(done);
                }
                best = Some(hyp);
            }
        }
    }

    let best = match best {
        Some(b) if b.inliers >= min_inliers => b,
        other => {
            return Err(PnpError::NoConsensus {
                best_inliers: other.map_or(0, |b| b.inliers),
                min_inliers,
            })
        }
    };

    // Refit on the consensus set (weights apply here only), then re-gate.
    let refit = solve_pnp_detailed(&corr.select(&indices_of(&best.mask)), intr)
        .ok()
        .map(|sol| score(sol.pose, &unweighted, intr, cfg.reproj_threshold))
        .filter(|h| h.inliers >= min_inliers);
    let chosen = refit.unwrap_or(best);

    Ok(PoseEstimate {
        pose: chosen.pose,
        inlier_mask: chosen.mask,
        mean_reproj_error: chosen.mean_error,
        iterations: done,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::{solve_pnp, Vec2};
    use super::*;
    use rand::{Rng, SeedableRng};

    fn scene(seed: u64, n: usize, outliers: usize) -> (Pose, CorrespondenceSet, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = CameraIntrinsics::linemod();
        let gt = random_pose(&mut rng);
        let pts = random_model(&mut rng, n);
        let mut obs = project_all(&gt, &pts, &cam);
        let mut truth = vec![true; n];
        for i in rand::seq::index::sample(&mut rng, n, outliers) {
            obs[i] = Vec2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            truth[i] = false;
        }
        (gt, CorrespondenceSet::new(pts, obs).unwrap(), truth)
    }

    #[test]
    fn outliers_are_rejected_exactly() {
        let cam = CameraIntrinsics::linemod();
        let (gt, corr, truth) = scene(11, 50, 10);
        let cfg = RansacConfig {
            seed: 4,
            ..Default::default()
        };
        let est = solve_pnp_ransac(&corr, &cam, &cfg).unwrap();
        assert_eq!(est.inlier_mask, truth);
        assert!(est.pose.rotation_error(&gt) < 1e-5);
        assert!(est.pose.translation_error(&gt) < 1e-2);
        assert!(est.mean_reproj_error < 1e-6);
    }

    #[test]
    fn pure_noise_has_no_consensus() {
        let cam = CameraIntrinsics::linemod();
        let (_, corr, _) = scene(12, 50, 50);
        let cfg = RansacConfig {
            min_inliers: 10,
            seed: 1,
            ..Default::default()
        };
        assert!(matches!(
            solve_pnp_ransac(&corr, &cam, &cfg),
            Err(PnpError::NoConsensus { min_inliers: 10, .. })
        ));
    }

    #[test]
    fn no_outliers_equals_plain_refit() {
        let cam = CameraIntrinsics::linemod();
        let (_, corr, _) = scene(13, 50, 0);
        let est = solve_pnp_ransac(&corr, &cam, &RansacConfig::default()).unwrap();
        assert_eq!(est.inlier_count(), 50);
        let plain = solve_pnp(&corr, &cam).unwrap();
        assert!(est.pose.rotation_error(&plain) < 1e-9);
        assert!(est.pose.translation_error(&plain) < 1e-9);
        // Full consensus on the first draw ends the search immediately.
        assert_eq!(est.iterations, 1);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let cam = CameraIntrinsics::linemod();
        let (_, corr, _) = scene(14, 40, 12);
        let cfg = RansacConfig {
            seed: 77,
            ..Default::default()
        };
        let a = solve_pnp_ransac(&corr, &cam, &cfg).unwrap();
        let b = solve_pnp_ransac(&corr, &cam, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let bad = [
            RansacConfig { reproj_threshold: 0.0, ..Default::default() },
            RansacConfig { max_iterations: 0, ..Default::default() },
            RansacConfig { confidence: 1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(PnpError::InvalidConfig(_))));
        }
    }

    #[test]
    fn adaptive_iteration_formula() {
        // ln(0.001) / ln(1 - 0.5^6)
        let expected = ((0.001f64).ln() / (1.0 - 0.015625f64).ln()).ceil();
        assert_eq!(adaptive_iterations(0.5, 0.999, 6), expected);
        assert_eq!(expected, 439.0);
        assert_eq!(adaptive_iterations(1.0, 0.999, 6), 0.0);
        assert!(adaptive_iterations(0.0, 0.999, 6).is_infinite());
    }
}
