//! ADD / ADD-S pose error and accuracy under a diameter-fraction threshold.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Vec3};
use crate::knn::{dist_sq, NeighborIndex};
use crate::mesh_io::{MeshError, PointCloud};

/// Models larger than this are strided down before scoring.
pub const MAX_MODEL_POINTS: usize = 10_000;
/// ADD-S nearest-neighbor search is exhaustive up to this many points.
pub const ADDS_BRUTE_FORCE_LIMIT: usize = 5_000;
pub const DEFAULT_DIAMETER_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("diameter fraction must be positive and finite, got {0}")]
    InvalidFraction(f64),
    #[error("nothing to evaluate")]
    NoRecords,
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Add,
    Adds,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Add => "add",
            Metric::Adds => "adds",
        })
    }
}

/// A scored object: evaluation points plus the diameter of the full model.
#[derive(Debug, Clone)]
pub struct ObjectModel {
    pub object_id: String,
    pub points: PointCloud,
    pub diameter: f64,
    pub symmetric: bool,
}

impl ObjectModel {
    pub fn new(object_id: impl Into<String>, cloud: &PointCloud, symmetric: bool) -> Result<Self, MetricsError> {
        Ok(Self {
            object_id: object_id.into(),
            diameter: cloud.diameter()?,
            points: cloud.subsample_stride(MAX_MODEL_POINTS),
            symmetric,
        })
    }

    pub fn metric(&self) -> Metric {
        if self.symmetric {
            Metric::Adds
        } else {
            Metric::Add
        }
    }

    pub fn score(&self, gt: &Pose, pred: &Pose) -> f64 {
        match self.metric() {
            Metric::Add => add(gt, pred, &self.points),
            Metric::Adds => add_s(gt, pred, &self.points),
        }
    }
}

/// Mean distance between corresponding model points under the two poses.
pub fn add(gt: &Pose, pred: &Pose, model: &PointCloud) -> f64 {
    let total: f64 = model
        .points()
        .iter()
        .map(|x| (gt.transform_point(x) - pred.transform_point(x)).norm())
        .sum();
    total / model.len() as f64
}

/// Mean distance from each ground-truth point to the closest predicted point.
pub fn add_s(gt: &Pose, pred: &Pose, model: &PointCloud) -> f64 {
    let gt_pts: Vec<Vec3> = model.points().iter().map(|x| gt.transform_point(x)).collect();
    let pred_pts: Vec<Vec3> = model.points().iter().map(|x| pred.transform_point(x)).collect();
    // Collected in order and summed sequentially so the result is independent of scheduling.
    let nearest: Vec<f64> = if pred_pts.len() <= ADDS_BRUTE_FORCE_LIMIT {
        gt_pts
            .par_iter()
            .map(|g| pred_pts.iter().map(|p| dist_sq(g, p)).fold(f64::INFINITY, f64::min).sqrt())
            .collect()
    } else {
        let index = NeighborIndex::new(&pred_pts);
        gt_pts
            .par_iter()
            .map(|g| index.nearest(g).map_or(f64::INFINITY, |n| n.dist_sq.sqrt()))
            .collect()
    };
    nearest.iter().sum::<f64>() / nearest.len() as f64
}

/// One scored prediction. A missing prediction scores `+∞` and is incorrect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub object_id: String,
    pub add_value: f64,
    pub threshold: f64,
    pub symmetric: bool,
    pub correct: bool,
}

impl EvalRecord {
    pub fn score(model: &ObjectModel, gt: &Pose, pred: Option<&Pose>, diameter_fraction: f64) -> Self {
        let add_value = pred.map_or(f64::INFINITY, |p| model.score(gt, p));
        let threshold = diameter_fraction * model.diameter;
        Self {
            object_id: model.object_id.clone(),
            add_value,
            threshold,
            symmetric: model.symmetric,
            correct: add_value < threshold,
        }
    }
}

/// Input to [`evaluate`].
#[derive(Debug, Clone, Copy)]
pub struct PoseSample<'a> {
    pub model: &'a ObjectModel,
    pub gt: Pose,
    pub pred: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAccuracy {
    pub object_id: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Sorted by object id.
    pub per_object: Vec<ObjectAccuracy>,
    /// Unweighted mean of the per-object accuracies.
    pub mean_accuracy: f64,
    pub records: Vec<EvalRecord>,
}

impl EvalSummary {
    /// Aggregates already-scored records.
    pub fn from_records(records: Vec<EvalRecord>) -> Result<Self, MetricsError> {
        if records.is_empty() {
            return Err(MetricsError::NoRecords);
        }
        let mut groups: BTreeMap<&str, (usize, usize, bool)> = BTreeMap::new();
        for r in &records {
            let g = groups.entry(&r.object_id).or_insert((0, 0, r.symmetric));
            g.0 += 1;
            g.1 += usize::from(r.correct);
        }
        let per_object: Vec<ObjectAccuracy> = groups
            .into_iter()
            .map(|(id, (n, correct, symmetric))| ObjectAccuracy {
                object_id: id.to_string(),
                n,
                correct,
                accuracy: correct as f64 / n as f64,
                metric: if symmetric { Metric::Adds } else { Metric::Add },
            })
            .collect();
        let mean_accuracy = per_object.iter().map(|o| o.accuracy).sum::<f64>() / per_object.len() as f64;
        Ok(Self {
            per_object,
            mean_accuracy,
            records,
        })
    }

    pub fn correct_count(&self) -> usize {
        self.records.iter().filter(|r| r.correct).count()
    }
}

/// Scores every sample (ADD-S for symmetric models) and aggregates.
pub fn evaluate(samples: &[PoseSample<'_>], diameter_fraction: f64) -> Result<EvalSummary, MetricsError> {
    if !(diameter_fraction > 0.0) || !diameter_fraction.is_finite() {
        return Err(MetricsError::InvalidFraction(diameter_fraction));
    }
    let records: Vec<EvalRecord> = samples
        .par_iter()
        .map(|s| EvalRecord::score(s.model, &s.gt, s.pred.as_ref(), diameter_fraction))
        .collect();
    EvalSummary::from_records(records)
}
