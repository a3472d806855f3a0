//! 3D keypoint selection on object models.
//!
//! * Farthest point sampling: greedy max-min selection, ties to the lowest index.
//! * Curvature point sampling: top-k of `κ(p) · ‖p − p̄‖` where
//!   `κ = λ0 / (λ0 + λ1 + λ2 + ε)` comes from the covariance of the point's
//!   k-neighborhood (the point itself included), eigenvalues ascending.

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Mat3, Vec3};
use crate::knn::{dist_sq, NeighborIndex};
use crate::mesh_io::{centroid, KeypointFile, PointCloud, TriangleMesh};

pub const DEFAULT_KEYPOINT_COUNT: usize = 50;
/// Meshes with fewer vertices are densified before CPS.
pub const DENSIFY_BELOW_VERTICES: usize = 5_000;
pub const DENSIFY_TARGET_POINTS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid keypoint count {k} for a cloud of {n} points (need 1 <= k <= n)")]
    InvalidK { k: usize, n: usize },
    #[error("start index {start} out of range for {n} points")]
    InvalidStart { start: usize, n: usize },
    #[error("curvature needs more than {k_neighbors} points, got {n}")]
    InsufficientPoints { n: usize, k_neighbors: usize },
    #[error("invalid curvature parameters: {0}")]
    InvalidParams(String),
    #[error("mesh has no faces to sample")]
    NoFaces,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Fps,
    Cps,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Fps => "fps",
            Strategy::Cps => "cps",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub object_id: String,
    pub strategy: Strategy,
    pub points: Vec<Vec3>,
    pub source_indices: Vec<usize>,
}

impl KeypointSet {
    fn from_indices(strategy: Strategy, pc: &PointCloud, indices: Vec<usize>) -> Self {
        Self {
            object_id: String::new(),
            strategy,
            points: indices.iter().map(|&i| pc.points()[i]).collect(),
            source_indices: indices,
        }
    }

    pub fn with_object_id(mut self, object_id: impl Into<String>) -> Self {
        self.object_id = object_id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_file(&self) -> KeypointFile {
        KeypointFile::new(self.object_id.clone(), &self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvatureParams {
    /// Neighborhood size, the query point included.
    pub k_neighbors: usize,
    pub epsilon: f64,
}

impl Default for CurvatureParams {
    fn default() -> Self {
        Self {
            k_neighbors: 16,
            epsilon: 1e-8,
        }
    }
}

impl CurvatureParams {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.k_neighbors < 4 {
            return Err(SamplingError::InvalidParams(format!(
                "k_neighbors must be >= 4, got {}",
                self.k_neighbors
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(SamplingError::InvalidParams(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// First FPS point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FpsStart {
    /// Point 0.
    #[default]
    First,
    Index(usize),
    /// Uniform random start drawn from a ChaCha8 stream with this seed.
    Seeded(u64),
}

pub fn fps(pc: &PointCloud, k: usize, start: FpsStart) -> Result<KeypointSet, SamplingError> {
    let pts = pc.points();
    let n = pts.len();
    if k == 0 || k > n {
        return Err(SamplingError::InvalidK { k, n });
    }
    let first = match start {
        FpsStart::First => 0,
        FpsStart::Index(i) if i < n => i,
        FpsStart::Index(i) => return Err(SamplingError::InvalidStart { start: i, n }),
        FpsStart::Seeded(seed) => ChaCha8Rng::seed_from_u64(seed).random_range(0..n),
    };

    let mut selected = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut order = Vec::with_capacity(k);
    let mut current = first;
    loop {
        selected[current] = true;
        order.push(current);
        if order.len() == k {
            break;
        }
        let anchor = pts[current];
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in pts.iter().enumerate() {
            if selected[i] {
                continue;
            }
            let d = dist_sq(&anchor, p);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            // Strict '>' keeps the lowest index on ties.
            if best.is_none_or(|(_, bd)| min_dist[i] > bd) {
                best = Some((i, min_dist[i]));
            }
        }
        current = best.expect("k <= n leaves an unselected point").0;
    }
    Ok(KeypointSet::from_indices(Strategy::Fps, pc, order))
}

/// Per-point curvature `λ0 / (λ0 + λ1 + λ2 + ε)`, in `[0, 1/3]`.
///
/// Points are independent, so the parallel map is bit-identical to a
/// sequential loop.
pub fn curvature(pc: &PointCloud, params: &CurvatureParams) -> Result<Vec<f64>, SamplingError> {
    params.validate()?;
    let pts = pc.points();
    if pts.len() <= params.k_neighbors {
        return Err(SamplingError::InsufficientPoints {
            n: pts.len(),
            k_neighbors: params.k_neighbors,
        });
    }
    let index = NeighborIndex::new(pts);
    Ok((0..pts.len())
        .into_par_iter()
        .map(|i| {
            let mut hood = Vec::with_capacity(params.k_neighbors);
            hood.push(pts[i]);
            hood.extend(
                index
                    .knn(&pts[i], params.k_neighbors - 1, Some(i))
                    .into_iter()
                    .map(|n| pts[n.index]),
            );
            let ev = covariance_eigenvalues(&hood);
            ev[0] / (ev[0] + ev[1] + ev[2] + params.epsilon)
        })
        .collect())
}

/// Ascending eigenvalues of the population covariance, clamped at zero.
pub(crate) fn covariance_eigenvalues(points: &[Vec3]) -> [f64; 3] {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigenvalues();
    let mut ev = [eig[0].max(0.0), eig[1].max(0.0), eig[2].max(0.0)];
    ev.sort_by(f64::total_cmp);
    ev
}

/// CPS scores `κ(p) · ‖p − centroid‖`.
pub fn cps_scores(pc: &PointCloud, params: &CurvatureParams) -> Result<Vec<f64>, SamplingError> {
    let kappa = curvature(pc, params)?;
    let center = centroid(pc);
    Ok(pc
        .points()
        .iter()
        .zip(kappa)
        .map(|(p, k)| k * (p - center).norm())
        .collect())
}

/// The `k` highest-scoring points, ties to the lowest index.
pub fn cps(pc: &PointCloud, k: usize, params: &CurvatureParams) -> Result<KeypointSet, SamplingError> {
    let n = pc.len();
    if k == 0 || k > n {
        return Err(SamplingError::InvalidK { k, n });
    }
    let scores = cps_scores(pc, params)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(KeypointSet::from_indices(Strategy::Cps, pc, order))
}

/// Original vertices followed by area-weighted uniform surface samples, up
/// to `target` points in total.
pub fn densify(mesh: &TriangleMesh, target: usize, seed: u64) -> Result<PointCloud, SamplingError> {
    if !mesh.has_faces() {
        return Err(SamplingError::NoFaces);
    }
    let mut points = mesh.vertices().points().to_vec();
    if points.len() >= target {
        return Ok(mesh.vertices().clone());
    }
    let mut cumulative = Vec::with_capacity(mesh.faces().len());
    let mut total = 0.0;
    for f in 0..mesh.faces().len() {
        let [a, b, c] = mesh.triangle(f);
        total += 0.5 * (b - a).cross(&(c - a)).norm();
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(SamplingError::NoFaces);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    while points.len() < target {
        let r = unit.sample(&mut rng) * total;
        let face = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle(face);
        let (mut u, mut v) = (unit.sample(&mut rng), unit.sample(&mut rng));
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        points.push(a + (b - a) * u + (c - a) * v);
    }
    Ok(PointCloud::new(points).expect("samples of a valid mesh are finite"))
}

/// The cloud keypoints are drawn from: the vertices, densified for CPS when
/// a mesh has fewer than [`DENSIFY_BELOW_VERTICES`] vertices, and densified
/// for either strategy when there are fewer vertices than keypoints.
pub fn sampling_cloud(
    mesh: &TriangleMesh,
    strategy: Strategy,
    k: usize,
    seed: u64,
) -> Result<PointCloud, SamplingError> {
    let n = mesh.vertices().len();
    let sparse = match strategy {
        Strategy::Cps => n < DENSIFY_BELOW_VERTICES,
        Strategy::Fps => n < k,
    };
    if mesh.has_faces() && sparse {
        densify(mesh, DENSIFY_TARGET_POINTS, seed)
    } else {
        Ok(mesh.vertices().clone())
    }
}

/// Keypoints for a mesh with the given strategy (FPS starts at point 0).
pub fn select_keypoints(
    mesh: &TriangleMesh,
    strategy: Strategy,
    k: usize,
    params: &CurvatureParams,
    seed: u64,
) -> Result<KeypointSet, SamplingError> {
    let cloud = sampling_cloud(mesh, strategy, k, seed)?;
    match strategy {
        Strategy::Fps => fps(&cloud, k, FpsStart::First),
        Strategy::Cps => cps(&cloud, k, params),
    }
}
