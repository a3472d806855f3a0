//! Gaussian keypoint heatmaps: rendering, argmax decoding, the focal
//! heatmap loss, and the `HMAP` binary file format.
//!
//! `HMAP` layout (little-endian): the 4 bytes `HMAP`, then `u32` K, H, W,
//! then K·H·W `f32` values, channel-major then row-major.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;

pub const DEFAULT_SIGMA: f64 = 2.0;
pub const DEFAULT_SIZE: usize = 64;
/// Rendered values below this are stored as exact zeros.
pub const ZERO_CUTOFF: f64 = 1e-12;
/// Targets at or above `1 - ONE_TOLERANCE` take the positive loss branch.
pub const ONE_TOLERANCE: f64 = 1e-9;

const MAGIC: &[u8; 4] = b"HMAP";

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("data length {len} does not match {channels}x{height}x{width}")]
    BadLength { len: usize, channels: usize, height: usize, width: usize },
    #[error("value {value} at flat index {index} is outside [0, 1] or not finite")]
    OutOfRange { index: usize, value: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("bad HMAP file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// K channels of H×W values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl HeatmapStack {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, HeatmapError> {
        if data.len() != channels * height * width {
            return Err(HeatmapError::BadLength {
                len: data.len(),
                channels,
                height,
                width,
            });
        }
        if let Some(index) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(HeatmapError::OutOfRange {
                index,
                value: data[index],
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Value at column `x`, row `y` of channel `c`.
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Sets a value, clamping it into `[0, 1]`.
    pub fn set(&mut self, c: usize, x: usize, y: usize, value: f64) {
        self.data[(c * self.height + y) * self.width + x] = value.clamp(0.0, 1.0);
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), HeatmapError> {
        out.write_all(MAGIC)?;
        for dim in [self.channels, self.height, self.width] {
            let dim = u32::try_from(dim).map_err(|_| HeatmapError::Format("dimension exceeds u32".into()))?;
            out.write_all(&dim.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, HeatmapError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HeatmapError> {
        if bytes.len() < 16 {
            return Err(HeatmapError::Format(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(HeatmapError::Format("missing HMAP magic".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (k, h, w) = (dim(0), dim(1), dim(2));
        let count = k
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| HeatmapError::Format("dimensions overflow".into()))?;
        let expected = count
            .checked_mul(4)
            .and_then(|v| v.checked_add(16))
            .ok_or_else(|| HeatmapError::Format("dimensions overflow".into()))?;
        if bytes.len() != expected {
            return Err(HeatmapError::Format(format!(
                "expected {expected} bytes for {k}x{h}x{w}, found {}",
                bytes.len()
            )));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(k, h, w, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    pub sigma: f64,
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self { sigma: DEFAULT_SIGMA }
    }
}

/// Renders one peak-normalized Gaussian channel per keypoint, evaluated at
/// integer pixel centers. Keypoints may lie outside the grid; their
/// channels hold the visible tail or all zeros.
pub fn render(
    keypoints: &[Vec2],
    params: &GaussianParams,
    height: usize,
    width: usize,
) -> Result<HeatmapStack, HeatmapError> {
    if !(params.sigma > 0.0) || !params.sigma.is_finite() {
        return Err(HeatmapError::InvalidParams(format!("sigma must be > 0, got {}", params.sigma)));
    }
    let denom = 2.0 * params.sigma * params.sigma;
    let plane = height * width;
    let mut data = vec![0.0; keypoints.len() * plane];
    data.par_chunks_mut(plane.max(1))
        .zip(keypoints.par_iter())
        .for_each(|(channel, kp)| {
            if !kp.x.is_finite() || !kp.y.is_finite() {
                return;
            }
            for y in 0..height {
                let dy = y as f64 - kp.y;
                for x in 0..width {
                    let dx = x as f64 - kp.x;
                    let v = (-(dx * dx + dy * dy) / denom).exp();
                    channel[y * width + x] = if v < ZERO_CUTOFF { 0.0 } else { v.min(1.0) };
                }
            }
        });
    HeatmapStack::new(keypoints.len(), height, width, data)
}

/// Argmax of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Integer (column, row) of the maximum.
    pub position: Vec2,
    pub value: f64,
}

/// Per-channel argmax; ties go to the first maximum in row-major order.
/// An all-zero channel decodes to `(0, 0)` with value 0.
pub fn decode(stack: &HeatmapStack) -> Vec<Peak> {
    (0..stack.channels())
        .map(|c| {
            let mut best = 0;
            let ch = stack.channel(c);
            for (i, &v) in ch.iter().enumerate() {
                if v > ch[best] {
                    best = i;
                }
            }
            let value = ch.get(best).copied().unwrap_or(0.0);
            let (x, y) = if stack.width() == 0 { (0, 0) } else { (best % stack.width(), best / stack.width()) };
            Peak {
                position: Vec2::new(x as f64, y as f64),
                value,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub gamma: f64,
    pub beta: f64,
    /// Predictions are clamped to `[clamp_eps, 1 - clamp_eps]` before logs.
    pub clamp_eps: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            beta: 4.0,
            clamp_eps: 1e-6,
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<(), HeatmapError> {
        if !(self.gamma >= 0.0 && self.beta >= 0.0 && self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(HeatmapError::InvalidParams(format!(
                "need gamma >= 0, beta >= 0, 0 < clamp_eps < 0.5; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Negated focal term for one pixel; non-negative.
///
/// `y ≈ 1`: `-(1 - p)^γ ln p`; otherwise `-(1 - y)^β p^γ ln(1 - p)`.
#[inline]
pub fn focal_term(p: f64, y: f64, params: &FocalParams) -> f64 {
    let p = p.clamp(params.clamp_eps, 1.0 - params.clamp_eps);
    if y >= 1.0 - ONE_TOLERANCE {
        -(1.0 - p).powf(params.gamma) * p.ln()
    } else {
        -(1.0 - y).powf(params.beta) * p.powf(params.gamma) * (-p).ln_1p()
    }
}

/// Mean focal heatmap loss over every pixel of every channel.
///
/// Channel sums are computed in parallel and combined in channel order, so
/// the result does not depend on the thread count.
pub fn focal_loss(pred: &HeatmapStack, target: &HeatmapStack, params: &FocalParams) -> Result<f64, HeatmapError> {
    params.validate()?;
    if pred.shape() != target.shape() {
        return Err(HeatmapError::ShapeMismatch(pred.shape(), target.shape()));
    }
    let n = pred.data.len();
    if n == 0 {
        return Ok(0.0);
    }
    let plane = (pred.height * pred.width).max(1);
    let sums: Vec<f64> = pred
        .data
        .par_chunks(plane)
        .zip(target.data.par_chunks(plane))
        .map(|(p, y)| p.iter().zip(y).map(|(&p, &y)| focal_term(p, y, params)).sum::<f64>())
        .collect();
    Ok(sums.iter().sum::<f64>() / n as f64)
}
