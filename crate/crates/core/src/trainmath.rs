//! Activation functions and step-indexed learning-rate schedules.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BASE_LR: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainMathError {
    #[error("step {step} is outside [0, {total}]")]
    StepOutOfRange { step: usize, total: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

/// `tanh(sp) + x·sech²(sp)·σ(x)` with `sp = softplus(x)`.
pub fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * sigmoid(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleVariant {
    Constant,
    /// Cosine ramp up to `max_lr`, then cosine anneal to `final_lr`.
    #[serde(rename = "onecycle")]
    OneCycleCosine,
    /// `base_lr · (1 - step / total)²`.
    #[serde(rename = "polynomial")]
    PolynomialQuadratic,
}

impl fmt::Display for ScheduleVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleVariant::Constant => "constant",
            ScheduleVariant::OneCycleCosine => "onecycle",
            ScheduleVariant::PolynomialQuadratic => "polynomial",
        })
    }
}

impl FromStr for ScheduleVariant {
    type Err = TrainMathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "constant" => Ok(Self::Constant),
            "onecycle" => Ok(Self::OneCycleCosine),
            "polynomial" => Ok(Self::PolynomialQuadratic),
            other => Err(TrainMathError::InvalidSchedule(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub total_steps: usize,
    pub variant: ScheduleVariant,
    pub warmup_fraction: f64,
    pub max_lr: f64,
    /// OneCycle starts at `max_lr / div`.
    pub div: f64,
    pub final_lr: f64,
}

impl ScheduleConfig {
    /// OneCycle fields default to warmup 0.3, peak `10·base_lr`, div 25 and
    /// final `base_lr / 1e4`.
    pub fn new(variant: ScheduleVariant, base_lr: f64, total_steps: usize) -> Self {
        Self {
            base_lr,
            total_steps,
            variant,
            warmup_fraction: 0.3,
            max_lr: 10.0 * base_lr,
            div: 25.0,
            final_lr: base_lr / 1e4,
        }
    }

    pub fn validate(&self) -> Result<(), TrainMathError> {
        let bad = |msg: String| Err(TrainMathError::InvalidSchedule(msg));
        if self.total_steps == 0 {
            return bad("total_steps must be at least 1".into());
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.variant == ScheduleVariant::OneCycleCosine {
            if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
                return bad(format!("warmup_fraction must lie in (0, 1), got {}", self.warmup_fraction));
            }
            let lrs_ok = [self.max_lr, self.final_lr].iter().all(|v| *v > 0.0 && v.is_finite());
            if !lrs_ok || !(self.div >= 1.0) || !self.div.is_finite() || self.final_lr > self.max_lr {
                return bad(format!(
                    "need 0 < final_lr <= max_lr and div >= 1, got max_lr={} final_lr={} div={}",
                    self.max_lr, self.final_lr, self.div
                ));
            }
        }
        Ok(())
    }

    /// Step at which OneCycle peaks.
    pub fn peak_step(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).round() as usize
    }
}

pub fn lr_at(cfg: &ScheduleConfig, step: usize) -> Result<f64, TrainMathError> {
    cfg.validate()?;
    if step > cfg.total_steps {
        return Err(TrainMathError::StepOutOfRange {
            step,
            total: cfg.total_steps,
        });
    }
    let total = cfg.total_steps as f64;
    Ok(match cfg.variant {
        ScheduleVariant::Constant => cfg.base_lr,
        ScheduleVariant::PolynomialQuadratic => {
            let remaining = 1.0 - step as f64 / total;
            cfg.base_lr * remaining * remaining
        }
        ScheduleVariant::OneCycleCosine => {
            let peak = cfg.peak_step();
            let initial = cfg.max_lr / cfg.div;
            if step == peak {
                cfg.max_lr
            } else if step < peak {
                let pct = step as f64 / peak as f64;
                initial + (cfg.max_lr - initial) * 0.5 * (1.0 - (PI * pct).cos())
            } else {
                let pct = (step - peak) as f64 / (cfg.total_steps - peak) as f64;
                cfg.final_lr + (cfg.max_lr - cfg.final_lr) * 0.5 * (1.0 + (PI * pct).cos())
            }
        }
    })
}

/// `lr_at` for every step in `0..=total_steps`.
pub fn schedule(cfg: &ScheduleConfig) -> Result<Vec<f64>, TrainMathError> {
    (0..=cfg.total_steps).map(|s| lr_at(cfg, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Minima found by a 1e-7-spaced grid search over [-3, 0], then frozen.
    const SILU_MIN: f64 = -0.27846454275882637;
    const MISH_MIN: f64 = -0.30884341301705354;

    #[test]
    fn activation_examples() {
        assert_eq!(silu(0.0), 0.0);
        assert_eq!(mish(0.0), 0.0);
        assert_abs_diff_eq!(silu(1.0), 0.7310585786300049, epsilon = 1e-12);
        assert_abs_diff_eq!(mish(1.0), 0.8650983882673103, epsilon = 1e-12);
        assert!((silu(20.0) - 20.0).abs() < 1e-7);
        assert!(mish(-20.0).abs() < 1e-7);
        assert_eq!((relu(-5.0), relu(0.0), relu(3.0)), (0.0, 0.0, 3.0));
    }

    #[test]
    fn stable_at_extremes() {
        for x in [-1000.0, -50.0, 50.0, 1000.0] {
            for v in [sigmoid(x), silu(x), mish(x), silu_grad(x), mish_grad(x), softplus(x)] {
                assert!(v.is_finite(), "x={x}");
            }
        }
        assert_eq!(mish(1000.0), 1000.0);
        assert_abs_diff_eq!(softplus(30.0), 30.0 + (-30f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-5;
        for i in 0..1000 {
            let x = -10.0 + 20.0 * i as f64 / 999.0;
            let fd_silu = (silu(x + h) - silu(x - h)) / (2.0 * h);
            let fd_mish = (mish(x + h) - mish(x - h)) / (2.0 * h);
            assert!((silu_grad(x) - fd_silu).abs() < 1e-6, "silu at {x}");
            assert!((mish_grad(x) - fd_mish).abs() < 1e-6, "mish at {x}");
        }
    }

    #[test]
    fn lower_bounds_are_frozen() {
        let grid = (0..=300_000).map(|i| -3.0 + i as f64 * 1e-5);
        let (smin, mmin) = grid.fold((f64::INFINITY, f64::INFINITY), |(s, m), x| (s.min(silu(x)), m.min(mish(x))));
        assert_abs_diff_eq!(smin, SILU_MIN, epsilon = 1e-9);
        assert_abs_diff_eq!(mmin, MISH_MIN, epsilon = 1e-9);
        for i in 0..2000 {
            let x = -50.0 + i as f64 * 0.05;
            assert!(mish(x) > silu(x) - 0.31);
            assert!(silu(x) >= SILU_MIN - 1e-12 && mish(x) >= MISH_MIN - 1e-12);
        }
    }

    #[test]
    fn polynomial_endpoints_and_shape() {
        let cfg = ScheduleConfig::new(ScheduleVariant::PolynomialQuadratic, 1e-4, 1000);
        assert_eq!(lr_at(&cfg, 0).unwrap(), 1e-4);
        assert_eq!(lr_at(&cfg, 1000).unwrap(), 0.0);
        assert_eq!(lr_at(&cfg, 500).unwrap(), 0.25 * 1e-4);
        let lrs = schedule(&cfg).unwrap();
        for w in lrs.windows(3) {
            assert!(w[1] < w[0]);
            assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-18);
        }
    }

    #[test]
    fn onecycle_peak_and_unimodality() {
        let cfg = ScheduleConfig::new(ScheduleVariant::OneCycleCosine, 1e-4, 26_700);
        let peak = cfg.peak_step();
        assert_eq!(peak, 8010);
        assert_eq!(lr_at(&cfg, peak).unwrap(), cfg.max_lr);
        assert_abs_diff_eq!(lr_at(&cfg, 0).unwrap(), cfg.max_lr / 25.0, epsilon = 1e-18);
        assert_abs_diff_eq!(lr_at(&cfg, 26_700).unwrap(), cfg.final_lr, epsilon = 1e-18);
        let lrs = schedule(&cfg).unwrap();
        assert!(lrs[..=peak].windows(2).all(|w| w[1] >= w[0]));
        assert!(lrs[peak..].windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn constant_and_errors() {
        let cfg = ScheduleConfig::new(ScheduleVariant::Constant, 3e-4, 10);
        assert!(schedule(&cfg).unwrap().iter().all(|&v| v == 3e-4));
        assert_eq!(lr_at(&cfg, 11), Err(TrainMathError::StepOutOfRange { step: 11, total: 10 }));
        let mut bad = ScheduleConfig::new(ScheduleVariant::OneCycleCosine, 1e-4, 10);
        bad.warmup_fraction = 1.0;
        assert!(lr_at(&bad, 0).is_err());
        assert!(lr_at(&ScheduleConfig::new(ScheduleVariant::Constant, 1e-4, 0), 0).is_err());
        assert_eq!("onecycle".parse::<ScheduleVariant>().unwrap(), ScheduleVariant::OneCycleCosine);
        assert!("cyclic".parse::<ScheduleVariant>().is_err());
    }
}
