//! Adaptive blurry-frame rejection.
//!
//! Each frame is scored by the variance of its discrete Laplacian. An
//! exponential moving average of past scores, bias corrected, sets the
//! threshold `g * ln(1 + S') + b`, so low-texture sequences get a lower bar
//! than highly textured ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::LuminanceImage;

/// Variance of the 4-neighbour Laplacian over interior pixels.
pub fn variance_of_laplacian(img: &LuminanceImage) -> Result<f64> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall { width: w, height: h });
    }
    let d = &img.data;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 1..h - 1 {
        let row = y * w;
        for x in 1..w - 1 {
            let i = row + x;
            let l = d[i - w] + d[i + w] + d[i - 1] + d[i + 1] - 4.0 * d[i];
            sum += l;
            sum_sq += l * l;
        }
    }
    let n = ((w - 2) * (h - 2)) as f64;
    let mean = sum / n;
    Ok((sum_sq / n - mean * mean).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// `S_0 = 0`; the bias correction is then exact.
    ZeroInit,
    /// `S_1 = V_1` followed by the same bias correction.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlurGateConfig {
    pub alpha: f64,
    pub gain: f64,
    pub offset: f64,
    pub init_mode: InitMode,
}

impl Default for BlurGateConfig {
    fn default() -> Self {
        BlurGateConfig {
            alpha: 0.9,
            gain: 30.0,
            offset: 25.0,
            init_mode: InitMode::ZeroInit,
        }
    }
}

impl BlurGateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "abir.alpha must be in [0,1), got {}",
                self.alpha
            )));
        }
        if !(self.gain >= 0.0) {
            return Err(Error::Config(format!("abir.gain must be >= 0, got {}", self.gain)));
        }
        if !self.offset.is_finite() {
            return Err(Error::Config("abir.offset must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlurDecision {
    Keep,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlurVerdict {
    pub decision: BlurDecision,
    pub score: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BlurGateState {
    /// Number of frames scored so far.
    pub t: u64,
    /// Running average of Laplacian variances.
    pub ema: f64,
    pub last_threshold: f64,
}

impl BlurGateState {
    pub fn corrected_ema(&self, config: &BlurGateConfig) -> f64 {
        if self.t == 0 {
            return 0.0;
        }
        let denom = 1.0 - config.alpha.powi(self.t.min(i32::MAX as u64) as i32);
        if denom <= 0.0 {
            self.ema
        } else {
            self.ema / denom
        }
    }

    /// Folds `score` into the average and classifies the frame against the
    /// updated threshold. Rejected frames still update the average.
    pub fn update_and_classify(&mut self, config: &BlurGateConfig, score: f64) -> BlurVerdict {
        let a = config.alpha;
        self.t += 1;
        self.ema = match (config.init_mode, self.t) {
            (InitMode::PaperLiteral, 1) => score,
            _ => a * self.ema + (1.0 - a) * score,
        };
        let threshold = config.gain * self.corrected_ema(config).ln_1p() + config.offset;
        self.last_threshold = threshold;
        BlurVerdict {
            decision: if score < threshold {
                BlurDecision::Reject
            } else {
                BlurDecision::Keep
            },
            score,
            threshold,
        }
    }
}

/// Stateful gate applied strictly in frame order.
#[derive(Debug, Clone)]
pub struct BlurGate {
    pub config: BlurGateConfig,
    pub state: BlurGateState,
}

impl BlurGate {
    pub fn new(config: BlurGateConfig) -> Self {
        BlurGate {
            config,
            state: BlurGateState::default(),
        }
    }

    pub fn classify(&mut self, score: f64) -> BlurVerdict {
        self.state.update_and_classify(&self.config, score)
    }
}
