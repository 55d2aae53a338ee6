//! Per-track scoring kernels and latency gates.

mod classify;
mod depth;
mod seg;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classify::{argmax, top1_accuracy, track1_score};
pub use depth::{
    align_depth, depth_aux_metrics, depth_to_pointcloud, evaluate_depth, pointcloud_prf, AuxMetrics,
    CameraIntrinsics, DepthEvalResult, Point3, PrfResult,
};
pub use seg::{binarize_mask, iou, miou, Mask, SegEvalResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("empty evaluation set")]
    EmptySet,
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("no valid ground-truth pixels")]
    NoValidPixels,
    #[error("ground-truth point cloud is empty")]
    EmptyGroundTruth,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Competition track: 1 classification, 2 prompted segmentation, 3 depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Track {
    Classification,
    Segmentation,
    Depth,
}

impl Track {
    pub const ALL: [Track; 3] = [Track::Classification, Track::Segmentation, Track::Depth];

    pub fn number(self) -> u8 {
        match self {
            Track::Classification => 1,
            Track::Segmentation => 2,
            Track::Depth => 3,
        }
    }
}

impl TryFrom<u8> for Track {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, Self::Error> {
        match n {
            1 => Ok(Track::Classification),
            2 => Ok(Track::Segmentation),
            3 => Ok(Track::Depth),
            _ => Err(format!("unknown track {n}; expected 1, 2 or 3")),
        }
    }
}

impl From<Track> for u8 {
    fn from(t: Track) -> u8 {
        t.number()
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl std::str::FromStr for Track {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n: u8 = s.trim().parse().map_err(|_| format!("unknown track `{s}`"))?;
        Track::try_from(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackConfig {
    pub track: Track,
    pub latency_limit_ms: f64,
    pub tau_m: f64,
    pub mask_threshold: f64,
}

pub const DEFAULT_TAU_M: f64 = 0.05;
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

impl TrackConfig {
    pub fn new(track: Track) -> Self {
        let latency_limit_ms = match track {
            Track::Classification => 10.0,
            Track::Segmentation => 1000.0,
            Track::Depth => 34.0,
        };
        Self {
            track,
            latency_limit_ms,
            tau_m: DEFAULT_TAU_M,
            mask_threshold: DEFAULT_MASK_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.latency_limit_ms.is_finite() && self.latency_limit_ms > 0.0) {
            return Err(MetricsError::InvalidConfig("latency limit must be positive".into()));
        }
        if !(self.tau_m.is_finite() && self.tau_m > 0.0) {
            return Err(MetricsError::InvalidConfig("tau_m must be positive".into()));
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(MetricsError::InvalidConfig("mask_threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Strict: a latency equal to the limit fails.
pub fn latency_gate(config: &TrackConfig, latency_ms: f64) -> bool {
    latency_ms < config.latency_limit_ms
}
