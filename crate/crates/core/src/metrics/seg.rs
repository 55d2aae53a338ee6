use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::ir::Tensor;
use crate::numeric::fsum;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub shape: Vec<usize>,
    pub pixels: Vec<bool>,
}

impl Mask {
    pub fn new(shape: Vec<usize>, pixels: Vec<bool>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), pixels.len(), "mask size");
        Self { shape, pixels }
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }
}

/// A pixel is foreground iff its value is at least `threshold`.
pub fn binarize_mask(logits: &Tensor, threshold: f64) -> Mask {
    Mask::new(
        logits.shape.clone(),
        logits.data.iter().map(|&v| v >= threshold).collect(),
    )
}

/// Intersection over union of two masks; two empty masks score 1.
pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64, MetricsError> {
    if pred.shape != gt.shape {
        return Err(MetricsError::ShapeMismatch {
            left: pred.shape.clone(),
            right: gt.shape.clone(),
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.pixels.iter().zip(&gt.pixels) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegEvalResult {
    pub per_pair_iou: Vec<f64>,
    pub miou: f64,
    pub pair_count: usize,
}

pub fn miou(pairs: &[(Mask, Mask)]) -> Result<SegEvalResult, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let per_pair_iou = pairs
        .iter()
        .map(|(p, g)| iou(p, g))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SegEvalResult {
        miou: fsum(per_pair_iou.iter().copied()) / pairs.len() as f64,
        pair_count: pairs.len(),
        per_pair_iou,
    })
}
