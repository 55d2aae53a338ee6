use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MetricsError, TrackConfig};
use crate::ir::Tensor;
use crate::numeric::fsum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let ok = |f: f64| f.is_finite() && f > 0.0;
        if !ok(self.fx) || !ok(self.fy) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(MetricsError::InvalidConfig(
                "intrinsics need finite positive focal lengths".into(),
            ));
        }
        Ok(())
    }
}

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthEvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub mae_m: f64,
    pub rmse_m: f64,
    pub abs_rel: f64,
    pub scale: f64,
    pub shift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfResult {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxMetrics {
    pub mae_m: f64,
    pub rmse_m: f64,
    pub abs_rel: f64,
}

fn valid_depth(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<(), MetricsError> {
    if a.shape != b.shape {
        return Err(MetricsError::ShapeMismatch {
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok(())
}

/// `(height, width)` of a map shaped `[.., H, W]` with unit leading dims.
fn plane(t: &Tensor) -> Result<(usize, usize), MetricsError> {
    let r = t.rank();
    if r < 2 || t.shape[..r - 2].iter().any(|&d| d != 1) {
        return Err(MetricsError::InvalidConfig(format!(
            "depth map must be [H, W] or carry unit leading dims, got {:?}",
            t.shape
        )));
    }
    Ok((t.shape[r - 2], t.shape[r - 1]))
}

/// Least-squares scale and shift mapping `pred` onto `gt` over valid gt pixels.
///
/// A (near-)constant prediction falls back to `s = 1` and a mean-matching shift.
pub fn align_depth(pred: &Tensor, gt: &Tensor) -> Result<(Tensor, f64, f64), MetricsError> {
    same_shape(pred, gt)?;
    let pairs: Vec<(f64, f64)> = pred
        .data
        .iter()
        .zip(&gt.data)
        .filter(|(p, g)| valid_depth(**g) && p.is_finite())
        .map(|(&p, &g)| (p, g))
        .collect();
    if pairs.is_empty() {
        return Err(MetricsError::NoValidPixels);
    }
    let n = pairs.len() as f64;
    let mean_p = fsum(pairs.iter().map(|p| p.0)) / n;
    let mean_g = fsum(pairs.iter().map(|p| p.1)) / n;
    let var_p = fsum(pairs.iter().map(|(p, _)| (p - mean_p) * (p - mean_p))) / n;
    let (s, t) = if var_p < 1e-12 {
        (1.0, mean_g - mean_p)
    } else {
        let cov = fsum(pairs.iter().map(|(p, g)| (p - mean_p) * (g - mean_g))) / n;
        let s = cov / var_p;
        (s, mean_g - s * mean_p)
    };
    Ok((pred.map(|p| s * p + t), s, t))
}

/// Pinhole back-projection of every pixel with a finite positive depth.
pub fn depth_to_pointcloud(depth: &Tensor, k: &CameraIntrinsics) -> Result<Vec<Point3>, MetricsError> {
    let (h, w) = plane(depth)?;
    let mut points = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            let d = depth.data[v * w + u];
            if valid_depth(d) {
                points.push([(u as f64 - k.cx) * d / k.fx, (v as f64 - k.cy) * d / k.fy, d]);
            }
        }
    }
    Ok(points)
}

fn distance(a: &Point3, b: &Point3) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

type Cell = (i64, i64, i64);

/// Uniform grid over a point set, with cells slightly larger than `tau` so
/// any point within `tau` of a query lies in the 27 surrounding cells.
struct Grid<'a> {
    points: &'a [Point3],
    cell: f64,
    cells: HashMap<Cell, Vec<usize>>,
}

impl<'a> Grid<'a> {
    fn new(points: &'a [Point3], tau: f64) -> Self {
        let cell = tau * 1.0001;
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { points, cell, cells }
    }

    fn key(p: &Point3, cell: f64) -> Cell {
        let k = |x: f64| (x / cell).floor() as i64;
        (k(p[0]), k(p[1]), k(p[2]))
    }

    fn any_within(&self, q: &Point3, tau: f64) -> bool {
        let (cx, cy, cz) = Self::key(q, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(ids) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    if ids.iter().any(|&i| distance(q, &self.points[i]) <= tau) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Number of `queries` whose nearest neighbour in `targets` is within `tau`.
fn matched(queries: &[Point3], targets: &[Point3], tau: f64) -> usize {
    if targets.is_empty() {
        return 0;
    }
    // cell indices must stay well inside i64 for the grid to be exact
    let extent = queries
        .iter()
        .chain(targets)
        .flat_map(|p| p.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()));
    if extent / tau > 1e12 {
        return queries
            .par_iter()
            .filter(|q| targets.iter().any(|t| distance(q, t) <= tau))
            .count();
    }
    let grid = Grid::new(targets, tau);
    queries.par_iter().filter(|q| grid.any_within(q, tau)).count()
}

fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        100.0 * 2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Precision, recall and F-score (0–100) with inclusive matching at `tau_m`.
pub fn pointcloud_prf(pred: &[Point3], gt: &[Point3], tau_m: f64) -> Result<PrfResult, MetricsError> {
    if !(tau_m.is_finite() && tau_m > 0.0) {
        return Err(MetricsError::InvalidConfig("tau_m must be positive".into()));
    }
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let precision = if pred.is_empty() {
        0.0
    } else {
        matched(pred, gt, tau_m) as f64 / pred.len() as f64
    };
    let recall = matched(gt, pred, tau_m) as f64 / gt.len() as f64;
    Ok(PrfResult {
        precision,
        recall,
        f_score: f_score(precision, recall),
    })
}

/// MAE, RMSE and mean relative error over valid ground-truth pixels.
pub fn depth_aux_metrics(pred: &Tensor, gt: &Tensor) -> Result<AuxMetrics, MetricsError> {
    same_shape(pred, gt)?;
    let pairs: Vec<(f64, f64)> = pred
        .data
        .iter()
        .zip(&gt.data)
        .filter(|(_, g)| valid_depth(**g))
        .map(|(&p, &g)| (p, g))
        .collect();
    if pairs.is_empty() {
        return Err(MetricsError::NoValidPixels);
    }
    let n = pairs.len() as f64;
    Ok(AuxMetrics {
        mae_m: fsum(pairs.iter().map(|(p, g)| (p - g).abs())) / n,
        rmse_m: (fsum(pairs.iter().map(|(p, g)| (p - g) * (p - g))) / n).sqrt(),
        abs_rel: fsum(pairs.iter().map(|(p, g)| (p - g).abs() / g)) / n,
    })
}

/// Align, back-project both maps, match clouds and compute diagnostics.
pub fn evaluate_depth(
    pred: &Tensor,
    gt: &Tensor,
    intrinsics: &CameraIntrinsics,
    config: &TrackConfig,
) -> Result<DepthEvalResult, MetricsError> {
    intrinsics.validate()?;
    let (aligned, scale, shift) = align_depth(pred, gt)?;
    let pred_cloud = depth_to_pointcloud(&aligned, intrinsics)?;
    let gt_cloud = depth_to_pointcloud(gt, intrinsics)?;
    let prf = pointcloud_prf(&pred_cloud, &gt_cloud, config.tau_m)?;
    let aux = depth_aux_metrics(&aligned, gt)?;
    Ok(DepthEvalResult {
        precision: prf.precision,
        recall: prf.recall,
        f_score: prf.f_score,
        mae_m: aux.mae_m,
        rmse_m: aux.rmse_m,
        abs_rel: aux.abs_rel,
        scale,
        shift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Track;

    const K: CameraIntrinsics = CameraIntrinsics {
        fx: 100.0,
        fy: 100.0,
        cx: 32.0,
        cy: 32.0,
    };

    #[test]
    fn self_alignment_is_identity() {
        let gt = Tensor::from_fn(&[3, 4], |i| 1.0 + i as f64);
        let (out, s, t) = align_depth(&gt, &gt).unwrap();
        assert!((s - 1.0).abs() < 1e-12 && t.abs() < 1e-12);
        assert!(out.max_abs_diff(&gt) < 1e-12);
    }

    #[test]
    fn recovers_scale_and_shift() {
        let gt = Tensor::from_fn(&[4, 4], |i| 3.0 + 0.25 * i as f64);
        let pred = gt.map(|g| (g - 3.0) / 2.0);
        let (_, s, t) = align_depth(&pred, &gt).unwrap();
        assert!((s - 2.0).abs() < 1e-12 && (t - 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_prediction_shifts_to_mean() {
        let gt = Tensor::new(vec![1, 2], vec![3.0, 5.0]);
        let (out, s, t) = align_depth(&Tensor::full(&[1, 2], 0.5), &gt).unwrap();
        assert_eq!((s, t), (1.0, 3.5));
        assert!(out.data.iter().all(|v| v.is_finite()));
        assert_eq!(
            align_depth(&gt, &Tensor::zeros(&[1, 2])).unwrap_err(),
            MetricsError::NoValidPixels
        );
    }

    #[test]
    fn back_projection() {
        let mut d = Tensor::zeros(&[64, 64]);
        d.data[32 * 64 + 32] = 2.0;
        d.data[32 * 64 + 42] = 1.0;
        let pts = depth_to_pointcloud(&d, &K).unwrap();
        assert_eq!(pts, vec![[0.0, 0.0, 2.0], [0.1, 0.0, 1.0]]);
        assert!(depth_to_pointcloud(&Tensor::zeros(&[4, 4]), &K).unwrap().is_empty());
    }

    #[test]
    fn prf_hand_cases() {
        let tau = 0.05;
        let a = [[0.0, 0.0, 1.0]];
        let r = pointcloud_prf(&a, &a, tau).unwrap();
        assert_eq!((r.precision, r.recall, r.f_score), (1.0, 1.0, 100.0));
        let near = [[0.0, 0.0, 1.0 + tau / 2.0]];
        assert_eq!(pointcloud_prf(&a, &near, tau).unwrap().f_score, 100.0);
        let far = [[0.0, 0.0, 1.0 + 2.0 * tau]];
        assert_eq!(pointcloud_prf(&a, &far, tau).unwrap().f_score, 0.0);
        let gt = [[0.0, 0.0, 1.0], [5.0, 5.0, 5.0]];
        let r = pointcloud_prf(&a, &gt, tau).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
        assert!((r.f_score - 66.6667).abs() < 1e-4);
        assert_eq!(pointcloud_prf(&a, &[], tau), Err(MetricsError::EmptyGroundTruth));
        assert_eq!(pointcloud_prf(&[], &a, tau).unwrap().f_score, 0.0);
    }

    #[test]
    fn aux_cases() {
        let gt = Tensor::full(&[2, 2], 2.0);
        let m = depth_aux_metrics(&gt.map(|g| g + 1.0), &gt).unwrap();
        assert_eq!((m.mae_m, m.rmse_m, m.abs_rel), (1.0, 1.0, 0.5));
        let m = depth_aux_metrics(
            &Tensor::new(vec![1, 2], vec![1.0, 3.0]),
            &Tensor::new(vec![1, 2], vec![1.0, 1.0]),
        )
        .unwrap();
        assert_eq!(m.mae_m, 1.0);
        assert!((m.rmse_m - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn singleton_pipeline() {
        let k = CameraIntrinsics { fx: 60.0, fy: 60.0, cx: 0.0, cy: 0.0 };
        let gt = Tensor::full(&[1, 1], 1.0);
        let r = evaluate_depth(&Tensor::full(&[1, 1], 0.3), &gt, &k, &TrackConfig::new(Track::Depth)).unwrap();
        assert_eq!(r.f_score, 100.0);
        assert_eq!((r.scale, r.shift), (1.0, 0.7));
    }
}
