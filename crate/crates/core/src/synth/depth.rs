use rand::Rng;

use super::rng;
use crate::bundle::{BundleItem, TestBundle, Truth};
use crate::ir::{ComputationGraph, GraphBuilder, OpKind, Tensor, TensorMap};
use crate::metrics::{CameraIntrinsics, Track, DEFAULT_TAU_M};

pub const DEPTH_HEIGHT: usize = 48;
pub const DEPTH_WIDTH: usize = 64;
pub const DEPTH_INTRINSICS: CameraIntrinsics = CameraIntrinsics {
    fx: 60.0,
    fy: 60.0,
    cx: 32.0,
    cy: 24.0,
};

/// Metric depth of a room-like scene: a slanted back wall, a floor plane seen
/// from `camera_height`, and fronto-parallel boxes.
fn scene(r: &mut impl Rng) -> Vec<f64> {
    let (h, w) = (DEPTH_HEIGHT, DEPTH_WIDTH);
    let k = DEPTH_INTRINSICS;
    let wall = r.gen_range(6.0..9.0);
    let slant = r.gen_range(-1.5..1.5);
    let camera_height = r.gen_range(1.0..1.8);
    let mut depth: Vec<f64> = (0..h * w)
        .map(|p| {
            let (v, u) = ((p / w) as f64, (p % w) as f64);
            let back = wall + slant * (u - k.cx) / w as f64;
            if v > k.cy {
                back.min(camera_height * k.fy / (v - k.cy))
            } else {
                back
            }
        })
        .collect();
    for _ in 0..r.gen_range(1..=3) {
        let d = r.gen_range(1.5..5.0);
        let (bh, bw) = (r.gen_range(6..20), r.gen_range(6..24));
        let (y0, x0) = (r.gen_range(0..h - bh), r.gen_range(0..w - bw));
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                let p = y * w + x;
                depth[p] = depth[p].min(d);
            }
        }
    }
    depth
}

/// Min-max normalization to `[0, 1]`.
pub(crate) fn normalize(depth: &[f64]) -> Vec<f64> {
    let lo = depth.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = depth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    depth.iter().map(|d| (d - lo) / (hi - lo)).collect()
}

/// Each image carries the normalized depth in channel 0, uniform noise in
/// channel 1 and a stripe texture in channel 2.
pub fn depth_bundle(items: usize, seed: u64) -> TestBundle {
    let mut r = rng(seed);
    let (h, w) = (DEPTH_HEIGHT, DEPTH_WIDTH);
    let items = (0..items)
        .map(|k| {
            let depth = scene(&mut r);
            let norm = normalize(&depth);
            let noise: Vec<f64> = (0..h * w).map(|_| r.gen_range(0.0..1.0)).collect();
            let image = Tensor::from_fn(&[1, 3, h, w], |i| {
                let (c, p) = (i / (h * w), i % (h * w));
                match c {
                    0 => norm[p],
                    1 => noise[p],
                    _ => 0.5 + 0.5 * ((p % w) as f64 * 0.7).sin(),
                }
            });
            BundleItem {
                id: format!("{k:04}"),
                inputs: TensorMap::from([("image".to_string(), image)]),
                truth: Truth::Depth(Tensor::new(vec![h, w], depth)),
            }
        })
        .collect();
    TestBundle {
        track: Track::Depth,
        tau_m: Some(DEFAULT_TAU_M),
        mask_threshold: None,
        intrinsics: Some(DEPTH_INTRINSICS),
        items,
    }
}

/// 1×1 conv reading the depth channel, with `0.05·degrade` of the noise
/// channel mixed in.
pub fn depth_model(degrade: u32, wrong_input: bool) -> ComputationGraph {
    let (h, w) = if wrong_input {
        (DEPTH_HEIGHT / 2, DEPTH_WIDTH / 2)
    } else {
        (DEPTH_HEIGHT, DEPTH_WIDTH)
    };
    let mut b = GraphBuilder::new(format!("toy-depth-d{degrade}"));
    let x = b.input("image", &[1, 3, h, w]);
    let weight = b.constant(
        "head.weight",
        Tensor::new(vec![1, 3, 1, 1], vec![1.0, 0.05 * degrade as f64, 0.0]),
    );
    let bias = b.constant("head.bias", Tensor::zeros(&[1]));
    let y = b.op(OpKind::Conv2d, &[&x, &weight, &bias]);
    b.output(&y);
    b.build().expect("depth model is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_valid_metric_depth() {
        let b = depth_bundle(5, 2);
        for item in &b.items {
            let Truth::Depth(d) = &item.truth else { unreachable!() };
            assert!(d.data.iter().all(|&v| v.is_finite() && v >= 1.0 && v <= 10.5));
            let img = &item.inputs["image"];
            let ch0 = &img.data[..DEPTH_HEIGHT * DEPTH_WIDTH];
            assert_eq!(ch0.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
            assert_eq!(ch0.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }
    }
}
