use rand::Rng;

use super::rng;
use crate::bundle::{BundleItem, TestBundle, Truth};
use crate::ir::{AttrValue, ComputationGraph, GraphBuilder, OpKind, Tensor, TensorMap};
use crate::metrics::{Mask, Track};

pub const SEG_SIZE: usize = 64;
const COLOURS: usize = 3;

/// Images of one-hot coloured rectangles on black; the prompt is a colour
/// present in the image and the mask covers every pixel of that colour.
pub fn segmentation_bundle(items: usize, seed: u64) -> TestBundle {
    let mut r = rng(seed);
    let n = SEG_SIZE;
    let items = (0..items)
        .map(|k| {
            // colour index per pixel, COLOURS meaning background
            let mut canvas = vec![COLOURS; n * n];
            let rects = r.gen_range(3..=5);
            let mut used = Vec::new();
            for _ in 0..rects {
                let (h, w) = (r.gen_range(8..=32), r.gen_range(8..=32));
                let (y0, x0) = (r.gen_range(0..=n - h), r.gen_range(0..=n - w));
                let colour = r.gen_range(0..COLOURS);
                used.push(colour);
                for y in y0..y0 + h {
                    canvas[y * n + x0..y * n + x0 + w].fill(colour);
                }
            }
            let prompt_colour = used[r.gen_range(0..used.len())];
            let image = Tensor::from_fn(&[1, COLOURS, n, n], |i| {
                let (c, p) = (i / (n * n), i % (n * n));
                (canvas[p] == c) as u8 as f64
            });
            let prompt = Tensor::from_fn(&[1, COLOURS, 1, 1], |c| (c == prompt_colour) as u8 as f64);
            let mask = Mask::new(vec![n, n], canvas.iter().map(|&c| c == prompt_colour).collect());
            BundleItem {
                id: format!("{k:04}"),
                inputs: TensorMap::from([
                    ("image".to_string(), image),
                    ("prompt".to_string(), prompt),
                ]),
                truth: Truth::Mask(mask),
            }
        })
        .collect();
    TestBundle {
        track: Track::Segmentation,
        tau_m: None,
        mask_threshold: None,
        intrinsics: None,
        items,
    }
}

/// Prompted segmenter: gate the image by the prompt colour, pool with a
/// `(2·degrade + 1)`-wide box filter, then a steep sigmoid around 0.5.
pub fn segmenter(degrade: u32, wrong_input: bool) -> ComputationGraph {
    let k = 2 * degrade as usize + 1;
    let n = if wrong_input { SEG_SIZE / 2 } else { SEG_SIZE };
    let mut b = GraphBuilder::new(format!("toy-segmenter-d{degrade}"));
    let x = b.input("image", &[1, COLOURS, n, n]);
    let prompt = b.input("prompt", &[1, COLOURS, 1, 1]);
    let pool_w = b.constant(
        "pool.weight",
        Tensor::full(&[1, COLOURS, k, k], 1.0 / (k * k) as f64),
    );
    let half = b.constant("half", Tensor::vector(vec![0.5]));
    let gain = b.constant("gain", Tensor::vector(vec![20.0]));

    let gated = b.op(OpKind::Mul, &[&x, &prompt]);
    let pooled = b.op_with(
        OpKind::Conv2d,
        &[&gated, &pool_w],
        [("padding", AttrValue::Int(degrade as i64))],
    );
    let centered = b.op(OpKind::Sub, &[&pooled, &half]);
    let logits = b.op(OpKind::Mul, &[&centered, &gain]);
    let mask = b.op(OpKind::Sigmoid, &[&logits]);
    b.output(&mask);
    b.build().expect("segmenter is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::execute;
    use crate::metrics::{binarize_mask, iou};

    fn mean_iou(g: &ComputationGraph, bundle: &TestBundle) -> f64 {
        let total: f64 = bundle
            .items
            .iter()
            .map(|item| {
                let out = execute(g, &item.inputs).unwrap().into_values().next().unwrap();
                let plane = Tensor::new(vec![SEG_SIZE, SEG_SIZE], out.data);
                let Truth::Mask(gt) = &item.truth else { unreachable!() };
                iou(&binarize_mask(&plane, 0.5), gt).unwrap()
            })
            .sum();
        total / bundle.items.len() as f64
    }

    #[test]
    fn exact_model_is_perfect_and_blur_costs_iou() {
        let bundle = segmentation_bundle(6, 11);
        assert_eq!(mean_iou(&segmenter(0, false), &bundle), 1.0);
        let blurred = mean_iou(&segmenter(2, false), &bundle);
        assert!(blurred < 1.0 && blurred > 0.5, "{blurred}");
    }
}
