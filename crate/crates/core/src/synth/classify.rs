use rand::Rng;

use super::rng;
use crate::bundle::{BundleItem, TestBundle, Truth};
use crate::ir::{numel, AttrValue, ComputationGraph, GraphBuilder, OpKind, Tensor, TensorMap};
use crate::metrics::Track;

pub const CLASSES: usize = 64;
pub const CLASS_INPUT_SHAPE: [usize; 4] = [1, 3, 32, 32];
const FEATURES: usize = 3 * 32 * 32;
const WORLD_SEED: u64 = 0x5eed_0001;
const NOISE: f64 = 0.2;

/// One ±1 prototype image per class.
fn prototypes() -> Vec<Vec<f64>> {
    let mut r = rng(WORLD_SEED);
    (0..CLASSES)
        .map(|_| {
            (0..FEATURES)
                .map(|_| if r.gen_bool(0.5) { 1.0 } else { -1.0 })
                .collect()
        })
        .collect()
}

/// Items are `0.5 + 0.25·prototype + uniform noise` with a uniform label.
pub fn classification_bundle(items: usize, seed: u64) -> TestBundle {
    let protos = prototypes();
    let mut r = rng(seed);
    let items = (0..items)
        .map(|k| {
            let label = r.gen_range(0..CLASSES);
            let data = protos[label]
                .iter()
                .map(|p| 0.5 + 0.25 * p + r.gen_range(-NOISE..NOISE))
                .collect();
            BundleItem {
                id: format!("{k:04}"),
                inputs: TensorMap::from([(
                    "image".to_string(),
                    Tensor::new(CLASS_INPUT_SHAPE.to_vec(), data),
                )]),
                truth: Truth::Label(label),
            }
        })
        .collect();
    TestBundle {
        track: Track::Classification,
        tau_m: None,
        mask_threshold: None,
        intrinsics: None,
        items,
    }
}

/// Template-matching classifier: normalize, 1×1 stem conv, flatten, Gemm
/// against class prototypes, temperature scale, softmax.
///
/// `degrade` swaps the templates of `4·degrade` classes for unrelated
/// patterns, so roughly that many classes are lost.
pub fn classifier(degrade: u32, wrong_input: bool) -> ComputationGraph {
    let mut protos = prototypes();
    let mut r = rng(WORLD_SEED ^ 0xbad);
    for proto in protos.iter_mut().take(4 * degrade as usize) {
        for v in proto.iter_mut() {
            *v = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
        }
    }
    let mut templates = Tensor::zeros(&[FEATURES, CLASSES]);
    for (c, proto) in protos.iter().enumerate() {
        for (f, &v) in proto.iter().enumerate() {
            templates.data[f * CLASSES + c] = v;
        }
    }

    let mut b = GraphBuilder::new(format!("toy-classifier-d{degrade}"));
    let shape: &[usize] = if wrong_input { &[1, 3, 16, 16] } else { &CLASS_INPUT_SHAPE };
    let x = b.input("image", shape);
    let mean = b.constant("mean", Tensor::full(&[1, 3, 1, 1], 0.5));
    let scale = b.constant("inv_std", Tensor::full(&[1, 3, 1, 1], 4.0));
    let stem_w = b.constant(
        "stem.weight",
        Tensor::from_fn(&[3, 3, 1, 1], |i| if i % 4 == 0 { 1.0 } else { 0.0 }),
    );
    let stem_b = b.constant("stem.bias", Tensor::zeros(&[3]));
    let flat_shape = b.constant("flat_shape", Tensor::vector(vec![1.0, -1.0]));
    if wrong_input {
        // keep the graph valid for the smaller image it declares
        let features = numel(shape);
        templates = Tensor::new(vec![features, CLASSES], templates.data[..features * CLASSES].to_vec());
    }
    let head_w = b.constant("head.weight", templates);
    let head_b = b.constant("head.bias", Tensor::zeros(&[CLASSES]));
    let temperature = b.constant("temperature", Tensor::vector(vec![1.0 / FEATURES as f64]));

    let centered = b.op(OpKind::Sub, &[&x, &mean]);
    let normed = b.op(OpKind::Mul, &[&centered, &scale]);
    let stem = b.op(OpKind::Conv2d, &[&normed, &stem_w, &stem_b]);
    let flat = b.op(OpKind::Reshape, &[&stem, &flat_shape]);
    let logits = b.op_with(OpKind::Gemm, &[&flat, &head_w, &head_b], [("transB", AttrValue::Int(0))]);
    let scaled = b.op(OpKind::Mul, &[&logits, &temperature]);
    let probs = b.op(OpKind::Softmax, &[&scaled]);
    b.output(&probs);
    b.build().expect("classifier is valid")
}
