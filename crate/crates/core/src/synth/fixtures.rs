use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rng;
use crate::ir::{AttrValue, ComputationGraph, GraphBuilder, OpKind, Tensor, TensorMap};

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

/// Uniform `[-1, 1)` values for every graph input.
pub fn random_inputs(graph: &ComputationGraph, seed: u64) -> TensorMap {
    let mut r = rng(seed);
    graph
        .inputs
        .iter()
        .map(|i| (i.name.clone(), uniform(&mut r, &i.shape, -1.0, 1.0)))
        .collect()
}

/// `ReLU(Conv3×3(Mul(Sub(x, m), s)))` on three channels with random constants.
pub fn normalization_fixture(seed: u64) -> ComputationGraph {
    let mut r = rng(seed);
    let mut b = GraphBuilder::new("normalization-chain");
    let x = b.input("x", &[1, 3, 8, 8]);
    let m = b.constant("mean", uniform(&mut r, &[1, 3, 1, 1], -0.5, 0.5));
    let s = b.constant("inv_std", uniform(&mut r, &[1, 3, 1, 1], 0.5, 2.0));
    let w = b.constant("conv.weight", uniform(&mut r, &[4, 3, 3, 3], -1.0, 1.0));
    let bias = b.constant("conv.bias", uniform(&mut r, &[4], -1.0, 1.0));
    let c = b.op(OpKind::Sub, &[&x, &m]);
    let n = b.op(OpKind::Mul, &[&c, &s]);
    let y = b.op(OpKind::Conv2d, &[&n, &w, &bias]);
    let z = b.op(OpKind::Relu, &[&y]);
    b.output(&z);
    b.build().expect("fixture is valid")
}

/// `Mul(Gemm(x, W, b), α)` with a per-feature α.
pub fn gemm_post_scale_fixture(seed: u64) -> ComputationGraph {
    let mut r = rng(seed);
    let mut b = GraphBuilder::new("gemm-post-scale");
    let x = b.input("x", &[2, 5]);
    let w = b.constant("fc.weight", uniform(&mut r, &[5, 3], -1.0, 1.0));
    let bias = b.constant("fc.bias", uniform(&mut r, &[3], -1.0, 1.0));
    let alpha = b.constant("alpha", uniform(&mut r, &[1, 3], 0.5, 2.0));
    let h = b.op(OpKind::Gemm, &[&x, &w, &bias]);
    let y = b.op(OpKind::Mul, &[&h, &alpha]);
    b.output(&y);
    b.build().expect("fixture is valid")
}

/// `Gemm(Mul(x, α), Wᵀ, b)` with a per-feature α, as in attention scaling.
pub fn gemm_pre_scale_fixture(seed: u64) -> ComputationGraph {
    let mut r = rng(seed);
    let mut b = GraphBuilder::new("gemm-pre-scale");
    let x = b.input("x", &[2, 5]);
    let alpha = b.constant("alpha", uniform(&mut r, &[5], 0.5, 2.0));
    let w = b.constant("fc.weight", uniform(&mut r, &[3, 5], -1.0, 1.0));
    let bias = b.constant("fc.bias", uniform(&mut r, &[1, 3], -1.0, 1.0));
    let s = b.op(OpKind::Mul, &[&x, &alpha]);
    let y = b.op_with(OpKind::Gemm, &[&s, &w, &bias], [("transB", AttrValue::Int(1))]);
    b.output(&y);
    b.build().expect("fixture is valid")
}

/// A class token broadcast to the batch through a Shape→Gather→Concat→Expand
/// chain over constants, prepended to the token sequence and offset by a
/// positional embedding.
pub fn class_token_fixture(seed: u64) -> ComputationGraph {
    let mut r = rng(seed);
    let (tokens, dim) = (5, 4);
    let mut b = GraphBuilder::new("class-token");
    let x = b.input("tokens", &[1, tokens, dim]);
    let pos = b.constant("pos_embed", uniform(&mut r, &[1, tokens + 1, dim], -1.0, 1.0));
    let cls = b.constant("cls_token", uniform(&mut r, &[1, 1, dim], -1.0, 1.0));
    let batch_axis = b.constant("batch_axis", Tensor::vector(vec![0.0]));
    let tail = b.constant("token_shape_tail", Tensor::vector(vec![1.0, dim as f64]));

    let shape = b.op(OpKind::Shape, &[&pos]);
    let batch = b.op(OpKind::Gather, &[&shape, &batch_axis]);
    let target = b.op_with(OpKind::Concat, &[&batch, &tail], [("axis", AttrValue::Int(0))]);
    let token = b.op(OpKind::Expand, &[&cls, &target]);
    let seq = b.op_with(OpKind::Concat, &[&token, &x], [("axis", AttrValue::Int(1))]);
    let y = b.op(OpKind::Add, &[&seq, &pos]);
    b.output(&y);
    b.build().expect("fixture is valid")
}

/// A random valid graph mixing the patterns the passes rewrite with
/// unrelated ops: normalization chains before convolutions, constant
/// subexpressions, activations, and Gemm layers with scales on either side.
pub fn random_graph(seed: u64) -> ComputationGraph {
    let mut r = rng(seed);
    let mut b = GraphBuilder::new(format!("random-{seed}"));
    let mut c = r.gen_range(1..=3);
    let mut hw = r.gen_range(4..=6);
    let mut cur = b.input("x", &[1, c, hw, hw]);
    let mut k = 0;
    let mut name = |prefix: &str| {
        k += 1;
        format!("{prefix}{k}")
    };

    for _ in 0..r.gen_range(2..=5) {
        match r.gen_range(0..4) {
            0 => {
                let m = b.constant(&name("m"), uniform(&mut r, &[1, c, 1, 1], -0.5, 0.5));
                let s = b.constant(&name("s"), uniform(&mut r, &[1, c, 1, 1], 0.5, 1.5));
                let kernel = if hw >= 4 && r.gen_bool(0.5) { 3 } else { 1 };
                let out_c = r.gen_range(1..=3);
                let w = b.constant(&name("w"), uniform(&mut r, &[out_c, c, kernel, kernel], -0.5, 0.5));
                let bias = b.constant(&name("b"), uniform(&mut r, &[out_c], -0.5, 0.5));
                let centered = b.op(OpKind::Sub, &[&cur, &m]);
                let scaled = b.op(OpKind::Mul, &[&centered, &s]);
                cur = b.op(OpKind::Conv2d, &[&scaled, &w, &bias]);
                c = out_c;
                hw = hw + 1 - kernel;
            }
            1 => {
                let a = b.constant(&name("ca"), uniform(&mut r, &[1, c, 1, 1], -1.0, 1.0));
                let d = b.constant(&name("cb"), uniform(&mut r, &[1, c, 1, 1], -1.0, 1.0));
                let sum = b.op(OpKind::Add, &[&a, &d]);
                let gated = b.op(OpKind::Sigmoid, &[&sum]);
                cur = b.op(OpKind::Mul, &[&cur, &gated]);
            }
            2 => cur = b.op(OpKind::Relu, &[&cur]),
            _ => {
                let shift = b.constant(&name("shift"), uniform(&mut r, &[1, c, hw, hw], -1.0, 1.0));
                cur = b.op(OpKind::Add, &[&cur, &shift]);
            }
        }
    }

    let flat_shape = b.constant(&name("flat"), Tensor::vector(vec![1.0, -1.0]));
    cur = b.op(OpKind::Reshape, &[&cur, &flat_shape]);
    let mut features = c * hw * hw;
    for _ in 0..r.gen_range(1..=3) {
        let out = r.gen_range(2..=6);
        let w = b.constant(&name("fc"), uniform(&mut r, &[features, out], -0.5, 0.5));
        let bias = b.constant(&name("fb"), uniform(&mut r, &[out], -0.5, 0.5));
        match r.gen_range(0..3) {
            0 => {
                let alpha = b.constant(&name("pre"), uniform(&mut r, &[features], 0.5, 1.5));
                let scaled = b.op(OpKind::Mul, &[&cur, &alpha]);
                cur = b.op(OpKind::Gemm, &[&scaled, &w, &bias]);
            }
            1 => {
                let alpha = b.constant(&name("post"), uniform(&mut r, &[1, out], 0.5, 1.5));
                let h = b.op(OpKind::Gemm, &[&cur, &w, &bias]);
                cur = b.op(OpKind::Mul, &[&alpha, &h]);
            }
            _ => {
                let h = b.op(OpKind::Gemm, &[&cur, &w, &bias]);
                cur = b.op(OpKind::Relu, &[&h]);
            }
        }
        features = out;
    }
    if r.gen_bool(0.5) {
        cur = b.op(OpKind::Softmax, &[&cur]);
    }
    b.output(&cur);
    b.build().expect("random graph is valid")
}
