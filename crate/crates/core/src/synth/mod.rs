//! Deterministic synthetic worlds: test bundles, toy submissions per track and
//! optimizer fixtures.
//!
//! Each track has a fixed world (class prototypes, colour palette, camera) so
//! toy models built here match bundles generated from any item seed.

mod classify;
mod depth;
mod fixtures;
mod seg;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bundle::TestBundle;
use crate::ir::{ComputationGraph, GraphNode, OpKind};
use crate::metrics::Track;
use crate::opt::{optimize, DEFAULT_PIPELINE};
use crate::sim::{default_device, profile};

pub use classify::{classifier, classification_bundle, CLASSES, CLASS_INPUT_SHAPE};
pub use depth::{depth_bundle, depth_model, DEPTH_HEIGHT, DEPTH_INTRINSICS, DEPTH_WIDTH};
pub use fixtures::{
    class_token_fixture, gemm_post_scale_fixture, gemm_pre_scale_fixture, normalization_fixture,
    random_graph, random_inputs,
};
pub use seg::{segmentation_bundle, segmenter, SEG_SIZE};

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// What a toy submission is built to do in the referee pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Passes the gate; `degrade` 0 is the best model, larger is worse.
    Pass { degrade: u32 },
    /// Padded until its simulated latency exceeds the track's gate.
    Reject,
    /// Declares an input shape the bundle cannot satisfy.
    Fail,
}

pub fn bundle(track: Track, items: usize, seed: u64) -> TestBundle {
    match track {
        Track::Classification => classification_bundle(items, seed),
        Track::Segmentation => segmentation_bundle(items, seed),
        Track::Depth => depth_bundle(items, seed),
    }
}

pub fn toy_model(track: Track, variant: Variant) -> ComputationGraph {
    let degrade = match variant {
        Variant::Pass { degrade } => degrade,
        _ => 0,
    };
    let wrong_input = variant == Variant::Fail;
    let graph = match track {
        Track::Classification => classifier(degrade, wrong_input),
        Track::Segmentation => segmenter(degrade, wrong_input),
        Track::Depth => depth_model(degrade, wrong_input),
    };
    if variant != Variant::Reject {
        return graph;
    }
    let device = default_device(track);
    let limit = crate::metrics::TrackConfig::new(track).latency_limit_ms;
    let (compiled, _) = optimize(&graph, &DEFAULT_PIPELINE).expect("toy model compiles");
    let base = profile(&compiled, &device, 1).expect("toy model profiles").total_ms;
    let per_node_ms = device.per_node_overhead_us / 1000.0;
    let needed = ((1.2 * limit - base) / per_node_ms).ceil().max(1.0) as usize;
    pad_with_shape_nodes(&graph, needed)
}

/// Appends `count` Shape nodes reading the first graph input. Their outputs
/// are unused, and constant folding leaves them alone because they depend on
/// a runtime input.
pub fn pad_with_shape_nodes(graph: &ComputationGraph, count: usize) -> ComputationGraph {
    let mut g = graph.clone();
    let source = g.inputs[0].name.clone();
    for k in 0..count {
        let id = g.fresh_name(&format!("pad_shape_{k}"));
        g.nodes.push(GraphNode::new(id.clone(), OpKind::Shape, &[&source], format!("{id}_out")));
    }
    g.validate().expect("padding keeps the graph valid");
    g
}
