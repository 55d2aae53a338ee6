use serde::{Deserialize, Serialize};

use super::{OptError, PassReport, Rewrite};
use crate::ir::{execute_probe, ComputationGraph, GraphNode, Tensor, TensorMap};
use crate::numeric::fsum;

/// Weights for merging layers `start_index..=end_index` into one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeSpec {
    pub start_index: i64,
    pub end_index: i64,
    pub center: f64,
    pub weights: Vec<f64>,
}

/// `w_k = |k − c| / Σ_l |l − c|` with `c = (i + j) / 2`.
///
/// Distances are computed on doubled indices so they stay integral.
pub fn merge_weights(i: i64, j: i64) -> Result<MergeSpec, OptError> {
    if j <= i {
        return Err(OptError::DegenerateRange { start: i, end: j });
    }
    let doubled: Vec<i64> = (i..=j).map(|k| (2 * k - i - j).abs()).collect();
    let total: i64 = doubled.iter().sum();
    Ok(MergeSpec {
        start_index: i,
        end_index: j,
        center: (i + j) as f64 / 2.0,
        weights: doubled.iter().map(|&d| d as f64 / total as f64).collect(),
    })
}

/// Parameter inputs of a layer: every input after the first.
fn params<'g>(graph: &'g ComputationGraph, node: &GraphNode) -> Result<Vec<&'g Tensor>, OptError> {
    node.inputs[1..]
        .iter()
        .map(|name| {
            graph.initializer(name).ok_or_else(|| {
                OptError::IncompatibleLayers(format!(
                    "`{}` reads `{name}`, which is not a constant parameter",
                    node.id
                ))
            })
        })
        .collect()
}

/// Replaces the chain `layer_ids` by one node of the same kind whose
/// parameters are the weighted sums of the originals.
///
/// The merged node keeps the first layer's id and input and the last layer's
/// output name. Sums are anchored on the first layer, so a chain of
/// identical layers merges to exactly that layer.
pub fn merge_layers(
    graph: &ComputationGraph,
    layer_ids: &[&str],
) -> Result<(ComputationGraph, PassReport), OptError> {
    let spec = merge_weights(1, layer_ids.len() as i64)?;
    let layers = layer_ids
        .iter()
        .map(|id| {
            graph
                .node(id)
                .ok_or_else(|| OptError::IncompatibleLayers(format!("no node `{id}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let first = layers[0];
    let base = params(graph, first)?;
    for pair in layers.windows(2) {
        let (prev, next) = (pair[0], pair[1]);
        if next.op != first.op || next.attrs != first.attrs {
            return Err(OptError::IncompatibleLayers(format!(
                "`{}` differs from `{}` in kind or attributes",
                next.id, first.id
            )));
        }
        if next.inputs.first() != Some(&prev.output) {
            return Err(OptError::IncompatibleLayers(format!(
                "`{}` does not consume the output of `{}`",
                next.id, prev.id
            )));
        }
        if graph.use_count(&prev.output) != 1 {
            return Err(OptError::IncompatibleLayers(format!(
                "output of `{}` has other consumers",
                prev.id
            )));
        }
        let p = params(graph, next)?;
        let same = p.len() == base.len() && p.iter().zip(&base).all(|(a, b)| a.shape == b.shape);
        if !same {
            return Err(OptError::IncompatibleLayers(format!(
                "`{}` has parameter shapes different from `{}`",
                next.id, first.id
            )));
        }
    }

    let mut g = graph.clone();
    let mut merged = first.clone();
    for (slot, b) in base.iter().enumerate() {
        let mut data = b.data.clone();
        for (layer, w) in layers.iter().zip(&spec.weights).skip(1) {
            let p = graph.initializer(&layer.inputs[slot + 1]).unwrap();
            for (d, (&v, &anchor)) in data.iter_mut().zip(p.data.iter().zip(&b.data)) {
                *d += w * (v - anchor);
            }
        }
        let name = g.fresh_name(&format!("{}_merged_{slot}", first.id));
        g.add_initializer(name.clone(), Tensor::new(b.shape.clone(), data));
        merged.inputs[slot + 1] = name;
    }
    merged.output = layers.last().unwrap().output.clone();

    let drop: Vec<&str> = layer_ids[1..].to_vec();
    g.nodes.retain(|n| !drop.contains(&n.id.as_str()));
    let at = g.nodes.iter().position(|n| n.id == first.id).unwrap();
    g.nodes[at] = merged;
    g.prune_initializers();
    g.validate()?;

    let mut report = PassReport::new("merge_layers", graph.nodes.len());
    report.nodes_after = g.nodes.len();
    report.rewrites.push(Rewrite {
        removed: layer_ids.iter().map(|s| s.to_string()).collect(),
        replacement: first.id.clone(),
    });
    Ok((g, report))
}

/// Mean over calibration inputs of the elementwise MSE between `probe` in
/// both graphs.
pub fn imitation_error(
    original: &ComputationGraph,
    merged: &ComputationGraph,
    probe: &str,
    calibration: &[TensorMap],
) -> Result<f64, OptError> {
    if calibration.is_empty() {
        return Err(OptError::EmptyCalibration);
    }
    let per_input = calibration
        .iter()
        .map(|inputs| {
            let a = execute_probe(original, inputs, probe)?;
            let b = execute_probe(merged, inputs, probe)?;
            if a.shape != b.shape {
                return Err(OptError::ProbeShapeMismatch {
                    probe: probe.to_string(),
                    original: a.shape,
                    merged: b.shape,
                });
            }
            let sq = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y));
            Ok(fsum(sq) / a.numel() as f64)
        })
        .collect::<Result<Vec<f64>, OptError>>()?;
    Ok(fsum(per_input.iter().copied()) / per_input.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{GraphBuilder, OpKind};
    use proptest::prelude::*;

    #[test]
    fn hand_weights() {
        assert_eq!(merge_weights(1, 3).unwrap().weights, vec![0.5, 0.0, 0.5]);
        assert_eq!(
            merge_weights(1, 4).unwrap().weights,
            vec![0.375, 0.125, 0.125, 0.375]
        );
        assert_eq!(merge_weights(2, 3).unwrap().weights, vec![0.5, 0.5]);
        assert_eq!(merge_weights(1, 4).unwrap().center, 2.5);
    }

    #[test]
    fn single_layer_is_degenerate() {
        assert!(matches!(
            merge_weights(3, 3),
            Err(OptError::DegenerateRange { start: 3, end: 3 })
        ));
        assert!(matches!(merge_weights(4, 2), Err(OptError::DegenerateRange { .. })));
    }

    proptest! {
        #[test]
        fn weight_laws(i in -50i64..50, len in 2i64..=64) {
            let spec = merge_weights(i, i + len - 1).unwrap();
            let w = &spec.weights;
            prop_assert_eq!(w.len() as i64, len);
            prop_assert!((fsum(w.iter().copied()) - 1.0).abs() <= 1e-12);
            for t in 0..w.len() {
                prop_assert_eq!(w[t], w[w.len() - 1 - t]);
            }
            let half = w.len() / 2;
            for t in 1..half {
                prop_assert!(w[t] <= w[t - 1]);
            }
            if len % 2 == 1 {
                prop_assert_eq!(w[half], 0.0);
            }
        }
    }

    fn gemm_chain(weights: &[f64]) -> (ComputationGraph, Vec<String>, String) {
        let mut gb = GraphBuilder::new("chain");
        let mut h = gb.input("x", &[1, 1]);
        let mut ids = Vec::new();
        for (k, &w) in weights.iter().enumerate() {
            let w = gb.constant(&format!("w{k}"), Tensor::new(vec![1, 1], vec![w]));
            let b = gb.constant(&format!("b{k}"), Tensor::vector(vec![k as f64]));
            h = gb.op(OpKind::Gemm, &[&h, &w, &b]);
            ids.push(format!("gemm_{k}"));
        }
        gb.output(&h);
        (gb.build().unwrap(), ids, h)
    }

    #[test]
    fn two_layer_hand_case() {
        let (g, ids, y) = gemm_chain(&[2.0, 4.0]);
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let (merged, report) = merge_layers(&g, &ids).unwrap();
        assert_eq!(report.nodes_after, 1);
        let node = &merged.nodes[0];
        assert_eq!(node.output, y);
        assert_eq!(merged.initializer(&node.inputs[1]).unwrap().data, vec![3.0]);
        assert_eq!(merged.initializer(&node.inputs[2]).unwrap().data, vec![0.5]);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let mut gb = GraphBuilder::new("mixed");
        let x = gb.input("x", &[1, 2]);
        let w = gb.constant("w", Tensor::new(vec![2, 2], vec![1.0; 4]));
        let h = gb.op(OpKind::Gemm, &[&x, &w]);
        let y = gb.op(OpKind::Mul, &[&h, &w]);
        gb.output(&y);
        let g = gb.build().unwrap();
        assert!(matches!(
            merge_layers(&g, &["gemm_0", "mul_1"]),
            Err(OptError::IncompatibleLayers(_))
        ));
    }

    #[test]
    fn unit_offset_probe() {
        let mut gb = GraphBuilder::new("a");
        let x = gb.input("x", &[2]);
        let c = gb.constant("c", Tensor::vector(vec![0.0, 0.0]));
        let y = gb.op(OpKind::Add, &[&x, &c]);
        gb.output(&y);
        let a = gb.build().unwrap();
        let mut b = a.clone();
        b.initializers[0].tensor = Tensor::vector(vec![1.0, -1.0]);
        let calib = vec![TensorMap::from([("x".to_string(), Tensor::vector(vec![3.0, 4.0]))])];
        assert_eq!(imitation_error(&a, &a, &y, &calib).unwrap(), 0.0);
        assert_eq!(imitation_error(&a, &b, &y, &calib).unwrap(), 1.0);
        assert!(matches!(
            imitation_error(&a, &b, &y, &[]),
            Err(OptError::EmptyCalibration)
        ));
    }
}
