use super::{PassReport, Rewrite};
use crate::ir::{ComputationGraph, GraphNode, IrError, OpKind, Tensor};

/// Per-channel constant: a single value, or shape `[1, C, 1, 1]` / `[C, 1, 1]`.
fn per_channel(t: &Tensor, channels: usize) -> Option<Vec<f64>> {
    match t.shape.as_slice() {
        _ if t.numel() == 1 && t.rank() <= 4 => Some(vec![t.data[0]; channels]),
        [1, c, 1, 1] | [c, 1, 1] if *c == channels => Some(t.data.clone()),
        _ => None,
    }
}

struct Match {
    sub: usize,
    mul: usize,
    conv: usize,
    x: String,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn find(graph: &ComputationGraph) -> Option<Match> {
    for (ci, conv) in graph.nodes.iter().enumerate() {
        if conv.op != OpKind::Conv2d {
            continue;
        }
        let Some(weight) = graph.initializer(&conv.inputs[1]) else { continue };
        if conv.inputs.get(2).is_some_and(|b| !graph.is_initializer(b)) {
            continue;
        }
        let channels = weight.shape[1];
        let Some((mi, mul)) = single_use_producer(graph, &conv.inputs[0], OpKind::Mul) else {
            continue;
        };
        let (scale, sub_out) = match (
            graph.initializer(&mul.inputs[0]),
            graph.initializer(&mul.inputs[1]),
        ) {
            (_, Some(s)) => (per_channel(s, channels), &mul.inputs[0]),
            (Some(s), None) => (per_channel(s, channels), &mul.inputs[1]),
            (None, None) => continue,
        };
        let Some(scale) = scale else { continue };
        let Some((si, sub)) = single_use_producer(graph, sub_out, OpKind::Sub) else {
            continue;
        };
        let Some(mean) = graph
            .initializer(&sub.inputs[1])
            .and_then(|m| per_channel(m, channels))
        else {
            continue;
        };
        // zero padding of the normalized input differs from padding the raw input
        let padding = conv.int_attr("padding", 0).unwrap_or(0);
        if padding != 0 && mean.iter().any(|&m| m != 0.0) {
            continue;
        }
        return Some(Match {
            sub: si,
            mul: mi,
            conv: ci,
            x: sub.inputs[0].clone(),
            mean,
            scale,
        });
    }
    None
}

fn single_use_producer<'g>(
    graph: &'g ComputationGraph,
    value: &str,
    op: OpKind,
) -> Option<(usize, &'g GraphNode)> {
    let (i, node) = graph
        .nodes
        .iter()
        .enumerate()
        .find(|(_, n)| n.output == value)?;
    (node.op == op && graph.use_count(value) == 1).then_some((i, node))
}

/// Rewrites `Conv2d(Mul(Sub(x, m), s))` with per-channel constants into a
/// single convolution with `W'[o,c] = W[o,c]·s[c]` and
/// `b'[o] = b[o] − Σ W[o,c,kh,kw]·s[c]·m[c]`.
pub fn fuse_normalization_into_conv(
    graph: &ComputationGraph,
) -> Result<(ComputationGraph, PassReport), IrError> {
    let mut report = PassReport::new("fuse_normalization_into_conv", graph.nodes.len());
    let mut g = graph.clone();
    while let Some(m) = find(&g) {
        let conv = g.nodes[m.conv].clone();
        let weight = g.initializer(&conv.inputs[1]).unwrap().clone();
        let (cout, cin) = (weight.shape[0], weight.shape[1]);
        let kernel = weight.shape[2] * weight.shape[3];
        let mut bias = match conv.inputs.get(2) {
            Some(b) => g.initializer(b).unwrap().data.clone(),
            None => vec![0.0; cout],
        };

        let mut fused = weight.clone();
        for o in 0..cout {
            let mut shift = 0.0;
            for c in 0..cin {
                let base = (o * cin + c) * kernel;
                for w in &mut fused.data[base..base + kernel] {
                    let scaled = *w * m.scale[c];
                    shift += scaled * m.mean[c];
                    *w = scaled;
                }
            }
            bias[o] -= shift;
        }

        let w_name = g.fresh_name(&format!("{}_w_fused", conv.id));
        g.add_initializer(w_name.clone(), fused);
        let b_name = g.fresh_name(&format!("{}_b_fused", conv.id));
        g.add_initializer(b_name.clone(), Tensor::vector(bias));

        let removed = vec![g.nodes[m.sub].id.clone(), g.nodes[m.mul].id.clone()];
        g.nodes[m.conv].inputs = vec![m.x.clone(), w_name, b_name];
        let (lo, hi) = (m.sub.min(m.mul), m.sub.max(m.mul));
        g.nodes.remove(hi);
        g.nodes.remove(lo);
        report.rewrites.push(Rewrite {
            removed,
            replacement: conv.id.clone(),
        });
    }
    if !report.rewrites.is_empty() {
        g.prune_initializers();
        g.validate()?;
    }
    report.nodes_after = g.nodes.len();
    Ok((g, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{execute, AttrValue, GraphBuilder, TensorMap};

    fn chain(w: Tensor, b: Tensor, m: Tensor, s: Tensor, padding: i64) -> ComputationGraph {
        let cin = w.shape[1];
        let mut gb = GraphBuilder::new("norm");
        let x = gb.input("x", &[1, cin, 4, 4]);
        let m = gb.constant("m", m);
        let s = gb.constant("s", s);
        let w = gb.constant("w", w);
        let b = gb.constant("b", b);
        let centered = gb.op(OpKind::Sub, &[&x, &m]);
        let scaled = gb.op(OpKind::Mul, &[&centered, &s]);
        let y = gb.op_with(
            OpKind::Conv2d,
            &[&scaled, &w, &b],
            [("padding", AttrValue::Int(padding))],
        );
        gb.output(&y);
        gb.build().unwrap()
    }

    #[test]
    fn identity_normalization_leaves_weights() {
        let w = Tensor::from_fn(&[2, 1, 1, 1], |i| i as f64 + 1.0);
        let g = chain(
            w.clone(),
            Tensor::vector(vec![0.5, -0.5]),
            Tensor::zeros(&[1, 1, 1, 1]),
            Tensor::full(&[1, 1, 1, 1], 1.0),
            0,
        );
        let (fused, report) = fuse_normalization_into_conv(&g).unwrap();
        assert_eq!(report.nodes_before - report.nodes_after, 2);
        let conv = &fused.nodes[0];
        assert_eq!(fused.initializer(&conv.inputs[1]).unwrap(), &w);
        assert_eq!(fused.initializer(&conv.inputs[2]).unwrap().data, vec![0.5, -0.5]);
    }

    #[test]
    fn one_by_one_hand_case() {
        // 2·(3·(x − 0.5)) + 1 = 6x − 2
        let g = chain(
            Tensor::full(&[1, 1, 1, 1], 2.0),
            Tensor::vector(vec![1.0]),
            Tensor::full(&[1, 1, 1, 1], 0.5),
            Tensor::full(&[1, 1, 1, 1], 3.0),
            0,
        );
        let (fused, _) = fuse_normalization_into_conv(&g).unwrap();
        let conv = &fused.nodes[0];
        assert_eq!(fused.initializer(&conv.inputs[1]).unwrap().data, vec![6.0]);
        assert_eq!(fused.initializer(&conv.inputs[2]).unwrap().data, vec![-2.0]);
    }

    #[test]
    fn padded_conv_with_nonzero_mean_is_left_alone() {
        let g = chain(
            Tensor::full(&[1, 1, 3, 3], 1.0),
            Tensor::vector(vec![0.0]),
            Tensor::full(&[1, 1, 1, 1], 0.5),
            Tensor::full(&[1, 1, 1, 1], 2.0),
            1,
        );
        let (same, report) = fuse_normalization_into_conv(&g).unwrap();
        assert!(report.rewrites.is_empty());
        assert_eq!(same, g);
    }

    #[test]
    fn shared_intermediate_blocks_fusion() {
        let mut gb = GraphBuilder::new("shared");
        let x = gb.input("x", &[1, 1, 2, 2]);
        let m = gb.constant("m", Tensor::full(&[1, 1, 1, 1], 0.5));
        let s = gb.constant("s", Tensor::full(&[1, 1, 1, 1], 2.0));
        let w = gb.constant("w", Tensor::full(&[1, 1, 1, 1], 1.0));
        let c = gb.op(OpKind::Sub, &[&x, &m]);
        let n = gb.op(OpKind::Mul, &[&c, &s]);
        let y = gb.op(OpKind::Conv2d, &[&n, &w]);
        gb.output(&y);
        gb.output(&c);
        let g = gb.build().unwrap();
        assert!(fuse_normalization_into_conv(&g).unwrap().1.rewrites.is_empty());
    }

    #[test]
    fn conv_without_bias_gains_one() {
        let mut gb = GraphBuilder::new("nobias");
        let x = gb.input("x", &[1, 2, 3, 3]);
        let m = gb.constant("m", Tensor::new(vec![1, 2, 1, 1], vec![0.25, -1.0]));
        let s = gb.constant("s", Tensor::new(vec![1, 2, 1, 1], vec![4.0, 0.5]));
        let w = gb.constant("w", Tensor::from_fn(&[3, 2, 2, 2], |i| (i as f64 * 0.37).sin()));
        let c = gb.op(OpKind::Sub, &[&x, &m]);
        let n = gb.op(OpKind::Mul, &[&s, &c]);
        let y = gb.op(OpKind::Conv2d, &[&n, &w]);
        gb.output(&y);
        let g = gb.build().unwrap();
        let (fused, report) = fuse_normalization_into_conv(&g).unwrap();
        assert_eq!(report.nodes_after, 1);
        assert_eq!(fused.nodes[0].inputs.len(), 3);
        let inputs = TensorMap::from([(
            "x".to_string(),
            Tensor::from_fn(&[1, 2, 3, 3], |i| (i as f64).cos()),
        )]);
        let a = &execute(&g, &inputs).unwrap()[&y];
        let b = &execute(&fused, &inputs).unwrap()[&y];
        assert!(a.max_abs_diff(b) <= 1e-12);
    }
}
