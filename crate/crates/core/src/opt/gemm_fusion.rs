use super::{PassReport, Rewrite};
use crate::ir::{
    broadcast_binary, infer_shapes, ComputationGraph, GraphNode, IrError, OpKind, ShapeMap, Tensor,
};

/// Scale as one value per feature: a single element, or shape `[n]` / `[1, n]`.
fn per_feature(t: &Tensor, n: usize) -> Option<Vec<f64>> {
    match t.shape.as_slice() {
        _ if t.numel() == 1 && t.rank() <= 2 => Some(vec![t.data[0]; n]),
        [k] | [1, k] if *k == n => Some(t.data.clone()),
        _ => None,
    }
}

fn constant_operand<'g>(graph: &'g ComputationGraph, node: &'g GraphNode) -> Option<(&'g Tensor, &'g str)> {
    match (graph.initializer(&node.inputs[0]), graph.initializer(&node.inputs[1])) {
        (_, Some(t)) => Some((t, &node.inputs[0])),
        (Some(t), None) => Some((t, &node.inputs[1])),
        (None, None) => None,
    }
}

fn index_of(graph: &ComputationGraph, id: &str) -> usize {
    graph.nodes.iter().position(|n| n.id == id).unwrap()
}

enum Match {
    /// `Mul(Gemm(x, W, b), α)`: columns of W and the bias scale by α.
    Post { gemm: usize, mul: usize, scale: Vec<f64> },
    /// `Gemm(Mul(x, α), W, b)`: rows of W scale by α.
    Pre { gemm: usize, mul: usize, x: String, scale: Vec<f64> },
}

fn find(graph: &ComputationGraph, shapes: &ShapeMap) -> Result<Option<Match>, IrError> {
    for (gi, gemm) in graph.nodes.iter().enumerate() {
        if gemm.op != OpKind::Gemm || !graph.is_initializer(&gemm.inputs[1]) {
            continue;
        }
        if gemm.inputs.get(2).is_some_and(|b| !graph.is_initializer(b)) {
            continue;
        }
        let (trans_a, _) = crate::ir::gemm_flags(gemm)?;
        let out_shape = &shapes[&gemm.output];
        let n = out_shape[1];

        if graph.use_count(&gemm.output) == 1 {
            let consumer = graph
                .nodes
                .iter()
                .position(|c| c.op == OpKind::Mul && c.inputs.contains(&gemm.output));
            if let Some(mi) = consumer {
                let mul = &graph.nodes[mi];
                if let Some((alpha, other)) = constant_operand(graph, mul) {
                    let same_shape = shapes[&mul.output] == *out_shape;
                    if other == gemm.output && same_shape {
                        if let Some(scale) = per_feature(alpha, n) {
                            return Ok(Some(Match::Post { gemm: gi, mul: mi, scale }));
                        }
                    }
                }
            }
        }

        if trans_a {
            continue;
        }
        let Some(mul) = graph.producer(&gemm.inputs[0]) else { continue };
        if mul.op != OpKind::Mul || graph.use_count(&mul.output) != 1 {
            continue;
        }
        let Some((alpha, x)) = constant_operand(graph, mul) else { continue };
        if graph.is_initializer(x) || shapes[x] != shapes[&mul.output] {
            continue;
        }
        let k = shapes[x][1];
        if let Some(scale) = per_feature(alpha, k) {
            return Ok(Some(Match::Pre {
                gemm: gi,
                mul: index_of(graph, &mul.id),
                x: x.to_string(),
                scale,
            }));
        }
    }
    Ok(None)
}

/// Multiplies entry `(r, c)` of a 2-D weight by `row[r] * col[c]`.
fn scale_matrix(w: &Tensor, row: impl Fn(usize) -> f64, col: impl Fn(usize) -> f64) -> Tensor {
    let cols = w.shape[1];
    Tensor::from_fn(&w.shape, |i| w.data[i] * row(i / cols) * col(i % cols))
}

/// Folds a constant multiplier adjacent to a Gemm into its parameters, in
/// either direction.
pub fn fuse_scale_into_gemm(
    graph: &ComputationGraph,
) -> Result<(ComputationGraph, PassReport), IrError> {
    let mut report = PassReport::new("fuse_scale_into_gemm", graph.nodes.len());
    let mut g = graph.clone();
    loop {
        let shapes = infer_shapes(&g)?;
        let Some(m) = find(&g, &shapes)? else { break };
        let (gi, mi) = match &m {
            Match::Post { gemm, mul, .. } | Match::Pre { gemm, mul, .. } => (*gemm, *mul),
        };
        let gemm = g.nodes[gi].clone();
        let (_, trans_b) = crate::ir::gemm_flags(&gemm)?;
        let w = g.initializer(&gemm.inputs[1]).unwrap().clone();

        let (w_new, b_new) = match &m {
            Match::Post { scale, .. } => {
                let w_new = if trans_b {
                    scale_matrix(&w, |r| scale[r], |_| 1.0)
                } else {
                    scale_matrix(&w, |_| 1.0, |c| scale[c])
                };
                let b_new = gemm.inputs.get(2).map(|b| {
                    let alpha = Tensor::new(vec![1, scale.len()], scale.clone());
                    let b = g.initializer(b).unwrap();
                    let scaled = broadcast_binary(b, &alpha, |x, a| x * a).unwrap();
                    // keep the bias rank the Gemm already accepted when it was a row
                    if b.rank() == 1 && b.numel() == scale.len() {
                        Tensor::vector(scaled.data)
                    } else {
                        scaled
                    }
                });
                (w_new, b_new)
            }
            Match::Pre { scale, .. } => {
                let w_new = if trans_b {
                    scale_matrix(&w, |_| 1.0, |c| scale[c])
                } else {
                    scale_matrix(&w, |r| scale[r], |_| 1.0)
                };
                (w_new, None)
            }
        };

        let w_name = g.fresh_name(&format!("{}_w_scaled", gemm.id));
        g.add_initializer(w_name.clone(), w_new);
        g.nodes[gi].inputs[1] = w_name;
        if let Some(b) = b_new {
            let b_name = g.fresh_name(&format!("{}_b_scaled", gemm.id));
            g.add_initializer(b_name.clone(), b);
            g.nodes[gi].inputs[2] = b_name;
        }
        match &m {
            Match::Post { .. } => g.nodes[gi].output = g.nodes[mi].output.clone(),
            Match::Pre { x, .. } => g.nodes[gi].inputs[0] = x.clone(),
        }
        let removed = g.nodes.remove(mi).id;
        report.rewrites.push(Rewrite {
            removed: vec![removed],
            replacement: gemm.id.clone(),
        });
        g.prune_initializers();
        g.validate()?;
    }
    report.nodes_after = g.nodes.len();
    Ok((g, report))
}
