use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use super::graph::{ComputationGraph, GraphNode, OpKind};
use super::shape::{
    conv_params, gemm_flags, normalize_axis, output_shape, reshape_target, slice_bounds, Operand,
};
use super::tensor::{broadcast_binary, broadcast_to, strides, Tensor};
use super::IrError;

pub type TensorMap = BTreeMap<String, Tensor>;

/// Runs `graph` on `inputs` and returns every declared output.
pub fn execute(graph: &ComputationGraph, inputs: &TensorMap) -> Result<TensorMap, IrError> {
    let env = run(graph, inputs)?;
    Ok(graph
        .outputs
        .iter()
        .map(|name| (name.clone(), env[name.as_str()].clone().into_owned()))
        .collect())
}

/// Runs `graph` and returns the value named `probe` (any input, initializer
/// or intermediate).
pub fn execute_probe(
    graph: &ComputationGraph,
    inputs: &TensorMap,
    probe: &str,
) -> Result<Tensor, IrError> {
    if !graph.is_defined(probe) {
        return Err(IrError::validation("<graph>", format!("unknown value `{probe}`")));
    }
    let mut env = run(graph, inputs)?;
    Ok(env.remove(probe).unwrap().into_owned())
}

fn run<'g>(
    graph: &'g ComputationGraph,
    inputs: &'g TensorMap,
) -> Result<HashMap<&'g str, Cow<'g, Tensor>>, IrError> {
    let mut env: HashMap<&str, Cow<Tensor>> = HashMap::new();
    for decl in &graph.inputs {
        let t = inputs.get(&decl.name).ok_or_else(|| IrError::Shape {
            node: decl.name.clone(),
            reason: "graph input not supplied".into(),
        })?;
        if t.shape != decl.shape {
            return Err(IrError::Shape {
                node: decl.name.clone(),
                reason: format!("expected shape {:?}, got {:?}", decl.shape, t.shape),
            });
        }
        env.insert(decl.name.as_str(), Cow::Borrowed(t));
    }
    for init in &graph.initializers {
        env.insert(init.name.as_str(), Cow::Borrowed(&init.tensor));
    }
    for node in &graph.nodes {
        let args: Vec<&Tensor> = node
            .inputs
            .iter()
            .map(|name| env[name.as_str()].as_ref())
            .collect();
        let out = eval_node(node, &args)?;
        env.insert(node.output.as_str(), Cow::Owned(out));
    }
    Ok(env)
}

/// Evaluates a single node on concrete operands.
pub fn eval_node(node: &GraphNode, args: &[&Tensor]) -> Result<Tensor, IrError> {
    let operands: Vec<Operand> = args
        .iter()
        .map(|t| Operand {
            shape: &t.shape,
            value: Some(t),
        })
        .collect();
    let out_shape = output_shape(node, &operands)?;
    let out = match node.op {
        OpKind::Add => binary(args, |a, b| a + b),
        OpKind::Sub => binary(args, |a, b| a - b),
        OpKind::Mul => binary(args, |a, b| a * b),
        OpKind::Relu => args[0].map(|v| v.max(0.0)),
        OpKind::Sigmoid => args[0].map(|v| 1.0 / (1.0 + (-v).exp())),
        OpKind::Softmax => softmax(args[0]),
        OpKind::Gemm => gemm(node, args)?,
        OpKind::Conv2d => conv2d(node, args, &out_shape)?,
        OpKind::Reshape => Tensor::new(reshape_target(node, &operands)?, args[0].data.clone()),
        OpKind::Concat => concat(node, args, &out_shape)?,
        OpKind::Slice => slice(node, args[0], &out_shape)?,
        OpKind::Gather => gather(node, args, &out_shape)?,
        OpKind::Shape => Tensor::vector(args[0].shape.iter().map(|&d| d as f64).collect()),
        OpKind::Expand => broadcast_to(args[0], &out_shape).expect("expand shape checked"),
        OpKind::WeightedMerge => weighted_merge(node, args)?,
    };
    debug_assert_eq!(out.shape, out_shape);
    if let Some(bad) = out.data.iter().find(|v| !v.is_finite()) {
        return Err(IrError::Numeric {
            node: node.id.clone(),
            reason: format!("{} produced non-finite value {bad}", node.op),
        });
    }
    Ok(out)
}

fn binary(args: &[&Tensor], f: impl Fn(f64, f64) -> f64) -> Tensor {
    broadcast_binary(args[0], args[1], f).expect("broadcast checked by shape rule")
}

fn softmax(x: &Tensor) -> Tensor {
    let width = *x.shape.last().unwrap();
    let mut data = x.data.clone();
    for row in data.chunks_mut(width) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(x.shape.clone(), data)
}

fn gemm(node: &GraphNode, args: &[&Tensor]) -> Result<Tensor, IrError> {
    let (ta, tb) = gemm_flags(node)?;
    let (a, b) = (args[0], args[1]);
    let (m, k) = if ta { (a.shape[1], a.shape[0]) } else { (a.shape[0], a.shape[1]) };
    let n = if tb { b.shape[0] } else { b.shape[1] };
    let a_at = |i: usize, p: usize| if ta { a.data[p * m + i] } else { a.data[i * k + p] };
    let b_at = |p: usize, j: usize| if tb { b.data[j * k + p] } else { b.data[p * n + j] };
    let bias = match args.get(2) {
        Some(c) => Some(broadcast_to(c, &[m, n]).expect("bias shape checked")),
        None => None,
    };
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a_at(i, p) * b_at(p, j);
            }
            if let Some(c) = &bias {
                acc += c.data[i * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Ok(Tensor::new(vec![m, n], out))
}

fn conv2d(node: &GraphNode, args: &[&Tensor], out_shape: &[usize]) -> Result<Tensor, IrError> {
    let p = conv_params(node)?;
    let (x, w) = (args[0], args[1]);
    let (batch, cin, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (cout, kh, kw) = (w.shape[0], w.shape[2], w.shape[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let mut out = vec![0.0; batch * cout * oh * ow];
    for nb in 0..batch {
        for o in 0..cout {
            let bias = args.get(2).map_or(0.0, |b| b.data[o]);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..cin {
                        for ky in 0..kh {
                            let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data[((nb * cin + c) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data[((o * cin + c) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((nb * cout + o) * oh + oy) * ow + ox] = acc + bias;
                }
            }
        }
    }
    Ok(Tensor::new(out_shape.to_vec(), out))
}

/// Splits `shape` around `axis` into (outer count, axis length, inner count).
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn concat(node: &GraphNode, args: &[&Tensor], out_shape: &[usize]) -> Result<Tensor, IrError> {
    let axis = normalize_axis(node, node.int_attr("axis", 0)?, out_shape.len())?;
    let (outer, _, inner) = split_at_axis(out_shape, axis);
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for t in args {
            let chunk = t.shape[axis] * inner;
            data.extend_from_slice(&t.data[o * chunk..(o + 1) * chunk]);
        }
    }
    Ok(Tensor::new(out_shape.to_vec(), data))
}

fn slice(node: &GraphNode, x: &Tensor, out_shape: &[usize]) -> Result<Tensor, IrError> {
    let mut start = vec![0usize; x.rank()];
    for (axis, s, _) in slice_bounds(node, &x.shape)? {
        start[axis] = s;
    }
    let in_strides = x.strides();
    let out_strides = strides(out_shape);
    let n: usize = out_shape.iter().product();
    let data = (0..n)
        .map(|flat| {
            let offset: usize = out_strides
                .iter()
                .enumerate()
                .map(|(d, s)| ((flat / s) % out_shape[d] + start[d]) * in_strides[d])
                .sum();
            x.data[offset]
        })
        .collect();
    Ok(Tensor::new(out_shape.to_vec(), data))
}

fn gather(node: &GraphNode, args: &[&Tensor], out_shape: &[usize]) -> Result<Tensor, IrError> {
    let (data, indices) = (args[0], args[1]);
    let axis = normalize_axis(node, node.int_attr("axis", 0)?, data.rank())?;
    let (outer, dim, inner) = split_at_axis(&data.shape, axis);
    let idx = indices.as_indices().ok_or_else(|| IrError::Shape {
        node: node.id.clone(),
        reason: "gather indices must be integers".into(),
    })?;
    let mut resolved = Vec::with_capacity(idx.len());
    for i in idx {
        let d = dim as i64;
        if i < -d || i >= d {
            return Err(IrError::Shape {
                node: node.id.clone(),
                reason: format!("gather index {i} out of range for axis of size {dim}"),
            });
        }
        resolved.push(if i < 0 { (i + d) as usize } else { i as usize });
    }
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for o in 0..outer {
        for &i in &resolved {
            let base = (o * dim + i) * inner;
            out.extend_from_slice(&data.data[base..base + inner]);
        }
    }
    Ok(Tensor::new(out_shape.to_vec(), out))
}

fn weighted_merge(node: &GraphNode, args: &[&Tensor]) -> Result<Tensor, IrError> {
    let weights = node.floats_attr("weights")?.unwrap_or_default();
    let mut out = vec![0.0; args[0].numel()];
    for (t, w) in args.iter().zip(weights) {
        for (acc, v) in out.iter_mut().zip(&t.data) {
            *acc += w * v;
        }
    }
    Ok(Tensor::new(args[0].shape.clone(), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::builder::GraphBuilder;
    use crate::ir::graph::AttrValue;

    fn single(op: OpKind, inputs: &[(&str, Tensor)], attrs: Vec<(&str, AttrValue)>) -> Tensor {
        let node = GraphNode {
            id: "n".into(),
            op,
            inputs: inputs.iter().map(|(n, _)| n.to_string()).collect(),
            output: "y".into(),
            attrs: attrs.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        };
        let args: Vec<&Tensor> = inputs.iter().map(|(_, t)| t).collect();
        eval_node(&node, &args).unwrap()
    }

    #[test]
    fn relu_clamps_negatives() {
        let y = single(OpKind::Relu, &[("x", Tensor::vector(vec![-1.0, 2.0]))], vec![]);
        assert_eq!(y.data, vec![0.0, 2.0]);
    }

    #[test]
    fn gemm_hand_example() {
        // 1*1 + 2*0 + 1 = 2 ; 1*0 + 2*3 + 1 = 7
        let y = single(
            OpKind::Gemm,
            &[
                ("x", Tensor::new(vec![1, 2], vec![1.0, 2.0])),
                ("w", Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 3.0])),
                ("b", Tensor::vector(vec![1.0, 1.0])),
            ],
            vec![],
        );
        assert_eq!(y.data, vec![2.0, 7.0]);
    }

    #[test]
    fn gemm_transposed_weight() {
        let y = single(
            OpKind::Gemm,
            &[
                ("x", Tensor::new(vec![1, 2], vec![1.0, 2.0])),
                ("w", Tensor::new(vec![3, 2], vec![1.0, 1.0, 0.0, 1.0, 2.0, 0.0])),
            ],
            vec![("transB", AttrValue::Int(1))],
        );
        assert_eq!(y.shape, vec![1, 3]);
        assert_eq!(y.data, vec![3.0, 2.0, 2.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let y = single(
            OpKind::Softmax,
            &[("x", Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]))],
            vec![],
        );
        for row in y.data.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert!((y.data[3] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn conv_matches_hand_sum() {
        // 2x2 input, 2x2 kernel of ones, no padding -> single sum + bias
        let y = single(
            OpKind::Conv2d,
            &[
                ("x", Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])),
                ("w", Tensor::full(&[1, 1, 2, 2], 1.0)),
                ("b", Tensor::vector(vec![0.5])),
            ],
            vec![],
        );
        assert_eq!(y.shape, vec![1, 1, 1, 1]);
        assert_eq!(y.data, vec![10.5]);
    }

    #[test]
    fn conv_zero_padding() {
        let y = single(
            OpKind::Conv2d,
            &[
                ("x", Tensor::full(&[1, 1, 2, 2], 1.0)),
                ("w", Tensor::full(&[1, 1, 3, 3], 1.0)),
            ],
            vec![("padding", AttrValue::Int(1))],
        );
        assert_eq!(y.data, vec![4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn concat_slice_gather() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::new(vec![2, 1], vec![5.0, 6.0]);
        let c = single(
            OpKind::Concat,
            &[("a", a.clone()), ("b", b)],
            vec![("axis", AttrValue::Int(1))],
        );
        assert_eq!(c.data, vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);

        let s = single(
            OpKind::Slice,
            &[("c", c.clone())],
            vec![
                ("starts", AttrValue::Ints(vec![1])),
                ("ends", AttrValue::Ints(vec![-1])),
                ("axes", AttrValue::Ints(vec![1])),
            ],
        );
        assert_eq!(s.shape, vec![2, 1]);
        assert_eq!(s.data, vec![2.0, 4.0]);

        let g = single(
            OpKind::Gather,
            &[("a", a), ("i", Tensor::vector(vec![-1.0, 0.0]))],
            vec![("axis", AttrValue::Int(0))],
        );
        assert_eq!(g.data, vec![3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn weighted_merge_sums() {
        let y = single(
            OpKind::WeightedMerge,
            &[("a", Tensor::vector(vec![2.0])), ("b", Tensor::vector(vec![4.0]))],
            vec![("weights", AttrValue::Floats(vec![0.5, 0.5]))],
        );
        assert_eq!(y.data, vec![3.0]);
    }

    #[test]
    fn non_finite_reports_node() {
        let mut b = GraphBuilder::new("g");
        let x = b.input("x", &[1]);
        let big = b.constant("big", Tensor::vector(vec![1e300]));
        let y = b.op(OpKind::Mul, &[&x, &big]);
        b.output(&y);
        let g = b.build().unwrap();
        let inputs = TensorMap::from([("x".to_string(), Tensor::vector(vec![1e300]))]);
        let err = execute(&g, &inputs).unwrap_err();
        assert!(matches!(err, IrError::Numeric { ref node, .. } if node == &g.nodes[0].id));
    }

    #[test]
    fn missing_and_misshaped_inputs() {
        let mut b = GraphBuilder::new("g");
        let x = b.input("x", &[2]);
        let y = b.op(OpKind::Relu, &[&x]);
        b.output(&y);
        let g = b.build().unwrap();
        assert!(matches!(execute(&g, &TensorMap::new()), Err(IrError::Shape { .. })));
        let wrong = TensorMap::from([("x".to_string(), Tensor::vector(vec![1.0; 3]))]);
        assert!(matches!(execute(&g, &wrong), Err(IrError::Shape { .. })));
    }

    #[test]
    fn identity_graph_returns_input() {
        let g = ComputationGraph::new(
            "id",
            vec![crate::ir::ValueInfo {
                name: "x".into(),
                shape: vec![3],
            }],
            vec!["x".into()],
            vec![],
            vec![],
        )
        .unwrap();
        let t = Tensor::vector(vec![1.5, -2.0, 0.0]);
        let out = execute(&g, &TensorMap::from([("x".to_string(), t.clone())])).unwrap();
        assert_eq!(out["x"], t);
    }
}
