use std::collections::BTreeMap;

use super::exec::eval_node;
use super::graph::{ComputationGraph, GraphNode, OpKind};
use super::tensor::{broadcast_shapes, numel, Tensor};
use super::IrError;

/// Shape (and, for small constant-derived values, the value itself) of one operand.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Operand<'a> {
    pub shape: &'a [usize],
    pub value: Option<&'a Tensor>,
}

/// Values up to this many elements are propagated statically so that
/// `Reshape`/`Expand` targets computed by `Shape`/`Gather`/`Concat` chains
/// resolve during inference.
const STATIC_VALUE_LIMIT: usize = 64;

pub type ShapeMap = BTreeMap<String, Vec<usize>>;

/// Infers the shape of every value in a graph whose references are valid
/// and whose nodes are in topological order.
pub fn infer_shapes(graph: &ComputationGraph) -> Result<ShapeMap, IrError> {
    let mut shapes: ShapeMap = BTreeMap::new();
    let mut statics: BTreeMap<&str, Tensor> = BTreeMap::new();
    for input in &graph.inputs {
        shapes.insert(input.name.clone(), input.shape.clone());
    }
    for init in &graph.initializers {
        shapes.insert(init.name.clone(), init.tensor.shape.clone());
    }
    for node in &graph.nodes {
        let operands = node
            .inputs
            .iter()
            .map(|name| {
                let shape = shapes.get(name).ok_or_else(|| {
                    IrError::validation(&node.id, format!("input `{name}` used before definition"))
                })?;
                let value = statics
                    .get(name.as_str())
                    .or_else(|| graph.initializer(name).filter(|t| t.numel() <= STATIC_VALUE_LIMIT));
                Ok(Operand { shape, value })
            })
            .collect::<Result<Vec<_>, IrError>>()?;
        let out = output_shape(node, &operands)?;

        let all_static: Option<Vec<&Tensor>> = operands.iter().map(|o| o.value).collect();
        let static_value = match (node.op, all_static) {
            (OpKind::Shape, _) => Some(Tensor::vector(
                operands[0].shape.iter().map(|&d| d as f64).collect(),
            )),
            (_, Some(values)) if numel(&out) <= STATIC_VALUE_LIMIT => {
                eval_node(node, &values).ok()
            }
            _ => None,
        };
        if let Some(v) = static_value {
            statics.insert(node.output.as_str(), v);
        }
        shapes.insert(node.output.clone(), out);
    }
    Ok(shapes)
}

fn shape_err(node: &GraphNode, reason: impl Into<String>) -> IrError {
    IrError::Shape {
        node: node.id.clone(),
        reason: reason.into(),
    }
}

fn arity(node: &GraphNode, ops: &[Operand], min: usize, max: usize) -> Result<(), IrError> {
    if ops.len() < min || ops.len() > max {
        let expected = if min == max {
            format!("{min}")
        } else if max == usize::MAX {
            format!("at least {min}")
        } else {
            format!("{min}..={max}")
        };
        return Err(IrError::validation(
            &node.id,
            format!("{} expects {expected} inputs, got {}", node.op, ops.len()),
        ));
    }
    Ok(())
}

pub(crate) fn normalize_axis(node: &GraphNode, axis: i64, rank: usize) -> Result<usize, IrError> {
    let r = rank as i64;
    if axis < -r || axis >= r {
        return Err(shape_err(node, format!("axis {axis} out of range for rank {rank}")));
    }
    Ok(if axis < 0 { (axis + r) as usize } else { axis as usize })
}

pub(crate) struct ConvParams {
    pub stride: usize,
    pub padding: usize,
}

pub(crate) fn conv_params(node: &GraphNode) -> Result<ConvParams, IrError> {
    let stride = node.int_attr("stride", 1)?;
    let padding = node.int_attr("padding", 0)?;
    if stride < 1 || padding < 0 {
        return Err(IrError::validation(
            &node.id,
            "Conv2d requires stride >= 1 and padding >= 0",
        ));
    }
    Ok(ConvParams {
        stride: stride as usize,
        padding: padding as usize,
    })
}

pub(crate) fn gemm_flags(node: &GraphNode) -> Result<(bool, bool), IrError> {
    let flag = |key| -> Result<bool, IrError> {
        match node.int_attr(key, 0)? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(IrError::validation(&node.id, format!("`{key}` must be 0 or 1"))),
        }
    };
    Ok((flag("transA")?, flag("transB")?))
}

/// Slice bounds per axis as `(axis, start, len)`.
pub(crate) fn slice_bounds(node: &GraphNode, shape: &[usize]) -> Result<Vec<(usize, usize, usize)>, IrError> {
    let starts = node
        .ints_attr("starts")?
        .ok_or_else(|| IrError::validation(&node.id, "Slice requires `starts`"))?;
    let ends = node
        .ints_attr("ends")?
        .ok_or_else(|| IrError::validation(&node.id, "Slice requires `ends`"))?;
    let axes = node
        .ints_attr("axes")?
        .unwrap_or_else(|| (0..starts.len() as i64).collect());
    if starts.len() != ends.len() || starts.len() != axes.len() {
        return Err(IrError::validation(
            &node.id,
            "`starts`, `ends` and `axes` must have equal length",
        ));
    }
    let mut bounds = Vec::with_capacity(axes.len());
    for ((&s, &e), &a) in starts.iter().zip(&ends).zip(&axes) {
        let axis = normalize_axis(node, a, shape.len())?;
        let dim = shape[axis] as i64;
        let clamp = |v: i64| if v < 0 { (v + dim).max(0) } else { v.min(dim) };
        let (start, end) = (clamp(s), clamp(e));
        if end <= start {
            return Err(shape_err(node, format!("empty slice on axis {axis}")));
        }
        bounds.push((axis, start as usize, (end - start) as usize));
    }
    Ok(bounds)
}

fn static_dims(node: &GraphNode, value: Option<&Tensor>, what: &str) -> Result<Vec<i64>, IrError> {
    let value = value.ok_or_else(|| {
        shape_err(node, format!("{what} operand must be statically known"))
    })?;
    if value.rank() != 1 {
        return Err(shape_err(node, format!("{what} operand must be 1-D")));
    }
    value
        .as_indices()
        .ok_or_else(|| shape_err(node, format!("{what} operand must hold integers")))
}

pub(crate) fn reshape_target(node: &GraphNode, ops: &[Operand]) -> Result<Vec<usize>, IrError> {
    let dims = match ops.get(1) {
        Some(shape_op) => static_dims(node, shape_op.value, "shape")?,
        None => node
            .ints_attr("shape")?
            .ok_or_else(|| IrError::validation(&node.id, "Reshape requires a `shape` attribute or input"))?,
    };
    let total = numel(ops[0].shape);
    let known: i64 = dims.iter().filter(|&&d| d != -1).product();
    if dims.iter().filter(|&&d| d == -1).count() > 1 || dims.iter().any(|&d| d == 0 || d < -1) {
        return Err(shape_err(node, format!("invalid reshape target {dims:?}")));
    }
    let resolved: Vec<usize> = dims
        .iter()
        .map(|&d| if d == -1 { (total as i64 / known.max(1)) as usize } else { d as usize })
        .collect();
    if numel(&resolved) != total || resolved.contains(&0) {
        return Err(shape_err(
            node,
            format!("cannot reshape {:?} into {dims:?}", ops[0].shape),
        ));
    }
    Ok(resolved)
}

pub(crate) fn output_shape(node: &GraphNode, ops: &[Operand]) -> Result<Vec<usize>, IrError> {
    match node.op {
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            arity(node, ops, 2, 2)?;
            broadcast_shapes(ops[0].shape, ops[1].shape).ok_or_else(|| {
                shape_err(
                    node,
                    format!("cannot broadcast {:?} with {:?}", ops[0].shape, ops[1].shape),
                )
            })
        }
        OpKind::Relu | OpKind::Sigmoid | OpKind::Softmax => {
            arity(node, ops, 1, 1)?;
            Ok(ops[0].shape.to_vec())
        }
        OpKind::Gemm => {
            arity(node, ops, 2, 3)?;
            let (ta, tb) = gemm_flags(node)?;
            let (a, b) = (ops[0].shape, ops[1].shape);
            if a.len() != 2 || b.len() != 2 {
                return Err(shape_err(node, "Gemm operands must be 2-D"));
            }
            let (m, k) = if ta { (a[1], a[0]) } else { (a[0], a[1]) };
            let (kb, n) = if tb { (b[1], b[0]) } else { (b[0], b[1]) };
            if k != kb {
                return Err(shape_err(
                    node,
                    format!("inner dimensions differ: {a:?} x {b:?}"),
                ));
            }
            if let Some(c) = ops.get(2) {
                if broadcast_shapes(c.shape, &[m, n]).as_deref() != Some(&[m, n][..]) {
                    return Err(shape_err(
                        node,
                        format!("bias {:?} does not broadcast to [{m}, {n}]", c.shape),
                    ));
                }
            }
            Ok(vec![m, n])
        }
        OpKind::Conv2d => {
            arity(node, ops, 2, 3)?;
            let p = conv_params(node)?;
            let (x, w) = (ops[0].shape, ops[1].shape);
            if x.len() != 4 || w.len() != 4 {
                return Err(shape_err(node, "Conv2d input and kernel must be 4-D"));
            }
            if w[1] != x[1] {
                return Err(shape_err(
                    node,
                    format!("kernel expects {} channels, input has {}", w[1], x[1]),
                ));
            }
            if let Some(b) = ops.get(2) {
                if b.shape != [w[0]] {
                    return Err(shape_err(node, format!("bias must have shape [{}]", w[0])));
                }
            }
            let out_dim = |input: usize, k: usize| -> Result<usize, IrError> {
                let padded = input + 2 * p.padding;
                if padded < k {
                    return Err(shape_err(node, "kernel larger than padded input"));
                }
                Ok((padded - k) / p.stride + 1)
            };
            Ok(vec![x[0], w[0], out_dim(x[2], w[2])?, out_dim(x[3], w[3])?])
        }
        OpKind::Reshape => {
            arity(node, ops, 1, 2)?;
            reshape_target(node, ops)
        }
        OpKind::Concat => {
            arity(node, ops, 1, usize::MAX)?;
            let axis_attr = node
                .attrs
                .get("axis")
                .and_then(|a| a.as_int())
                .ok_or_else(|| IrError::validation(&node.id, "Concat requires an integer `axis`"))?;
            let first = ops[0].shape;
            let axis = normalize_axis(node, axis_attr, first.len())?;
            let mut out = first.to_vec();
            for op in &ops[1..] {
                if op.shape.len() != first.len()
                    || op
                        .shape
                        .iter()
                        .zip(first)
                        .enumerate()
                        .any(|(d, (a, b))| d != axis && a != b)
                {
                    return Err(shape_err(
                        node,
                        format!("cannot concatenate {:?} with {first:?} on axis {axis}", op.shape),
                    ));
                }
                out[axis] += op.shape[axis];
            }
            Ok(out)
        }
        OpKind::Slice => {
            arity(node, ops, 1, 1)?;
            let mut out = ops[0].shape.to_vec();
            for (axis, _, len) in slice_bounds(node, ops[0].shape)? {
                out[axis] = len;
            }
            Ok(out)
        }
        OpKind::Gather => {
            arity(node, ops, 2, 2)?;
            let data = ops[0].shape;
            let axis = normalize_axis(node, node.int_attr("axis", 0)?, data.len())?;
            if let Some(idx) = ops[1].value {
                let dim = data[axis] as i64;
                let ok = idx
                    .as_indices()
                    .is_some_and(|v| v.iter().all(|&i| i >= -dim && i < dim));
                if !ok {
                    return Err(shape_err(node, "gather index out of range"));
                }
            }
            let mut out = data[..axis].to_vec();
            out.extend_from_slice(ops[1].shape);
            out.extend_from_slice(&data[axis + 1..]);
            Ok(out)
        }
        OpKind::Shape => {
            arity(node, ops, 1, 1)?;
            Ok(vec![ops[0].shape.len()])
        }
        OpKind::Expand => {
            arity(node, ops, 2, 2)?;
            let dims = static_dims(node, ops[1].value, "shape")?;
            if dims.iter().any(|&d| d < 1) {
                return Err(shape_err(node, format!("invalid expand target {dims:?}")));
            }
            let target: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
            broadcast_shapes(ops[0].shape, &target).ok_or_else(|| {
                shape_err(
                    node,
                    format!("cannot expand {:?} to {target:?}", ops[0].shape),
                )
            })
        }
        OpKind::WeightedMerge => {
            arity(node, ops, 1, usize::MAX)?;
            let weights = node
                .floats_attr("weights")?
                .ok_or_else(|| IrError::validation(&node.id, "WeightedMerge requires `weights`"))?;
            if weights.len() != ops.len() {
                return Err(IrError::validation(
                    &node.id,
                    format!("{} weights for {} inputs", weights.len(), ops.len()),
                ));
            }
            if ops.iter().any(|o| o.shape != ops[0].shape) {
                return Err(shape_err(node, "WeightedMerge inputs must share one shape"));
            }
            Ok(ops[0].shape.to_vec())
        }
    }
}
