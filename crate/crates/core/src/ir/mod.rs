//! Portable computation-graph IR: types, JSON format, shape inference and
//! the reference interpreter.

mod builder;
mod exec;
mod format;
mod graph;
mod shape;
mod tensor;

pub use builder::GraphBuilder;
pub use exec::{eval_node, execute, execute_probe, TensorMap};
pub use format::{
    graph_from_value, parse_graph, parse_tensor, tensor_to_json, to_json, to_value, GraphDocument,
    InputDecl,
};
pub use graph::{
    AttrValue, Attrs, ComputationGraph, GraphNode, Initializer, OpKind, TensorSpec, ValueInfo,
};
pub use shape::{infer_shapes, ShapeMap};
pub(crate) use shape::gemm_flags;
pub use tensor::{broadcast_binary, broadcast_shapes, broadcast_to, numel, Tensor};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum IrError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("validation error at `{node}`: {reason}")]
    Validation { node: String, reason: String },
    #[error("shape error at `{node}`: {reason}")]
    Shape { node: String, reason: String },
    #[error("numeric error at `{node}`: {reason}")]
    Numeric { node: String, reason: String },
}

impl IrError {
    pub(crate) fn validation(node: &str, reason: impl Into<String>) -> Self {
        IrError::Validation {
            node: node.to_string(),
            reason: reason.into(),
        }
    }
}
