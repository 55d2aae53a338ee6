//! JSON wire format for graphs.
//!
//! ```json
//! {"name": "g", "inputs": [{"name": "x", "shape": [1, 2]}], "outputs": ["y"],
//!  "nodes": [{"id": "r", "op": "ReLU", "inputs": ["x"], "output": "y", "attrs": {}}],
//!  "initializers": [{"name": "w", "shape": [2], "data": [1.0, 2.0]}]}
//! ```

use serde::{Deserialize, Serialize};

use super::graph::{ComputationGraph, GraphNode, Initializer, TensorSpec, ValueInfo};
use super::tensor::Tensor;
use super::IrError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub name: String,
    pub inputs: Vec<InputDecl>,
    pub outputs: Vec<String>,
    pub nodes: Vec<GraphNode>,
    #[serde(default)]
    pub initializers: Vec<TensorSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDecl {
    pub name: String,
    pub shape: Vec<usize>,
}

impl GraphDocument {
    pub fn into_graph(self) -> Result<ComputationGraph, IrError> {
        let inputs = self
            .inputs
            .into_iter()
            .map(|i| ValueInfo {
                name: i.name,
                shape: i.shape,
            })
            .collect();
        let initializers = self
            .initializers
            .into_iter()
            .map(|spec| {
                let name = spec.name.clone();
                if spec.data.is_none() {
                    return Err(IrError::validation(
                        &name,
                        "initializer is missing `data`",
                    ));
                }
                Ok(Initializer {
                    name,
                    tensor: spec.into_tensor()?,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        ComputationGraph::new(self.name, inputs, self.outputs, self.nodes, initializers)
    }

    pub fn from_graph(graph: &ComputationGraph) -> Self {
        Self {
            name: graph.name.clone(),
            inputs: graph
                .inputs
                .iter()
                .map(|v| InputDecl {
                    name: v.name.clone(),
                    shape: v.shape.clone(),
                })
                .collect(),
            outputs: graph.outputs.clone(),
            nodes: graph.nodes.clone(),
            initializers: graph
                .initializers
                .iter()
                .map(|i| TensorSpec::from_tensor(i.name.clone(), &i.tensor))
                .collect(),
        }
    }
}

/// Parses and validates a graph document.
pub fn parse_graph(document: &str) -> Result<ComputationGraph, IrError> {
    let doc: GraphDocument =
        serde_json::from_str(document).map_err(|e| IrError::Syntax(e.to_string()))?;
    doc.into_graph()
}

pub fn graph_from_value(value: serde_json::Value) -> Result<ComputationGraph, IrError> {
    let doc: GraphDocument =
        serde_json::from_value(value).map_err(|e| IrError::Syntax(e.to_string()))?;
    doc.into_graph()
}

pub fn to_json(graph: &ComputationGraph) -> String {
    serde_json::to_string_pretty(&GraphDocument::from_graph(graph)).expect("graph serializes")
}

pub fn to_value(graph: &ComputationGraph) -> serde_json::Value {
    serde_json::to_value(GraphDocument::from_graph(graph)).expect("graph serializes")
}

pub fn parse_tensor(document: &str) -> Result<(String, Tensor), IrError> {
    let spec: TensorSpec =
        serde_json::from_str(document).map_err(|e| IrError::Syntax(e.to_string()))?;
    let name = spec.name.clone();
    Ok((name, spec.into_tensor()?))
}

pub fn tensor_to_json(name: &str, tensor: &Tensor) -> String {
    serde_json::to_string(&TensorSpec::from_tensor(name, tensor)).expect("tensor serializes")
}
