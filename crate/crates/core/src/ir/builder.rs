use super::graph::{AttrValue, Attrs, ComputationGraph, GraphNode, Initializer, OpKind, ValueInfo};
use super::tensor::Tensor;
use super::IrError;

/// Incremental graph construction for fixtures, generators and tests.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    name: String,
    inputs: Vec<ValueInfo>,
    outputs: Vec<String>,
    nodes: Vec<GraphNode>,
    initializers: Vec<Initializer>,
    counter: usize,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            nodes: Vec::new(),
            initializers: Vec::new(),
            counter: 0,
        }
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> String {
        self.inputs.push(ValueInfo {
            name: name.to_string(),
            shape: shape.to_vec(),
        });
        name.to_string()
    }

    pub fn constant(&mut self, name: &str, tensor: Tensor) -> String {
        self.initializers.push(Initializer {
            name: name.to_string(),
            tensor,
        });
        name.to_string()
    }

    pub fn op(&mut self, op: OpKind, inputs: &[&str]) -> String {
        self.op_with(op, inputs, [])
    }

    pub fn op_with<const N: usize>(
        &mut self,
        op: OpKind,
        inputs: &[&str],
        attrs: [(&str, AttrValue); N],
    ) -> String {
        let k = self.counter;
        self.counter += 1;
        let id = format!("{}_{k}", op.name().to_lowercase());
        let output = format!("t{k}");
        self.push(id, op, inputs, attrs.into_iter().collect_attrs(), output)
    }

    /// Adds a node with explicit id and output name.
    pub fn named(
        &mut self,
        id: &str,
        op: OpKind,
        inputs: &[&str],
        attrs: Attrs,
        output: &str,
    ) -> String {
        self.push(id.to_string(), op, inputs, attrs, output.to_string())
    }

    fn push(&mut self, id: String, op: OpKind, inputs: &[&str], attrs: Attrs, output: String) -> String {
        self.nodes.push(GraphNode {
            id,
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.clone(),
            attrs,
        });
        output
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn build(self) -> Result<ComputationGraph, IrError> {
        ComputationGraph::new(
            self.name,
            self.inputs,
            self.outputs,
            self.nodes,
            self.initializers,
        )
    }
}

trait CollectAttrs {
    fn collect_attrs(self) -> Attrs;
}

impl<'a, I: Iterator<Item = (&'a str, AttrValue)>> CollectAttrs for I {
    fn collect_attrs(self) -> Attrs {
        self.map(|(k, v)| (k.to_string(), v)).collect()
    }
}
