use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::IrError;

/// The closed operator vocabulary of the IR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Gemm,
    Conv2d,
    #[serde(rename = "ReLU")]
    Relu,
    Sigmoid,
    Softmax,
    Reshape,
    Concat,
    Slice,
    Gather,
    Shape,
    Expand,
    WeightedMerge,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Gemm,
        OpKind::Conv2d,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Softmax,
        OpKind::Reshape,
        OpKind::Concat,
        OpKind::Slice,
        OpKind::Gather,
        OpKind::Shape,
        OpKind::Expand,
        OpKind::WeightedMerge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Add => "Add",
            OpKind::Sub => "Sub",
            OpKind::Mul => "Mul",
            OpKind::Gemm => "Gemm",
            OpKind::Conv2d => "Conv2d",
            OpKind::Relu => "ReLU",
            OpKind::Sigmoid => "Sigmoid",
            OpKind::Softmax => "Softmax",
            OpKind::Reshape => "Reshape",
            OpKind::Concat => "Concat",
            OpKind::Slice => "Slice",
            OpKind::Gather => "Gather",
            OpKind::Shape => "Shape",
            OpKind::Expand => "Expand",
            OpKind::WeightedMerge => "WeightedMerge",
        }
    }

    /// Ops that only rearrange or describe data.
    pub fn is_data_movement(self) -> bool {
        matches!(
            self,
            OpKind::Reshape
                | OpKind::Concat
                | OpKind::Slice
                | OpKind::Gather
                | OpKind::Shape
                | OpKind::Expand
        )
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown op kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
    Ints(Vec<i64>),
    Floats(Vec<f64>),
}

impl AttrValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(v) => Some(*v),
            AttrValue::Float(v) if v.fract() == 0.0 => Some(*v as i64),
            _ => None,
        }
    }

    pub fn as_ints(&self) -> Option<Vec<i64>> {
        match self {
            AttrValue::Ints(v) => Some(v.clone()),
            AttrValue::Int(v) => Some(vec![*v]),
            _ => None,
        }
    }

    pub fn as_floats(&self) -> Option<Vec<f64>> {
        match self {
            AttrValue::Floats(v) => Some(v.clone()),
            AttrValue::Ints(v) => Some(v.iter().map(|&x| x as f64).collect()),
            AttrValue::Float(v) => Some(vec![*v]),
            AttrValue::Int(v) => Some(vec![*v as f64]),
        }
    }
}

pub type Attrs = BTreeMap<String, AttrValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphNode {
    pub id: String,
    pub op: OpKind,
    pub inputs: Vec<String>,
    pub output: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: Attrs,
}

impl GraphNode {
    pub fn new(id: impl Into<String>, op: OpKind, inputs: &[&str], output: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.into(),
            attrs: Attrs::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: AttrValue) -> Self {
        self.attrs.insert(key.to_string(), value);
        self
    }

    pub fn int_attr(&self, key: &str, default: i64) -> Result<i64, IrError> {
        match self.attrs.get(key) {
            None => Ok(default),
            Some(v) => v.as_int().ok_or_else(|| {
                IrError::validation(&self.id, format!("attribute `{key}` must be an integer"))
            }),
        }
    }

    pub fn ints_attr(&self, key: &str) -> Result<Option<Vec<i64>>, IrError> {
        match self.attrs.get(key) {
            None => Ok(None),
            Some(v) => v.as_ints().map(Some).ok_or_else(|| {
                IrError::validation(&self.id, format!("attribute `{key}` must be an integer list"))
            }),
        }
    }

    pub fn floats_attr(&self, key: &str) -> Result<Option<Vec<f64>>, IrError> {
        match self.attrs.get(key) {
            None => Ok(None),
            Some(v) => v.as_floats().map(Some).ok_or_else(|| {
                IrError::validation(&self.id, format!("attribute `{key}` must be a number list"))
            }),
        }
    }
}

/// A named value declaration: graph input (no data) or initializer (with data).
///
/// This is also the on-disk tensor encoding used by test bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<f64>>,
}

impl TensorSpec {
    pub fn check(&self) -> Result<(), IrError> {
        check_tensor(&self.name, &self.shape, self.data.as_deref())
    }

    pub fn from_tensor(name: impl Into<String>, tensor: &Tensor) -> Self {
        Self {
            name: name.into(),
            shape: tensor.shape.clone(),
            data: Some(tensor.data.clone()),
        }
    }

    pub fn into_tensor(self) -> Result<Tensor, IrError> {
        self.check()?;
        let data = self
            .data
            .ok_or_else(|| IrError::validation(&self.name, "tensor has no data"))?;
        Ok(Tensor::new(self.shape, data))
    }
}

pub(crate) fn check_tensor(name: &str, shape: &[usize], data: Option<&[f64]>) -> Result<(), IrError> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(IrError::validation(
            name,
            format!("tensor rank must be 1..=4, got {}", shape.len()),
        ));
    }
    if shape.contains(&0) {
        return Err(IrError::validation(name, "tensor dimensions must be >= 1"));
    }
    if let Some(data) = data {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(IrError::validation(
                name,
                format!("data has {} elements, shape needs {expected}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(IrError::validation(name, "tensor data must be finite"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Initializer {
    pub name: String,
    pub tensor: Tensor,
}

/// A validated, topologically ordered computation graph.
///
/// Construct through [`ComputationGraph::new`] (or the JSON parser); both
/// reorder nodes topologically and run full validation including shape
/// inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ComputationGraph {
    pub name: String,
    pub inputs: Vec<ValueInfo>,
    pub outputs: Vec<String>,
    pub nodes: Vec<GraphNode>,
    pub initializers: Vec<Initializer>,
}

impl ComputationGraph {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<ValueInfo>,
        outputs: Vec<String>,
        nodes: Vec<GraphNode>,
        initializers: Vec<Initializer>,
    ) -> Result<Self, IrError> {
        let mut graph = Self {
            name: name.into(),
            inputs,
            outputs,
            nodes,
            initializers,
        };
        graph.validate()?;
        Ok(graph)
    }

    /// Checks naming, references and acyclicity, sorts nodes topologically
    /// and runs shape inference.
    pub fn validate(&mut self) -> Result<(), IrError> {
        self.check_names()?;
        self.toposort()?;
        for out in &self.outputs {
            if !self.is_defined(out) {
                return Err(IrError::validation(
                    "<graph>",
                    format!("declared output `{out}` is never produced"),
                ));
            }
        }
        super::shape::infer_shapes(self)?;
        Ok(())
    }

    fn check_names(&self) -> Result<(), IrError> {
        let mut values = HashSet::new();
        for input in &self.inputs {
            check_tensor(&input.name, &input.shape, None)?;
            if !values.insert(input.name.as_str()) {
                return Err(IrError::validation(
                    "<graph>",
                    format!("duplicate value name `{}`", input.name),
                ));
            }
        }
        for init in &self.initializers {
            check_tensor(&init.name, &init.tensor.shape, Some(&init.tensor.data))?;
            if !values.insert(init.name.as_str()) {
                return Err(IrError::validation(
                    "<graph>",
                    format!("duplicate value name `{}`", init.name),
                ));
            }
        }
        let mut ids = HashSet::new();
        for node in &self.nodes {
            if !ids.insert(node.id.as_str()) {
                return Err(IrError::validation(&node.id, "duplicate node id"));
            }
            if !values.insert(node.output.as_str()) {
                return Err(IrError::validation(
                    &node.id,
                    format!("output `{}` is already defined", node.output),
                ));
            }
        }
        for node in &self.nodes {
            if node.inputs.is_empty() {
                return Err(IrError::validation(&node.id, "node has no inputs"));
            }
            for input in &node.inputs {
                if !values.contains(input.as_str()) {
                    return Err(IrError::validation(
                        &node.id,
                        format!("dangling input `{input}`"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Stable Kahn sort: ready nodes keep their relative list order.
    pub fn toposort(&mut self) -> Result<(), IrError> {
        let producer: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.output.as_str(), i))
            .collect();
        let n = self.nodes.len();
        let mut indegree = vec![0usize; n];
        let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, node) in self.nodes.iter().enumerate() {
            for input in &node.inputs {
                if let Some(&p) = producer.get(input.as_str()) {
                    indegree[i] += 1;
                    dependents[p].push(i);
                }
            }
        }
        let mut ready: std::collections::BTreeSet<usize> =
            (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &d in &dependents[i] {
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    ready.insert(d);
                }
            }
        }
        if order.len() != n {
            let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap();
            return Err(IrError::validation(
                &self.nodes[stuck].id,
                "cycle detected through this node",
            ));
        }
        let mut slots: Vec<Option<GraphNode>> = self.nodes.drain(..).map(Some).collect();
        self.nodes = order.into_iter().map(|i| slots[i].take().unwrap()).collect();
        Ok(())
    }

    pub fn is_defined(&self, value: &str) -> bool {
        self.input(value).is_some()
            || self.initializer(value).is_some()
            || self.producer(value).is_some()
    }

    pub fn input(&self, name: &str) -> Option<&ValueInfo> {
        self.inputs.iter().find(|v| v.name == name)
    }

    pub fn initializer(&self, name: &str) -> Option<&Tensor> {
        self.initializers
            .iter()
            .find(|i| i.name == name)
            .map(|i| &i.tensor)
    }

    pub fn is_initializer(&self, name: &str) -> bool {
        self.initializer(name).is_some()
    }

    pub fn producer(&self, value: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.output == value)
    }

    pub fn node(&self, id: &str) -> Option<&GraphNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Number of node inputs reading `value`, plus one per graph output slot.
    pub fn use_count(&self, value: &str) -> usize {
        let node_uses = self
            .nodes
            .iter()
            .flat_map(|n| n.inputs.iter())
            .filter(|i| *i == value)
            .count();
        node_uses + self.outputs.iter().filter(|o| *o == value).count()
    }

    pub fn is_output(&self, value: &str) -> bool {
        self.outputs.iter().any(|o| o == value)
    }

    /// Returns a value name not yet used in this graph, derived from `base`.
    pub fn fresh_name(&self, base: &str) -> String {
        let taken = |n: &str| self.is_defined(n) || self.nodes.iter().any(|node| node.id == n);
        if !taken(base) {
            return base.to_string();
        }
        (1..)
            .map(|i| format!("{base}_{i}"))
            .find(|n| !taken(n))
            .unwrap()
    }

    pub fn add_initializer(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.initializers.push(Initializer {
            name: name.into(),
            tensor,
        });
    }

    /// Drops initializers that no node and no output references.
    pub fn prune_initializers(&mut self) -> usize {
        let used: HashSet<String> = self
            .nodes
            .iter()
            .flat_map(|n| n.inputs.iter().cloned())
            .chain(self.outputs.iter().cloned())
            .collect();
        let before = self.initializers.len();
        self.initializers.retain(|i| used.contains(&i.name));
        before - self.initializers.len()
    }

    /// Value names in dependency order: inputs, initializers, node outputs.
    pub fn value_names(&self) -> Vec<&str> {
        self.inputs
            .iter()
            .map(|v| v.name.as_str())
            .chain(self.initializers.iter().map(|i| i.name.as_str()))
            .chain(self.nodes.iter().map(|n| n.output.as_str()))
            .collect()
    }
}
