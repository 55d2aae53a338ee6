use std::collections::{BTreeSet, HashMap};

use super::{OptError, PassReport, Rewrite};
use crate::ir::{eval_node, ComputationGraph, Tensor};

/// Evaluates every node whose inputs are all initializers (directly or via
/// other such nodes) and replaces each maximal constant region by the
/// initializers it feeds to live nodes or graph outputs.
///
/// Folded values keep their names, so downstream references are untouched.
pub fn constant_fold(graph: &ComputationGraph) -> Result<(ComputationGraph, PassReport), OptError> {
    let mut report = PassReport::new("constant_fold", graph.nodes.len());

    let mut values: HashMap<&str, Tensor> = HashMap::new();
    // folded ancestors of each constant value, including its producer
    let mut cones: HashMap<&str, BTreeSet<usize>> = HashMap::new();
    let mut folded = vec![false; graph.nodes.len()];

    for (i, node) in graph.nodes.iter().enumerate() {
        let constant = node
            .inputs
            .iter()
            .all(|name| graph.is_initializer(name) || values.contains_key(name.as_str()));
        if !constant {
            continue;
        }
        let args: Vec<&Tensor> = node
            .inputs
            .iter()
            .map(|name| {
                values
                    .get(name.as_str())
                    .or_else(|| graph.initializer(name))
                    .unwrap()
            })
            .collect();
        let value = eval_node(node, &args)?;
        let mut cone = BTreeSet::from([i]);
        for name in &node.inputs {
            if let Some(parent) = cones.get(name.as_str()) {
                cone.extend(parent);
            }
        }
        cones.insert(node.output.as_str(), cone);
        values.insert(node.output.as_str(), value);
        folded[i] = true;
    }

    if !folded.contains(&true) {
        return Ok((graph.clone(), report));
    }

    let live_reads: BTreeSet<&str> = graph
        .nodes
        .iter()
        .zip(&folded)
        .filter(|(_, &f)| !f)
        .flat_map(|(n, _)| n.inputs.iter().map(String::as_str))
        .chain(graph.outputs.iter().map(String::as_str))
        .collect();

    let mut out = graph.clone();
    out.nodes = graph
        .nodes
        .iter()
        .zip(&folded)
        .filter(|(_, &f)| !f)
        .map(|(n, _)| n.clone())
        .collect();

    for (i, node) in graph.nodes.iter().enumerate() {
        if !folded[i] || !live_reads.contains(node.output.as_str()) {
            continue;
        }
        let name = node.output.as_str();
        out.add_initializer(name, values.remove(name).unwrap());
        report.rewrites.push(Rewrite {
            removed: cones[name].iter().map(|&k| graph.nodes[k].id.clone()).collect(),
            replacement: name.to_string(),
        });
    }
    out.prune_initializers();
    out.validate()?;
    report.nodes_after = out.nodes.len();
    Ok((out, report))
}
