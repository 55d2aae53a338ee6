//! Compile-stage graph passes.
//!
//! All passes are pure `graph -> (graph, report)` functions. Pattern matching
//! is syntactic over adjacent nodes and a rewrite only fires when the
//! intermediate values it removes have no other consumer.

mod conv_fusion;
mod fold;
mod gemm_fusion;
mod merge;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{ComputationGraph, IrError};

pub use conv_fusion::fuse_normalization_into_conv;
pub use fold::constant_fold;
pub use gemm_fusion::fuse_scale_into_gemm;
pub use merge::{imitation_error, merge_layers, merge_weights, MergeSpec};

#[derive(Debug, Error)]
pub enum OptError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("unknown pass `{0}`")]
    UnknownPass(String),
    #[error("degenerate merge range [{start}, {end}]: at least two layers are required")]
    DegenerateRange { start: i64, end: i64 },
    #[error("incompatible layers: {0}")]
    IncompatibleLayers(String),
    #[error("probe `{probe}` has shape {original:?} in the original graph but {merged:?} after merging")]
    ProbeShapeMismatch {
        probe: String,
        original: Vec<usize>,
        merged: Vec<usize>,
    },
    #[error("calibration set is empty")]
    EmptyCalibration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rewrite {
    pub removed: Vec<String>,
    pub replacement: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassReport {
    pub pass_name: String,
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub rewrites: Vec<Rewrite>,
}

impl PassReport {
    pub(crate) fn new(pass: &str, before: usize) -> Self {
        Self {
            pass_name: pass.to_string(),
            nodes_before: before,
            nodes_after: before,
            rewrites: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    ConstantFold,
    #[serde(rename = "fuse_normalization_into_conv")]
    FuseNormConv,
    #[serde(rename = "fuse_scale_into_gemm")]
    FuseScaleGemm,
}

/// Passes run by the referee's compile stage, in order.
pub const DEFAULT_PIPELINE: [Pass; 3] = [Pass::ConstantFold, Pass::FuseNormConv, Pass::FuseScaleGemm];

impl Pass {
    pub fn name(self) -> &'static str {
        match self {
            Pass::ConstantFold => "constant_fold",
            Pass::FuseNormConv => "fuse_normalization_into_conv",
            Pass::FuseScaleGemm => "fuse_scale_into_gemm",
        }
    }

    pub fn run(self, graph: &ComputationGraph) -> Result<(ComputationGraph, PassReport), OptError> {
        match self {
            Pass::ConstantFold => constant_fold(graph),
            Pass::FuseNormConv => Ok(fuse_normalization_into_conv(graph)?),
            Pass::FuseScaleGemm => Ok(fuse_scale_into_gemm(graph)?),
        }
    }
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pass {
    type Err = OptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "constant_fold" => Ok(Pass::ConstantFold),
            "fuse_normalization_into_conv" | "fuse_norm_conv" => Ok(Pass::FuseNormConv),
            "fuse_scale_into_gemm" | "fuse_scale_gemm" => Ok(Pass::FuseScaleGemm),
            other => Err(OptError::UnknownPass(other.to_string())),
        }
    }
}

/// Parses a comma-separated pass list; an empty string yields no passes.
pub fn parse_pass_list(list: &str) -> Result<Vec<Pass>, OptError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Applies `passes` in order, each until it stops rewriting.
pub fn optimize(
    graph: &ComputationGraph,
    passes: &[Pass],
) -> Result<(ComputationGraph, Vec<PassReport>), OptError> {
    let mut current = graph.clone();
    let mut reports = Vec::with_capacity(passes.len());
    for &pass in passes {
        let mut report = PassReport::new(pass.name(), current.nodes.len());
        loop {
            let (next, step) = pass.run(&current)?;
            current = next;
            if step.rewrites.is_empty() {
                break;
            }
            report.rewrites.extend(step.rewrites);
        }
        report.nodes_after = current.nodes.len();
        reports.push(report);
    }
    Ok((current, reports))
}

/// Like [`optimize`] but takes pass names.
pub fn optimize_named(
    graph: &ComputationGraph,
    passes: &[&str],
) -> Result<(ComputationGraph, Vec<PassReport>), OptError> {
    let passes = passes
        .iter()
        .map(|p| p.parse())
        .collect::<Result<Vec<Pass>, _>>()?;
    optimize(graph, &passes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_names_and_aliases() {
        assert_eq!(
            parse_pass_list("constant_fold,fuse_norm_conv,fuse_scale_gemm").unwrap(),
            DEFAULT_PIPELINE.to_vec()
        );
        assert_eq!(
            parse_pass_list("fuse_normalization_into_conv").unwrap(),
            vec![Pass::FuseNormConv]
        );
        assert!(parse_pass_list("").unwrap().is_empty());
        assert!(matches!(
            parse_pass_list("constant_fold,dce"),
            Err(OptError::UnknownPass(p)) if p == "dce"
        ));
    }
}
