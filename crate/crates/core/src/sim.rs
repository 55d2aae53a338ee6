//! Deterministic latency model standing in for on-device profiling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{gemm_flags, infer_shapes, numel, ComputationGraph, GraphNode, IrError, OpKind, ShapeMap};
use crate::metrics::Track;
use crate::numeric::fsum;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("device profile `{profile}` has no cost for op kind {kind}")]
    UnknownOpKind { profile: String, kind: OpKind },
    #[error("invalid device profile: {0}")]
    InvalidProfile(String),
    #[error("unknown device `{0}`: not a built-in profile name or a readable file")]
    UnknownDevice(String),
    #[error("runs must be at least 1")]
    NoRuns,
    #[error(transparent)]
    Ir(#[from] IrError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub name: String,
    pub per_node_overhead_us: f64,
    /// Microseconds per kiloflop.
    pub flop_cost_us: BTreeMap<OpKind, f64>,
    /// Microseconds per kilo-element read or written.
    pub memory_cost_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter_seed: Option<u64>,
}

pub const BUILTIN_PROFILES: [&str; 2] = ["sd8-elite-sim", "sdx-elite-sim"];

impl DeviceProfile {
    /// Same flop cost for every op kind.
    pub fn uniform(name: &str, overhead_us: f64, flop_cost_us: f64, memory_cost_us: f64) -> Self {
        Self {
            name: name.to_string(),
            per_node_overhead_us: overhead_us,
            flop_cost_us: OpKind::ALL.iter().map(|&k| (k, flop_cost_us)).collect(),
            memory_cost_us,
            jitter_seed: None,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        let (overhead, scale) = match name {
            "sd8-elite-sim" => (20.0, 1.0),
            "sdx-elite-sim" => (2000.0, 500.0),
            _ => return None,
        };
        let flop_cost_us = OpKind::ALL
            .iter()
            .map(|&k| {
                let per_kflop = match k {
                    OpKind::Gemm => 10.0,
                    OpKind::Conv2d => 8.0,
                    OpKind::Softmax | OpKind::Sigmoid => 4.0,
                    k if k.is_data_movement() => 0.0,
                    _ => 2.0,
                };
                (k, per_kflop * scale)
            })
            .collect();
        Some(Self {
            name: name.to_string(),
            per_node_overhead_us: overhead,
            flop_cost_us,
            memory_cost_us: 0.5 * scale,
            jitter_seed: None,
        })
    }

    /// Resolves a built-in profile name, falling back to a JSON file path.
    pub fn load(name_or_path: &str) -> Result<Self, SimError> {
        if let Some(p) = Self::builtin(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        let text = std::fs::read_to_string(path)
            .map_err(|_| SimError::UnknownDevice(name_or_path.to_string()))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let profile: Self =
            serde_json::from_str(text).map_err(|e| SimError::InvalidProfile(e.to_string()))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.per_node_overhead_us) || !ok(self.memory_cost_us) {
            return Err(SimError::InvalidProfile(format!(
                "`{}`: coefficients must be finite and non-negative",
                self.name
            )));
        }
        if let Some((k, _)) = self.flop_cost_us.iter().find(|(_, &v)| !ok(v)) {
            return Err(SimError::InvalidProfile(format!(
                "`{}`: flop cost for {k} must be finite and non-negative",
                self.name
            )));
        }
        Ok(())
    }
}

/// Simulated target for each track: the phone profile for tracks 1 and 3,
/// the laptop profile for track 2.
pub fn default_device(track: Track) -> DeviceProfile {
    let name = match track {
        Track::Segmentation => "sdx-elite-sim",
        _ => "sd8-elite-sim",
    };
    DeviceProfile::builtin(name).expect("built-in profile")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub total_ms: f64,
    pub per_node_us: BTreeMap<String, f64>,
    pub runs: u32,
}

/// Floating-point operations charged to `node`.
pub fn node_flops(node: &GraphNode, shapes: &ShapeMap) -> Result<f64, IrError> {
    let out = &shapes[&node.output];
    Ok(match node.op {
        OpKind::Conv2d => {
            let w = &shapes[&node.inputs[1]];
            // out = [N, Cout, Hout, Wout], w = [Cout, Cin, Kh, Kw]
            2.0 * (out[0] * w[0] * w[1] * w[2] * w[3] * out[2] * out[3]) as f64
        }
        OpKind::Gemm => {
            let (trans_a, _) = gemm_flags(node)?;
            let a = &shapes[&node.inputs[0]];
            let k = if trans_a { a[0] } else { a[1] };
            2.0 * (out[0] * k * out[1]) as f64
        }
        k if k.is_data_movement() => 0.0,
        _ => numel(out) as f64,
    })
}

/// Elements read plus elements written by `node`.
pub fn elements_moved(node: &GraphNode, shapes: &ShapeMap) -> f64 {
    let read: usize = node.inputs.iter().map(|i| numel(&shapes[i])).sum();
    (read + numel(&shapes[&node.output])) as f64
}

pub fn node_cost(node: &GraphNode, shapes: &ShapeMap, profile: &DeviceProfile) -> Result<f64, SimError> {
    let per_kflop = *profile
        .flop_cost_us
        .get(&node.op)
        .ok_or_else(|| SimError::UnknownOpKind {
            profile: profile.name.clone(),
            kind: node.op,
        })?;
    Ok(profile.per_node_overhead_us
        + per_kflop * node_flops(node, shapes)? / 1000.0
        + profile.memory_cost_us * elements_moved(node, shapes) / 1000.0)
}

/// Simulated latency of one inference, averaged over `runs`.
///
/// With a jitter seed every run scales the whole graph by a factor drawn from
/// `[0.98, 1.02]`; per-node costs carry the mean factor so they still add up
/// to the total.
pub fn profile(graph: &ComputationGraph, profile: &DeviceProfile, runs: u32) -> Result<LatencyReport, SimError> {
    if runs == 0 {
        return Err(SimError::NoRuns);
    }
    let shapes = infer_shapes(graph)?;
    let factor = match profile.jitter_seed {
        None => 1.0,
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draws: Vec<f64> = (0..runs).map(|_| rng.gen_range(0.98..=1.02)).collect();
            fsum(draws.iter().copied()) / runs as f64
        }
    };
    let mut per_node_us = BTreeMap::new();
    for node in &graph.nodes {
        per_node_us.insert(node.id.clone(), node_cost(node, &shapes, profile)? * factor);
    }
    Ok(LatencyReport {
        total_ms: fsum(per_node_us.values().copied()) / 1000.0,
        per_node_us,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{GraphBuilder, Tensor};

    fn gemm_graph() -> ComputationGraph {
        let mut b = GraphBuilder::new("g");
        let x = b.input("x", &[1, 4]);
        let w = b.constant("w", Tensor::zeros(&[4, 3]));
        let y = b.op(OpKind::Gemm, &[&x, &w]);
        b.output(&y);
        b.build().unwrap()
    }

    #[test]
    fn zero_profile_costs_nothing() {
        let g = gemm_graph();
        let r = profile(&g, &DeviceProfile::uniform("zero", 0.0, 0.0, 0.0), 1).unwrap();
        assert_eq!(r.total_ms, 0.0);
    }

    #[test]
    fn gemm_hand_case() {
        let g = gemm_graph();
        let shapes = infer_shapes(&g).unwrap();
        let p = DeviceProfile::uniform("p", 10.0, 1.0, 0.0);
        let c = node_cost(&g.nodes[0], &shapes, &p).unwrap();
        assert!((c - 10.024).abs() < 1e-12);
    }

    #[test]
    fn shape_node_is_pure_overhead() {
        let mut b = GraphBuilder::new("g");
        let x = b.input("x", &[2, 3]);
        let s = b.op(OpKind::Shape, &[&x]);
        b.output(&s);
        let g = b.build().unwrap();
        let shapes = infer_shapes(&g).unwrap();
        let p = DeviceProfile::uniform("p", 10.0, 5.0, 0.0);
        assert_eq!(node_cost(&g.nodes[0], &shapes, &p).unwrap(), 10.0);
    }

    #[test]
    fn missing_kind_is_reported() {
        let g = gemm_graph();
        let mut p = DeviceProfile::uniform("p", 1.0, 1.0, 1.0);
        p.flop_cost_us.remove(&OpKind::Gemm);
        assert!(matches!(
            profile(&g, &p, 1),
            Err(SimError::UnknownOpKind { kind: OpKind::Gemm, .. })
        ));
    }

    #[test]
    fn jitter_is_seeded_and_additive() {
        let g = gemm_graph();
        let mut p = DeviceProfile::builtin("sd8-elite-sim").unwrap();
        p.jitter_seed = Some(7);
        let a = profile(&g, &p, 5).unwrap();
        assert_eq!(a, profile(&g, &p, 5).unwrap());
        let sum: f64 = a.per_node_us.values().sum::<f64>() / 1000.0;
        assert!((a.total_ms - sum).abs() <= 1e-9);
        p.jitter_seed = None;
        let base = profile(&g, &p, 5).unwrap().total_ms;
        assert!(a.total_ms >= 0.98 * base && a.total_ms <= 1.02 * base);
    }

    #[test]
    fn profile_json_round_trip_and_validation() {
        let p = DeviceProfile::builtin("sdx-elite-sim").unwrap();
        let text = serde_json::to_string(&p).unwrap();
        assert!(text.contains("\"ReLU\""));
        assert_eq!(DeviceProfile::from_json(&text).unwrap(), p);
        let bad = text.replace("\"memory_cost_us\":", "\"memory_cost_us\":-");
        assert!(matches!(DeviceProfile::from_json(&bad), Err(SimError::InvalidProfile(_))));
        assert!(matches!(DeviceProfile::load("nope-sim"), Err(SimError::UnknownDevice(_))));
    }
}
