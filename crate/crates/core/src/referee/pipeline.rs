//! Compile, profile, gate, infer and score one graph against one setup.

use rayon::prelude::*;
use thiserror::Error;

use super::types::{Gate, ScoreDetails, Status};
use super::EvalSetup;
use crate::bundle::Truth;
use crate::ir::{execute, ComputationGraph, IrError, Tensor};
use crate::metrics::{
    argmax, binarize_mask, evaluate_depth, latency_gate, miou, top1_accuracy, track1_score,
    MetricsError, Track,
};
use crate::numeric::fsum;
use crate::opt::{optimize, OptError, DEFAULT_PIPELINE};
use crate::sim::{profile, SimError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("compile failed: {0}")]
    Compile(#[from] OptError),
    #[error("profiling failed: {0}")]
    Profile(#[from] SimError),
    #[error("inference failed on item `{item}`: {source}")]
    Inference { item: String, source: IrError },
    #[error("item `{item}`: {reason}")]
    Output { item: String, reason: String },
    #[error("scoring failed: {0}")]
    Scoring(#[from] MetricsError),
}

/// Result of a completed pipeline, before it becomes a record.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub latency_ms: f64,
    pub gate: Gate,
    pub metric_value: Option<f64>,
    pub final_score: Option<f64>,
    pub details: Option<ScoreDetails>,
}

impl Evaluation {
    pub fn status(&self) -> Status {
        match self.gate {
            Gate::Pass => Status::Scored,
            Gate::Fail => Status::LatencyRejected,
        }
    }
}

/// Runs the whole pipeline. `on_stage` sees each non-terminal stage as it
/// starts.
pub fn evaluate_graph(
    graph: &ComputationGraph,
    setup: &EvalSetup,
    runs: u32,
    on_stage: &mut dyn FnMut(Status),
) -> Result<Evaluation, PipelineError> {
    on_stage(Status::Compiling);
    let (compiled, _) = optimize(graph, &DEFAULT_PIPELINE)?;

    on_stage(Status::Profiling);
    let latency_ms = profile(&compiled, &setup.device, runs)?.total_ms;
    if !latency_gate(&setup.config, latency_ms) {
        return Ok(Evaluation {
            latency_ms,
            gate: Gate::Fail,
            metric_value: None,
            final_score: None,
            details: None,
        });
    }

    on_stage(Status::Inferring);
    let output = compiled.outputs[0].clone();
    let predictions: Vec<Tensor> = setup
        .bundle
        .items
        .par_iter()
        .map(|item| {
            execute(&compiled, &item.inputs)
                .map(|mut out| out.remove(&output).expect("declared output"))
                .map_err(|source| PipelineError::Inference {
                    item: item.id.clone(),
                    source,
                })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, _>>()?;

    on_stage(Status::Scoring);
    let (metric, final_score, details) = score(setup, &predictions, latency_ms)?;
    Ok(Evaluation {
        latency_ms,
        gate: Gate::Pass,
        metric_value: Some(metric),
        final_score: Some(final_score),
        details: Some(details),
    })
}

fn score(
    setup: &EvalSetup,
    predictions: &[Tensor],
    latency_ms: f64,
) -> Result<(f64, f64, ScoreDetails), PipelineError> {
    let items = &setup.bundle.items;
    match setup.config.track {
        Track::Classification => {
            let mut predicted = Vec::with_capacity(items.len());
            let mut labels = Vec::with_capacity(items.len());
            for (item, pred) in items.iter().zip(predictions) {
                let Truth::Label(label) = item.truth else {
                    unreachable!("validated bundle")
                };
                let class = argmax(&pred.data).ok_or_else(|| PipelineError::Output {
                    item: item.id.clone(),
                    reason: "empty class scores".into(),
                })?;
                predicted.push(class);
                labels.push(label);
            }
            let accuracy = top1_accuracy(&predicted, &labels)?;
            let correct = predicted.iter().zip(&labels).map(|(p, l)| p == l).collect();
            Ok((
                accuracy,
                track1_score(accuracy, latency_ms),
                ScoreDetails::Classification { correct },
            ))
        }
        Track::Segmentation => {
            let mut pairs = Vec::with_capacity(items.len());
            for (item, pred) in items.iter().zip(predictions) {
                let Truth::Mask(gt) = &item.truth else {
                    unreachable!("validated bundle")
                };
                let pred = pred.squeeze_leading(gt.shape.len());
                pairs.push((binarize_mask(&pred, setup.config.mask_threshold), gt.clone()));
            }
            let result = miou(&pairs)?;
            Ok((result.miou, result.miou, ScoreDetails::Segmentation(result)))
        }
        Track::Depth => {
            let intrinsics = setup
                .bundle
                .intrinsics
                .expect("validated depth bundle has intrinsics");
            let results = items
                .par_iter()
                .zip(predictions)
                .map(|(item, pred)| {
                    let Truth::Depth(gt) = &item.truth else {
                        unreachable!("validated bundle")
                    };
                    evaluate_depth(&pred.squeeze_leading(gt.rank()), gt, &intrinsics, &setup.config)
                })
                .collect::<Vec<_>>()
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?;
            let f = fsum(results.iter().map(|r| r.f_score)) / results.len() as f64;
            Ok((f, f, ScoreDetails::Depth { items: results }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{default_device, DeviceProfile};
    use crate::synth::{bundle, toy_model, Variant};

    fn setup(track: Track, items: usize) -> EvalSetup {
        EvalSetup::new(default_device(track), bundle(track, items, 11)).unwrap()
    }

    fn stages(graph: &ComputationGraph, setup: &EvalSetup) -> (Result<Evaluation, PipelineError>, Vec<Status>) {
        let mut seen = Vec::new();
        let r = evaluate_graph(graph, setup, 1, &mut |s| seen.push(s));
        (r, seen)
    }

    #[test]
    fn best_toy_models_score_perfectly() {
        for track in Track::ALL {
            let s = setup(track, 6);
            let (r, seen) = stages(&toy_model(track, Variant::Pass { degrade: 0 }), &s);
            let e = r.unwrap();
            assert_eq!(seen, [Status::Compiling, Status::Profiling, Status::Inferring, Status::Scoring]);
            assert_eq!(e.status(), Status::Scored);
            let metric = e.metric_value.unwrap();
            let full = if track == Track::Depth { 100.0 } else { 1.0 };
            assert!((metric - full).abs() < 1e-6, "track {track}: {metric}");
        }
    }

    #[test]
    fn reject_stops_before_inference() {
        let s = setup(Track::Classification, 2);
        let (r, seen) = stages(&toy_model(Track::Classification, Variant::Reject), &s);
        let e = r.unwrap();
        assert_eq!(seen, [Status::Compiling, Status::Profiling]);
        assert_eq!(e.gate, Gate::Fail);
        assert!(e.metric_value.is_none() && e.final_score.is_none() && e.details.is_none());
    }

    #[test]
    fn wrong_input_shape_fails_with_shape_reason() {
        let s = setup(Track::Segmentation, 2);
        let (r, _) = stages(&toy_model(Track::Segmentation, Variant::Fail), &s);
        let msg = r.unwrap_err().to_string();
        assert!(msg.contains("shape error"), "{msg}");
    }

    #[test]
    fn nine_millisecond_hand_case() {
        // four compiled nodes at 2.25 ms each
        let mut s = setup(Track::Classification, 10);
        s.device = DeviceProfile::uniform("fixed", 2250.0, 0.0, 0.0);
        let (r, _) = stages(&toy_model(Track::Classification, Variant::Pass { degrade: 0 }), &s);
        let e = r.unwrap();
        assert!((e.latency_ms - 9.0).abs() < 1e-12);
        assert_eq!(e.metric_value, Some(1.0));
        let f = e.final_score.unwrap();
        assert!((f - 1.0 / 4.5).abs() < 1e-12 && (f - 0.2222).abs() < 5e-5);
    }
}
