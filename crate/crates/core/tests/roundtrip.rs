use tempfile::TempDir;

use edgeref_core::bundle::TestBundle;
use edgeref_core::ir::{execute, parse_graph, to_json};
use edgeref_core::metrics::Track;
use edgeref_core::opt::{optimize, DEFAULT_PIPELINE};
use edgeref_core::referee::{evaluate_graph, EvalSetup, Status};
use edgeref_core::sim::{default_device, profile};
use edgeref_core::synth::{bundle, random_inputs, toy_model, Variant};

#[test]
fn bundles_survive_disk() {
    let dir = TempDir::new().unwrap();
    for track in Track::ALL {
        let path = dir.path().join(track.number().to_string());
        let made = bundle(track, 3, 42);
        made.write(&path).unwrap();
        assert_eq!(TestBundle::load(&path).unwrap(), made, "track {track}");
    }
}

#[test]
fn toy_graphs_survive_json_and_never_compile_slower() {
    for track in Track::ALL {
        let g = toy_model(track, Variant::Pass { degrade: 1 });
        let back = parse_graph(&to_json(&g)).unwrap();
        assert_eq!(back, g);

        let (opt, _) = optimize(&g, &DEFAULT_PIPELINE).unwrap();
        let device = default_device(track);
        let (before, after) = (profile(&g, &device, 1).unwrap().total_ms, profile(&opt, &device, 1).unwrap().total_ms);
        if opt.nodes.len() < g.nodes.len() {
            assert!(after < before, "{track}");
        } else {
            assert_eq!(after, before, "{track}");
        }
        let inputs = random_inputs(&g, 1);
        let (a, b) = (execute(&g, &inputs).unwrap(), execute(&opt, &inputs).unwrap());
        for (name, t) in &a {
            assert!(t.max_abs_diff(&b[name]) <= 1e-9, "{track}: {name}");
        }
    }
}

#[test]
fn loaded_bundle_scores_like_the_generated_one() {
    let dir = TempDir::new().unwrap();
    let made = bundle(Track::Depth, 2, 8);
    made.write(dir.path()).unwrap();
    let loaded = TestBundle::load(dir.path()).unwrap();
    let graph = toy_model(Track::Depth, Variant::Pass { degrade: 2 });
    let a = evaluate_graph(&graph, &EvalSetup::new(default_device(Track::Depth), made).unwrap(), 1, &mut |_| {}).unwrap();
    let b = evaluate_graph(&graph, &EvalSetup::new(default_device(Track::Depth), loaded).unwrap(), 1, &mut |_| {}).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.status(), Status::Scored);
}
