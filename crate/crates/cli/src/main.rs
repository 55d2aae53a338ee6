//! `edgeref`: run the referee service, submit graphs, trigger runs, inspect
//! scores, and use the optimizer, profiler and scorer standalone.

mod client;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use edgeref_api::{AppState, SubmitRequest};
use edgeref_core::bundle::{mask_from_tensor, read_manifest, read_tensor_file};
use edgeref_core::ir::{parse_graph, to_json, to_value};
use edgeref_core::metrics::{
    binarize_mask, evaluate_depth, miou, track1_score, CameraIntrinsics, Track, TrackConfig,
};
use edgeref_core::opt::{optimize, parse_pass_list};
use edgeref_core::referee::{Referee, RefereeOptions, RunState, SystemClock};
use edgeref_core::sim::{profile, DeviceProfile};
use edgeref_core::synth;

use client::ServiceClient;

#[derive(Parser)]
#[command(name = "edgeref", version, about = "Edge-model benchmark referee")]
struct Cli {
    /// Write line-delimited JSON to stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

fn track_arg(s: &str) -> Result<Track, String> {
    s.parse()
}

// Where participant commands send their requests.
#[derive(Args)]
struct Target {
    #[arg(long, env = "EDGEREF_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,
    /// Work on the local data directory instead of a service.
    #[arg(long)]
    offline: bool,
    #[command(flatten)]
    engine: Engine,
}

/// How a local referee is opened.
#[derive(Args)]
struct Engine {
    #[arg(long, env = "EDGEREF_DATA_DIR", default_value = "edgeref-data")]
    data_dir: PathBuf,
    /// Bundle root holding `1/`, `2/`, `3/`; defaults to `<data-dir>/bundles`.
    #[arg(long, env = "EDGEREF_BUNDLE_DIR")]
    bundle_dir: Option<PathBuf>,
    /// Built-in profile name or JSON path, optionally `TRACK=` prefixed;
    /// without a prefix it applies to every track.
    #[arg(long = "device", env = "EDGEREF_DEVICE", value_name = "[TRACK=]PROFILE")]
    devices: Vec<String>,
    #[arg(long, env = "EDGEREF_WORKERS")]
    workers: Option<usize>,
    #[arg(long, default_value_t = 1)]
    profile_runs: u32,
    /// Submissions per team per UTC day.
    #[arg(long)]
    daily_cap: Option<usize>,
}

impl Engine {
    fn options(&self) -> Result<RefereeOptions> {
        let mut options = RefereeOptions {
            daily_cap: self.daily_cap,
            profile_runs: self.profile_runs,
            bundle_dir: self.bundle_dir.clone(),
            ..RefereeOptions::default()
        };
        if let Some(w) = self.workers {
            options.workers = w.max(1);
        }
        for spec in &self.devices {
            let (tracks, name) = match spec.split_once('=') {
                Some((t, name)) if t.parse::<Track>().is_ok() => (vec![t.parse::<Track>().unwrap()], name),
                _ => (Track::ALL.to_vec(), spec.as_str()),
            };
            let profile = DeviceProfile::load(name)?;
            for t in tracks {
                options.devices.insert(t, profile.clone());
            }
        }
        Ok(options)
    }

    fn open(&self) -> Result<Referee> {
        Referee::open(&self.data_dir, self.options()?, Arc::new(SystemClock))
            .with_context(|| format!("cannot open data directory {}", self.data_dir.display()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "EDGEREF_LISTEN", default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, env = "EDGEREF_ADMIN_TOKEN")]
        admin_token: Option<String>,
        #[command(flatten)]
        engine: Engine,
    },
    /// Submit a graph document.
    Submit {
        #[arg(long)]
        team: String,
        #[arg(long, value_parser = track_arg)]
        track: Track,
        graph: PathBuf,
        #[arg(long)]
        idempotency_key: Option<String>,
        #[command(flatten)]
        target: Target,
    },
    /// Show a submission and its result.
    Status {
        id: String,
        #[command(flatten)]
        target: Target,
    },
    /// Current ranking for one track.
    Leaderboard {
        #[arg(value_parser = track_arg)]
        track: Track,
        #[command(flatten)]
        target: Target,
    },
    /// Score history of a team on one track.
    History {
        team: String,
        #[arg(long, value_parser = track_arg)]
        track: Track,
        #[command(flatten)]
        target: Target,
    },
    /// Evaluate pending submissions, or one submission with `--offline`.
    Evaluate {
        #[arg(long, value_parser = track_arg)]
        track: Option<Track>,
        #[arg(long)]
        submission: Option<String>,
        /// Evaluate a finished submission again.
        #[arg(long, requires = "submission")]
        reevaluate: bool,
        #[arg(long, env = "EDGEREF_ADMIN_TOKEN")]
        admin_token: Option<String>,
        /// Print the run id instead of waiting for the report.
        #[arg(long)]
        no_wait: bool,
        #[command(flatten)]
        target: Target,
    },
    /// Run optimizer passes over a graph.
    Optimize {
        graph: PathBuf,
        /// Comma-separated pass names.
        #[arg(long, default_value = "constant_fold,fuse_normalization_into_conv,fuse_scale_into_gemm")]
        passes: String,
        /// Write the optimized graph here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulated latency of a graph.
    Profile {
        graph: PathBuf,
        #[arg(long, default_value = "sd8-elite-sim")]
        device: String,
        #[arg(long, default_value_t = 1)]
        runs: u32,
        /// Apply the default compile passes first.
        #[arg(long)]
        optimize: bool,
    },
    /// Compute a track metric without a service.
    Score {
        #[arg(long, value_parser = track_arg)]
        track: Track,
        #[arg(long)]
        accuracy: Option<f64>,
        #[arg(long)]
        latency_ms: Option<f64>,
        /// Predicted mask or depth tensor; repeat for several pairs.
        #[arg(long)]
        pred: Vec<PathBuf>,
        /// Ground-truth tensor file or bundle item directory, paired with `--pred`.
        #[arg(long)]
        gt: Vec<PathBuf>,
        #[arg(long)]
        tau_m: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        /// `fx,fy,cx,cy`, when `--gt` is a plain tensor file.
        #[arg(long)]
        intrinsics: Option<String>,
    },
    /// Write a deterministic synthetic test bundle.
    BundleMake {
        #[arg(long, value_parser = track_arg)]
        track: Track,
        #[arg(long)]
        items: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Out {
    json: bool,
}

impl Out {
    fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce() -> String) -> Result<()> {
        let mut stdout = std::io::stdout().lock();
        if self.json {
            writeln!(stdout, "{}", serde_json::to_string(value)?)?;
        } else {
            writeln!(stdout, "{}", text())?;
        }
        stdout.flush()?;
        Ok(())
    }
}

fn read_graph(path: &Path) -> Result<edgeref_core::ir::ComputationGraph> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(parse_graph(&text).with_context(|| format!("{}", path.display()))?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = Out { json: cli.json };
    match run(cli.command, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command, out: &Out) -> Result<()> {
    match command {
        Command::Serve {
            listen,
            admin_token,
            engine,
        } => serve(&listen, admin_token, &engine),
        Command::Submit {
            team,
            track,
            graph,
            idempotency_key,
            target,
        } => {
            let g = read_graph(&graph)?;
            let (id, status) = if target.offline {
                let s = target.engine.open()?.submit(&team, track, &g, idempotency_key.as_deref())?.submission;
                (s.id, s.status)
            } else {
                let body = SubmitRequest {
                    team,
                    track: track.number(),
                    graph: to_value(&g),
                };
                let r = client(&target, None).submit(&body, idempotency_key.as_deref())?;
                (r.id, r.status)
            };
            out.emit(&serde_json::json!({ "id": id, "status": status }), || format!("{id} {status}"))
        }
        Command::Status { id, target } => {
            let view = if target.offline {
                target.engine.open()?.status(&id)?
            } else {
                client(&target, None).status(&id)?
            };
            out.emit(&view, || {
                let s = &view.submission;
                let mut line = format!("{} team={} track={} status={}", s.id, s.team, s.track, s.status);
                if let Some(r) = &view.score_record {
                    line += &format!(
                        " final_score={} latency_ms={}",
                        r.final_score.unwrap_or(f64::NAN),
                        r.latency_ms
                    );
                }
                if let (Some(l), Some(limit)) = (view.latency_ms, view.latency_limit_ms) {
                    line += &format!(" latency_ms={l} limit_ms={limit}");
                }
                if let Some(reason) = &s.failure_reason {
                    line += &format!(" reason={reason:?}");
                }
                line
            })
        }
        Command::Leaderboard { track, target } => {
            let board = if target.offline {
                target.engine.open()?.leaderboard(track)
            } else {
                client(&target, None).leaderboard(track.number())?
            };
            if board.is_empty() && !out.json {
                return out.emit(&(), || "no scored submissions".into());
            }
            for e in &board {
                out.emit(e, || {
                    format!(
                        "{:>3}  {:<24} {:>12.6} {:>10.3} ms  {}",
                        e.rank, e.team, e.best_final_score, e.latency_ms, e.best_submission_id
                    )
                })?;
            }
            Ok(())
        }
        Command::History { team, track, target } => {
            let h = if target.offline {
                target.engine.open()?.score_history(&team, track)?
            } else {
                client(&target, None).history(&team, track.number())?
            };
            out.emit(&h, || {
                h.points
                    .iter()
                    .map(|p| format!("{}  {}  {}", p.evaluated_at.to_rfc3339(), p.final_score, p.submission_id))
                    .collect::<Vec<_>>()
                    .join("\n")
            })
        }
        Command::Evaluate {
            track,
            submission,
            reevaluate,
            admin_token,
            no_wait,
            target,
        } => evaluate(track, submission, reevaluate, admin_token, no_wait, &target, out),
        Command::Optimize { graph, passes, out: path } => {
            let g = read_graph(&graph)?;
            let passes = parse_pass_list(&passes)?;
            let (optimized, reports) = optimize(&g, &passes)?;
            for r in &reports {
                out.emit(r, || {
                    format!(
                        "{}: {} rewrites, {} -> {} nodes",
                        r.pass_name,
                        r.rewrites.len(),
                        r.nodes_before,
                        r.nodes_after
                    )
                })?;
            }
            if let Some(path) = path {
                std::fs::write(&path, to_json(&optimized)).with_context(|| format!("cannot write {}", path.display()))?;
            }
            Ok(())
        }
        Command::Profile {
            graph,
            device,
            runs,
            optimize: compile,
        } => {
            let mut g = read_graph(&graph)?;
            if compile {
                g = optimize(&g, &edgeref_core::opt::DEFAULT_PIPELINE)?.0;
            }
            let device = DeviceProfile::load(&device)?;
            let report = profile(&g, &device, runs)?;
            out.emit(&report, || format!("{} ms on {} ({} nodes)", report.total_ms, device.name, g.nodes.len()))
        }
        Command::Score {
            track,
            accuracy,
            latency_ms,
            pred,
            gt,
            tau_m,
            threshold,
            intrinsics,
        } => score(track, accuracy, latency_ms, &pred, &gt, tau_m, threshold, intrinsics, out),
        Command::BundleMake {
            track,
            items,
            seed,
            out: dir,
        } => {
            if items == 0 {
                bail!("--items must be at least 1");
            }
            synth::bundle(track, items, seed).write(&dir)?;
            out.emit(
                &serde_json::json!({ "track": track, "items": items, "seed": seed, "out": dir }),
                || format!("wrote {items} track {track} items to {}", dir.display()),
            )
        }
    }
}

fn client(target: &Target, admin_token: Option<String>) -> ServiceClient {
    ServiceClient::new(&target.server, admin_token)
}

fn serve(listen: &str, admin_token: Option<String>, engine: &Engine) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let referee = Arc::new(engine.open()?);
    let missing: Vec<String> = Track::ALL
        .iter()
        .filter(|t| referee.setup(**t).is_none())
        .map(|t| t.to_string())
        .collect();
    if !missing.is_empty() {
        tracing::warn!("no bundle for track(s) {}; their submissions stay pending", missing.join(", "));
    }
    if admin_token.is_none() {
        tracing::warn!("no admin token configured; admin endpoints are disabled");
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .with_context(|| format!("cannot listen on {listen}"))?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        edgeref_api::serve(listener, AppState::new(referee, admin_token)).await?;
        Ok(())
    })
}

fn evaluate(
    track: Option<Track>,
    submission: Option<String>,
    reevaluate: bool,
    admin_token: Option<String>,
    no_wait: bool,
    target: &Target,
    out: &Out,
) -> Result<()> {
    if target.offline {
        let referee = target.engine.open()?;
        if let Some(id) = submission {
            let view = referee.evaluate_submission(&id, reevaluate)?;
            return out.emit(&view, || format!("{} {}", view.submission.id, view.submission.status));
        }
        let report = referee.run_batch(track)?;
        return out.emit(&report, || run_summary(&report));
    }
    if submission.is_some() {
        bail!("--submission is only available with --offline");
    }
    let client = client(target, admin_token);
    let started = client.start_run(track.map(Track::number))?;
    if no_wait {
        return out.emit(&started, || started.run_id.clone());
    }
    loop {
        let report = client.run_report(&started.run_id)?;
        if report.state != RunState::Running {
            return out.emit(&report, || run_summary(&report));
        }
        std::thread::sleep(Duration::from_millis(100));
    }
}

fn run_summary(r: &edgeref_core::referee::RunReport) -> String {
    format!(
        "{}: scored {}, rejected {}, failed {}, skipped {}",
        r.run_id, r.scored, r.rejected, r.failed, r.skipped
    )
}

/// A bundle item directory resolves to its truth file and the bundle's
/// manifest two levels up.
fn truth_source(gt: &Path, file: &str) -> Result<(PathBuf, Option<edgeref_core::bundle::BundleManifest>)> {
    if gt.is_dir() {
        let root = gt
            .parent()
            .and_then(Path::parent)
            .ok_or_else(|| anyhow!("{} is not inside a bundle", gt.display()))?;
        Ok((gt.join(format!("{file}.json")), Some(read_manifest(root)?)))
    } else {
        Ok((gt.to_path_buf(), None))
    }
}

#[allow(clippy::too_many_arguments)]
fn score(
    track: Track,
    accuracy: Option<f64>,
    latency_ms: Option<f64>,
    pred: &[PathBuf],
    gt: &[PathBuf],
    tau_m: Option<f64>,
    threshold: Option<f64>,
    intrinsics: Option<String>,
    out: &Out,
) -> Result<()> {
    if track == Track::Classification {
        let (Some(acc), Some(lat)) = (accuracy, latency_ms) else {
            bail!("track 1 needs --accuracy and --latency-ms");
        };
        if !(0.0..=1.0).contains(&acc) || !(lat.is_finite() && lat >= 0.0) {
            bail!("accuracy must lie in [0, 1] and latency must be non-negative");
        }
        let s = track1_score(acc, lat);
        return out.emit(
            &serde_json::json!({ "track": 1, "accuracy": acc, "latency_ms": lat, "final_score": s }),
            || s.to_string(),
        );
    }
    if pred.is_empty() || pred.len() != gt.len() {
        bail!("give one --gt per --pred (got {} and {})", pred.len(), gt.len());
    }
    let mut config = TrackConfig::new(track);
    if track == Track::Segmentation {
        let mut pairs = Vec::new();
        for (p, g) in pred.iter().zip(gt) {
            let (path, manifest) = truth_source(g, "mask")?;
            let thr = threshold
                .or(manifest.and_then(|m| m.mask_threshold))
                .unwrap_or(config.mask_threshold);
            config.mask_threshold = thr;
            config.validate()?;
            let gt_mask = mask_from_tensor(&read_tensor_file(&path)?)?;
            let p = read_tensor_file(p)?.squeeze_leading(gt_mask.shape.len());
            pairs.push((binarize_mask(&p, thr), gt_mask));
        }
        let r = miou(&pairs)?;
        return out.emit(&r, || r.miou.to_string());
    }
    for (p, g) in pred.iter().zip(gt) {
        let (path, manifest) = truth_source(g, "depth")?;
        let k = match (&intrinsics, manifest.as_ref().and_then(|m| m.intrinsics)) {
            (Some(text), _) => parse_intrinsics(text)?,
            (None, Some(k)) => k,
            (None, None) => bail!("--intrinsics is required when --gt is a tensor file"),
        };
        config.tau_m = tau_m
            .or(manifest.as_ref().and_then(|m| m.tau_m))
            .unwrap_or(config.tau_m);
        config.validate()?;
        let gt_depth = read_tensor_file(&path)?;
        let p = read_tensor_file(p)?.squeeze_leading(gt_depth.rank());
        let r = evaluate_depth(&p, &gt_depth, &k, &config)?;
        out.emit(&r, || {
            format!(
                "f_score={} precision={} recall={} mae_m={} rmse_m={} abs_rel={}",
                r.f_score, r.precision, r.recall, r.mae_m, r.rmse_m, r.abs_rel
            )
        })?;
    }
    Ok(())
}

fn parse_intrinsics(text: &str) -> Result<CameraIntrinsics> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow!("--intrinsics expects fx,fy,cx,cy"))?;
    let [fx, fy, cx, cy] = v[..] else {
        bail!("--intrinsics expects fx,fy,cx,cy");
    };
    let k = CameraIntrinsics { fx, fy, cx, cy };
    k.validate()?;
    Ok(k)
}
