//! Submission lifecycle, evaluation runs, persistent store, leaderboard and
//! score history.

pub mod board;
mod clock;
mod pipeline;
mod store;
mod types;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use thiserror::Error;

pub use board::{current_records, history_from_records, leaderboard_from_records};
pub use clock::{Clock, ManualClock, SystemClock};
pub use pipeline::{evaluate_graph, Evaluation, PipelineError};
pub use types::{
    Gate, HistoryPoint, LeaderboardEntry, RunReport, RunState, ScoreDetails, ScoreHistory,
    ScoreRecord, Status, Submission, SubmissionView,
};

use crate::bundle::{BundleError, TestBundle};
use crate::ir::{to_json, ComputationGraph, IrError};
use crate::metrics::{Track, TrackConfig};
use crate::sim::{default_device, DeviceProfile, SimError};
use store::Store;

#[derive(Debug, Error)]
pub enum RefereeError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Graph(#[from] IrError),
    #[error("{0} not found")]
    NotFound(String),
    #[error("submission {id} is already {status}; request re-evaluation explicitly")]
    StateConflict { id: String, status: Status },
    #[error("idempotency key `{0}` was already used for a different submission")]
    IdempotencyConflict(String),
    #[error("team `{team}` reached its daily cap of {cap} submissions")]
    QuotaExceeded { team: String, cap: usize },
    #[error("re-evaluation of {id} failed, previous result kept: {reason}")]
    ReevaluationFailed { id: String, reason: String },
    #[error("no test bundle configured for track {0}")]
    NoBundle(Track),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Device(#[from] SimError),
    #[error("storage error: {0}")]
    Storage(String),
}

/// Called with the submission id after its record is written and before the
/// submission itself is updated.
pub type CommitHook = Arc<dyn Fn(&str) + Send + Sync>;

#[derive(Debug, Clone)]
pub struct RefereeOptions {
    /// Submissions evaluated concurrently within a run.
    pub workers: usize,
    /// Per-team submissions per UTC day; `None` is unlimited.
    pub daily_cap: Option<usize>,
    pub profile_runs: u32,
    /// Device per track; tracks not listed use [`default_device`].
    pub devices: BTreeMap<Track, DeviceProfile>,
    /// Holds one bundle per track in `<track>/`; defaults to `<data>/bundles`.
    pub bundle_dir: Option<PathBuf>,
}

impl Default for RefereeOptions {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map_or(2, |n| n.get()),
            daily_cap: None,
            profile_runs: 1,
            devices: BTreeMap::new(),
            bundle_dir: None,
        }
    }
}

/// Everything a track's evaluation depends on besides the graph.
#[derive(Debug, Clone)]
pub struct EvalSetup {
    pub device: DeviceProfile,
    pub bundle: TestBundle,
    pub config: TrackConfig,
}

impl EvalSetup {
    /// Takes the track config from the bundle.
    pub fn new(device: DeviceProfile, bundle: TestBundle) -> Result<Self, RefereeError> {
        device.validate()?;
        bundle.validate()?;
        Ok(Self {
            config: bundle.config(),
            device,
            bundle,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubmitOutcome {
    pub submission: Submission,
    /// The idempotency key matched an earlier identical submission.
    pub replayed: bool,
}

#[derive(Default)]
struct State {
    submissions: BTreeMap<String, Submission>,
    /// Current record of each evaluated submission.
    current: BTreeMap<String, ScoreRecord>,
    claimed: BTreeSet<String>,
    runs: BTreeMap<String, RunReport>,
    idempotency: BTreeMap<String, String>,
    next_submission: u64,
    next_run: u64,
}

#[derive(Default)]
struct Tally {
    scored: usize,
    rejected: usize,
    failed: usize,
}

impl Tally {
    fn add(&mut self, status: Status) {
        match status {
            Status::Scored => self.scored += 1,
            Status::LatencyRejected => self.rejected += 1,
            _ => self.failed += 1,
        }
    }
}

pub struct Referee {
    store: Store,
    options: RefereeOptions,
    clock: Arc<dyn Clock>,
    setups: RwLock<BTreeMap<Track, Arc<EvalSetup>>>,
    state: RwLock<State>,
    last_stamp: Mutex<DateTime<Utc>>,
    commit_hook: RwLock<Option<CommitHook>>,
}

fn suffix_number(id: &str, prefix: &str) -> Option<u64> {
    id.strip_prefix(prefix)?.parse().ok()
}

fn micros(t: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp_micros(t.timestamp_micros()).expect("in range")
}

fn validate_team(team: &str) -> Result<(), RefereeError> {
    let ok_char = |c: char| c.is_ascii_alphanumeric() || matches!(c, ' ' | '_' | '.' | '-');
    if team.trim().is_empty() || team.len() > 64 || !team.chars().all(ok_char) {
        return Err(RefereeError::InvalidRequest(format!(
            "team name `{team}` must be 1-64 characters of letters, digits, space, `_`, `.` or `-`"
        )));
    }
    Ok(())
}

impl Referee {
    /// Opens the store under `data_dir/store`, recovers from any interrupted
    /// run, and loads the bundle of each track found in the bundle directory.
    pub fn open(
        data_dir: &Path,
        options: RefereeOptions,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, RefereeError> {
        let store = Store::open(data_dir.join("store"))?;
        let state = Self::recover(&store)?;

        let mut last = DateTime::<Utc>::MIN_UTC;
        for s in state.submissions.values() {
            last = last.max(s.submitted_at);
        }
        for r in state.current.values() {
            last = last.max(r.evaluated_at);
        }
        for r in state.runs.values() {
            last = last.max(r.finished_at.unwrap_or(r.started_at));
        }

        let referee = Self {
            store,
            options,
            clock,
            setups: RwLock::new(BTreeMap::new()),
            state: RwLock::new(state),
            last_stamp: Mutex::new(last),
            commit_hook: RwLock::new(None),
        };
        let bundle_dir = referee
            .options
            .bundle_dir
            .clone()
            .unwrap_or_else(|| data_dir.join("bundles"));
        for track in Track::ALL {
            let dir = bundle_dir.join(track.number().to_string());
            if !dir.join("manifest.json").is_file() {
                continue;
            }
            let bundle = TestBundle::load(&dir)?;
            if bundle.track != track {
                return Err(BundleError::Invalid(format!(
                    "{} holds a track {} bundle",
                    dir.display(),
                    bundle.track
                ))
                .into());
            }
            referee.set_setup(EvalSetup::new(referee.device_for(track), bundle)?);
        }
        Ok(referee)
    }

    fn recover(store: &Store) -> Result<State, RefereeError> {
        let loaded = store.load(true)?;
        let mut state = State::default();
        for s in loaded.submissions {
            if let Some(key) = &s.idempotency_key {
                state.idempotency.insert(key.clone(), s.id.clone());
            }
            state.next_submission = state.next_submission.max(suffix_number(&s.id, "s").unwrap_or(0));
            state.submissions.insert(s.id.clone(), s);
        }

        let mut others = Vec::new();
        for (run_id, record) in loaded.records {
            state.next_run = state.next_run.max(suffix_number(&run_id, "run-").unwrap_or(0));
            let committed = state
                .submissions
                .get(&record.submission_id)
                .is_some_and(|s| s.record_run.as_deref() == Some(run_id.as_str()));
            if committed {
                state.current.insert(record.submission_id.clone(), record);
            } else {
                others.push((run_id, record));
            }
        }
        for s in state.submissions.values() {
            if s.record_run.is_some() && !state.current.contains_key(&s.id) {
                return Err(RefereeError::Storage(format!(
                    "submission {} points at a missing record in {}",
                    s.id,
                    s.record_run.as_deref().unwrap_or_default()
                )));
            }
        }
        // A record newer than the current one was written by a run that
        // stopped before updating its submission.
        for (run_id, record) in others {
            let orphan = state
                .current
                .get(&record.submission_id)
                .is_none_or(|cur| record.evaluated_at > cur.evaluated_at);
            if orphan {
                store.remove_record(&run_id, &record.submission_id)?;
            }
        }

        for mut run in loaded.runs {
            state.next_run = state.next_run.max(suffix_number(&run.run_id, "run-").unwrap_or(0));
            if run.state == RunState::Running {
                run.state = RunState::Interrupted;
                store.save_run(&run)?;
            }
            state.runs.insert(run.run_id.clone(), run);
        }
        Ok(state)
    }

    /// Strictly increasing timestamps at microsecond precision, whatever the
    /// clock does.
    fn stamp(&self) -> DateTime<Utc> {
        let mut last = self.last_stamp.lock().unwrap();
        let now = micros(self.clock.now());
        let t = if now > *last {
            now
        } else {
            *last + Duration::microseconds(1)
        };
        *last = t;
        t
    }

    pub fn options(&self) -> &RefereeOptions {
        &self.options
    }

    pub fn device_for(&self, track: Track) -> DeviceProfile {
        self.options
            .devices
            .get(&track)
            .cloned()
            .unwrap_or_else(|| default_device(track))
    }

    /// Installs or replaces the evaluation setup of `setup.config.track`.
    pub fn set_setup(&self, setup: EvalSetup) {
        self.setups
            .write()
            .unwrap()
            .insert(setup.config.track, Arc::new(setup));
    }

    pub fn setup(&self, track: Track) -> Option<Arc<EvalSetup>> {
        self.setups.read().unwrap().get(&track).cloned()
    }

    #[doc(hidden)]
    pub fn set_commit_hook(&self, hook: Option<CommitHook>) {
        *self.commit_hook.write().unwrap() = hook;
    }

    pub fn submit(
        &self,
        team: &str,
        track: Track,
        graph: &ComputationGraph,
        idempotency_key: Option<&str>,
    ) -> Result<SubmitOutcome, RefereeError> {
        validate_team(team)?;
        if let Some(key) = idempotency_key {
            if key.is_empty() || key.len() > 128 {
                return Err(RefereeError::InvalidRequest(
                    "idempotency key must be 1-128 characters".into(),
                ));
            }
        }
        let mut graph = graph.clone();
        graph.validate()?;

        let mut state = self.state.write().unwrap();
        if let Some(key) = idempotency_key {
            if let Some(id) = state.idempotency.get(key) {
                let existing = &state.submissions[id];
                let same = existing.team == team
                    && existing.track == track
                    && to_json(&self.store.load_graph(&existing.graph_ref)?) == to_json(&graph);
                if !same {
                    return Err(RefereeError::IdempotencyConflict(key.to_string()));
                }
                return Ok(SubmitOutcome {
                    submission: existing.clone(),
                    replayed: true,
                });
            }
        }

        let submitted_at = self.stamp();
        if let Some(cap) = self.options.daily_cap {
            let today = submitted_at.date_naive();
            let used = state
                .submissions
                .values()
                .filter(|s| s.team == team && s.submitted_at.date_naive() == today)
                .count();
            if used >= cap {
                return Err(RefereeError::QuotaExceeded {
                    team: team.to_string(),
                    cap,
                });
            }
        }

        let id = format!("s{:06}", state.next_submission + 1);
        let submission = Submission {
            id: id.clone(),
            team: team.to_string(),
            track,
            graph_ref: Store::graph_ref(&id),
            submitted_at,
            status: Status::Submitted,
            failure_reason: None,
            idempotency_key: idempotency_key.map(str::to_string),
            record_run: None,
        };
        self.store.save_graph(&id, &graph)?;
        self.store.save_submission(&submission)?;
        state.next_submission += 1;
        if let Some(key) = idempotency_key {
            state.idempotency.insert(key.to_string(), id.clone());
        }
        state.submissions.insert(id, submission.clone());
        Ok(SubmitOutcome {
            submission,
            replayed: false,
        })
    }

    pub fn status(&self, id: &str) -> Result<SubmissionView, RefereeError> {
        let state = self.state.read().unwrap();
        let submission = state
            .submissions
            .get(id)
            .ok_or_else(|| RefereeError::NotFound(format!("submission `{id}`")))?
            .clone();
        let record = state.current.get(id);
        let mut view = SubmissionView {
            submission,
            score_record: None,
            latency_ms: None,
            latency_limit_ms: None,
        };
        match view.submission.status {
            Status::Scored => view.score_record = record.cloned(),
            Status::LatencyRejected => {
                view.latency_ms = record.map(|r| r.latency_ms);
                view.latency_limit_ms = record.map(|r| r.latency_limit_ms);
            }
            _ => {}
        }
        Ok(view)
    }

    pub fn submissions(&self) -> Vec<Submission> {
        self.state.read().unwrap().submissions.values().cloned().collect()
    }

    pub fn graph(&self, id: &str) -> Result<ComputationGraph, RefereeError> {
        let graph_ref = self.status(id)?.submission.graph_ref;
        self.store.load_graph(&graph_ref)
    }

    fn alloc_run(&self, state: &mut State, track: Option<Track>, ids: Vec<String>, skipped: usize) -> Result<RunReport, RefereeError> {
        state.next_run += 1;
        let report = RunReport {
            run_id: format!("run-{:06}", state.next_run),
            track,
            state: RunState::Running,
            started_at: self.stamp(),
            finished_at: None,
            submission_ids: ids,
            scored: 0,
            rejected: 0,
            failed: 0,
            skipped,
        };
        self.store.save_run(&report)?;
        state.claimed.extend(report.submission_ids.iter().cloned());
        state.runs.insert(report.run_id.clone(), report.clone());
        Ok(report)
    }

    fn finish_run(&self, run_id: &str, tally: Tally) -> Result<RunReport, RefereeError> {
        let mut state = self.state.write().unwrap();
        let mut report = state.runs[run_id].clone();
        report.state = RunState::Completed;
        report.finished_at = Some(self.stamp());
        report.scored = tally.scored;
        report.rejected = tally.rejected;
        report.failed = tally.failed;
        for id in &report.submission_ids {
            state.claimed.remove(id);
        }
        self.store.save_run(&report)?;
        state.runs.insert(run_id.to_string(), report.clone());
        Ok(report)
    }

    /// Claims every pending submission (on `track`, if given) whose track has
    /// a setup and records a running report. Later submissions are not part
    /// of this run.
    pub fn begin_run(&self, track: Option<Track>) -> Result<RunReport, RefereeError> {
        let setups: BTreeSet<Track> = self.setups.read().unwrap().keys().copied().collect();
        let mut state = self.state.write().unwrap();
        let pending: Vec<&Submission> = state
            .submissions
            .values()
            .filter(|s| s.status == Status::Submitted && !state.claimed.contains(&s.id))
            .filter(|s| track.is_none_or(|t| s.track == t))
            .collect();
        let ids: Vec<String> = pending
            .iter()
            .filter(|s| setups.contains(&s.track))
            .map(|s| s.id.clone())
            .collect();
        let skipped = pending.len() - ids.len();
        self.alloc_run(&mut state, track, ids, skipped)
    }

    /// Evaluates the submissions claimed by `begin_run` on the configured
    /// number of workers.
    pub fn execute_run(&self, run_id: &str) -> Result<RunReport, RefereeError> {
        let report = self.run_report(run_id)?;
        if report.state != RunState::Running {
            return Err(RefereeError::InvalidRequest(format!("run {run_id} is not running")));
        }
        let ids = &report.submission_ids;
        let next = AtomicUsize::new(0);
        let tally = Mutex::new(Tally::default());
        let workers = self.options.workers.clamp(1, ids.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(id) = ids.get(i) else { break };
                    let status = self
                        .evaluate_claimed(id, run_id, false)
                        .unwrap_or(Status::Failed);
                    tally.lock().unwrap().add(status);
                });
            }
        });
        self.finish_run(run_id, tally.into_inner().unwrap())
    }

    pub fn run_batch(&self, track: Option<Track>) -> Result<RunReport, RefereeError> {
        let report = self.begin_run(track)?;
        self.execute_run(&report.run_id)
    }

    /// Evaluates one submission in its own run. A terminal submission is only
    /// evaluated again with `reevaluate`; if that fails the earlier result is
    /// kept.
    pub fn evaluate_submission(&self, id: &str, reevaluate: bool) -> Result<SubmissionView, RefereeError> {
        let (run_id, again) = {
            let mut state = self.state.write().unwrap();
            let s = state
                .submissions
                .get(id)
                .ok_or_else(|| RefereeError::NotFound(format!("submission `{id}`")))?;
            let status = s.status;
            if state.claimed.contains(id) || (status.is_terminal() && !reevaluate) {
                return Err(RefereeError::StateConflict {
                    id: id.to_string(),
                    status,
                });
            }
            if self.setup(s.track).is_none() {
                return Err(RefereeError::NoBundle(s.track));
            }
            let track = Some(s.track);
            let report = self.alloc_run(&mut state, track, vec![id.to_string()], 0)?;
            (report.run_id, status.is_terminal())
        };
        let mut tally = Tally::default();
        let outcome = self.evaluate_claimed(id, &run_id, again);
        tally.add(*outcome.as_ref().unwrap_or(&Status::Failed));
        self.finish_run(&run_id, tally)?;
        outcome?;
        self.status(id)
    }

    fn set_stage(&self, id: &str, stage: Status) {
        let mut state = self.state.write().unwrap();
        let s = state.submissions.get_mut(id).expect("claimed submission exists");
        debug_assert!(s.status.can_transition_to(stage), "{} -> {stage}", s.status);
        s.status = stage;
    }

    /// Runs the pipeline for a claimed submission and commits the outcome.
    fn evaluate_claimed(&self, id: &str, run_id: &str, again: bool) -> Result<Status, RefereeError> {
        let before = self.state.read().unwrap().submissions[id].clone();
        let setup = self.setup(before.track).ok_or(RefereeError::NoBundle(before.track))?;
        let result = self.store.load_graph(&before.graph_ref).and_then(|graph| {
            let mut on_stage = |stage: Status| {
                if !again {
                    self.set_stage(id, stage);
                }
            };
            Ok(evaluate_graph(&graph, &setup, self.options.profile_runs, &mut on_stage))
        });
        let committed = match result {
            Ok(Ok(eval)) => self.commit(&before, &setup, run_id, eval),
            Ok(Err(e)) if again => Err(RefereeError::ReevaluationFailed {
                id: id.to_string(),
                reason: e.to_string(),
            }),
            Ok(Err(e)) => self.commit_failure(&before, e.to_string()),
            Err(e) => Err(e),
        };
        if committed.is_err() {
            self.state
                .write()
                .unwrap()
                .submissions
                .insert(id.to_string(), before);
        }
        committed
    }

    fn commit(&self, before: &Submission, setup: &EvalSetup, run_id: &str, eval: Evaluation) -> Result<Status, RefereeError> {
        let status = eval.status();
        let record = ScoreRecord {
            submission_id: before.id.clone(),
            team: before.team.clone(),
            track: before.track,
            submitted_at: before.submitted_at,
            device: setup.device.name.clone(),
            latency_ms: eval.latency_ms,
            latency_limit_ms: setup.config.latency_limit_ms,
            gate: eval.gate,
            metric_value: eval.metric_value,
            final_score: eval.final_score,
            details: eval.details,
            evaluated_at: self.stamp(),
            eval_run_id: run_id.to_string(),
        };
        self.store.save_record(&record)?;
        let hook = self.commit_hook.read().unwrap().clone();
        if let Some(hook) = hook {
            hook(&before.id);
        }
        let mut after = before.clone();
        after.status = status;
        after.failure_reason = None;
        after.record_run = Some(run_id.to_string());
        self.store.save_submission(&after)?;

        let mut state = self.state.write().unwrap();
        state.submissions.insert(after.id.clone(), after);
        state.current.insert(record.submission_id.clone(), record);
        Ok(status)
    }

    fn commit_failure(&self, before: &Submission, reason: String) -> Result<Status, RefereeError> {
        let mut after = before.clone();
        after.status = Status::Failed;
        after.failure_reason = Some(reason);
        self.store.save_submission(&after)?;
        self.state
            .write()
            .unwrap()
            .submissions
            .insert(after.id.clone(), after);
        Ok(Status::Failed)
    }

    pub fn run_report(&self, run_id: &str) -> Result<RunReport, RefereeError> {
        self.state
            .read()
            .unwrap()
            .runs
            .get(run_id)
            .cloned()
            .ok_or_else(|| RefereeError::NotFound(format!("run `{run_id}`")))
    }

    pub fn runs(&self) -> Vec<RunReport> {
        self.state.read().unwrap().runs.values().cloned().collect()
    }

    pub fn leaderboard(&self, track: Track) -> Vec<LeaderboardEntry> {
        leaderboard_from_records(self.state.read().unwrap().current.values(), track)
    }

    pub fn score_history(&self, team: &str, track: Track) -> Result<ScoreHistory, RefereeError> {
        let state = self.state.read().unwrap();
        if !state.submissions.values().any(|s| s.team == team) {
            return Err(RefereeError::NotFound(format!("team `{team}`")));
        }
        Ok(history_from_records(state.current.values(), team, track))
    }

    /// Every record file in the store, including superseded ones.
    pub fn raw_records(&self) -> Result<Vec<ScoreRecord>, RefereeError> {
        self.store.raw_records()
    }

    pub fn store_dir(&self) -> &Path {
        self.store.root()
    }
}
