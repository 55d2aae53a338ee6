use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::metrics::{DepthEvalResult, SegEvalResult, Track};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    Submitted,
    Compiling,
    Profiling,
    LatencyRejected,
    Inferring,
    Scoring,
    Scored,
    Failed,
}

impl Status {
    pub const ALL: [Status; 8] = [
        Status::Submitted,
        Status::Compiling,
        Status::Profiling,
        Status::LatencyRejected,
        Status::Inferring,
        Status::Scoring,
        Status::Scored,
        Status::Failed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, Status::LatencyRejected | Status::Scored | Status::Failed)
    }

    pub fn can_transition_to(self, next: Status) -> bool {
        use Status::*;
        match (self, next) {
            (Submitted, Compiling)
            | (Compiling, Profiling)
            | (Profiling, LatencyRejected)
            | (Profiling, Inferring)
            | (Inferring, Scoring)
            | (Scoring, Scored) => true,
            (from, Failed) => !from.is_terminal(),
            _ => false,
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub id: String,
    pub team: String,
    pub track: Track,
    /// Stored graph, relative to the store root.
    pub graph_ref: String,
    pub submitted_at: DateTime<Utc>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    /// Run whose record is the current result of this submission.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_run: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gate {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreDetails {
    Classification { correct: Vec<bool> },
    Segmentation(SegEvalResult),
    Depth { items: Vec<DepthEvalResult> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub submission_id: String,
    pub team: String,
    pub track: Track,
    pub submitted_at: DateTime<Utc>,
    pub device: String,
    pub latency_ms: f64,
    pub latency_limit_ms: f64,
    pub gate: Gate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<ScoreDetails>,
    pub evaluated_at: DateTime<Utc>,
    pub eval_run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub team: String,
    pub track: Track,
    pub best_final_score: f64,
    pub best_submission_id: String,
    pub latency_ms: f64,
    pub last_improved_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub evaluated_at: DateTime<Utc>,
    pub final_score: f64,
    pub submission_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistory {
    pub team: String,
    pub track: Track,
    pub points: Vec<HistoryPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Completed,
    /// The process stopped before the run finished.
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<Track>,
    pub state: RunState,
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    pub submission_ids: Vec<String>,
    pub scored: usize,
    pub rejected: usize,
    pub failed: usize,
    /// Pending submissions left alone because their track has no bundle.
    pub skipped: usize,
}

/// What a status query returns: the submission, its record once scored, and
/// the latency verdict once rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionView {
    pub submission: Submission,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_record: Option<ScoreRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_limit_ms: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_table() {
        use Status::*;
        let allowed = [
            (Submitted, Compiling),
            (Compiling, Profiling),
            (Profiling, LatencyRejected),
            (Profiling, Inferring),
            (Inferring, Scoring),
            (Scoring, Scored),
            (Submitted, Failed),
            (Compiling, Failed),
            (Profiling, Failed),
            (Inferring, Failed),
            (Scoring, Failed),
        ];
        for from in Status::ALL {
            for to in Status::ALL {
                assert_eq!(
                    from.can_transition_to(to),
                    allowed.contains(&(from, to)),
                    "{from} -> {to}"
                );
            }
        }
    }

    #[test]
    fn scored_is_only_reachable_through_profiling_and_inferring() {
        // breadth-first over the transition relation with those states removed
        let mut seen = vec![Status::Submitted];
        let mut frontier = vec![Status::Submitted];
        while let Some(s) = frontier.pop() {
            for next in Status::ALL {
                let skipped = matches!(next, Status::Profiling | Status::Inferring);
                if !skipped && s.can_transition_to(next) && !seen.contains(&next) {
                    seen.push(next);
                    frontier.push(next);
                }
            }
        }
        assert!(!seen.contains(&Status::Scored));
    }

    #[test]
    fn terminal_states_have_no_exits() {
        for from in Status::ALL.into_iter().filter(|s| s.is_terminal()) {
            assert!(Status::ALL.iter().all(|&to| !from.can_transition_to(to)));
        }
    }
}
