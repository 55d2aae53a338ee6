//! Leaderboard and history as pure folds over score records.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use super::types::{HistoryPoint, LeaderboardEntry, ScoreHistory, ScoreRecord};
use crate::metrics::Track;

/// The latest record of each submission; earlier ones were superseded by
/// re-evaluation.
pub fn current_records<'a>(records: impl IntoIterator<Item = &'a ScoreRecord>) -> Vec<&'a ScoreRecord> {
    let mut latest: BTreeMap<&str, &ScoreRecord> = BTreeMap::new();
    for r in records {
        let newer = latest.get(r.submission_id.as_str()).is_none_or(|cur| {
            (r.evaluated_at, &r.eval_run_id) > (cur.evaluated_at, &cur.eval_run_id)
        });
        if newer {
            latest.insert(&r.submission_id, r);
        }
    }
    latest.into_values().collect()
}

/// Higher score first, then lower latency, then earlier submission.
fn rank_order(a: &ScoreRecord, b: &ScoreRecord) -> Ordering {
    let (sa, sb) = (a.final_score.unwrap(), b.final_score.unwrap());
    sb.total_cmp(&sa)
        .then(a.latency_ms.total_cmp(&b.latency_ms))
        .then(a.submitted_at.cmp(&b.submitted_at))
        .then(a.submission_id.cmp(&b.submission_id))
}

/// Best scored submission per team on `track`, ranked.
pub fn leaderboard_from_records<'a>(
    records: impl IntoIterator<Item = &'a ScoreRecord>,
    track: Track,
) -> Vec<LeaderboardEntry> {
    let mut best: BTreeMap<&str, &ScoreRecord> = BTreeMap::new();
    for r in current_records(records) {
        if r.track != track || r.final_score.is_none() {
            continue;
        }
        let better = best
            .get(r.team.as_str())
            .is_none_or(|cur| rank_order(r, cur) == Ordering::Less);
        if better {
            best.insert(&r.team, r);
        }
    }
    let mut winners: Vec<&ScoreRecord> = best.into_values().collect();
    winners.sort_by(|a, b| rank_order(a, b).then(a.team.cmp(&b.team)));
    winners
        .into_iter()
        .enumerate()
        .map(|(i, r)| LeaderboardEntry {
            rank: i + 1,
            team: r.team.clone(),
            track,
            best_final_score: r.final_score.unwrap(),
            best_submission_id: r.submission_id.clone(),
            latency_ms: r.latency_ms,
            last_improved_at: r.evaluated_at,
        })
        .collect()
}

/// Every scored result of `team` on `track` in evaluation order.
pub fn history_from_records<'a>(
    records: impl IntoIterator<Item = &'a ScoreRecord>,
    team: &str,
    track: Track,
) -> ScoreHistory {
    let mut points: Vec<HistoryPoint> = current_records(records)
        .into_iter()
        .filter(|r| r.team == team && r.track == track)
        .filter_map(|r| {
            r.final_score.map(|final_score| HistoryPoint {
                evaluated_at: r.evaluated_at,
                final_score,
                submission_id: r.submission_id.clone(),
            })
        })
        .collect();
    points.sort_by(|a, b| (a.evaluated_at, &a.submission_id).cmp(&(b.evaluated_at, &b.submission_id)));
    ScoreHistory {
        team: team.to_string(),
        track,
        points,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::referee::types::Gate;
    use chrono::{DateTime, Duration, Utc};

    fn t(secs: i64) -> DateTime<Utc> {
        DateTime::from_timestamp(1_750_000_000 + secs, 0).unwrap()
    }

    fn record(id: &str, team: &str, score: Option<f64>, latency: f64, at: i64) -> ScoreRecord {
        ScoreRecord {
            submission_id: id.into(),
            team: team.into(),
            track: Track::Classification,
            submitted_at: t(at) - Duration::seconds(1000),
            device: "sd8-elite-sim".into(),
            latency_ms: latency,
            latency_limit_ms: 10.0,
            gate: if score.is_some() { Gate::Pass } else { Gate::Fail },
            metric_value: score,
            final_score: score,
            details: None,
            evaluated_at: t(at),
            eval_run_id: "run-000001".into(),
        }
    }

    #[test]
    fn table_one_ordering() {
        let rs = [
            record("s1", "c", Some(0.951), 1.5, 1),
            record("s2", "a", Some(0.974), 1.6, 2),
            record("s3", "b", Some(0.959), 1.8, 3),
            record("s4", "a", Some(0.5), 1.0, 4),
        ];
        let board = leaderboard_from_records(&rs, Track::Classification);
        let order: Vec<(&str, usize, f64)> = board
            .iter()
            .map(|e| (e.team.as_str(), e.rank, e.best_final_score))
            .collect();
        assert_eq!(order, vec![("a", 1, 0.974), ("b", 2, 0.959), ("c", 3, 0.951)]);
        assert_eq!(board[0].best_submission_id, "s2");
    }

    #[test]
    fn ties_break_on_latency_then_submission_time() {
        let mut slow = record("s1", "slow", Some(0.8), 30.3, 1);
        let fast = record("s2", "fast", Some(0.8), 24.7, 2);
        let board = leaderboard_from_records([&slow, &fast], Track::Classification);
        assert_eq!(board[0].team, "fast");
        slow.latency_ms = 24.7;
        let board = leaderboard_from_records([&fast, &slow], Track::Classification);
        assert_eq!(board[0].team, "slow", "earlier submission wins a full tie");
    }

    #[test]
    fn rejected_only_team_is_absent() {
        let rs = [record("s1", "gone", None, 12.0, 1), record("s2", "here", Some(0.1), 1.0, 2)];
        let board = leaderboard_from_records(&rs, Track::Classification);
        assert_eq!(board.len(), 1);
        assert_eq!(board[0].team, "here");
        assert!(leaderboard_from_records(&rs, Track::Depth).is_empty());
    }

    #[test]
    fn history_keeps_dips_and_superseded_records_drop_out() {
        let mut rs: Vec<ScoreRecord> = [0.5, 0.7, 0.6, 0.9]
            .iter()
            .enumerate()
            .map(|(i, &s)| record(&format!("s{i}"), "t", Some(s), 1.0, i as i64))
            .collect();
        let h = history_from_records(&rs, "t", Track::Classification);
        let scores: Vec<f64> = h.points.iter().map(|p| p.final_score).collect();
        assert_eq!(scores, vec![0.5, 0.7, 0.6, 0.9]);

        let mut redo = rs[0].clone();
        redo.evaluated_at = t(10);
        redo.eval_run_id = "run-000002".into();
        rs.push(redo);
        assert_eq!(current_records(&rs).len(), 4);
        let h = history_from_records(&rs, "t", Track::Classification);
        assert_eq!(h.points.last().unwrap().submission_id, "s0");
        assert!(history_from_records(&rs, "other", Track::Classification).points.is_empty());
    }
}
