//! On-disk layout under `<data>/store`:
//!
//! ```text
//! submissions/<id>.json        current state of each submission
//! graphs/<id>.json             submitted graph
//! records/<run-id>/<id>.json   score records, never rewritten
//! runs/<run-id>.json           run reports
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::types::{RunReport, ScoreRecord, Submission};
use super::RefereeError;
use crate::ir::{parse_graph, to_json, ComputationGraph};

const TMP_SUFFIX: &str = ".tmp";

fn storage(path: &Path, e: impl std::fmt::Display) -> RefereeError {
    RefereeError::Storage(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone)]
pub(crate) struct Store {
    root: PathBuf,
}

/// Everything found on disk when opening a store.
pub(crate) struct Loaded {
    pub submissions: Vec<Submission>,
    /// `(run id, record)` for every record file.
    pub records: Vec<(String, ScoreRecord)>,
    pub runs: Vec<RunReport>,
}

impl Store {
    pub fn open(root: PathBuf) -> Result<Self, RefereeError> {
        for dir in ["submissions", "graphs", "records", "runs"] {
            let d = root.join(dir);
            fs::create_dir_all(&d).map_err(|e| storage(&d, e))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), RefereeError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| storage(parent, e))?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(TMP_SUFFIX);
        let tmp = PathBuf::from(tmp);
        let mut f = fs::File::create(&tmp).map_err(|e| storage(&tmp, e))?;
        f.write_all(bytes).map_err(|e| storage(&tmp, e))?;
        f.sync_all().map_err(|e| storage(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| storage(path, e))?;
        if let Some(parent) = path.parent() {
            // directory fsync is best effort; not every platform allows it
            if let Ok(d) = fs::File::open(parent) {
                let _ = d.sync_all();
            }
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), RefereeError> {
        let text = serde_json::to_string_pretty(value).expect("store types serialize");
        self.write_atomic(path, text.as_bytes())
    }

    fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, RefereeError> {
        let text = fs::read_to_string(path).map_err(|e| storage(path, e))?;
        serde_json::from_str(&text).map_err(|e| storage(path, e))
    }

    pub fn graph_ref(id: &str) -> String {
        format!("graphs/{id}.json")
    }

    pub fn record_path(&self, run_id: &str, id: &str) -> PathBuf {
        self.root.join("records").join(run_id).join(format!("{id}.json"))
    }

    pub fn save_graph(&self, id: &str, graph: &ComputationGraph) -> Result<(), RefereeError> {
        self.write_atomic(&self.root.join(Self::graph_ref(id)), to_json(graph).as_bytes())
    }

    pub fn load_graph(&self, graph_ref: &str) -> Result<ComputationGraph, RefereeError> {
        let path = self.root.join(graph_ref);
        let text = fs::read_to_string(&path).map_err(|e| storage(&path, e))?;
        parse_graph(&text).map_err(|e| storage(&path, e))
    }

    pub fn save_submission(&self, s: &Submission) -> Result<(), RefereeError> {
        self.write_json(&self.root.join("submissions").join(format!("{}.json", s.id)), s)
    }

    pub fn save_record(&self, r: &ScoreRecord) -> Result<(), RefereeError> {
        self.write_json(&self.record_path(&r.eval_run_id, &r.submission_id), r)
    }

    pub fn remove_record(&self, run_id: &str, id: &str) -> Result<(), RefereeError> {
        let path = self.record_path(run_id, id);
        fs::remove_file(&path).map_err(|e| storage(&path, e))
    }

    pub fn save_run(&self, r: &RunReport) -> Result<(), RefereeError> {
        self.write_json(&self.root.join("runs").join(format!("{}.json", r.run_id)), r)
    }

    /// Reads every committed file; with `cleanup`, also deletes temporaries
    /// left by an interrupted write.
    pub fn load(&self, cleanup: bool) -> Result<Loaded, RefereeError> {
        let mut submissions = Vec::new();
        for path in self.json_files(cleanup, &self.root.join("submissions"))? {
            submissions.push(Self::read_json(&path)?);
        }
        self.json_files(cleanup, &self.root.join("graphs"))?;
        let mut runs = Vec::new();
        for path in self.json_files(cleanup, &self.root.join("runs"))? {
            runs.push(Self::read_json(&path)?);
        }
        let mut records = Vec::new();
        let records_dir = self.root.join("records");
        for entry in fs::read_dir(&records_dir).map_err(|e| storage(&records_dir, e))? {
            let dir = entry.map_err(|e| storage(&records_dir, e))?.path();
            if !dir.is_dir() {
                continue;
            }
            let run_id = dir.file_name().unwrap().to_string_lossy().into_owned();
            for path in self.json_files(cleanup, &dir)? {
                records.push((run_id.clone(), Self::read_json(&path)?));
            }
        }
        Ok(Loaded {
            submissions,
            records,
            runs,
        })
    }

    fn json_files(&self, cleanup: bool, dir: &Path) -> Result<Vec<PathBuf>, RefereeError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| storage(dir, e))? {
            let path = entry.map_err(|e| storage(dir, e))?.path();
            let name = path.file_name().unwrap().to_string_lossy();
            if name.ends_with(TMP_SUFFIX) {
                if !cleanup {
                    continue;
                }
                fs::remove_file(&path).map_err(|e| storage(&path, e))?;
            } else if name.ends_with(".json") {
                out.push(path);
            }
        }
        out.sort();
        Ok(out)
    }

    /// Reads every record file as stored, for offline recomputation.
    pub fn raw_records(&self) -> Result<Vec<ScoreRecord>, RefereeError> {
        Ok(self.load(false)?.records.into_iter().map(|(_, r)| r).collect())
    }
}
