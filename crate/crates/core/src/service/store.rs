//! On-disk layout of the service data directory.
//!
//! ```text
//! data/collections/<id>/collection.json   (+ images/ for uploads)
//! data/libraries/<library_id>/           prepare output
//! data/sessions/<id>/                    session.json, scene.json, presentation.json, ...
//! data/jobs/<job_id>.json
//! data/idempotency/<key hash>.json
//! ```
//!
//! Jobs write into a `.tmp-` sibling and rename into place when done, so an
//! existing library or session is never modified by a pipeline run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::json;

pub const COLLECTION_FILE: &str = "collection.json";
pub const LAYOUT_OPTIONS_FILE: &str = "layout.json";
pub const EXPORT_DIR: &str = "export";
const TMP_PREFIX: &str = ".tmp-";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionRecord {
    pub collection_id: String,
    /// Directory holding the photos.
    pub source: PathBuf,
    pub uploaded: bool,
    pub images: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_finished(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Prepare,
    Curate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobError {
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: f64,
    /// Collection id for prepare jobs, session id for curation jobs.
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<JobError>,
}

/// A stored response replayed for a repeated idempotency key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

pub fn short_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(&h.finalize()[..8])
}

/// Ids are embedded in paths, so only accept the characters we mint.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Store {
    pub fn open(root: &Path) -> Result<Store> {
        for sub in ["collections", "libraries", "sessions", "jobs", "idempotency"] {
            let d = root.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let store = Store {
            root: root.to_path_buf(),
        };
        store.sweep_tmp()?;
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Removes half-written outputs left by a previous process.
    fn sweep_tmp(&self) -> Result<()> {
        for sub in ["collections", "libraries", "sessions"] {
            let d = self.root.join(sub);
            for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
                let entry = entry.map_err(|e| Error::io(&d, e))?;
                if entry.file_name().to_string_lossy().starts_with(TMP_PREFIX) {
                    let _ = std::fs::remove_dir_all(entry.path());
                }
            }
        }
        Ok(())
    }

    pub fn collection_dir(&self, id: &str) -> PathBuf {
        self.root.join("collections").join(id)
    }

    pub fn library_dir(&self, id: &str) -> PathBuf {
        self.root.join("libraries").join(id)
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    fn job_file(&self, id: &str) -> PathBuf {
        self.root.join("jobs").join(format!("{id}.json"))
    }

    fn idempotency_file(&self, key: &str) -> PathBuf {
        self.root.join("idempotency").join(format!("{key}.json"))
    }

    /// Scratch directory next to `kind/`, renamed into place by [`Store::commit`].
    pub fn tmp_dir(&self, kind: &str, tag: &str) -> PathBuf {
        self.root.join(kind).join(format!("{TMP_PREFIX}{tag}"))
    }

    /// Moves `tmp` to `target` unless `target` already exists, in which case
    /// the fresh output is discarded.
    pub fn commit(&self, tmp: &Path, target: &Path) -> Result<()> {
        if target.exists() {
            let _ = std::fs::remove_dir_all(tmp);
            return Ok(());
        }
        std::fs::rename(tmp, target).map_err(|e| Error::io(target, e))
    }

    pub fn collection(&self, id: &str) -> Result<Option<CollectionRecord>> {
        if !is_safe_id(id) {
            return Ok(None);
        }
        let p = self.collection_dir(id).join(COLLECTION_FILE);
        if !p.is_file() {
            return Ok(None);
        }
        json::read_file(&p).map(Some)
    }

    pub fn has_library(&self, id: &str) -> bool {
        is_safe_id(id) && self.library_dir(id).join(crate::model::LIBRARY_FILE).is_file()
    }

    pub fn has_session(&self, id: &str) -> bool {
        is_safe_id(id) && self.session_dir(id).join(crate::curate::SESSION_FILE).is_file()
    }

    pub fn save_job(&self, job: &Job) -> Result<()> {
        json::write_file(&self.job_file(&job.job_id), job)
    }

    pub fn jobs(&self) -> Result<Vec<Job>> {
        let d = self.root.join("jobs");
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                out.push(json::read_file(&path)?);
            }
        }
        Ok(out)
    }

    pub fn stored_response(&self, key: &str) -> Option<StoredResponse> {
        json::read_file(&self.idempotency_file(key)).ok()
    }

    pub fn store_response(&self, key: &str, response: &StoredResponse) -> Result<()> {
        json::write_file(&self.idempotency_file(key), response)
    }

    fn count_dirs(&self, sub: &str) -> usize {
        std::fs::read_dir(self.root.join(sub))
            .map(|rd| {
                rd.filter_map(|e| e.ok())
                    .filter(|e| !e.file_name().to_string_lossy().starts_with(TMP_PREFIX))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn library_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = std::fs::read_dir(self.root.join("libraries"))
            .map(|rd| {
                rd.filter_map(|e| e.ok())
                    .map(|e| e.file_name().to_string_lossy().into_owned())
                    .filter(|n| !n.starts_with(TMP_PREFIX))
                    .collect()
            })
            .unwrap_or_default();
        ids.sort();
        ids
    }

    pub fn session_count(&self) -> usize {
        self.count_dirs("sessions")
    }

    pub fn collection_count(&self) -> usize {
        self.count_dirs("collections")
    }
}
