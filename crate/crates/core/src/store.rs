//! Durable storage for student models and sessions.
//!
//! A commit writes the session record first, carrying the post-event model
//! snapshot, then the model document. A crash between the two is repaired by
//! [`recover`], which promotes any snapshot newer than the stored model.
//! Every file write is atomic (temp file, fsync, rename).

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::orchestrator::{OutboundMessage, Session};
use crate::student::StudentModel;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt record {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("`{0}` is not a valid id (letters, digits, `-` and `_` only)")]
    InvalidId(String),
}

/// A session plus what the service needs to survive restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session: Session,
    pub created_at: u64,
    /// Replies already acked, by client event id.
    #[serde(default)]
    pub processed: IndexMap<String, Vec<OutboundMessage>>,
    /// The student model as of the last event that changed it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_snapshot: Option<StudentModel>,
}

pub trait Store: Send + Sync {
    fn load_model(&self, student_id: &str) -> Result<Option<StudentModel>, StoreError>;
    fn save_model(&self, model: &StudentModel) -> Result<(), StoreError>;
    fn load_session(&self, session_id: &str) -> Result<Option<SessionRecord>, StoreError>;
    fn save_session(&self, record: &SessionRecord) -> Result<(), StoreError>;
    fn session_ids(&self) -> Result<Vec<String>, StoreError>;
}

/// Ordering key for snapshots of one student's model. Every observation
/// either adds an attempt or queues a pending entry, so it only grows.
pub fn model_version(model: &StudentModel) -> u64 {
    model.total_attempts() + model.pending.len() as u64
}

pub fn validate_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

/// Promotes session snapshots newer than the stored model. Returns how many
/// models were rewritten.
pub fn recover(store: &dyn Store) -> Result<usize, StoreError> {
    let mut newest: HashMap<String, StudentModel> = HashMap::new();
    for id in store.session_ids()? {
        let Some(snapshot) = store.load_session(&id)?.and_then(|r| r.model_snapshot) else {
            continue;
        };
        let keep = newest
            .get(&snapshot.student_id)
            .is_none_or(|m| model_version(m) < model_version(&snapshot));
        if keep {
            newest.insert(snapshot.student_id.clone(), snapshot);
        }
    }
    let mut repaired = 0;
    for (student, snapshot) in newest {
        let stored = store.load_model(&student)?;
        if stored.is_none_or(|m| model_version(&m) < model_version(&snapshot)) {
            store.save_model(&snapshot)?;
            repaired += 1;
        }
    }
    Ok(repaired)
}

/// One JSON file per record under `root/models` and `root/sessions`.
#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["models", "sessions"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn model_path(&self, student_id: &str) -> PathBuf {
        self.root.join("models").join(format!("{student_id}.json"))
    }

    pub fn session_path(&self, session_id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{session_id}.json"))
    }

    fn read<T: DeserializeOwned>(&self, path: &Path) -> Result<Option<T>, StoreError> {
        match fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| StoreError::Corrupt {
                path: path.display().to_string(),
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(path)(e)),
        }
    }

    fn write<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), StoreError> {
        let dir = path.parent().expect("record paths have a parent");
        let body = serde_json::to_vec_pretty(value).expect("records serialize");
        let mut tmp = NamedTempFile::new_in(dir).map_err(io_err(dir))?;
        tmp.write_all(&body).map_err(io_err(path))?;
        tmp.as_file().sync_all().map_err(io_err(path))?;
        tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
        Ok(())
    }
}

impl Store for FileStore {
    fn load_model(&self, student_id: &str) -> Result<Option<StudentModel>, StoreError> {
        validate_id(student_id)?;
        self.read(&self.model_path(student_id))
    }

    fn save_model(&self, model: &StudentModel) -> Result<(), StoreError> {
        validate_id(&model.student_id)?;
        self.write(&self.model_path(&model.student_id), model)
    }

    fn load_session(&self, session_id: &str) -> Result<Option<SessionRecord>, StoreError> {
        validate_id(session_id)?;
        self.read(&self.session_path(session_id))
    }

    fn save_session(&self, record: &SessionRecord) -> Result<(), StoreError> {
        validate_id(&record.session.session_id)?;
        self.write(&self.session_path(&record.session.session_id), record)
    }

    fn session_ids(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("sessions");
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".json").map(str::to_string)
            })
            .filter(|id| validate_id(id).is_ok())
            .collect();
        ids.sort();
        Ok(ids)
    }
}

/// In-process store for tests and `--offline` demos.
#[derive(Debug, Default)]
pub struct MemoryStore {
    models: Mutex<HashMap<String, String>>,
    sessions: Mutex<IndexMap<String, String>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

fn decode<T: DeserializeOwned>(id: &str, text: &str) -> Result<T, StoreError> {
    serde_json::from_str(text).map_err(|e| StoreError::Corrupt {
        path: id.to_string(),
        reason: e.to_string(),
    })
}

impl Store for MemoryStore {
    fn load_model(&self, student_id: &str) -> Result<Option<StudentModel>, StoreError> {
        let models = self.models.lock().expect("store lock");
        models.get(student_id).map(|t| decode(student_id, t)).transpose()
    }

    fn save_model(&self, model: &StudentModel) -> Result<(), StoreError> {
        let text = serde_json::to_string(model).expect("models serialize");
        self.models
            .lock()
            .expect("store lock")
            .insert(model.student_id.clone(), text);
        Ok(())
    }

    fn load_session(&self, session_id: &str) -> Result<Option<SessionRecord>, StoreError> {
        let sessions = self.sessions.lock().expect("store lock");
        sessions.get(session_id).map(|t| decode(session_id, t)).transpose()
    }

    fn save_session(&self, record: &SessionRecord) -> Result<(), StoreError> {
        let text = serde_json::to_string(record).expect("records serialize");
        self.sessions
            .lock()
            .expect("store lock")
            .insert(record.session.session_id.clone(), text);
        Ok(())
    }

    fn session_ids(&self) -> Result<Vec<String>, StoreError> {
        Ok(self.sessions.lock().expect("store lock").keys().cloned().collect())
    }
}
