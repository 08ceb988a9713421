//! On-disk session store: one directory per session holding `events.jsonl`
//! (append-only) and `snapshot.json` (replaced atomically).

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::session::{Session, SessionEvent};
use crate::SessionError;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("invalid session id {0:?}")]
    BadId(String),
    #[error("session {0} does not exist")]
    NotFound(String),
    #[error("session {0} already exists")]
    Exists(String),
    #[error("replaying session {id}: {source}")]
    Replay {
        id: String,
        #[source]
        source: SessionError,
    },
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Io { .. } => "store_io",
            StoreError::Corrupt { .. } => "store_corrupt",
            StoreError::BadId(_) => "invalid_session_id",
            StoreError::NotFound(_) => "session_not_found",
            StoreError::Exists(_) => "session_exists",
            StoreError::Replay { .. } => "replay_failed",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    session: Session,
}

/// Session ids are used as directory names.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
    /// Write a snapshot every this many events; completion always writes one.
    snapshot_every: u64,
}

impl SessionStore {
    /// Open (creating if needed) a store rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<SessionStore, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        let probe = tempfile::NamedTempFile::new_in(&root).map_err(io_err(&root))?;
        drop(probe);
        Ok(SessionStore {
            root,
            snapshot_every: 16,
        })
    }

    pub fn with_snapshot_every(mut self, n: u64) -> Self {
        self.snapshot_every = n.max(1);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::BadId(id.to_string()));
        }
        Ok(self.root.join(id))
    }

    /// Reserve the next free `session-NNNN` id by creating its directory.
    pub fn allocate_id(&self) -> Result<String, StoreError> {
        let mut n = self.list()?.len() + 1;
        loop {
            let id = format!("session-{n:04}");
            let dir = self.root.join(&id);
            match fs::create_dir(&dir) {
                Ok(()) => return Ok(id),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(io_err(&dir)(e)),
            }
        }
    }

    /// Persist a new session from its creation event. The directory may have
    /// been reserved by [`allocate_id`](Self::allocate_id) but must hold no log.
    pub fn create(&self, session: &Session, created: &SessionEvent) -> Result<(), StoreError> {
        let dir = self.dir(&session.id)?;
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let log = dir.join(EVENTS_FILE);
        if log.exists() {
            return Err(StoreError::Exists(session.id.clone()));
        }
        self.append_lines(&log, std::slice::from_ref(created))?;
        self.write_snapshot(session)
    }

    /// Append events already applied to `session`.
    pub fn append(&self, session: &Session, events: &[SessionEvent]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let dir = self.dir(&session.id)?;
        let log = dir.join(EVENTS_FILE);
        if !log.exists() {
            return Err(StoreError::NotFound(session.id.clone()));
        }
        self.append_lines(&log, events)?;
        let crossed = events.iter().any(|e| (e.seq + 1) % self.snapshot_every == 0);
        if crossed || session.document.is_some() {
            self.write_snapshot(session)?;
        }
        Ok(())
    }

    fn append_lines(&self, log: &Path, events: &[SessionEvent]) -> Result<(), StoreError> {
        let mut buf = String::new();
        for e in events {
            buf.push_str(&serde_json::to_string(e).expect("events serialize"));
            buf.push('\n');
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(log)
            .map_err(io_err(log))?;
        f.write_all(buf.as_bytes()).map_err(io_err(log))?;
        f.sync_data().map_err(io_err(log))
    }

    /// Replace the snapshot via write-to-temp and rename.
    pub fn write_snapshot(&self, session: &Session) -> Result<(), StoreError> {
        let dir = self.dir(&session.id)?;
        let path = dir.join(SNAPSHOT_FILE);
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
        let body = serde_json::to_vec(&Snapshot {
            session: session.clone(),
        })
        .expect("sessions serialize");
        tmp.write_all(&body).map_err(io_err(tmp.path()))?;
        tmp.as_file().sync_data().map_err(io_err(&path))?;
        tmp.persist(&path).map_err(|e| io_err(&path)(e.error))?;
        Ok(())
    }

    pub fn events(&self, id: &str) -> Result<Vec<SessionEvent>, StoreError> {
        let log = self.dir(id)?.join(EVENTS_FILE);
        let text = match fs::read_to_string(&log) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_string())),
            Err(e) => return Err(io_err(&log)(e)),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| StoreError::Corrupt {
                    path: log.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    /// Rebuild a session from its full event log, ignoring the snapshot.
    pub fn replay(&self, id: &str) -> Result<Session, StoreError> {
        let events = self.events(id)?;
        Session::replay(&events).map_err(|source| StoreError::Replay {
            id: id.to_string(),
            source,
        })
    }

    /// Load from the snapshot and apply any later events.
    pub fn load(&self, id: &str) -> Result<Session, StoreError> {
        let events = self.events(id)?;
        let path = self.dir(id)?.join(SNAPSHOT_FILE);
        let snapshot = match fs::read(&path) {
            Ok(bytes) => match serde_json::from_slice::<Snapshot>(&bytes) {
                Ok(s) => Some(s.session),
                Err(e) => {
                    tracing::warn!(path = %path.display(), error = %e, "unreadable snapshot, replaying log");
                    None
                }
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(io_err(&path)(e)),
        };
        let replay_err = |source| StoreError::Replay {
            id: id.to_string(),
            source,
        };
        match snapshot {
            Some(mut session) if session.next_seq as usize <= events.len() => {
                for e in &events[session.next_seq as usize..] {
                    session.apply(e).map_err(replay_err)?;
                }
                Ok(session)
            }
            _ => Session::replay(&events).map_err(replay_err),
        }
    }

    /// Ids of sessions with an event log, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if valid_id(&name) && entry.path().is_dir() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }
}
