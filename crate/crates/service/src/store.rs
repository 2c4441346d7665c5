//! One append-only JSONL file per session.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use peer_agent_core::session::{parse_log, EventSink, ReplayError, Session, SessionEvent};
use tracing::{info, warn};

/// Appends events and fsyncs before returning. A failed append is rolled
/// back so the file never keeps a half-written batch.
pub struct FileSink {
    file: File,
    len: u64,
}

impl FileSink {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let len = file.metadata()?.len();
        Ok(Self { file, len })
    }
}

impl EventSink for FileSink {
    fn persist(&mut self, events: &[SessionEvent]) -> io::Result<()> {
        let mut buf = String::new();
        for event in events {
            buf.push_str(&event.to_json_line());
            buf.push('\n');
        }
        let result = self.file.write_all(buf.as_bytes()).and_then(|()| self.file.sync_data());
        match result {
            Ok(()) => {
                self.len += buf.len() as u64;
                Ok(())
            }
            Err(err) => {
                if let Err(e) = self.file.set_len(self.len) {
                    warn!(%e, "could not roll back partial append");
                }
                Err(err)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogStore {
    dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("event log io: {0}")]
    Io(#[from] io::Error),
    #[error("{path}: {source}")]
    Replay {
        path: String,
        #[source]
        source: ReplayError,
    },
}

impl LogStore {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn path_for(&self, session_id: &str) -> PathBuf {
        self.dir.join(format!("{session_id}.jsonl"))
    }

    pub fn sink(&self, session_id: &str) -> io::Result<FileSink> {
        FileSink::open(&self.path_for(session_id))
    }

    /// Rebuilds every stored session. A torn final line is cut off; a log
    /// that fails to replay is reported and left untouched on disk.
    pub fn load_all(&self) -> io::Result<Vec<Result<Session, StoreError>>> {
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        Ok(paths.iter().map(|p| load_file(p)).collect())
    }
}

/// Reads a log file, truncating a torn tail in place.
pub fn load_file(path: &Path) -> Result<Session, StoreError> {
    let text = fs::read_to_string(path)?;
    let replay_err = |source| StoreError::Replay { path: path.display().to_string(), source };
    let parsed = parse_log(&text).map_err(replay_err)?;
    if let Some(torn) = parsed.torn_tail {
        let keep = text.len() - torn;
        warn!(path = %path.display(), bytes = torn, "dropping torn final line");
        OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
    }
    let session = Session::from_log(parsed.events).map_err(replay_err)?;
    info!(session = session.id(), events = session.log().len(), "resumed session");
    Ok(session)
}

/// Events from a log file without modifying it.
pub fn read_events(path: &Path) -> Result<Vec<SessionEvent>, StoreError> {
    let text = fs::read_to_string(path)?;
    parse_log(&text)
        .map(|p| p.events)
        .map_err(|source| StoreError::Replay { path: path.display().to_string(), source })
}
