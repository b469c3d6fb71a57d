//! On-disk session layout: one directory per session holding the batch,
//! an append-only judgment log and an atomically replaced metadata file.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use nelaudit_core::{Batch, Judgment, JudgmentLog};
use serde::{Deserialize, Serialize};

const BATCH_FILE: &str = "batch.jsonl";
const LOG_FILE: &str = "judgments.jsonl";
const META_FILE: &str = "session.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub corpus_hash: String,
    pub cursor: usize,
    pub created_at: DateTime<Utc>,
    pub last_saved_at: DateTime<Utc>,
}

pub struct StoredSession {
    pub meta: SessionMeta,
    pub batch: Batch,
    pub log: JudgmentLog,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, session_id: &str) -> PathBuf {
        self.root.join(session_id)
    }

    /// Writes a new session. The metadata file goes last, so a crash part
    /// way through leaves a directory that [`Store::load_all`] skips.
    pub fn create(&self, meta: &SessionMeta, batch: &Batch) -> io::Result<()> {
        let dir = self.dir(&meta.session_id);
        fs::create_dir_all(&dir)?;
        write_synced(&dir.join(BATCH_FILE), batch.to_jsonl().as_bytes())?;
        File::create(dir.join(LOG_FILE))?.sync_all()?;
        self.save_meta(meta)
    }

    /// Appends judgments and flushes them to disk before returning.
    pub fn append(&self, session_id: &str, judgments: &[Judgment]) -> io::Result<()> {
        if judgments.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for j in judgments {
            buf.push_str(&serde_json::to_string(j).map_err(io::Error::other)?);
            buf.push('\n');
        }
        let mut file = OpenOptions::new()
            .append(true)
            .create(true)
            .open(self.dir(session_id).join(LOG_FILE))?;
        file.write_all(buf.as_bytes())?;
        file.sync_data()
    }

    pub fn save_meta(&self, meta: &SessionMeta) -> io::Result<()> {
        let dir = self.dir(&meta.session_id);
        let tmp = dir.join(format!("{META_FILE}.tmp"));
        let bytes = serde_json::to_vec_pretty(meta).map_err(io::Error::other)?;
        write_synced(&tmp, &bytes)?;
        fs::rename(&tmp, dir.join(META_FILE))?;
        File::open(&dir)?.sync_all()
    }

    pub fn load_all(&self) -> io::Result<Vec<StoredSession>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let dir = entry?.path();
            if !dir.join(META_FILE).is_file() {
                continue;
            }
            match load_one(&dir) {
                Ok(s) => out.push(s),
                Err(e) => tracing::warn!(dir = %dir.display(), error = %e, "skipping unreadable session"),
            }
        }
        out.sort_by_key(|s| s.meta.created_at);
        Ok(out)
    }
}

fn write_synced(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = File::create(path)?;
    f.write_all(bytes)?;
    f.sync_all()
}

fn invalid(e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

fn load_one(dir: &Path) -> io::Result<StoredSession> {
    let meta: SessionMeta = serde_json::from_slice(&fs::read(dir.join(META_FILE))?).map_err(invalid)?;
    let batch = Batch::parse(&fs::read_to_string(dir.join(BATCH_FILE))?).map_err(invalid)?;
    let text = match fs::read_to_string(dir.join(LOG_FILE)) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e),
    };
    let mut log = JudgmentLog::new();
    let lines: Vec<&str> = text.split('\n').filter(|l| !l.trim().is_empty()).collect();
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<Judgment>(line) {
            Ok(j) => log.push(j),
            // A torn final line is an append that never got acknowledged.
            Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => {
                tracing::warn!(dir = %dir.display(), "dropping torn trailing log line");
            }
            Err(e) => return Err(invalid(format!("{LOG_FILE} line {}: {e}", i + 1))),
        }
    }
    Ok(StoredSession { meta, batch, log })
}
