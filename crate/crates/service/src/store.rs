//! Append-only episode store: one JSONL file per suite plus `index.json`
//! locating every record by byte range.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use remove_core::runner::{EpisodeLog, Method, Outcome};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const INDEX: &str = "index.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt index: {0}")]
    Index(#[from] serde_json::Error),
    #[error("suite name {0:?} must be non-empty ASCII letters, digits, '-' or '_'")]
    BadName(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: u64,
    pub file: String,
    pub offset: u64,
    pub length: u64,
    pub scenario_id: String,
    pub method: Method,
    pub seed: u64,
    pub outcome: Outcome,
}

#[derive(Debug)]
pub struct LogStore {
    dir: PathBuf,
    entries: Vec<IndexEntry>,
}

impl LogStore {
    /// Opens (creating if needed) a store directory and reads its index.
    pub fn open(dir: impl AsRef<Path>) -> Result<LogStore, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let entries = match fs::read(dir.join(INDEX)) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(LogStore { dir, entries })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Appends one log to `<suite>.jsonl` and returns its record id.
    pub fn append(&mut self, suite: &str, log: &EpisodeLog) -> Result<u64, StoreError> {
        let valid = !suite.is_empty() && suite.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
        if !valid {
            return Err(StoreError::BadName(suite.to_string()));
        }
        let file = format!("{suite}.jsonl");
        let line = log.to_json_line();
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(&file))?;
        let offset = f.seek(SeekFrom::End(0))?;
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_data()?;
        let id = self.entries.last().map_or(1, |e| e.id + 1);
        self.entries.push(IndexEntry {
            id,
            file,
            offset,
            length: line.len() as u64,
            scenario_id: log.scenario_id.clone(),
            method: log.method,
            seed: log.seed,
            outcome: log.outcome,
        });
        self.write_index()?;
        Ok(id)
    }

    fn write_index(&self) -> Result<(), StoreError> {
        let tmp = self.dir.join("index.json.tmp");
        let mut f = File::create(&tmp)?;
        f.write_all(&serde_json::to_vec_pretty(&self.entries)?)?;
        f.sync_all()?;
        fs::rename(tmp, self.dir.join(INDEX))?;
        Ok(())
    }

    /// The stored JSON line of a record, exactly as written.
    pub fn fetch(&self, id: u64) -> Result<Option<String>, StoreError> {
        let Some(e) = self.entries.iter().find(|e| e.id == id) else {
            return Ok(None);
        };
        let mut f = File::open(self.dir.join(&e.file))?;
        f.seek(SeekFrom::Start(e.offset))?;
        let mut buf = vec![0; e.length as usize];
        f.read_exact(&mut buf)?;
        Ok(Some(String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?))
    }
}
