//! Durable storage: a line-delimited JSON event log plus a compacted state
//! file. Each log line carries a sequence number so records already folded
//! into the state file are skipped on replay.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

const LOG_FILE: &str = "events.jsonl";
const STATE_FILE: &str = "state.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: unreadable state file: {source}")]
    State { path: PathBuf, source: serde_json::Error },
}

#[derive(Serialize, Deserialize)]
struct Line<R> {
    seq: u64,
    rec: R,
}

/// What `open` found on disk.
#[derive(Debug)]
pub struct Recovered<S, R> {
    pub state: Option<S>,
    /// Records newer than the state file, in log order.
    pub records: Vec<(u64, R)>,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    log: File,
    next_seq: u64,
    since_compaction: usize,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

impl Store {
    /// Open or create the store. A torn or corrupt record ends the valid log:
    /// the file is truncated there and a warning is returned.
    pub fn open<S, R>(dir: &Path, state_seq: impl Fn(&S) -> u64) -> Result<(Store, Recovered<S, R>), StoreError>
    where
        S: DeserializeOwned,
        R: DeserializeOwned,
    {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let state_path = dir.join(STATE_FILE);
        let state: Option<S> = match fs::read(&state_path) {
            Ok(bytes) => Some(
                serde_json::from_slice(&bytes)
                    .map_err(|source| StoreError::State { path: state_path.clone(), source })?,
            ),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(io_err(&state_path)(e)),
        };
        let floor = state.as_ref().map_or(0, &state_seq);

        let log_path = dir.join(LOG_FILE);
        let bytes = match fs::read(&log_path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(&log_path)(e)),
        };
        let mut warnings = Vec::new();
        let mut records = Vec::new();
        let mut valid_end = 0usize;
        let mut last_seq = floor;
        let mut line_no = 0usize;
        while valid_end < bytes.len() {
            line_no += 1;
            let rest = &bytes[valid_end..];
            let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
                warnings.push(format!("{}: torn record at line {line_no} dropped", log_path.display()));
                break;
            };
            match serde_json::from_slice::<Line<R>>(&rest[..nl]) {
                Ok(line) => {
                    if line.seq > floor {
                        records.push((line.seq, line.rec));
                    }
                    last_seq = last_seq.max(line.seq);
                    valid_end += nl + 1;
                }
                Err(e) => {
                    warnings.push(format!(
                        "{}: corrupt record at line {line_no} ({e}); log truncated there",
                        log_path.display()
                    ));
                    break;
                }
            }
        }
        let log = OpenOptions::new().create(true).append(true).read(true).open(&log_path).map_err(io_err(&log_path))?;
        if valid_end < bytes.len() {
            log.set_len(valid_end as u64).map_err(io_err(&log_path))?;
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        let since_compaction = records.len();
        let store = Store { dir: dir.to_path_buf(), log, next_seq: last_seq + 1, since_compaction };
        Ok((store, Recovered { state, records, warnings }))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Sequence number the next record will get.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn records_since_compaction(&self) -> usize {
        self.since_compaction
    }

    pub fn append<R: Serialize>(&mut self, rec: &R) -> Result<u64, StoreError> {
        let seq = self.next_seq;
        let mut line = serde_json::to_vec(&Line { seq, rec }).expect("records serialize");
        line.push(b'\n');
        let path = self.dir.join(LOG_FILE);
        self.log.write_all(&line).map_err(io_err(&path))?;
        self.next_seq += 1;
        self.since_compaction += 1;
        Ok(seq)
    }

    /// Write `state` (which must include every record below `next_seq`)
    /// atomically, then empty the log.
    pub fn compact<S: Serialize>(&mut self, state: &S) -> Result<(), StoreError> {
        let tmp = self.dir.join("state.json.tmp");
        let target = self.dir.join(STATE_FILE);
        let bytes = serde_json::to_vec(state).expect("state serializes");
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, &target).map_err(io_err(&target))?;
        let log_path = self.dir.join(LOG_FILE);
        self.log.set_len(0).map_err(io_err(&log_path))?;
        self.since_compaction = 0;
        Ok(())
    }

    pub fn sync(&mut self) -> Result<(), StoreError> {
        let path = self.dir.join(LOG_FILE);
        self.log.sync_data().map_err(io_err(&path))
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(LOG_FILE)
    }
}
