//! Crash-safe persistence: an append-only operations log plus an atomic
//! snapshot.
//!
//! Layout inside the journal directory:
//!
//! * `snapshot.json`: `{"seq": N, "state": …}`, replaced by writing
//!   `snapshot.json.tmp` and renaming it over the old file.
//! * `ops.log`: one operation per line, `<crc32 hex> <seq> <json>\n`.
//!
//! Recovery loads the snapshot and replays log entries with a sequence number
//! above the snapshot's. A torn final line (missing newline or bad checksum)
//! is truncated away; a bad line followed by good ones is corruption.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const LOG_FILE: &str = "ops.log";

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt journal entry at line {line} of {file}")]
    Corrupt { file: String, line: usize },
    #[error("journal serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// State that can be rebuilt by replaying operations.
pub trait Replay: Default + Serialize + DeserializeOwned {
    type Op: Serialize + DeserializeOwned;

    fn replay(&mut self, op: Self::Op);
}

#[derive(Serialize, Deserialize)]
struct SnapshotDoc<S> {
    seq: u64,
    state: S,
}

#[derive(Debug, Clone)]
pub struct JournalOptions {
    /// Take a snapshot after this many appended operations (0 = never).
    pub snapshot_every: usize,
    /// fsync after every append.
    pub sync_appends: bool,
}

impl Default for JournalOptions {
    fn default() -> Self {
        JournalOptions { snapshot_every: 1000, sync_appends: true }
    }
}

pub struct Journal {
    dir: PathBuf,
    log: File,
    seq: u64,
    since_snapshot: usize,
    options: JournalOptions,
}

/// Encodes one log line.
pub fn encode_line<O: Serialize>(seq: u64, op: &O) -> Result<String, serde_json::Error> {
    let body = format!("{seq} {}", serde_json::to_string(op)?);
    Ok(format!("{:08x} {body}\n", crc32fast::hash(body.as_bytes())))
}

/// Decodes a line without its trailing newline. `None` when the checksum or
/// shape is wrong.
fn decode_line(line: &str) -> Option<(u64, &str)> {
    let (crc, body) = line.split_once(' ')?;
    let crc = u32::from_str_radix(crc, 16).ok()?;
    if crc32fast::hash(body.as_bytes()) != crc {
        return None;
    }
    let (seq, json) = body.split_once(' ')?;
    Some((seq.parse().ok()?, json))
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    // Directory fsync is not supported everywhere; the rename is still atomic.
    match File::open(dir).and_then(|d| d.sync_all()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::PermissionDenied => Ok(()),
        Err(e) if e.raw_os_error() == Some(22) => Ok(()),
        Err(e) => Err(e),
    }
}

impl Journal {
    /// Opens (or creates) the journal in `dir` and recovers its state.
    pub fn open<S: Replay>(dir: impl AsRef<Path>, options: JournalOptions) -> Result<(Journal, S), JournalError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let _ = fs::remove_file(dir.join(format!("{SNAPSHOT_FILE}.tmp")));

        let (mut seq, mut state) = match fs::read(dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => {
                let doc: SnapshotDoc<S> = serde_json::from_slice(&bytes)?;
                (doc.seq, doc.state)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => (0, S::default()),
            Err(e) => return Err(e.into()),
        };
        let snapshot_seq = seq;

        let log_path = dir.join(LOG_FILE);
        let mut log = OpenOptions::new().create(true).truncate(false).read(true).write(true).open(&log_path)?;
        let mut valid_len: u64 = 0;
        let mut since_snapshot = 0;
        {
            let mut reader = BufReader::new(&mut log);
            let mut buf = Vec::new();
            let mut line_no = 0;
            let mut torn_at: Option<usize> = None;
            loop {
                buf.clear();
                let n = reader.read_until(b'\n', &mut buf)?;
                if n == 0 {
                    break;
                }
                line_no += 1;
                let complete = buf.last() == Some(&b'\n');
                let decoded = complete
                    .then(|| std::str::from_utf8(&buf[..n - 1]).ok())
                    .flatten()
                    .and_then(decode_line);
                match decoded {
                    Some(_) if torn_at.is_some() => {
                        return Err(JournalError::Corrupt {
                            file: log_path.display().to_string(),
                            line: torn_at.unwrap(),
                        })
                    }
                    Some((entry_seq, json)) => {
                        valid_len += n as u64;
                        if entry_seq > snapshot_seq {
                            let op: S::Op = serde_json::from_str(json)?;
                            state.replay(op);
                            seq = entry_seq;
                            since_snapshot += 1;
                        }
                    }
                    None => {
                        torn_at.get_or_insert(line_no);
                    }
                }
            }
        }
        if log.metadata()?.len() != valid_len {
            tracing::warn!(path = %log_path.display(), valid_len, "truncating torn journal tail");
            log.set_len(valid_len)?;
            log.sync_all()?;
        }
        log.seek(SeekFrom::End(0))?;
        Ok((Journal { dir, log, seq, since_snapshot, options }, state))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Sequence number of the last durable operation.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Appends an operation. The caller applies it to its state after this
    /// returns, then calls [`Journal::maybe_snapshot`].
    pub fn append<O: Serialize>(&mut self, op: &O) -> Result<u64, JournalError> {
        let seq = self.seq + 1;
        let line = encode_line(seq, op)?;
        self.log.write_all(line.as_bytes())?;
        if self.options.sync_appends {
            self.log.sync_data()?;
        }
        self.seq = seq;
        self.since_snapshot += 1;
        Ok(seq)
    }

    pub fn maybe_snapshot<S: Serialize>(&mut self, state: &S) -> Result<(), JournalError> {
        if self.options.snapshot_every > 0 && self.since_snapshot >= self.options.snapshot_every {
            self.snapshot(state)?;
        }
        Ok(())
    }

    /// Writes a snapshot of `state` (which must reflect every appended
    /// operation) and empties the log.
    pub fn snapshot<S: Serialize>(&mut self, state: &S) -> Result<(), JournalError> {
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(&mut f, &SnapshotDoc { seq: self.seq, state })?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        sync_dir(&self.dir)?;
        // A crash before this truncation leaves entries the snapshot already
        // covers; recovery skips them by sequence number.
        self.log.set_len(0)?;
        self.log.seek(SeekFrom::Start(0))?;
        self.log.sync_all()?;
        self.since_snapshot = 0;
        Ok(())
    }
}
