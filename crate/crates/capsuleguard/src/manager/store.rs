//! Durable state for the capsule store: an append-only JSON-lines metadata
//! log replayed at startup, content-addressed ciphertext blobs, and two
//! secret files (the manager's derivation key and the per-capsule data
//! keys). The metadata log holds no key material, so it can be inspected
//! freely; `manager.key` and `keys.jsonl` are the simulated enclave state.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::crypto::{self, KeyBytes};
use super::types::{DataCapsule, Grant, Job, JobResult, JobStatus};

/// One record of the metadata log. Events are applied strictly in file
/// order; replaying the log rebuilds the exact store state.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    /// A capsule came into existence (uploaded or job-derived).
    Capsule { capsule: DataCapsule },
    /// An owner authorized an analyst.
    Grant { grant: Grant },
    /// A grant was revoked.
    Revoke { grant_id: String },
    /// A job was submitted (status `Queued`).
    Job { job: Job },
    /// A job finished processing.
    JobUpdate { job_id: String, status: JobStatus, result: JobResult },
}

/// One record of the key log (`keys.jsonl`).
#[derive(Clone, Debug, Serialize, Deserialize)]
struct KeyRecord {
    capsule: String,
    key: String,
}

/// In-memory image of the store, rebuilt by replaying the log.
#[derive(Debug, Default)]
pub struct State {
    pub capsules: BTreeMap<String, DataCapsule>,
    /// Active grants only; revocation removes the entry.
    pub grants: BTreeMap<String, Grant>,
    pub jobs: BTreeMap<String, Job>,
    grant_seq: u64,
    job_seq: u64,
}

impl State {
    /// Applies one event. Errors indicate a corrupt log (e.g. an update for
    /// a job that was never submitted), not a caller mistake.
    pub fn apply(&mut self, event: LogEvent) -> Result<(), String> {
        match event {
            LogEvent::Capsule { capsule } => {
                self.capsules.insert(capsule.id.clone(), capsule);
            }
            LogEvent::Grant { grant } => {
                bump_seq(&mut self.grant_seq, &grant.id, 'g');
                self.grants.insert(grant.id.clone(), grant);
            }
            LogEvent::Revoke { grant_id } => {
                self.grants
                    .remove(&grant_id)
                    .ok_or_else(|| format!("revocation of unknown grant {grant_id:?}"))?;
            }
            LogEvent::Job { job } => {
                bump_seq(&mut self.job_seq, &job.id, 'j');
                self.jobs.insert(job.id.clone(), job);
            }
            LogEvent::JobUpdate { job_id, status, result } => {
                let job = self
                    .jobs
                    .get_mut(&job_id)
                    .ok_or_else(|| format!("update for unknown job {job_id:?}"))?;
                job.status = status;
                job.result = result;
            }
        }
        Ok(())
    }

    /// Next grant id in sequence.
    pub fn next_grant_id(&mut self) -> String {
        self.grant_seq += 1;
        format!("g{}", self.grant_seq)
    }

    /// Next job id in sequence.
    pub fn next_job_id(&mut self) -> String {
        self.job_seq += 1;
        format!("j{}", self.job_seq)
    }
}

fn bump_seq(seq: &mut u64, id: &str, prefix: char) {
    if let Some(n) = id.strip_prefix(prefix).and_then(|s| s.parse::<u64>().ok()) {
        *seq = (*seq).max(n);
    }
}

/// Filesystem layout plus serialized append handles. All mutation goes
/// through `&self` with internal locking: appends are serialized through a
/// single writer, as are key-log appends.
pub struct Store {
    root: PathBuf,
    log: Mutex<File>,
    keys: Mutex<File>,
}

/// Everything `Store::open` recovers from disk.
pub struct Recovered {
    pub store: Store,
    pub state: State,
    pub manager_key: KeyBytes,
    pub capsule_keys: BTreeMap<String, KeyBytes>,
}

impl Store {
    /// Opens (or initializes) a store rooted at `root`: creates the layout,
    /// loads or mints the manager key, and replays both logs.
    pub fn open(root: &Path) -> Result<Recovered, io::Error> {
        fs::create_dir_all(root.join("blobs"))?;
        let manager_key = crypto::read_or_init_keyfile(&root.join("manager.key"))?;

        let log_path = root.join("log.jsonl");
        let mut state = State::default();
        if log_path.exists() {
            for (lineno, line) in BufReader::new(File::open(&log_path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: LogEvent = serde_json::from_str(&line).map_err(|e| {
                    corrupt(format!("log.jsonl line {}: {e}", lineno + 1))
                })?;
                state
                    .apply(event)
                    .map_err(|e| corrupt(format!("log.jsonl line {}: {e}", lineno + 1)))?;
            }
        }

        let keys_path = root.join("keys.jsonl");
        let mut capsule_keys = BTreeMap::new();
        if keys_path.exists() {
            for (lineno, line) in BufReader::new(File::open(&keys_path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: KeyRecord = serde_json::from_str(&line).map_err(|e| {
                    corrupt(format!("keys.jsonl line {}: {e}", lineno + 1))
                })?;
                let key = crypto::key_from_hex(&record.key)
                    .ok_or_else(|| corrupt(format!("keys.jsonl line {}: bad key", lineno + 1)))?;
                capsule_keys.insert(record.capsule, key);
            }
        }

        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        let keys = OpenOptions::new().create(true).append(true).open(&keys_path)?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            fs::set_permissions(&keys_path, fs::Permissions::from_mode(0o600))?;
        }

        Ok(Recovered { store: Store { root: root.to_path_buf(), log: Mutex::new(log), keys: Mutex::new(keys) }, state, manager_key, capsule_keys })
    }

    /// Appends one event to the metadata log and flushes it.
    pub fn append(&self, event: &LogEvent) -> io::Result<()> {
        let line = serde_json::to_string(event).map_err(|e| corrupt(e.to_string()))?;
        let mut file = self.log.lock().expect("log writer poisoned");
        writeln!(file, "{line}")?;
        file.flush()
    }

    /// Appends one capsule key to the key log and flushes it.
    pub fn append_key(&self, capsule_id: &str, key: &KeyBytes) -> io::Result<()> {
        let record = KeyRecord { capsule: capsule_id.to_string(), key: crypto::key_to_hex(key) };
        let line = serde_json::to_string(&record).map_err(|e| corrupt(e.to_string()))?;
        let mut file = self.keys.lock().expect("key writer poisoned");
        writeln!(file, "{line}")?;
        file.flush()
    }

    /// Writes `bytes` as a content-addressed blob, returning its
    /// store-relative path. Identical content maps to the identical path, so
    /// rewrites are no-ops.
    pub fn write_blob(&self, bytes: &[u8]) -> io::Result<String> {
        let digest = hex::encode(Sha256::digest(bytes));
        let rel = format!("blobs/{}/{digest}.bin", &digest[..2]);
        let path = self.root.join(&rel);
        if !path.exists() {
            fs::create_dir_all(path.parent().expect("blob paths have a parent"))?;
            // Write-then-rename so a crash never leaves a half blob at the
            // addressed path.
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, bytes)?;
            fs::rename(&tmp, &path)?;
        }
        Ok(rel)
    }

    /// Reads a blob by its store-relative path.
    pub fn read_blob(&self, rel: &str) -> io::Result<Vec<u8>> {
        fs::read(self.root.join(rel))
    }
}

fn corrupt(detail: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, detail)
}
