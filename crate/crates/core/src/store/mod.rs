//! Reverse-delta document store.
//!
//! The newest state is kept materialized. Every commit stores, next to its
//! metadata, the prior state of each key it touched, so any older version is
//! rebuilt by walking back from head. A dataset maps to keys `node/<ip>`,
//! `seeds` and `meta`.

mod diff;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::model::{Dataset, DatasetMeta, NodeId, NodeRecord, SeedSet};

pub use diff::{diff_datasets, DatasetDiff, GatewayChange, NodeChange};

pub type Objects = BTreeMap<String, Value>;

pub const AUTHOR_ROLLBACK: &str = "rollback";
pub const AUTHOR_MANUAL: &str = "manual_edit";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown version `{0}`")]
    UnknownVersion(String),
    #[error("nothing to commit")]
    EmptyChangeSet,
    #[error("another writer holds the store")]
    Conflict,
    #[error("store file is corrupt: {0}")]
    Corrupt(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VersionId {
    pub seq: u64,
    /// SHA-256 of the canonical serialization of the full state.
    pub digest: String,
}

impl std::fmt::Display for VersionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionMeta {
    pub id: VersionId,
    pub parent: Option<u64>,
    pub author: String,
    pub message: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Write {
    Put { key: String, value: Value },
    Delete { key: String },
}

/// How to undo one key's change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ReverseEntry {
    /// The key existed before with this value.
    Restore { key: String, snapshot: Value },
    /// The key was added by the commit.
    Remove { key: String },
    /// The key was deleted by the commit.
    Resurrect { key: String, snapshot: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSet {
    pub seq: u64,
    pub reverse: Vec<ReverseEntry>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct StoreFile {
    format: u32,
    head: Objects,
    versions: Vec<VersionMeta>,
    changesets: Vec<ChangeSet>,
}

/// Held by the single writer; dropping it frees the store.
#[derive(Debug)]
pub struct WriterLease {
    flag: Arc<AtomicBool>,
}

impl Drop for WriterLease {
    fn drop(&mut self) {
        self.flag.store(false, Ordering::Release);
    }
}

#[derive(Debug)]
pub struct VersionStore {
    data: StoreFile,
    path: Option<PathBuf>,
    writer: Arc<AtomicBool>,
}

pub fn state_digest(objects: &Objects) -> String {
    let canonical = serde_json::to_vec(objects).expect("json values serialize");
    hex::encode(Sha256::digest(&canonical))
}

pub fn node_key(id: NodeId) -> String {
    format!("node/{id}")
}

pub fn dataset_to_objects(ds: &Dataset) -> Objects {
    let mut out = Objects::new();
    for (id, node) in &ds.nodes {
        out.insert(node_key(*id), serde_json::to_value(node).expect("node serializes"));
    }
    out.insert("seeds".to_string(), serde_json::to_value(&ds.seeds).expect("seeds serialize"));
    out.insert("meta".to_string(), serde_json::to_value(&ds.meta).expect("meta serializes"));
    out
}

pub fn objects_to_dataset(objects: &Objects) -> Result<Dataset, StoreError> {
    let corrupt = |k: &str, e: serde_json::Error| StoreError::Corrupt(format!("{k}: {e}"));
    let mut ds = Dataset::new();
    for (key, value) in objects {
        if let Some(addr) = key.strip_prefix("node/") {
            let node: NodeRecord = serde_json::from_value(value.clone()).map_err(|e| corrupt(key, e))?;
            if node.node_id.to_string() != addr {
                return Err(StoreError::Corrupt(format!("{key} holds node {}", node.node_id)));
            }
            ds.nodes.insert(node.node_id, node);
        } else if key == "seeds" {
            ds.seeds = serde_json::from_value::<SeedSet>(value.clone()).map_err(|e| corrupt(key, e))?;
        } else if key == "meta" {
            ds.meta = serde_json::from_value::<DatasetMeta>(value.clone()).map_err(|e| corrupt(key, e))?;
        }
    }
    Ok(ds)
}

/// Writes that turn `from` into `to`.
pub fn writes_between(from: &Objects, to: &Objects) -> Vec<Write> {
    let mut w = Vec::new();
    for (k, v) in to {
        if from.get(k) != Some(v) {
            w.push(Write::Put { key: k.clone(), value: v.clone() });
        }
    }
    for k in from.keys() {
        if !to.contains_key(k) {
            w.push(Write::Delete { key: k.clone() });
        }
    }
    w
}

fn undo(state: &mut Objects, cs: &ChangeSet) {
    for entry in cs.reverse.iter().rev() {
        match entry {
            ReverseEntry::Restore { key, snapshot } | ReverseEntry::Resurrect { key, snapshot } => {
                state.insert(key.clone(), snapshot.clone());
            }
            ReverseEntry::Remove { key } => {
                state.remove(key);
            }
        }
    }
}

impl VersionStore {
    pub fn in_memory() -> Self {
        VersionStore {
            data: StoreFile { format: 1, ..StoreFile::default() },
            path: None,
            writer: Arc::new(AtomicBool::new(false)),
        }
    }

    /// Opens the store file at `path`, creating an empty store if missing.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let data = match std::fs::read(&path) {
            Ok(bytes) => {
                let f: StoreFile = serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt(e.to_string()))?;
                if f.format != 1 {
                    return Err(StoreError::Corrupt(format!("unsupported format {}", f.format)));
                }
                f
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => StoreFile { format: 1, ..StoreFile::default() },
            Err(e) => return Err(e.into()),
        };
        Ok(VersionStore { data, path: Some(path), writer: Arc::new(AtomicBool::new(false)) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Claims the single writer slot.
    pub fn try_lease(&self) -> Result<WriterLease, StoreError> {
        self.writer
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map_err(|_| StoreError::Conflict)?;
        Ok(WriterLease { flag: Arc::clone(&self.writer) })
    }

    pub fn is_leased(&self) -> bool {
        self.writer.load(Ordering::Acquire)
    }

    pub fn versions(&self) -> &[VersionMeta] {
        &self.data.versions
    }

    pub fn head(&self) -> Option<&VersionMeta> {
        self.data.versions.last()
    }

    pub fn head_objects(&self) -> &Objects {
        &self.data.head
    }

    pub fn head_dataset(&self) -> Result<Dataset, StoreError> {
        objects_to_dataset(&self.data.head)
    }

    pub fn version(&self, seq: u64) -> Result<&VersionMeta, StoreError> {
        seq.checked_sub(1)
            .and_then(|i| self.data.versions.get(i as usize))
            .ok_or_else(|| StoreError::UnknownVersion(seq.to_string()))
    }

    /// Accepts a sequence number, `head`, or a digest prefix of at least 6 characters.
    pub fn resolve(&self, id: &str) -> Result<u64, StoreError> {
        if id == "head" {
            return self.head().map(|v| v.id.seq).ok_or_else(|| StoreError::UnknownVersion(id.into()));
        }
        if let Ok(seq) = id.parse::<u64>() {
            return self.version(seq).map(|v| v.id.seq);
        }
        if id.len() >= 6 {
            let hits: Vec<u64> = self
                .data
                .versions
                .iter()
                .filter(|v| v.id.digest.starts_with(id))
                .map(|v| v.id.seq)
                .collect();
            // identical states share a digest; pick the latest
            if let Some(seq) = hits.last() {
                return Ok(*seq);
            }
        }
        Err(StoreError::UnknownVersion(id.to_string()))
    }

    /// Applies `writes` as a new version. Puts that change nothing are
    /// dropped; if nothing is left the commit is refused, except for
    /// rollbacks, which always leave a trace in the history.
    pub fn commit(&mut self, writes: Vec<Write>, author: &str, message: &str) -> Result<VersionId, StoreError> {
        let mut state = self.data.head.clone();
        let mut first_prior: BTreeMap<String, Option<Value>> = BTreeMap::new();
        for w in writes {
            let key = match &w {
                Write::Put { key, .. } | Write::Delete { key } => key.clone(),
            };
            first_prior.entry(key.clone()).or_insert_with(|| state.get(&key).cloned());
            match w {
                Write::Put { key, value } => {
                    state.insert(key, value);
                }
                Write::Delete { key } => {
                    state.remove(&key);
                }
            }
        }
        let mut reverse = Vec::new();
        for (key, prior) in first_prior {
            let now = state.get(&key);
            match (prior, now) {
                (Some(p), Some(n)) if &p == n => {}
                (Some(p), Some(_)) => reverse.push(ReverseEntry::Restore { key, snapshot: p }),
                (None, Some(_)) => reverse.push(ReverseEntry::Remove { key }),
                (Some(p), None) => reverse.push(ReverseEntry::Resurrect { key, snapshot: p }),
                (None, None) => {}
            }
        }
        if reverse.is_empty() && author != AUTHOR_ROLLBACK {
            return Err(StoreError::EmptyChangeSet);
        }
        let seq = self.data.versions.len() as u64 + 1;
        let id = VersionId { seq, digest: state_digest(&state) };
        let meta = VersionMeta {
            id: id.clone(),
            parent: self.head().map(|h| h.id.seq),
            author: author.to_string(),
            message: message.to_string(),
            timestamp: Utc::now(),
        };
        let old_head = std::mem::replace(&mut self.data.head, state);
        self.data.versions.push(meta);
        self.data.changesets.push(ChangeSet { seq, reverse });
        if let Err(e) = self.persist() {
            // keep memory and disk in step
            self.data.head = old_head;
            self.data.versions.pop();
            self.data.changesets.pop();
            return Err(e);
        }
        Ok(id)
    }

    pub fn commit_dataset(&mut self, ds: &Dataset, author: &str, message: &str) -> Result<VersionId, StoreError> {
        let writes = writes_between(&self.data.head, &dataset_to_objects(ds));
        self.commit(writes, author, message)
    }

    /// State as of version `seq`.
    pub fn checkout(&self, seq: u64) -> Result<Objects, StoreError> {
        self.checkout_counted(seq).map(|(o, _)| o)
    }

    /// Like [`Self::checkout`], also reporting how many change sets were undone.
    pub fn checkout_counted(&self, seq: u64) -> Result<(Objects, usize), StoreError> {
        self.version(seq)?;
        let mut state = self.data.head.clone();
        let mut applied = 0;
        for cs in self.data.changesets.iter().rev().take_while(|cs| cs.seq > seq) {
            undo(&mut state, cs);
            applied += 1;
        }
        Ok((state, applied))
    }

    pub fn checkout_dataset(&self, seq: u64) -> Result<Dataset, StoreError> {
        objects_to_dataset(&self.checkout(seq)?)
    }

    pub fn diff(&self, a: u64, b: u64) -> Result<DatasetDiff, StoreError> {
        let from = self.checkout_dataset(a)?;
        let to = self.checkout_dataset(b)?;
        Ok(diff_datasets(&from, &to))
    }

    /// Makes head equal to version `target` with a new forward commit.
    pub fn rollback(&mut self, target: u64) -> Result<VersionId, StoreError> {
        let state = self.checkout(target)?;
        let writes = writes_between(&self.data.head, &state);
        self.commit(writes, AUTHOR_ROLLBACK, &format!("rollback to version {target}"))
    }

    fn persist(&self) -> Result<(), StoreError> {
        let Some(path) = &self.path else { return Ok(()) };
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer(&mut tmp, &self.data).map_err(|e| StoreError::Io(e.into()))?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| StoreError::Io(e.error))?;
        Ok(())
    }
}
