//! Content-addressed project store.
//!
//! Layout under the root directory:
//!
//! ```text
//! manifest.json                 stage records, corpus hash, config snapshot
//! objects/<stage>/<sha>-<name>  stage outputs, immutable once written
//! tmp/                          staging area for atomic writes
//! ```
//!
//! Every write goes to `tmp/`, is fsynced, then renamed into place, so a
//! reader only ever sees complete files and a crash leaves the previous
//! manifest untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::stage::Stage;

pub const STORE_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("stage {stage} has not been run: run `forge {missing}` first")]
    Dependency { stage: Stage, missing: Stage },
    #[error("output {name} of stage {stage} is corrupt (expected sha256 {expected}, found {found})")]
    Corrupt {
        stage: Stage,
        name: String,
        expected: String,
        found: String,
    },
    #[error("stage {stage} has no output named {name}")]
    NoSuchOutput { stage: Stage, name: String },
    #[error("store version {found} is not supported (expected {STORE_VERSION})")]
    Version { found: u32 },
    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("injected fault: {0:?}")]
    Injected(Fault),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Crash points for fault-injection tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Temp output written and synced, rename never happens.
    BeforeOutputRename,
    /// Outputs in place, new manifest written to temp, rename never happens.
    BeforeManifestRename,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRef {
    /// Path relative to the store root.
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs_hash: String,
    pub params: serde_json::Value,
    /// Output digest of each upstream stage at the time this one ran.
    pub upstream: BTreeMap<Stage, String>,
    pub outputs: BTreeMap<String, OutputRef>,
}

impl StageRecord {
    /// Digest over all output hashes; what downstream stages key on.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, o) in &self.outputs {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(o.sha256.as_bytes());
            h.update([0]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub store_version: u32,
    pub corpus_hash: Option<String>,
    pub config: serde_json::Value,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            store_version: STORE_VERSION,
            corpus_hash: None,
            config: serde_json::Value::Null,
            stages: BTreeMap::new(),
        }
    }
}

/// Everything a stage hands back to be recorded.
#[derive(Debug, Clone)]
pub struct StageCommit {
    pub inputs_hash: String,
    pub params: serde_json::Value,
    pub upstream: BTreeMap<Stage, String>,
    pub outputs: Vec<(String, Vec<u8>)>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitOutcome {
    /// Whether the output digest differs from the previous record.
    pub changed: bool,
    /// Downstream records dropped because their inputs changed.
    pub invalidated: Vec<Stage>,
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    manifest: Manifest,
    fault: Option<Fault>,
    tmp_counter: u64,
}

fn fsync_dir(dir: &Path) {
    // Best effort: not every platform lets a directory be opened for sync.
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}

impl Store {
    /// Opens the store at `root`, creating it if needed. Leftover temp files
    /// from an interrupted write are removed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for d in [root.join("objects"), root.join("tmp")] {
            fs::create_dir_all(&d).map_err(io(&d))?;
        }
        let tmp = root.join("tmp");
        for entry in fs::read_dir(&tmp).map_err(io(&tmp))? {
            let p = entry.map_err(io(&tmp))?.path();
            fs::remove_file(&p).map_err(io(&p))?;
        }
        let path = root.join(MANIFEST);
        let manifest = match fs::read(&path) {
            Ok(bytes) => {
                let m: Manifest = serde_json::from_slice(&bytes)?;
                if m.store_version != STORE_VERSION {
                    return Err(StoreError::Version { found: m.store_version });
                }
                m
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Manifest::default(),
            Err(e) => return Err(io(&path)(e)),
        };
        Ok(Store {
            root,
            manifest,
            fault: None,
            tmp_counter: 0,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Re-reads the manifest, picking up commits from other processes.
    pub fn reload(&mut self) -> Result<()> {
        let path = self.root.join(MANIFEST);
        self.manifest = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Manifest::default(),
            Err(e) => return Err(io(&path)(e)),
        };
        Ok(())
    }

    pub fn inject_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.manifest.stages.get(&stage)
    }

    fn verify_output(&self, stage: Stage, name: &str, o: &OutputRef) -> Result<Vec<u8>> {
        let path = self.root.join(&o.file);
        let bytes = fs::read(&path).map_err(io(&path))?;
        let found = sha256_hex(&bytes);
        if found != o.sha256 {
            return Err(StoreError::Corrupt {
                stage,
                name: name.to_string(),
                expected: o.sha256.clone(),
                found,
            });
        }
        Ok(bytes)
    }

    /// Checks that `stage` has a record and that every output hash-verifies.
    /// `wanted_by` is named in the dependency error.
    pub fn require(&self, stage: Stage, wanted_by: Stage) -> Result<&StageRecord> {
        let rec = self.record(stage).ok_or(StoreError::Dependency {
            stage: wanted_by,
            missing: stage,
        })?;
        for (name, o) in &rec.outputs {
            self.verify_output(stage, name, o)?;
        }
        Ok(rec)
    }

    /// Hash-verified contents of one output.
    pub fn read(&self, stage: Stage, name: &str) -> Result<Vec<u8>> {
        let rec = self.record(stage).ok_or(StoreError::Dependency {
            stage,
            missing: stage,
        })?;
        let o = rec.outputs.get(name).ok_or_else(|| StoreError::NoSuchOutput {
            stage,
            name: name.to_string(),
        })?;
        self.verify_output(stage, name, o)
    }

    /// Verifies every output referenced by the manifest.
    pub fn verify_all(&self) -> Result<()> {
        for (stage, rec) in &self.manifest.stages {
            for (name, o) in &rec.outputs {
                self.verify_output(*stage, name, o)?;
            }
        }
        Ok(())
    }

    fn write_atomic(&mut self, dest: &Path, bytes: &[u8], crash: Option<Fault>) -> Result<()> {
        self.tmp_counter += 1;
        let tmp = self
            .root
            .join("tmp")
            .join(format!("{}-{}.tmp", std::process::id(), self.tmp_counter));
        {
            let mut f = File::create(&tmp).map_err(io(&tmp))?;
            f.write_all(bytes).map_err(io(&tmp))?;
            f.sync_all().map_err(io(&tmp))?;
        }
        if let Some(fault) = crash.filter(|f| self.fault == Some(*f)) {
            return Err(StoreError::Injected(fault));
        }
        fs::rename(&tmp, dest).map_err(io(dest))?;
        if let Some(parent) = dest.parent() {
            fsync_dir(parent);
        }
        Ok(())
    }

    fn write_object(&mut self, stage: Stage, name: &str, bytes: &[u8]) -> Result<OutputRef> {
        let sha = sha256_hex(bytes);
        let rel = format!("objects/{}/{}-{}", stage.as_str(), sha, name);
        let dest = self.root.join(&rel);
        let present = fs::read(&dest).map(|b| sha256_hex(&b) == sha).unwrap_or(false);
        if !present {
            let dir = dest.parent().expect("object path has a parent");
            fs::create_dir_all(dir).map_err(io(dir))?;
            self.write_atomic(&dest, bytes, Some(Fault::BeforeOutputRename))?;
        }
        Ok(OutputRef {
            file: rel,
            sha256: sha,
            bytes: bytes.len() as u64,
        })
    }

    fn write_manifest(&mut self, manifest: &Manifest) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(manifest)?;
        bytes.push(b'\n');
        let dest = self.root.join(MANIFEST);
        self.write_atomic(&dest, &bytes, Some(Fault::BeforeManifestRename))
    }

    /// Records a stage run. Downstream records keyed on the old outputs are
    /// dropped when the outputs change.
    pub fn commit(&mut self, stage: Stage, commit: StageCommit) -> Result<CommitOutcome> {
        let mut outputs = BTreeMap::new();
        for (name, bytes) in &commit.outputs {
            outputs.insert(name.clone(), self.write_object(stage, name, bytes)?);
        }
        let record = StageRecord {
            inputs_hash: commit.inputs_hash,
            params: commit.params,
            upstream: commit.upstream,
            outputs,
        };
        let mut next = self.manifest.clone();
        let changed = next.stages.get(&stage).map(StageRecord::digest) != Some(record.digest());
        if stage == Stage::Ingest {
            next.corpus_hash = Some(record.digest());
        }
        next.config = commit.config;
        next.stages.insert(stage, record);
        let mut invalidated = Vec::new();
        for d in stage.downstream() {
            let stale = next.stages.get(&d).is_some_and(|r| {
                r.upstream
                    .iter()
                    .any(|(u, digest)| next.stages.get(u).map(StageRecord::digest).as_ref() != Some(digest))
            });
            if stale {
                next.stages.remove(&d);
                invalidated.push(d);
            }
        }
        self.write_manifest(&next)?;
        self.manifest = next;
        self.collect_garbage()?;
        Ok(CommitOutcome { changed, invalidated })
    }

    /// Deletes object files no longer referenced by the manifest.
    fn collect_garbage(&self) -> Result<()> {
        let live: BTreeSet<PathBuf> = self
            .manifest
            .stages
            .values()
            .flat_map(|r| r.outputs.values().map(|o| self.root.join(&o.file)))
            .collect();
        let objects = self.root.join("objects");
        for dir in fs::read_dir(&objects).map_err(io(&objects))? {
            let dir = dir.map_err(io(&objects))?.path();
            if !dir.is_dir() {
                continue;
            }
            let mut empty = true;
            for f in fs::read_dir(&dir).map_err(io(&dir))? {
                let f = f.map_err(io(&dir))?.path();
                if live.contains(&f) {
                    empty = false;
                } else {
                    fs::remove_file(&f).map_err(io(&f))?;
                }
            }
            if empty {
                fs::remove_dir(&dir).map_err(io(&dir))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn commit(hash: &str, outputs: &[(&str, &str)], upstream: &[(Stage, String)]) -> StageCommit {
        StageCommit {
            inputs_hash: hash.into(),
            params: json!({}),
            upstream: upstream.iter().cloned().collect(),
            outputs: outputs.iter().map(|(n, b)| (n.to_string(), b.as_bytes().to_vec())).collect(),
            config: json!({"seed": 1}),
        }
    }

    #[test]
    fn missing_dependency_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let err = store.require(Stage::Embed, Stage::Cluster).unwrap_err();
        assert!(matches!(err, StoreError::Dependency { missing: Stage::Embed, .. }));
        assert!(err.to_string().contains("embed"));
    }

    #[test]
    fn commit_round_trips_and_detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        store.commit(Stage::Ingest, commit("h", &[("videos.jsonl", "abc\n")], &[])).unwrap();
        let reopened = Store::open(dir.path()).unwrap();
        assert_eq!(reopened.read(Stage::Ingest, "videos.jsonl").unwrap(), b"abc\n");
        assert!(reopened.manifest().corpus_hash.is_some());
        let file = dir.path().join(&reopened.record(Stage::Ingest).unwrap().outputs["videos.jsonl"].file);
        fs::write(&file, "tampered").unwrap();
        assert!(matches!(reopened.verify_all(), Err(StoreError::Corrupt { .. })));
    }

    #[test]
    fn changed_outputs_invalidate_downstream() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        store.commit(Stage::Ingest, commit("a", &[("v", "1")], &[])).unwrap();
        let d = store.record(Stage::Ingest).unwrap().digest();
        store.commit(Stage::Extract, commit("b", &[("t", "x")], &[(Stage::Ingest, d.clone())])).unwrap();
        store.commit(Stage::StanceScan, commit("c", &[("r", "y")], &[(Stage::Ingest, d)])).unwrap();

        let same = store.commit(Stage::Ingest, commit("a", &[("v", "1")], &[])).unwrap();
        assert!(!same.changed);
        assert!(same.invalidated.is_empty());

        let diff = store.commit(Stage::Ingest, commit("a2", &[("v", "2")], &[])).unwrap();
        assert!(diff.changed);
        assert_eq!(diff.invalidated, [Stage::Extract, Stage::StanceScan]);
        // The superseded objects are gone.
        let n = fs::read_dir(dir.path().join("objects/ingest")).unwrap().count();
        assert_eq!(n, 1);
    }

    #[test]
    fn crash_before_manifest_rename_keeps_previous_state() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        store.commit(Stage::Ingest, commit("a", &[("v", "old")], &[])).unwrap();
        let before = fs::read(dir.path().join(MANIFEST)).unwrap();
        // Output fault first: the manifest fault leaves the new object behind.
        for fault in [Fault::BeforeOutputRename, Fault::BeforeManifestRename] {
            store.inject_fault(Some(fault));
            let err = store.commit(Stage::Ingest, commit("b", &[("v", "new")], &[])).unwrap_err();
            assert!(matches!(err, StoreError::Injected(f) if f == fault));
            assert_eq!(fs::read(dir.path().join(MANIFEST)).unwrap(), before);
            let reopened = Store::open(dir.path()).unwrap();
            reopened.verify_all().unwrap();
            assert_eq!(reopened.read(Stage::Ingest, "v").unwrap(), b"old");
        }
    }
}
