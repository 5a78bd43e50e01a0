//! Append-only JSONL results store with unique keys.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::imageio;
use crate::scene::{AttributeVector, EvalOutcome};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub attr_hash: String,
    pub seed: u64,
    pub detector_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Evaluated {
        outcome: EvalOutcome,
    },
    Skipped {
        reason: String,
        #[serde(default)]
        source: SkipSource,
    },
}

/// Which half of a unit failed: producing the scene or detecting on it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipSource {
    #[default]
    Render,
    Detector,
}

/// One line of the store: a (cell, seed, detector) verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub attributes: AttributeVector,
    pub attr_hash: String,
    pub seed: u64,
    pub detector_id: String,
    #[serde(flatten)]
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
}

impl CellResult {
    pub fn new(attributes: AttributeVector, seed: u64, detector_id: impl Into<String>, status: CellStatus) -> Self {
        CellResult {
            attr_hash: attributes.key_hash(),
            attributes,
            seed,
            detector_id: detector_id.into(),
            status,
            artifact: None,
        }
    }

    pub fn key(&self) -> RecordKey {
        RecordKey {
            attr_hash: self.attr_hash.clone(),
            seed: self.seed,
            detector_id: self.detector_id.clone(),
        }
    }

    pub fn outcome(&self) -> Option<&EvalOutcome> {
        match &self.status {
            CellStatus::Evaluated { outcome } => Some(outcome),
            CellStatus::Skipped { .. } => None,
        }
    }
}

pub fn key_of(attributes: &AttributeVector, seed: u64, detector_id: &str) -> RecordKey {
    RecordKey {
        attr_hash: attributes.key_hash(),
        seed,
        detector_id: detector_id.to_string(),
    }
}

/// Parses a results file. A final line cut short by an interruption is
/// ignored; any other malformed line is an error. Also returns the byte
/// length of the well-formed prefix.
fn parse_results(path: &Path) -> Result<(Vec<CellResult>, u64)> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut good = 0u64;
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            if complete {
                good += n as u64;
            }
            continue;
        }
        if !complete {
            warn!("{}: ignoring unterminated final line {lineno}", path.display());
            break;
        }
        let r: CellResult = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Report(format!("{}: line {lineno}: {e}", path.display())))?;
        records.push(r);
        good += n as u64;
    }
    Ok((records, good))
}

/// Reads every complete record of a results file (or a store directory).
pub fn load_results(path: &Path) -> Result<Vec<CellResult>> {
    let file = if path.is_dir() { path.join(RESULTS_FILE) } else { path.to_path_buf() };
    if !file.exists() {
        return Err(Error::Report(format!("{}: no results", file.display())));
    }
    Ok(parse_results(&file)?.0)
}

struct Inner {
    file: File,
    keys: HashSet<RecordKey>,
    records: Vec<CellResult>,
}

/// Results directory: `results.jsonl`, `manifest.json` and optional scene
/// artifacts. Appends are serialized and keys are unique.
pub struct ResultsStore {
    dir: PathBuf,
    inner: Mutex<Inner>,
}

impl ResultsStore {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESULTS_FILE);
        let (loaded, good) = parse_results(&path)?;
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        // drop a partial trailing line so the next append starts cleanly
        file.set_len(good).map_err(|e| Error::io(&path, e))?;
        let file = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        let mut keys = HashSet::new();
        let mut records = Vec::new();
        for r in loaded {
            if keys.insert(r.key()) {
                records.push(r);
            } else {
                warn!("{}: duplicate key {:?} ignored", path.display(), r.key());
            }
        }
        Ok(ResultsStore {
            dir: dir.to_path_buf(),
            inner: Mutex::new(Inner { file, keys, records }),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn results_path(&self) -> PathBuf {
        self.dir.join(RESULTS_FILE)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join(MANIFEST_FILE)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn contains(&self, key: &RecordKey) -> bool {
        self.lock().keys.contains(key)
    }

    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends `record` unless its key is already present. Returns whether it
    /// was written.
    pub fn append(&self, record: CellResult) -> Result<bool> {
        let mut inner = self.lock();
        let key = record.key();
        if inner.keys.contains(&key) {
            return Ok(false);
        }
        let mut line = serde_json::to_string(&record)?;
        line.push('\n');
        let path = self.results_path();
        inner.file.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
        inner.file.flush().map_err(|e| Error::io(&path, e))?;
        inner.keys.insert(key);
        inner.records.push(record);
        Ok(true)
    }

    /// Immutable copy of every record, in append order.
    pub fn snapshot(&self) -> Vec<CellResult> {
        self.lock().records.clone()
    }

    pub fn get(&self, key: &RecordKey) -> Option<CellResult> {
        self.lock().records.iter().find(|r| r.key() == *key).cloned()
    }

    pub fn read_manifest(&self) -> Result<Option<Value>> {
        let p = self.manifest_path();
        if !p.exists() {
            return Ok(None);
        }
        imageio::read_json(&p).map(Some)
    }

    pub fn write_manifest<T: Serialize>(&self, manifest: &T) -> Result<()> {
        imageio::write_json(&self.manifest_path(), manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Background, ObjectColor};

    fn rec(seed: u64, det: &str) -> CellResult {
        let a = AttributeVector {
            object_type: "sedan".into(),
            object_color: ObjectColor::Original,
            orientation_deg: -50.0,
            scale_factor: 6.0,
            location: [0.5, 0.5],
            background: Background::Plain("grey".into()),
        };
        CellResult::new(a, seed, det, CellStatus::Evaluated { outcome: EvalOutcome::Correct })
    }

    #[test]
    fn unique_keys_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultsStore::open(dir.path()).unwrap();
        assert!(store.append(rec(1, "a")).unwrap());
        assert!(!store.append(rec(1, "a")).unwrap());
        assert!(store.append(rec(1, "b")).unwrap());
        drop(store);
        let store = ResultsStore::open(dir.path()).unwrap();
        assert_eq!(store.len(), 2);
        assert!(store.contains(&rec(1, "b").key()));
    }

    #[test]
    fn truncated_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultsStore::open(dir.path()).unwrap();
        store.append(rec(1, "a")).unwrap();
        drop(store);
        let path = dir.path().join(RESULTS_FILE);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"attributes\":{\"obj").unwrap();
        drop(f);
        let store = ResultsStore::open(dir.path()).unwrap();
        assert_eq!(store.len(), 1);
        store.append(rec(2, "a")).unwrap();
        drop(store);
        assert_eq!(load_results(dir.path()).unwrap().len(), 2);
    }

    #[test]
    fn line_format() {
        let line = serde_json::to_string(&rec(3, "D1")).unwrap();
        assert!(line.contains("\"status\":\"evaluated\""));
        assert!(line.contains("\"outcome\":{\"kind\":\"correct\"}"));
        let back: CellResult = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec(3, "D1"));
    }
}
