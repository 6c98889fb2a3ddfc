//! On-disk workspace: directory layout, persisted configuration and the
//! record store every stage reads from and writes to.
//!
//! Layout:
//!
//! ```text
//! <root>/teeport.conf      key = value pipeline configuration
//! <root>/records/          function, leaf and sensitivity records
//! <root>/suites/           test suites
//! <root>/artifacts/        transform artifacts, equivalence verdicts, images, stubs, scratch builds
//! <root>/transcripts/      one chat transcript per model session
//! <root>/reports/          rendered reports (text + json)
//! ```
//!
//! Each record is one pretty-printed JSON document named
//! `<kind>-<content hash>-<sequence>.json`. The content hash makes files easy
//! to diff; the sequence keeps ids distinct when identical content is written
//! twice.

mod config;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::PipelineConfig;

use crate::model::{FunctionRecord, ModelError};

pub const CONFIG_FILE: &str = "teeport.conf";
pub const RECORDS_DIR: &str = "records";
pub const SUITES_DIR: &str = "suites";
pub const ARTIFACTS_DIR: &str = "artifacts";
pub const TRANSCRIPTS_DIR: &str = "transcripts";
pub const REPORTS_DIR: &str = "reports";
pub const LAYOUT: &[&str] = &[
    RECORDS_DIR,
    SUITES_DIR,
    ARTIFACTS_DIR,
    TRANSCRIPTS_DIR,
    REPORTS_DIR,
];

const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("workspace path {path} is not writable: {source}")]
    NotWritable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no workspace at {0} (run init first)")]
    Missing(PathBuf),
    #[error("configuration conflicts with the stored workspace config: {}", .0.join("; "))]
    ConfigConflict(Vec<String>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("record rejected: {0}")]
    Invalid(#[from] ModelError),
    #[error("record {0} not found")]
    NotFound(String),
    #[error("record {id} is a `{found}`, expected `{expected}`")]
    WrongKind {
        id: String,
        found: String,
        expected: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed record {path}: {source}")]
    Decode {
        path: PathBuf,
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A type that can be stored in the workspace.
pub trait Record: Serialize + DeserializeOwned {
    const KIND: &'static str;
    const DIR: &'static str;

    fn validate(&self) -> Result<(), ModelError> {
        Ok(())
    }

    fn fqid(&self) -> Option<&str> {
        None
    }
}

impl Record for FunctionRecord {
    const KIND: &'static str = "function";
    const DIR: &'static str = RECORDS_DIR;

    fn validate(&self) -> Result<(), ModelError> {
        FunctionRecord::validate(self)
    }

    fn fqid(&self) -> Option<&str> {
        Some(&self.fqid)
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    kind: String,
    schema: u32,
    id: String,
    data: T,
}

#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    config: PipelineConfig,
    next_seq: Mutex<HashMap<&'static str, u64>>,
}

impl Workspace {
    /// Create (or re-open) a workspace. Re-opening with a different config is
    /// an error; the stored config is never overwritten.
    pub fn init(
        root: impl AsRef<Path>,
        config: PipelineConfig,
    ) -> Result<Workspace, WorkspaceError> {
        config.validate()?;
        let root = root.as_ref().to_path_buf();
        let not_writable = |source| WorkspaceError::NotWritable {
            path: root.clone(),
            source,
        };
        fs::create_dir_all(&root).map_err(not_writable)?;
        // Stages hand paths under the root to child processes with other
        // working directories.
        let root = fs::canonicalize(&root).map_err(not_writable)?;
        let probe = root.join(".write-probe");
        fs::write(&probe, b"").map_err(not_writable)?;
        let _ = fs::remove_file(&probe);

        let conf_path = root.join(CONFIG_FILE);
        if conf_path.exists() {
            let text = fs::read_to_string(&conf_path).map_err(io_err(&conf_path))?;
            let stored: PipelineConfig = text.parse()?;
            let diff = config.diff(&stored);
            if !diff.is_empty() {
                return Err(WorkspaceError::ConfigConflict(diff));
            }
        } else {
            fs::write(&conf_path, config.to_string()).map_err(not_writable)?;
        }
        for dir in LAYOUT {
            fs::create_dir_all(root.join(dir)).map_err(not_writable)?;
        }
        Ok(Workspace {
            root,
            config,
            next_seq: Mutex::new(HashMap::new()),
        })
    }

    /// Open an existing workspace with its stored config.
    pub fn open(root: impl AsRef<Path>) -> Result<Workspace, WorkspaceError> {
        let root = root.as_ref().to_path_buf();
        let conf_path = root.join(CONFIG_FILE);
        if !conf_path.exists() {
            return Err(WorkspaceError::Missing(root));
        }
        let text = fs::read_to_string(&conf_path).map_err(io_err(&conf_path))?;
        let config: PipelineConfig = text.parse()?;
        Workspace::init(root, config)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn transcripts_dir(&self) -> PathBuf {
        self.dir(TRANSCRIPTS_DIR)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.dir(REPORTS_DIR)
    }

    pub fn artifacts_dir(&self) -> PathBuf {
        self.dir(ARTIFACTS_DIR)
    }

    pub fn persist<T: Record>(&self, record: &T) -> Result<String, WorkspaceError> {
        record.validate()?;
        let data = serde_json::to_value(record).map_err(|source| WorkspaceError::Decode {
            path: PathBuf::from(T::KIND),
            source,
        })?;
        let canonical = serde_json::to_vec(&data).expect("json value serializes");
        let hash = hex::encode(&Sha256::digest(&canonical)[..6]);
        let dir = self.dir(T::DIR);

        let mut guard = self.next_seq.lock().expect("sequence lock");
        let seq = match guard.get(T::KIND) {
            Some(s) => *s,
            None => self.max_seq::<T>()? + 1,
        };
        let mut seq = seq;
        loop {
            let id = format!("{}-{}-{:06}", T::KIND, hash, seq);
            let path = dir.join(format!("{id}.json"));
            let envelope = Envelope {
                kind: T::KIND.to_string(),
                schema: SCHEMA_VERSION,
                id: id.clone(),
                data: &data,
            };
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let text =
                        serde_json::to_string_pretty(&envelope).expect("envelope serializes");
                    f.write_all(text.as_bytes()).map_err(io_err(&path))?;
                    f.write_all(b"\n").map_err(io_err(&path))?;
                    guard.insert(T::KIND, seq + 1);
                    return Ok(id);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => seq += 1,
                Err(e) => return Err(WorkspaceError::Io { path, source: e }),
            }
        }
    }

    fn max_seq<T: Record>(&self) -> Result<u64, WorkspaceError> {
        Ok(self
            .list::<T>()?
            .iter()
            .filter_map(|id| id.rsplit('-').next()?.parse::<u64>().ok())
            .max()
            .unwrap_or(0))
    }

    pub fn read<T: Record>(&self, id: &str) -> Result<T, WorkspaceError> {
        let path = self.dir(T::DIR).join(format!("{id}.json"));
        if !path.exists() {
            return Err(WorkspaceError::NotFound(id.to_string()));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let env: Envelope<serde_json::Value> =
            serde_json::from_str(&text).map_err(|source| WorkspaceError::Decode {
                path: path.clone(),
                source,
            })?;
        if env.kind != T::KIND {
            return Err(WorkspaceError::WrongKind {
                id: id.to_string(),
                found: env.kind,
                expected: T::KIND.to_string(),
            });
        }
        serde_json::from_value(env.data).map_err(|source| WorkspaceError::Decode { path, source })
    }

    /// Raw document text of a stored record.
    pub fn read_raw<T: Record>(&self, id: &str) -> Result<String, WorkspaceError> {
        let path = self.dir(T::DIR).join(format!("{id}.json"));
        fs::read_to_string(&path).map_err(io_err(&path))
    }

    /// Ids of all records of kind `T`, in write order.
    pub fn list<T: Record>(&self) -> Result<Vec<String>, WorkspaceError> {
        let dir = self.dir(T::DIR);
        let prefix = format!("{}-", T::KIND);
        let mut ids: Vec<(u64, String)> = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name().to_string_lossy().to_string();
            if let Some(id) = name.strip_suffix(".json") {
                if id.starts_with(&prefix) {
                    let seq = id
                        .rsplit('-')
                        .next()
                        .and_then(|s| s.parse().ok())
                        .unwrap_or(0);
                    ids.push((seq, id.to_string()));
                }
            }
        }
        ids.sort();
        Ok(ids.into_iter().map(|(_, id)| id).collect())
    }

    pub fn load_all<T: Record>(&self) -> Result<Vec<(String, T)>, WorkspaceError> {
        self.list::<T>()?
            .into_iter()
            .map(|id| self.read::<T>(&id).map(|r| (id, r)))
            .collect()
    }

    /// Most recent record of kind `T` for every fqid.
    pub fn latest_by_fqid<T: Record>(&self) -> Result<BTreeMap<String, T>, WorkspaceError> {
        let mut out = BTreeMap::new();
        for (_, rec) in self.load_all::<T>()? {
            if let Some(fqid) = rec.fqid() {
                out.insert(fqid.to_string(), rec);
            }
        }
        Ok(out)
    }

    pub fn write_report(
        &self,
        name: &str,
        text: &str,
        json: &serde_json::Value,
    ) -> Result<PathBuf, WorkspaceError> {
        let dir = self.reports_dir();
        let txt = dir.join(format!("{name}.txt"));
        fs::write(&txt, text).map_err(io_err(&txt))?;
        let js = dir.join(format!("{name}.json"));
        let body = serde_json::to_string_pretty(json).expect("report json serializes");
        fs::write(&js, body).map_err(io_err(&js))?;
        Ok(txt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LanguageId, Receiver, Signature, Span};

    fn record(fqid: &str) -> FunctionRecord {
        FunctionRecord {
            fqid: fqid.into(),
            language: LanguageId::python(),
            name: "f".into(),
            qualname: "f".into(),
            module: "m".into(),
            rel_path: "m.py".into(),
            project_root: "/tmp".into(),
            signature: Signature {
                params: vec![],
                ret: crate::model::SemType::Str,
            },
            header: "def f() -> str:".into(),
            body: "def f() -> str:\n    return ''".into(),
            span: Span::new(1, 2),
            receiver: Receiver::Free,
            call_sites: vec![],
        }
    }

    #[test]
    fn relative_roots_become_absolute() {
        let rel = PathBuf::from(format!("../../target/ws-relative-{}", std::process::id()));
        let ws = Workspace::init(&rel, PipelineConfig::default()).unwrap();
        assert!(ws.root().is_absolute());
        assert!(ws.artifacts_dir().is_absolute());
        fs::remove_dir_all(ws.root()).unwrap();
    }

    #[test]
    fn init_creates_layout_and_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::init(dir.path(), PipelineConfig::default()).unwrap();
        for d in LAYOUT {
            assert!(dir.path().join(d).is_dir());
        }
        let stored = fs::read_to_string(dir.path().join(CONFIG_FILE)).unwrap();
        assert!(stored.contains("refinement_threshold = 20"));
        drop(ws);
        let before = fs::read(dir.path().join(CONFIG_FILE)).unwrap();
        let again = Workspace::init(dir.path(), PipelineConfig::default()).unwrap();
        assert_eq!(again.config().refinement_threshold, 20);
        assert_eq!(fs::read(dir.path().join(CONFIG_FILE)).unwrap(), before);
    }

    #[test]
    fn reopen_with_different_config_conflicts() {
        let dir = tempfile::tempdir().unwrap();
        Workspace::init(dir.path(), PipelineConfig::default()).unwrap();
        let mut other = PipelineConfig::default();
        other.refinement_threshold = 10;
        match Workspace::init(dir.path(), other) {
            Err(WorkspaceError::ConfigConflict(keys)) => {
                assert!(keys[0].starts_with("refinement_threshold"))
            }
            other => panic!("expected conflict, got {other:?}"),
        }
        let stored = fs::read_to_string(dir.path().join(CONFIG_FILE)).unwrap();
        assert!(stored.contains("refinement_threshold = 20"));
    }

    #[test]
    fn unwritable_root_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain-file");
        fs::write(&file, b"x").unwrap();
        assert!(matches!(
            Workspace::init(file.join("ws"), PipelineConfig::default()),
            Err(WorkspaceError::NotWritable { .. })
        ));
    }

    #[test]
    fn roundtrip_and_invariant_gate() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::init(dir.path(), PipelineConfig::default()).unwrap();
        let rec = record("m.py::f#00000000");
        let id = ws.persist(&rec).unwrap();
        assert_eq!(ws.read::<FunctionRecord>(&id).unwrap(), rec);
        assert!(matches!(
            ws.persist(&record("")),
            Err(WorkspaceError::Invalid(_))
        ));
        assert_eq!(ws.list::<FunctionRecord>().unwrap().len(), 1);
    }

    #[test]
    fn identical_writes_get_distinct_ids() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::init(dir.path(), PipelineConfig::default()).unwrap();
        let rec = record("m.py::f#00000000");
        let mut ids = std::collections::HashSet::new();
        for _ in 0..1000 {
            assert!(ids.insert(ws.persist(&rec).unwrap()));
        }
        let listed = ws.list::<FunctionRecord>().unwrap();
        assert_eq!(listed.len(), 1000);
        let first = ws.read_raw::<FunctionRecord>(&listed[0]).unwrap();
        let last = ws.read_raw::<FunctionRecord>(&listed[999]).unwrap();
        let strip = |s: &str| {
            s.lines()
                .filter(|l| !l.contains("\"id\""))
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(strip(&first), strip(&last));
        // A fresh handle continues the sequence instead of reusing ids.
        let ws2 = Workspace::open(dir.path()).unwrap();
        let id = ws2.persist(&rec).unwrap();
        assert!(id.ends_with("-001001"));
    }
}
