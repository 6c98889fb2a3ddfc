#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use teeport_core::analyzer::{self, ParsedProject};
use teeport_core::drivers::{source_driver, DriverMode, Executable};
use teeport_core::llm::{Conversation, ScriptBackend};
use teeport_core::model::{FunctionRecord, LanguageId};
use teeport_core::par::Parallelism;
use teeport_core::suite::{self, PythonCoverage, SuiteSettings, TestSuite};
use teeport_core::transform::toolchain::{BuildRequest, CargoToolchain, CompileReport, Toolchain};

pub fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

pub fn corpus() -> PathBuf {
    repo().join("corpus")
}

pub fn python_project() -> &'static ParsedProject {
    static P: OnceLock<ParsedProject> = OnceLock::new();
    P.get_or_init(|| {
        analyzer::parse_project(
            &corpus().join("python"),
            &LanguageId::python(),
            Parallelism::Sequential,
        )
        .unwrap()
    })
}

pub fn record(qualname: &str) -> FunctionRecord {
    python_project()
        .records
        .iter()
        .find(|r| r.qualname == qualname)
        .unwrap_or_else(|| panic!("no record {qualname}"))
        .clone()
}

/// Shared scratch so native builds are cached across test binaries.
pub fn toolchain() -> CargoToolchain {
    let base = Path::new(env!("CARGO_TARGET_TMPDIR")).join("native");
    CargoToolchain::new(base.join("scratch")).with_target_dir(base.join("target"))
}

pub fn native_source(rel: &str) -> String {
    std::fs::read_to_string(corpus().join("native").join(rel)).unwrap()
}

pub fn deps_for(source: &str) -> Vec<teeport_core::transform::toolchain::Dependency> {
    use teeport_core::transform::toolchain::Dependency;
    let mut d = Vec::new();
    if source.contains("sha2::") {
        d.push(Dependency::new("sha2", "0.10"));
    }
    if source.contains("hex::") {
        d.push(Dependency::new("hex", "0.4"));
    }
    d
}

pub fn build(record: &FunctionRecord, source: &str) -> CompileReport {
    let entry = record.native_entry();
    let deps = deps_for(source);
    let r = toolchain().compile(&BuildRequest {
        entry: &entry,
        signature: &record.signature,
        source,
        deps: &deps,
    });
    assert!(
        r.success,
        "build of {} failed: {}",
        record.qualname,
        r.summary(3)
    );
    r
}

pub fn original(record: &FunctionRecord, dir: &Path) -> Executable {
    source_driver(record, dir, DriverMode::Run, None).unwrap()
}

/// Build a suite through the coverage loop with scripted model replies.
pub fn scripted_suite(record: &FunctionRecord, replies: &[&str]) -> TestSuite {
    let dir = tempfile::tempdir().unwrap();
    let session = suite::session_id(record);
    let owned: Vec<String> = replies.iter().map(|s| s.to_string()).collect();
    std::fs::write(
        ScriptBackend::script_path(dir.path(), &session),
        ScriptBackend::render_script(&owned),
    )
    .unwrap();
    let mut conv = Conversation::new(Arc::new(ScriptBackend::new(dir.path())), &session);
    let adapter = PythonCoverage {
        work_dir: dir.path().join("cov"),
        timeout: Duration::from_secs(30),
    };
    std::fs::create_dir_all(&adapter.work_dir).unwrap();
    suite::build_suite(
        record,
        &mut conv,
        &adapter,
        SuiteSettings {
            stagnation_limit: 3,
            iteration_cap: 10,
        },
    )
    .unwrap()
}
