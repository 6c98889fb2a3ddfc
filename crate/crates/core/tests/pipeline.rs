mod common;

use std::collections::BTreeMap;

use teeport_core::model::FailureTag;
use teeport_core::model::LanguageId;
use teeport_core::par::Parallelism;
use teeport_core::pipeline::{self, PipelineError};
use teeport_core::workspace::{PipelineConfig, Workspace};

fn scanned() -> (tempfile::TempDir, Workspace) {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::init(dir.path().join("ws"), PipelineConfig::default()).unwrap();
    let s = pipeline::scan(
        &ws,
        &common::corpus().join("python"),
        &LanguageId::python(),
        Parallelism::Sequential,
    )
    .unwrap();
    assert_eq!((s.functions, s.leaves), (24, 15));
    (dir, ws)
}

#[test]
fn stages_check_their_preconditions() {
    let dir = tempfile::tempdir().unwrap();
    let empty = Workspace::init(dir.path().join("empty"), PipelineConfig::default()).unwrap();
    let backend = pipeline::backend(&empty, Some(&common::corpus().join("transcripts"))).unwrap();
    assert!(matches!(
        pipeline::identify(&empty, backend, Parallelism::Sequential),
        Err(PipelineError::Precondition(_))
    ));

    let (dir, ws) = scanned();
    let err = pipeline::link(
        &ws,
        &common::corpus().join("python"),
        &dir.path().join("out"),
    )
    .unwrap_err();
    assert!(err.to_string().contains("run adapt first"), "{err}");
    assert!(pipeline::serve(&ws, &dir.path().join("nowhere"), None).is_err());
}

#[test]
fn report_after_scan_and_identify() {
    let (_dir, ws) = scanned();
    let backend = pipeline::backend(&ws, Some(&common::corpus().join("transcripts"))).unwrap();
    let (_, summary) = pipeline::identify(&ws, backend, Parallelism::Parallel).unwrap();
    assert_eq!(
        (summary.sensitive, summary.non_sensitive, summary.unresolved),
        (11, 4, 0)
    );

    let hmac = ws
        .latest_by_fqid::<teeport_core::model::FunctionRecord>()
        .unwrap()
        .into_keys()
        .find(|k| k.contains("hmac_sign"))
        .unwrap();
    let notes = BTreeMap::from([(hmac.clone(), vec![FailureTag::SophisticatedCrypto])]);
    let (report, text) = pipeline::report(&ws, &notes).unwrap();
    assert_eq!(report.functions.len(), 24);
    assert_eq!(
        report
            .functions
            .iter()
            .filter(|f| f.leaf == Some(true))
            .count(),
        15
    );
    assert_eq!(
        report
            .functions
            .iter()
            .filter(|f| f.label.is_some())
            .count(),
        15
    );
    let row = text.lines().find(|l| l.starts_with(&hmac)).unwrap();
    assert!(
        row.contains("SENSITIVE") && row.ends_with("SOPHISTICATED_CRYPTO"),
        "{row}"
    );
    assert_eq!(report.tokens["identify"].sessions, 15);
    assert!(ws.reports_dir().join("pipeline.json").exists());
}

#[test]
fn integration_check_runs_both_trees() {
    let dir = tempfile::tempdir().unwrap();
    let (orig, linked) = (dir.path().join("orig"), dir.path().join("linked"));
    std::fs::create_dir_all(&orig).unwrap();
    std::fs::create_dir_all(&linked).unwrap();
    std::fs::write(orig.join("ok"), "").unwrap();
    let r = pipeline::integration(&orig, &linked, "test -f ok").unwrap();
    assert!(r.original_passed && !r.linked_passed && !r.no_new_failures());
    std::fs::write(linked.join("ok"), "").unwrap();
    assert!(pipeline::integration(&orig, &linked, "test -f ok")
        .unwrap()
        .no_new_failures());
}
