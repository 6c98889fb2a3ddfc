//! Workspace-level stages. Each stage reads the latest records of the
//! previous one and persists its own; nothing is passed in memory between
//! stages, so any stage can be re-run on its own.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{self, LeafVerdict, ParseDiagnostic};
use crate::drivers::{run_batch, source_driver, DriverError, DriverMode};
use crate::enclave::launch::{launch_enclave, runtime_program, EnclaveHandle, LaunchOptions};
use crate::enclave::stub::{link_python_project, LinkConfig, LinkError, LinkTarget, LINK_FILE};
use crate::enclave::{sign_and_measure, EnclaveError, KeyStore, SignedImage};
use crate::identify::{classify_batch, BatchSummary, Label, SensitivityVerdict};
use crate::llm::transcript::Transcript;
use crate::llm::LiveSettings;
use crate::llm::{backend_for, Backend, Conversation, LlmError};
use crate::metrics::{compute_transform_metrics, OverheadRow, OverheadTable, TransformMetrics};
use crate::model::{FailureTag, FunctionRecord, LanguageId};
use crate::par::{self, Parallelism};
use crate::suite::{self, build_suite, SuiteSettings, SuiteStatus, TestSuite};
use crate::transform::adapt::{adapt_platform, AdaptError, TeeProfile};
use crate::transform::toolchain::{BuildRequest, CargoToolchain, CompileReport, Toolchain};
use crate::transform::{
    self as xform, transform_function, Equivalence, FewShotPack, TransformArtifact,
    TransformContext, TransformOutcome,
};
use crate::validate::{EquivalenceOutcome, EquivalenceVerdict, Oracle, ValidateOptions};
use crate::workspace::{Workspace, WorkspaceError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Analyzer(#[from] analyzer::AnalyzerError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Enclave(#[from] EnclaveError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Precondition(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Result of one stage for one function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResult {
    pub fqid: String,
    pub ok: bool,
    pub detail: String,
}

impl StageResult {
    fn ok(fqid: &str, detail: String) -> Self {
        StageResult {
            fqid: fqid.into(),
            ok: true,
            detail,
        }
    }

    fn err(fqid: &str, detail: String) -> Self {
        StageResult {
            fqid: fqid.into(),
            ok: false,
            detail,
        }
    }
}

pub fn live_settings(ws: &Workspace) -> LiveSettings {
    let c = ws.config();
    LiveSettings {
        model: c.llm_model.clone(),
        temperature: c.llm_temperature.parse().unwrap_or(0.0),
        retry_limit: c.llm_retry_limit,
        ..LiveSettings::default()
    }
}

/// The configured backend. Replay and script backends read from `fixtures`,
/// defaulting to the workspace transcripts.
pub fn backend(ws: &Workspace, fixtures: Option<&Path>) -> Result<Arc<dyn Backend>, PipelineError> {
    let dir = fixtures
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ws.transcripts_dir());
    Ok(backend_for(
        &ws.config().backend_id,
        &dir,
        &live_settings(ws),
    )?)
}

fn timeout(ws: &Workspace) -> Duration {
    Duration::from_millis(ws.config().case_timeout_ms)
}

fn scratch(ws: &Workspace, kind: &str, record: &FunctionRecord) -> Result<PathBuf, PipelineError> {
    let dir = ws.artifacts_dir().join(kind).join(record.slug());
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    Ok(dir)
}

pub fn toolchain(ws: &Workspace) -> Result<CargoToolchain, PipelineError> {
    match ws.config().toolchain_id.as_str() {
        "cargo" => Ok(CargoToolchain::new(ws.artifacts_dir().join("build"))),
        other => Err(PipelineError::Precondition(format!(
            "unknown toolchain `{other}`"
        ))),
    }
}

fn records(ws: &Workspace) -> Result<BTreeMap<String, FunctionRecord>, PipelineError> {
    Ok(ws.latest_by_fqid::<FunctionRecord>()?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanSummary {
    pub functions: usize,
    pub leaves: usize,
    pub diagnostics: Vec<ParseDiagnostic>,
}

/// Parse a project, persist one record per function and one leaf verdict each.
pub fn scan(
    ws: &Workspace,
    root: &Path,
    language: &LanguageId,
    mode: Parallelism,
) -> Result<ScanSummary, PipelineError> {
    let parsed = analyzer::parse_project(root, language, mode)?;
    for r in &parsed.records {
        ws.persist(r)?;
    }
    let leaves = analyzer::extract_leaf_functions(
        &parsed.records,
        &analyzer::mapping::LibraryMappings::builtin(),
        mode,
    );
    for v in &leaves {
        ws.persist(v)?;
    }
    Ok(ScanSummary {
        functions: parsed.records.len(),
        leaves: leaves.iter().filter(|v| v.is_leaf).count(),
        diagnostics: parsed.diagnostics,
    })
}

/// Classify every leaf function.
pub fn identify(
    ws: &Workspace,
    backend: Arc<dyn Backend>,
    mode: Parallelism,
) -> Result<(Vec<SensitivityVerdict>, BatchSummary), PipelineError> {
    let recs = records(ws)?;
    let leaves = ws.latest_by_fqid::<LeafVerdict>()?;
    let todo: Vec<FunctionRecord> = recs
        .values()
        .filter(|r| leaves.get(&r.fqid).is_some_and(|l| l.is_leaf))
        .cloned()
        .collect();
    if recs.is_empty() {
        return Err(PipelineError::Precondition(
            "no function records; run scan first".into(),
        ));
    }
    let rounds = ws.config().identification_rounds.clamp(1, 3) as u8;
    let (verdicts, summary) =
        classify_batch(&todo, backend, rounds, Some(&ws.transcripts_dir()), mode);
    for v in &verdicts {
        ws.persist(v)?;
    }
    Ok((verdicts, summary))
}

fn sensitive(ws: &Workspace) -> Result<Vec<(FunctionRecord, SensitivityVerdict)>, PipelineError> {
    let recs = records(ws)?;
    Ok(ws
        .latest_by_fqid::<SensitivityVerdict>()?
        .into_values()
        .filter(|v| v.label == Label::Sensitive)
        .filter_map(|v| recs.get(&v.fqid).cloned().map(|r| (r, v)))
        .collect())
}

/// Build a coverage-guided suite for every sensitive function.
pub fn gen_tests(
    ws: &Workspace,
    backend: Arc<dyn Backend>,
    mode: Parallelism,
) -> Result<Vec<StageResult>, PipelineError> {
    let todo = sensitive(ws)?;
    let settings = SuiteSettings {
        stagnation_limit: ws.config().coverage_stagnation_limit,
        iteration_cap: ws.config().coverage_iteration_cap,
    };
    let results = par::map(
        mode,
        &todo,
        |(record, _)| -> Result<StageResult, PipelineError> {
            let dir = scratch(ws, "coverage", record)?;
            let adapter = match suite::coverage_adapter(&record.language, dir, timeout(ws)) {
                Ok(a) => a,
                Err(e) => return Ok(StageResult::err(&record.fqid, e.to_string())),
            };
            let mut conv = Conversation::new(backend.clone(), &suite::session_id(record));
            match build_suite(record, &mut conv, adapter.as_ref(), settings) {
                Ok(s) => {
                    conv.save(&ws.transcripts_dir())?;
                    ws.persist(&s)?;
                    let last = s.final_report().expect("suites have history");
                    Ok(StageResult::ok(
                        &record.fqid,
                        format!(
                            "{} cases, {:?}, line {:.0}% branch {:.0}% after {} iteration(s)",
                            s.cases.len(),
                            s.status,
                            last.line_pct,
                            last.branch_pct,
                            s.history.len()
                        ),
                    ))
                }
                Err(e) => Ok(StageResult::err(&record.fqid, e.to_string())),
            }
        },
    );
    results.into_iter().collect()
}

fn with_suites(ws: &Workspace) -> Result<Vec<(FunctionRecord, TestSuite)>, PipelineError> {
    let recs = records(ws)?;
    Ok(ws
        .latest_by_fqid::<TestSuite>()?
        .into_values()
        .filter_map(|s| recs.get(&s.fqid).cloned().map(|r| (r, s)))
        .collect())
}

fn oracle<'a>(
    ws: &Workspace,
    record: &'a FunctionRecord,
    suite: &'a TestSuite,
    mode: Parallelism,
) -> Result<Oracle<'a>, StageResult> {
    let dir = scratch(ws, "drivers", record)
        .map_err(|e| StageResult::err(&record.fqid, e.to_string()))?;
    let exe = source_driver(record, &dir, DriverMode::Run, None)
        .map_err(|e| StageResult::err(&record.fqid, e.to_string()))?;
    Oracle::new(
        record,
        suite,
        &exe,
        ValidateOptions {
            timeout: timeout(ws),
            mode,
        },
    )
    .map_err(|v| StageResult::err(&record.fqid, v.feedback()))
}

/// Translate every function that has a suite.
pub fn transform(
    ws: &Workspace,
    backend: Arc<dyn Backend>,
    mode: Parallelism,
) -> Result<Vec<StageResult>, PipelineError> {
    let verdicts = ws.latest_by_fqid::<SensitivityVerdict>()?;
    let tc = toolchain(ws)?;
    let pack = FewShotPack::builtin();
    let mut out = Vec::new();
    // Sequential per function: builds share one target directory and the
    // oracle already runs cases in parallel.
    for (record, suite) in with_suites(ws)? {
        let oracle = match oracle(ws, &record, &suite, mode) {
            Ok(o) => o,
            Err(e) => {
                out.push(e);
                continue;
            }
        };
        let ctx = TransformContext {
            toolchain: &tc,
            oracle: &oracle,
            pack: &pack,
            few_shot_count: ws.config().few_shot_example_count as usize,
            threshold: ws.config().refinement_threshold,
            categories: verdicts
                .get(&record.fqid)
                .map(|v| v.categories.clone())
                .unwrap_or_default(),
        };
        let mut conv = Conversation::new(backend.clone(), &xform::session_id(&record));
        let a = transform_function(&record, &mut conv, &ctx);
        conv.save(&ws.transcripts_dir())?;
        ws.persist(&a)?;
        let detail = match a.outcome {
            TransformOutcome::Failed => {
                format!("FAILED after {} step(s) {:?}", a.iterations, a.failure_tags)
            }
            o => format!("{o} after {} iteration(s)", a.iterations),
        };
        out.push(StageResult {
            fqid: record.fqid.clone(),
            ok: a.outcome != TransformOutcome::Failed,
            detail,
        });
    }
    Ok(out)
}

fn built(a: &TransformArtifact) -> Option<CompileReport> {
    (a.outcome != TransformOutcome::Failed).then(|| CompileReport {
        success: true,
        errors: Vec::new(),
        warnings: 0,
        binary: a.binary.clone(),
        build_hash: a.build_hash.clone().unwrap_or_default(),
        unshimmable: Vec::new(),
    })
}

fn successful(
    ws: &Workspace,
) -> Result<Vec<(FunctionRecord, TestSuite, TransformArtifact)>, PipelineError> {
    let arts = ws.latest_by_fqid::<TransformArtifact>()?;
    Ok(with_suites(ws)?
        .into_iter()
        .filter_map(|(r, s)| {
            arts.get(&r.fqid)
                .filter(|a| a.outcome != TransformOutcome::Failed)
                .cloned()
                .map(|a| (r, s, a))
        })
        .collect())
}

/// Re-check every successful artifact against its suite. Adapted artifacts
/// run under the enclave policy.
pub fn validate(
    ws: &Workspace,
    mode: Parallelism,
) -> Result<Vec<EquivalenceVerdict>, PipelineError> {
    let mut out = Vec::new();
    for (record, suite, art) in successful(ws)? {
        let mut o = match oracle(ws, &record, &suite, mode) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("{}: {}", e.fqid, e.detail);
                continue;
            }
        };
        o.sandbox = art.platform.is_some();
        let v = o.check(&built(&art).expect("successful artifacts are built"));
        ws.persist(&v)?;
        out.push(v);
    }
    Ok(out)
}

/// Rewrite each successful artifact for the configured enclave profile,
/// rebuild it and revalidate under the enclave policy. Only artifacts that
/// stay equivalent are persisted as adapted.
pub fn adapt(
    ws: &Workspace,
    env: &BTreeMap<String, String>,
    mode: Parallelism,
) -> Result<Vec<StageResult>, PipelineError> {
    let profile = TeeProfile::by_id(&ws.config().tee_profile_id, env.clone())?;
    let tc = toolchain(ws)?;
    let mut out = Vec::new();
    for (record, suite, art) in successful(ws)? {
        let adapted = match adapt_platform(&art.native_code, &profile) {
            Ok(a) => a,
            Err(e) => {
                out.push(StageResult::err(&record.fqid, e.to_string()));
                continue;
            }
        };
        let entry = record.native_entry();
        let build = tc.compile(&BuildRequest {
            entry: &entry,
            signature: &record.signature,
            source: &adapted.code,
            deps: &art.dependencies,
        });
        if !build.success {
            out.push(StageResult::err(
                &record.fqid,
                format!("adapted code does not build: {}", build.summary(1)),
            ));
            continue;
        }
        let mut o = match oracle(ws, &record, &suite, mode) {
            Ok(o) => o,
            Err(e) => {
                out.push(e);
                continue;
            }
        };
        o.sandbox = true;
        let v = o.check(&build);
        ws.persist(&v)?;
        if v.outcome != EquivalenceOutcome::Equivalent {
            out.push(StageResult::err(
                &record.fqid,
                format!("adapted build is {}: {}", v.outcome, v.feedback()),
            ));
            continue;
        }
        let mut next = art.clone();
        next.native_code = adapted.code;
        next.binary = build.binary.clone();
        next.build_hash = Some(build.build_hash.clone());
        next.platform = Some(profile.id.clone());
        next.warnings
            .extend(adapted.rewrites.iter().map(|r| format!("adapt: {r}")));
        ws.persist(&next)?;
        let detail = if adapted.rewrites.is_empty() {
            "no rewrites needed".to_string()
        } else {
            adapted.rewrites.join("; ")
        };
        out.push(StageResult::ok(&record.fqid, detail));
    }
    Ok(out)
}

pub fn keys(ws: &Workspace) -> Result<KeyStore, PipelineError> {
    Ok(KeyStore::load_or_generate(&ws.root().join("keys"))?)
}

/// Functions ready to partition: adapted, and whose latest verdict is
/// EQUIVALENT.
fn partitionable(
    ws: &Workspace,
) -> Result<Vec<(FunctionRecord, TransformArtifact)>, PipelineError> {
    let verdicts = ws.latest_by_fqid::<EquivalenceVerdict>()?;
    Ok(successful(ws)?
        .into_iter()
        .filter(|(r, _, a)| {
            a.platform.is_some()
                && verdicts
                    .get(&r.fqid)
                    .is_some_and(|v| v.outcome == EquivalenceOutcome::Equivalent)
        })
        .map(|(r, _, a)| (r, a))
        .collect())
}

/// Sign every partitionable image and write a linked copy of `src_root` to
/// `out_root`. Endpoints stay empty until `serve` publishes them.
pub fn link(
    ws: &Workspace,
    src_root: &Path,
    out_root: &Path,
) -> Result<Vec<SignedImage>, PipelineError> {
    let keys = keys(ws)?;
    let parts = partitionable(ws)?;
    if parts.is_empty() {
        return Err(PipelineError::Precondition(
            "no adapted, equivalent functions to link; run adapt first".into(),
        ));
    }
    let images_dir = ws.artifacts_dir().join("images");
    std::fs::create_dir_all(&images_dir).map_err(io(&images_dir))?;
    let mut images = Vec::new();
    let mut config = LinkConfig {
        attestation_public: keys.attestation_public(),
        images: BTreeMap::new(),
    };
    for (record, art) in &parts {
        let src = art
            .binary
            .as_ref()
            .expect("successful artifacts have binaries");
        let dst = images_dir.join(format!(
            "{}-{}",
            record.slug(),
            art.build_hash.as_deref().unwrap_or("x")
        ));
        std::fs::copy(src, &dst).map_err(io(src))?;
        let img = sign_and_measure(
            &dst,
            &record.fqid,
            &record.signature.ret,
            &ws.config().toolchain_id,
            &keys.harness,
        )?;
        ws.persist(&img)?;
        config.images.insert(
            record.fqid.clone(),
            LinkTarget {
                endpoint: String::new(),
                measurement: img.measurement.clone(),
            },
        );
        images.push(img);
    }
    let recs: Vec<FunctionRecord> = parts.into_iter().map(|(r, _)| r).collect();
    link_python_project(src_root, out_root, &recs, &config)?;
    Ok(images)
}

/// Running runtimes, one per image, and the link file they were published to.
pub struct Served {
    pub handles: Vec<(SignedImage, EnclaveHandle)>,
    pub link_file: PathBuf,
}

/// Launch one runtime per image named in the linked project's link file and
/// write their endpoints back into it.
pub fn serve(
    ws: &Workspace,
    linked_root: &Path,
    program: Option<PathBuf>,
) -> Result<Served, PipelineError> {
    let keys = keys(ws)?;
    let link_file = linked_root.join(LINK_FILE);
    let text = std::fs::read_to_string(&link_file).map_err(io(&link_file))?;
    let mut config: LinkConfig = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Precondition(format!("{}: {e}", link_file.display())))?;
    if config.attestation_public != keys.attestation_public() {
        return Err(PipelineError::Precondition(
            "the linked project was built with other keys".into(),
        ));
    }
    let images = ws.latest_by_fqid::<SignedImage>()?;
    let program = match program {
        Some(p) => p,
        None => runtime_program()?,
    };
    let mut handles = Vec::new();
    for (fqid, target) in config.images.iter_mut() {
        let img = images
            .get(fqid)
            .filter(|i| i.measurement == target.measurement)
            .ok_or_else(|| {
                PipelineError::Precondition(format!(
                    "{fqid}: no signed image with the linked measurement"
                ))
            })?;
        let opts = LaunchOptions {
            program: program.clone(),
            args: Vec::new(),
            log: ws
                .artifacts_dir()
                .join("enclave-logs")
                .join(format!("{}.log", crate::model::slug_of(fqid))),
            case_timeout: timeout(ws),
        };
        let h = launch_enclave(img, &keys, &opts)?;
        target.endpoint = h.endpoint();
        handles.push((img.clone(), h));
    }
    std::fs::write(
        &link_file,
        serde_json::to_string_pretty(&config).expect("configs serialize"),
    )
    .map_err(io(&link_file))?;
    Ok(Served { handles, link_file })
}

#[derive(Debug, Deserialize)]
struct BenchReply {
    runs: Vec<f64>,
}

fn bench_side(
    exe: &crate::drivers::Executable,
    lines: &[String],
    repeat: usize,
    limit: Duration,
) -> Result<Vec<f64>, String> {
    let req = serde_json::json!({"cases": lines, "runs": repeat, "iterations": 1});
    let out = run_batch(exe, &req.to_string(), limit).map_err(|e| e.to_string())?;
    let reply: BenchReply =
        serde_json::from_str(out.trim()).map_err(|e| format!("bad bench reply: {e}"))?;
    Ok(reply.runs.into_iter().map(|s| s * 1000.0).collect())
}

/// Time every linked function on both sides: the original in-process call and
/// the stub (attestation, channel setup and call per invocation). Each run
/// calls every suite case once; runs are strictly sequential.
pub fn bench(ws: &Workspace, linked_root: &Path) -> Result<Vec<OverheadRow>, PipelineError> {
    let link_file = linked_root.join(LINK_FILE);
    let text = std::fs::read_to_string(&link_file).map_err(io(&link_file))?;
    let config: LinkConfig = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Precondition(format!("{}: {e}", link_file.display())))?;
    let recs = records(ws)?;
    let suites = ws.latest_by_fqid::<TestSuite>()?;
    let arts = ws.latest_by_fqid::<TransformArtifact>()?;
    let repeat = ws.config().run_repeat_count as usize;
    let mut rows = Vec::new();
    for (fqid, target) in &config.images {
        let Some(record) = recs.get(fqid) else {
            continue;
        };
        let name = format!("{} ({})", record.qualname, record.language);
        let ext = arts.get(fqid).is_some_and(|a| !a.dependencies.is_empty());
        let lines: Vec<String> = suites
            .get(fqid)
            .map(|s| s.cases.iter().map(|c| c.line()).collect())
            .unwrap_or_default();
        if lines.is_empty() {
            rows.push(OverheadRow::excluded(&name, ext, "no test inputs".into()));
            continue;
        }
        if target.endpoint.is_empty() {
            rows.push(OverheadRow::excluded(&name, ext, "not served".into()));
            continue;
        }
        let dir = scratch(ws, "bench", record)?;
        let (ori_dir, tee_dir) = (dir.join("ori"), dir.join("tee"));
        for d in [&ori_dir, &tee_dir] {
            std::fs::create_dir_all(d).map_err(io(d))?;
        }
        let limit = timeout(ws) * (repeat as u32 * lines.len() as u32).max(1);
        let measured = source_driver(record, &ori_dir, DriverMode::Bench, None)
            .map_err(|e| e.to_string())
            .and_then(|ori| bench_side(&ori, &lines, repeat, limit))
            .and_then(|ori| {
                let tee = source_driver(record, &tee_dir, DriverMode::Bench, Some(linked_root))
                    .map_err(|e| e.to_string())?;
                Ok((ori, bench_side(&tee, &lines, repeat, limit)?))
            });
        rows.push(match measured {
            Ok((ori, tee)) => OverheadRow::from_samples(&name, ext, &ori, &tee, repeat)
                .unwrap_or_else(|e| OverheadRow::excluded(&name, ext, e.to_string())),
            Err(e) => {
                OverheadRow::excluded(&name, ext, e.lines().next().unwrap_or("failed").to_string())
            }
        });
    }
    let json = serde_json::to_value(&rows).expect("rows serialize");
    let rendered: Vec<serde_json::Value> = rows
        .iter()
        .zip(json.as_array().expect("array"))
        .map(|(r, v)| {
            let mut v = v.clone();
            v["multiple"] = serde_json::json!(r.multiple());
            v
        })
        .collect();
    ws.write_report(
        "overhead",
        &OverheadTable(&rows).to_string(),
        &serde_json::json!({ "rows": rendered }),
    )?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrationResult {
    pub command: String,
    pub original_passed: bool,
    pub linked_passed: bool,
}

impl IntegrationResult {
    /// "No new tests failed": the linked project passes whenever the original does.
    pub fn no_new_failures(&self) -> bool {
        self.linked_passed || !self.original_passed
    }
}

/// Run the project's own test command in the original and the linked tree.
pub fn integration(
    original_root: &Path,
    linked_root: &Path,
    command: &str,
) -> Result<IntegrationResult, PipelineError> {
    let run = |dir: &Path| -> Result<bool, PipelineError> {
        let status = Command::new("sh")
            .arg("-c")
            .arg(command)
            .current_dir(dir)
            .stdout(std::process::Stdio::null())
            .stderr(std::process::Stdio::null())
            .status()
            .map_err(io(dir))?;
        Ok(status.success())
    };
    Ok(IntegrationResult {
        command: command.to_string(),
        original_passed: run(original_root)?,
        linked_passed: run(linked_root)?,
    })
}

/// Manual failure annotations: `fqid = TAG[, TAG...]` per line, `#` comments.
pub fn parse_annotations(text: &str) -> Result<BTreeMap<String, Vec<FailureTag>>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        // fqids contain `#`; a comment starts the line or follows whitespace
        let line = line.trim();
        let line = match line.find(" #").or_else(|| line.find("\t#")) {
            _ if line.starts_with('#') => "",
            Some(i) => line[..i].trim(),
            None => line,
        };
        if line.is_empty() {
            continue;
        }
        let (fqid, tags) = line
            .rsplit_once('=')
            .ok_or_else(|| format!("line {}: expected `fqid = TAG`", i + 1))?;
        let tags = tags
            .split(',')
            .map(|t| {
                t.parse::<FailureTag>()
                    .map_err(|e| format!("line {}: {e}", i + 1))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.insert(fqid.trim().to_string(), tags);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionStatus {
    pub fqid: String,
    pub leaf: Option<bool>,
    pub label: Option<Label>,
    pub suite: Option<String>,
    pub transform: Option<String>,
    pub equivalence: Option<EquivalenceOutcome>,
    pub platform: Option<String>,
    pub image: Option<String>,
    pub failure_tags: Vec<FailureTag>,
    pub manual_tags: Vec<FailureTag>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub sessions: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub functions: Vec<FunctionStatus>,
    pub transform: TransformMetrics,
    /// Per stage (session prefix).
    pub tokens: BTreeMap<String, TokenUsage>,
}

fn token_usage(dir: &Path) -> BTreeMap<String, TokenUsage> {
    let mut out: BTreeMap<String, TokenUsage> = BTreeMap::new();
    let Ok(entries) = std::fs::read_dir(dir) else {
        return out;
    };
    for e in entries.flatten() {
        let Ok(text) = std::fs::read_to_string(e.path()) else {
            continue;
        };
        let Ok(t) = Transcript::parse(&text) else {
            continue;
        };
        let stage = t.session.split("--").next().unwrap_or("other").to_string();
        let u = out.entry(stage).or_default();
        u.sessions += 1;
        for turn in &t.turns {
            match turn.role {
                crate::llm::Role::User => u.prompt_tokens += turn.tokens,
                crate::llm::Role::Assistant => u.completion_tokens += turn.tokens,
                crate::llm::Role::System => {}
            }
        }
    }
    out
}

fn short(s: &str) -> String {
    s.chars().take(12).collect()
}

/// Per-function status of everything in the workspace, written to
/// `reports/pipeline.{txt,json}`.
pub fn report(
    ws: &Workspace,
    annotations: &BTreeMap<String, Vec<FailureTag>>,
) -> Result<(Report, String), PipelineError> {
    let recs = records(ws)?;
    let leaves = ws.latest_by_fqid::<LeafVerdict>()?;
    let labels = ws.latest_by_fqid::<SensitivityVerdict>()?;
    let suites = ws.latest_by_fqid::<TestSuite>()?;
    let arts = ws.latest_by_fqid::<TransformArtifact>()?;
    let eqs = ws.latest_by_fqid::<EquivalenceVerdict>()?;
    let images = ws.latest_by_fqid::<SignedImage>()?;
    let ids: BTreeSet<&String> = recs.keys().chain(annotations.keys()).collect();
    let functions: Vec<FunctionStatus> = ids
        .into_iter()
        .map(|id| FunctionStatus {
            fqid: id.clone(),
            leaf: leaves.get(id).map(|l| l.is_leaf),
            label: labels.get(id).map(|v| v.label),
            suite: suites.get(id).map(|s| {
                let status = match s.status {
                    SuiteStatus::FullCoverage => "FULL",
                    SuiteStatus::Stagnated => "STAGNATED",
                };
                format!("{status}/{}", s.cases.len())
            }),
            transform: arts
                .get(id)
                .map(|a| format!("{}/{}", a.outcome, a.iterations)),
            equivalence: eqs.get(id).map(|v| v.outcome),
            platform: arts.get(id).and_then(|a| a.platform.clone()),
            image: images.get(id).map(|i| short(&i.measurement)),
            failure_tags: arts
                .get(id)
                .map(|a| a.failure_tags.clone())
                .unwrap_or_default(),
            manual_tags: annotations.get(id).cloned().unwrap_or_default(),
        })
        .collect();
    let all_arts: Vec<TransformArtifact> = arts.into_values().collect();
    let report = Report {
        functions,
        transform: compute_transform_metrics(&all_arts),
        tokens: token_usage(&ws.transcripts_dir()),
    };
    let text = render_report(&report);
    ws.write_report(
        "pipeline",
        &text,
        &serde_json::to_value(&report).expect("reports serialize"),
    )?;
    Ok((report, text))
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_else(|| "-".into())
}

fn label_text(l: Option<Label>) -> &'static str {
    match l {
        Some(Label::Sensitive) => "SENSITIVE",
        Some(Label::NonSensitive) => "NON_SENSITIVE",
        Some(Label::Unresolved) => "UNRESOLVED",
        None => "-",
    }
}

fn tags(t: &[FailureTag]) -> String {
    if t.is_empty() {
        "-".into()
    } else {
        t.iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

pub fn render_report(r: &Report) -> String {
    let mut out = format!(
        "{:<56} {:<5} {:<13} {:<14} {:<14} {:<15} {:<8} {:<12} {:<22} {}\n",
        "function",
        "leaf",
        "label",
        "suite",
        "transform",
        "equivalence",
        "profile",
        "image",
        "tags",
        "manual"
    );
    for f in &r.functions {
        out.push_str(&format!(
            "{:<56} {:<5} {:<13} {:<14} {:<14} {:<15} {:<8} {:<12} {:<22} {}\n",
            f.fqid,
            f.leaf.map(|l| if l { "yes" } else { "no" }).unwrap_or("-"),
            label_text(f.label),
            opt(&f.suite),
            opt(&f.transform),
            opt(&f.equivalence),
            opt(&f.platform),
            opt(&f.image),
            tags(&f.failure_tags),
            tags(&f.manual_tags),
        ));
    }
    let m = &r.transform;
    out.push_str(&format!(
        "\n#sensitive {}  #direct {}  #equivalent {}  avg iterations {}\n",
        m.n_sensitive,
        m.n_direct,
        m.n_equivalent,
        m.avg_display()
    ));
    if !r.tokens.is_empty() {
        out.push_str(&format!(
            "\n{:<12} {:>8} {:>14} {:>18}\n",
            "stage", "sessions", "prompt tokens", "completion tokens"
        ));
        for (stage, u) in &r.tokens {
            out.push_str(&format!(
                "{:<12} {:>8} {:>14} {:>18}\n",
                stage, u.sessions, u.prompt_tokens, u.completion_tokens
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotations_parse() {
        let a = parse_annotations(
            "# manual triage\nm.py::f#abcd1234 = SHIFT_OPERATIONS, missing_flag  # shifts\n\n",
        )
        .unwrap();
        assert_eq!(
            a["m.py::f#abcd1234"],
            [FailureTag::ShiftOperations, FailureTag::MissingFlag]
        );
        assert!(parse_annotations("x = NOPE").is_err());
        assert!(parse_annotations("no tags here").is_err());
    }

    #[test]
    fn integration_rule() {
        let r = |o, l| IntegrationResult {
            command: "t".into(),
            original_passed: o,
            linked_passed: l,
        };
        assert!(r(true, true).no_new_failures());
        assert!(!r(true, false).no_new_failures());
        assert!(r(false, false).no_new_failures());
    }
}
