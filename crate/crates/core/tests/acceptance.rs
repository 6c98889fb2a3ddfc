//! Acceptance run: one PASS/FAIL line per criterion. Each check compares
//! the library against an oracle written here (brute force, hand-verified
//! traces or published numbers), never against its own output.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::net::TcpStream;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use regex::Regex;
use serde_json::json;
use teeport_core::analyzer::{self, mapping::LibraryMappings};
use teeport_core::drivers::{run_case, source_driver, DriverMode, Executable};
use teeport_core::enclave::client::EnclaveClient;
use teeport_core::enclave::frame::{read_frame, write_frame, Frame, FrameType};
use teeport_core::enclave::launch::{launch_enclave, LaunchOptions};
use teeport_core::enclave::proxy::{Tamper, TamperProxy};
use teeport_core::enclave::{EnclaveError, QuoteVerifier, SignedImage};
use teeport_core::identify::{classify_batch, Label};
use teeport_core::llm::{Conversation, ReplayBackend, ScriptBackend};
use teeport_core::metrics::stats::{mann_whitney_u, mcnemar_counts, mcnemar_test, midranks};
use teeport_core::metrics::{f1_score, OverheadRow, OverheadTable};
use teeport_core::model::{FunctionRecord, LanguageId};
use teeport_core::par::Parallelism;
use teeport_core::pipeline;
use teeport_core::suite::{CoverageAdapter, PythonCoverage, SuiteStatus, TestSuite};
use teeport_core::transform::adapt::{adapt_platform, TeeProfile};
use teeport_core::transform::toolchain::{BuildRequest, CompileReport, Diagnostic, Toolchain};
use teeport_core::transform::{
    self as xform, ActionKind, Equivalence, FewShotPack, TransformContext, TransformOutcome,
};
use teeport_core::validate::{EquivalenceOutcome, EquivalenceVerdict, Oracle, ValidateOptions};
use teeport_core::workspace::{PipelineConfig, Workspace};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn enclave_program() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_teeport-enclave"))
}

fn timeout() -> Duration {
    Duration::from_secs(30)
}

// ---------------------------------------------------------------- 1

#[derive(Debug)]
struct OracleFn {
    key: (String, String),
    leaf: bool,
}

fn python_basic(ty: &str) -> bool {
    Regex::new(r"^(int|float|str|bytes|bool)$|^list\[(int|float|str|bytes|bool)\]$")
        .unwrap()
        .is_match(ty.trim())
}

fn java_basic(ty: &str) -> bool {
    matches!(
        ty.trim(),
        "int"
            | "long"
            | "short"
            | "byte"
            | "char"
            | "double"
            | "float"
            | "boolean"
            | "String"
            | "byte[]"
            | "int[]"
            | "long[]"
    )
}

/// Names called in `body`: (qualifier, name), the qualifier being the
/// dotted path before the name or empty.
fn calls(body: &str) -> Vec<(String, String)> {
    let re = Regex::new(r"([A-Za-z_][\w.]*\.)?([A-Za-z_]\w*)\s*\(").unwrap();
    re.captures_iter(body)
        .map(|c| {
            (
                c.get(1)
                    .map(|m| m.as_str().trim_end_matches('.').to_string())
                    .unwrap_or_default(),
                c[2].to_string(),
            )
        })
        .collect()
}

/// Library calls neither side of the translation can carry: I/O, process
/// state and generator randomness.
const NO_COUNTERPART: &[&str] = &[
    "print",
    "open",
    "input",
    "getrandbits",
    "println",
    "getenv",
    "ArrayList",
];

fn brute_force_python(root: &Path) -> Vec<OracleFn> {
    let def = Regex::new(r"^(\s*)def\s+(\w+)\s*\((.*)\)\s*(?:->\s*(.+?))?\s*:\s*$").unwrap();
    let class = Regex::new(r"^class\s+(\w+)").unwrap();
    let mut files: Vec<PathBuf> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "py"))
        .collect();
    files.sort();
    struct Raw {
        key: (String, String),
        params: Vec<String>,
        ret: Option<String>,
        body: String,
        is_method: bool,
    }
    let mut raw = Vec::new();
    for f in &files {
        let rel = f.file_name().unwrap().to_string_lossy().to_string();
        let text = std::fs::read_to_string(f).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let mut current_class: Option<String> = None;
        for (i, line) in lines.iter().enumerate() {
            if let Some(c) = class.captures(line) {
                current_class = Some(c[1].to_string());
                continue;
            }
            if !line.starts_with(' ')
                && !line.trim().is_empty()
                && !line.starts_with('@')
                && !line.starts_with("def")
            {
                current_class = None;
            }
            let Some(c) = def.captures(line) else {
                continue;
            };
            let indent = c[1].len();
            let mut body = String::new();
            for next in &lines[i + 1..] {
                let ind = next.len() - next.trim_start().len();
                if !next.trim().is_empty() && ind <= indent {
                    break;
                }
                body.push_str(next);
                body.push('\n');
            }
            let in_class = indent > 0 && current_class.is_some();
            let qual = match (&current_class, in_class) {
                (Some(cls), true) => format!("{cls}.{}", &c[2]),
                _ => c[2].to_string(),
            };
            let static_method = i > 0 && lines[i - 1].trim() == "@staticmethod";
            let params: Vec<String> = c[3]
                .split(',')
                .map(|p| p.trim().to_string())
                .filter(|p| !p.is_empty())
                .collect();
            raw.push(Raw {
                key: (rel.clone(), qual),
                params,
                ret: c.get(4).map(|m| m.as_str().to_string()),
                body,
                is_method: in_class && !static_method,
            });
        }
    }
    let user: BTreeSet<String> = raw
        .iter()
        .map(|r| r.key.1.rsplit('.').next().unwrap().to_string())
        .collect();
    let modules: BTreeSet<String> = files
        .iter()
        .map(|f| f.file_stem().unwrap().to_string_lossy().to_string())
        .collect();
    raw.into_iter()
        .map(|r| {
            let mut params = r.params.clone();
            let mut basic = true;
            if r.is_method {
                params.remove(0);
                if r.body.contains("self.") || r.key.1.ends_with("__init__") {
                    basic = false;
                }
            }
            basic &= params
                .iter()
                .all(|p| p.split_once(':').is_some_and(|(_, t)| python_basic(t)));
            basic &= r.ret.as_deref().is_some_and(python_basic);
            let user_call = calls(&r.body).iter().any(|(q, n)| {
                user.contains(n) && (q.is_empty() || q == "self" || modules.contains(q))
            });
            let bad_lib = calls(&r.body)
                .iter()
                .any(|(_, n)| NO_COUNTERPART.contains(&n.as_str()));
            OracleFn {
                key: r.key,
                leaf: basic && !user_call && !bad_lib,
            }
        })
        .collect()
}

fn matching_brace(text: &str, open: usize) -> usize {
    let mut depth = 0;
    for (i, ch) in text[open..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return open + i;
                }
            }
            _ => {}
        }
    }
    panic!("unbalanced braces");
}

fn brute_force_java(root: &Path) -> Vec<OracleFn> {
    let header = Regex::new(r"(?m)^[ \t]*((?:(?:public|private|protected|static|final)\s+)*)([\w<>\[\]]+)\s+(\w+)\s*\(([^)]*)\)[^{;]*\{").unwrap();
    let class = Regex::new(r"class\s+(\w+)").unwrap();
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "java") {
                files.push(p);
            }
        }
    }
    files.sort();
    struct Raw {
        key: (String, String),
        basic: bool,
        body: String,
    }
    let mut raw = Vec::new();
    let mut classes = BTreeSet::new();
    for f in &files {
        let rel = f.strip_prefix(root).unwrap().to_string_lossy().to_string();
        let text = std::fs::read_to_string(f).unwrap();
        let cls = class.captures(&text).unwrap()[1].to_string();
        classes.insert(cls.clone());
        for c in header.captures_iter(&text) {
            let name = c[3].to_string();
            // constructors parse as a method whose "return type" is a modifier
            if name == cls || matches!(&c[2], "new" | "return" | "else") {
                continue;
            }
            let open = c.get(0).unwrap().end() - 1;
            let body = text[open + 1..matching_brace(&text, open)].to_string();
            let is_static = c[1].contains("static");
            let params_basic = c[4]
                .split(',')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .all(|p| {
                    p.rsplit_once(char::is_whitespace)
                        .is_some_and(|(t, _)| java_basic(t))
                });
            let reads_state = !is_static && body.contains("this.");
            raw.push(Raw {
                key: (rel.clone(), format!("{cls}.{name}")),
                basic: params_basic && java_basic(&c[2]) && !reads_state,
                body,
            });
        }
    }
    let user: BTreeSet<String> = raw
        .iter()
        .map(|r| r.key.1.rsplit('.').next().unwrap().to_string())
        .collect();
    raw.into_iter()
        .map(|r| {
            let cs = calls(&r.body);
            let user_call = cs.iter().any(|(q, n)| {
                user.contains(n) && (q.is_empty() || q == "this" || classes.contains(q))
            });
            let bad_lib = cs.iter().any(|(_, n)| NO_COUNTERPART.contains(&n.as_str()));
            OracleFn {
                key: r.key,
                leaf: r.basic && !user_call && !bad_lib,
            }
        })
        .collect()
}

fn leaf_extraction() -> Check {
    let started = Instant::now();
    let mappings = LibraryMappings::builtin();
    let mut total = 0;
    let mut leaves = 0;
    let mut non_leaves = 0;
    let mut discrepancies = Vec::new();
    for (lang, dir, oracle) in [
        (
            LanguageId::python(),
            "python",
            brute_force_python(&common::corpus().join("python")),
        ),
        (
            LanguageId::java(),
            "java",
            brute_force_java(&common::corpus().join("java")),
        ),
    ] {
        let parsed =
            analyzer::parse_project(&common::corpus().join(dir), &lang, Parallelism::Parallel)
                .map_err(|e| e.to_string())?;
        let verdicts =
            analyzer::extract_leaf_functions(&parsed.records, &mappings, Parallelism::Parallel);
        let got: BTreeMap<(String, String), bool> = parsed
            .records
            .iter()
            .zip(&verdicts)
            .map(|(r, v)| ((r.rel_path.clone(), r.qualname.clone()), v.is_leaf))
            .collect();
        let want: BTreeMap<(String, String), bool> =
            oracle.into_iter().map(|o| (o.key, o.leaf)).collect();
        let keys: BTreeSet<&(String, String)> = got.keys().chain(want.keys()).collect();
        for k in keys {
            if got.get(k) != want.get(k) {
                discrepancies.push(format!(
                    "{}::{} analyzer {:?} oracle {:?}",
                    k.0,
                    k.1,
                    got.get(k),
                    want.get(k)
                ));
            }
        }
        total += want.len();
        leaves += want.values().filter(|&&l| l).count();
        non_leaves += want.values().filter(|&&l| !l).count();
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(
        discrepancies.is_empty(),
        "{} discrepancies: {}",
        discrepancies.len(),
        discrepancies.join("; ")
    );
    ensure!(
        total >= 30 && non_leaves >= 8,
        "corpus too small: {total} functions, {non_leaves} non-leaf"
    );
    ensure!(secs < 10.0, "took {secs:.1} s");
    Ok(format!("{total} functions (python + java), {leaves} leaves, {non_leaves} non-leaves, 0 discrepancies, {secs:.2} s"))
}

// ---------------------------------------------------------------- 2

fn python_leaves() -> Vec<FunctionRecord> {
    let p = common::python_project();
    let verdicts = analyzer::extract_leaf_functions(
        &p.records,
        &LibraryMappings::builtin(),
        Parallelism::Sequential,
    );
    p.records
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| v.is_leaf)
        .map(|(r, _)| r.clone())
        .collect()
}

fn identification_replay() -> Check {
    let leaves = python_leaves();
    let run = || {
        let backend = Arc::new(ReplayBackend::new(common::corpus().join("transcripts")));
        let (verdicts, _) = classify_batch(&leaves, backend, 3, None, Parallelism::Parallel);
        verdicts
    };
    let (a, b) = (run(), run());
    let bytes =
        |v: &[teeport_core::identify::SensitivityVerdict]| serde_json::to_vec_pretty(v).unwrap();
    ensure!(bytes(&a) == bytes(&b), "the two replays differ");
    ensure!(
        a.iter().all(|v| v.error.is_none()),
        "replay errors: {:?}",
        a.iter()
            .filter_map(|v| v.error.as_ref())
            .collect::<Vec<_>>()
    );
    let short = a
        .iter()
        .filter(|v| v.rounds == 1 && v.label == Label::NonSensitive)
        .count();
    let retracted = a.iter().filter(|v| v.retracted_at_round.is_some()).count();
    ensure!(short >= 2, "only {short} round-1 short circuits");
    ensure!(retracted >= 2, "only {retracted} retractions");
    Ok(format!("{} verdicts byte-identical over 2 replays; {short} short-circuits, {retracted} retractions", a.len()))
}

// ---------------------------------------------------------------- 3

fn detection_metrics() -> Check {
    // (model, language, precision, recall, published F1)
    let table = [
        ("GPT-4o", "Java", 0.948, 0.968, 0.958),
        ("GPT-4o", "Python", 0.881, 0.885, 0.883),
        ("DeepSeek", "Java", 0.922, 0.967, 0.944),
        ("DeepSeek", "Python", 0.849, 0.915, 0.881),
        ("Qwen2.5", "Java", 0.948, 0.937, 0.942),
        ("Qwen2.5", "Python", 0.838, 0.908, 0.872),
        ("LLaMA3.1", "Java", 0.906, 0.905, 0.906),
        ("LLaMA3.1", "Python", 0.854, 0.869, 0.861),
    ];
    let mut worst: f64 = 0.0;
    let mut off = Vec::new();
    for (model, lang, p, r, f1) in table {
        let got = f1_score(p, r);
        if (got - f1).abs() > 5e-4 {
            off.push(format!(
                "{model} {lang}: F1 {got:.7} vs published {f1} (|d| = {:.7})",
                (got - f1).abs()
            ));
        }
        worst = worst.max((got - f1).abs());
    }
    ensure!(
        off.is_empty(),
        "{} of 8 rows outside 5e-4: {}",
        off.len(),
        off.join("; ")
    );
    // The confusion-matrix path agrees with the closed form.
    let gold: BTreeMap<String, bool> = (0..10).map(|i| (format!("f{i}"), i < 6)).collect();
    let pred: BTreeMap<String, bool> = (0..10)
        .map(|i| (format!("f{i}"), (1..8).contains(&i)))
        .collect();
    let m = teeport_core::metrics::compute_detection_metrics(&pred, &gold)
        .map_err(|e| e.to_string())?;
    ensure!(
        (m.tp, m.fp, m.fn_, m.tn) == (5, 2, 1, 2),
        "confusion counts {:?}",
        (m.tp, m.fp, m.fn_, m.tn)
    );
    ensure!(
        (m.f1 - 2.0 * 5.0 / (2.0 * 5.0 + 2.0 + 1.0)).abs() < 1e-12,
        "F1 {}",
        m.f1
    );
    Ok(format!("8 rows recomputed, max |dF1| = {worst:.5}"))
}

// ---------------------------------------------------------------- 4

fn script_conversation(dir: &Path, session: &str, replies: &[String]) -> Conversation {
    std::fs::write(
        ScriptBackend::script_path(dir, session),
        ScriptBackend::render_script(replies),
    )
    .unwrap();
    Conversation::new(Arc::new(ScriptBackend::new(dir)), session)
}

fn coverage_loop() -> Check {
    let branchless = common::record("sha256_hex");
    let s = common::scripted_suite(&branchless, &["```inputs\n(x\"616263\")\n```"]);
    ensure!(
        s.status == SuiteStatus::FullCoverage && s.history.len() == 1,
        "branchless: {:?} after {}",
        s.status,
        s.history.len()
    );
    ensure!(
        s.history[0].iteration == 1,
        "branchless stopped at iteration {}",
        s.history[0].iteration
    );

    // Only the long-input path is ever proposed: coverage never improves.
    let rec = common::record("parse_length_prefix");
    let dir = tempfile::tempdir().unwrap();
    let same = "```inputs\n(x\"00000001\")\n```".to_string();
    let replies: Vec<String> = vec![
        "```inputs\n(x\"00000010ff\")\n```".into(),
        same.clone(),
        same.clone(),
        same.clone(),
        same,
    ];
    let mut conv =
        script_conversation(dir.path(), &teeport_core::suite::session_id(&rec), &replies);
    let adapter = PythonCoverage {
        work_dir: dir.path().join("cov"),
        timeout: timeout(),
    };
    std::fs::create_dir_all(&adapter.work_dir).unwrap();
    let settings = teeport_core::suite::SuiteSettings {
        stagnation_limit: 3,
        iteration_cap: 10,
    };
    let st = teeport_core::suite::build_suite(&rec, &mut conv, &adapter, settings)
        .map_err(|e| e.to_string())?;
    ensure!(
        st.status == SuiteStatus::Stagnated,
        "never-improving fixture ended {:?}",
        st.status
    );
    ensure!(
        st.history.len() == 4,
        "expected 1 + 3 iterations, got {}",
        st.history.len()
    );
    let first = &st.history[0].report;
    ensure!(
        st.history[1..].iter().all(|h| !h.report.improves_on(first)),
        "a later iteration improved"
    );
    ensure!(conv.requests() == 4, "{} model requests", conv.requests());

    // A FULL_COVERAGE suite re-measures to (100, 100).
    let full = common::scripted_suite(&rec, &["```inputs\n(x\"00000010ff\")\n(x\"01\")\n```"]);
    ensure!(
        full.status == SuiteStatus::FullCoverage,
        "two-branch suite: {:?}",
        full.status
    );
    let m = adapter
        .measure(&rec, &full.cases)
        .map_err(|e| e.to_string())?;
    ensure!(
        (m.report.line_pct, m.report.branch_pct) == (100.0, 100.0),
        "re-measured {:?}",
        (m.report.line_pct, m.report.branch_pct)
    );
    Ok(format!(
        "branchless FULL at 1; stagnated after 1 + 3 (stuck at line {:.0}% branch {:.0}%); re-measure (100, 100)",
        first.line_pct, first.branch_pct
    ))
}

// ---------------------------------------------------------------- 5

struct NeverBuilds;

impl Toolchain for NeverBuilds {
    fn id(&self) -> &str {
        "never"
    }
    fn compile(&self, _: &BuildRequest) -> CompileReport {
        CompileReport {
            success: false,
            errors: vec![Diagnostic {
                level: "error".into(),
                code: Some("E0425".into()),
                message: "cannot find value `state` in this scope".into(),
                rendered: "error[E0425]: cannot find value `state` in this scope".into(),
            }],
            warnings: 0,
            binary: None,
            build_hash: "none".into(),
            unshimmable: Vec::new(),
        }
    }
    fn lookup_error_code(&self, _: &str) -> Option<String> {
        None
    }
}

struct NeverCalled;

impl Equivalence for NeverCalled {
    fn check(&self, _: &CompileReport) -> EquivalenceVerdict {
        panic!("nothing ever builds, so nothing is validated");
    }
}

fn rust_block(code: &str) -> String {
    format!("```rust\n{code}```")
}

fn react_loop() -> Check {
    let pack = FewShotPack::builtin();
    let threshold = PipelineConfig::default().refinement_threshold;
    let tc = common::toolchain();
    let dir = tempfile::tempdir().unwrap();

    // Five actions: the first build repeats the type error, the lookup
    // explains it, the fix is written, built and validated.
    let rec = common::record("caesar_decrypt");
    let good = common::native_source("caesar_decrypt.rs");
    let bad = good.replace(
        "let c = (ch as i64 - base - shift).rem_euclid(26) + base;",
        "let c: u8 = (ch as i64 - base - shift).rem_euclid(26) + base;",
    );
    ensure!(bad != good, "could not derive the broken fixture");
    let suite = common::scripted_suite(
        &rec,
        &["```inputs\n(\"Khoor, Zruog!\", 3)\n(\"abc\", 1)\n(\"XYZ\", 29)\n```"],
    );
    let work = dir.path().join("caesar");
    std::fs::create_dir_all(&work).unwrap();
    let orig = common::original(&rec, &work);
    let oracle =
        Oracle::new(&rec, &suite, &orig, ValidateOptions::default()).map_err(|v| v.feedback())?;
    let replies = vec![
        "It shifts letters back by a fixed amount.".to_string(),
        rust_block(&bad),
        "Thought: Build it first.\nAction: COMPILABILITY_CHECK()".into(),
        "Thought: E0308 is a type mismatch; read about it.\nAction: ISSUES_SEARCH(E0308)".into(),
        format!(
            "Thought: Keep the arithmetic in i64.\nAction: CODE_MODIFICATION({})",
            rust_block(&good)
        ),
        "Thought: Build again.\nAction: COMPILABILITY_CHECK()".into(),
        "Thought: Compare with the original.\nAction: EQUIVALENCE_VALIDATION()".into(),
    ];
    let mut conv = script_conversation(dir.path(), &xform::session_id(&rec), &replies);
    let ctx = TransformContext {
        toolchain: &tc,
        oracle: &oracle,
        pack: &pack,
        few_shot_count: 1,
        threshold,
        categories: BTreeSet::new(),
    };
    let a = xform::transform_function(&rec, &mut conv, &ctx);
    ensure!(
        a.outcome == TransformOutcome::Equivalent && a.iterations == 4,
        "five-action fixture: {} after {}",
        a.outcome,
        a.iterations
    );
    let actions: Vec<Option<ActionKind>> = a.trace.iter().map(|s| s.action).collect();
    let want = [
        ActionKind::CompilabilityCheck,
        ActionKind::IssuesSearch,
        ActionKind::CodeModification,
        ActionKind::CompilabilityCheck,
    ];
    ensure!(actions == want.map(Some), "trace actions {actions:?}");
    ensure!(
        a.trace[0].observation.contains("E0308"),
        "step 1 observed {:?}",
        a.trace[0].observation
    );
    ensure!(
        a.trace[1].observation.starts_with("E0308:"),
        "step 2 observed {:?}",
        a.trace[1].observation
    );
    ensure!(
        a.trace[2].observation == "code updated",
        "step 3 observed {:?}",
        a.trace[2].observation
    );
    ensure!(
        a.trace[3].observation == "compiled successfully",
        "step 4 observed {:?}",
        a.trace[3].observation
    );
    ensure!(a.native_code == good, "final code is not the fix");

    // Never passes: stops at the threshold.
    let rec2 = common::record("xor_cipher");
    let mut replies = vec![
        "It XORs data with a repeating key.".to_string(),
        rust_block("pub fn xor_cipher(data: Vec<u8>, key: Vec<u8>) -> Vec<u8> { state }\n"),
    ];
    replies.extend(
        (0..threshold + 5).map(|i| format!("Thought: try {i}.\nAction: COMPILABILITY_CHECK()")),
    );
    let mut conv = script_conversation(dir.path(), &xform::session_id(&rec2), &replies);
    let ctx2 = TransformContext {
        toolchain: &NeverBuilds,
        oracle: &NeverCalled,
        pack: &pack,
        few_shot_count: 1,
        threshold,
        categories: BTreeSet::new(),
    };
    let f = xform::transform_function(&rec2, &mut conv, &ctx2);
    ensure!(
        f.outcome == TransformOutcome::Failed && f.iterations == threshold && f.iterations == 20,
        "never-passing: {} after {}",
        f.outcome,
        f.iterations
    );
    ensure!(
        f.trace.len() == 20 && conv.requests() == 22,
        "trace {} requests {}",
        f.trace.len(),
        conv.requests()
    );

    // Correct on the first try.
    let rec3 = common::record("sha256_hex");
    let suite3 = common::scripted_suite(&rec3, &["```inputs\n(x\"\")\n(x\"616263\")\n```"]);
    let work3 = dir.path().join("sha");
    std::fs::create_dir_all(&work3).unwrap();
    let orig3 = common::original(&rec3, &work3);
    let oracle3 = Oracle::new(&rec3, &suite3, &orig3, ValidateOptions::default())
        .map_err(|v| v.feedback())?;
    let replies = vec![
        "It returns the hex SHA-256 digest.".to_string(),
        format!(
            "{}\nDependencies: [sha2 = \"0.10\", hex = \"0.4\"]",
            rust_block(&common::native_source("sha256_hex.rs"))
        ),
    ];
    let mut conv = script_conversation(dir.path(), &xform::session_id(&rec3), &replies);
    let ctx3 = TransformContext {
        toolchain: &tc,
        oracle: &oracle3,
        pack: &pack,
        few_shot_count: 1,
        threshold,
        categories: BTreeSet::new(),
    };
    let d = xform::transform_function(&rec3, &mut conv, &ctx3);
    ensure!(
        d.outcome == TransformOutcome::Direct && d.iterations == 0 && d.trace.is_empty(),
        "pre-passing: {} after {}",
        d.outcome,
        d.iterations
    );
    Ok(
        "five-action trace EQUIVALENT at 4; never-passing FAILED at 20; pre-passing DIRECT at 0"
            .into(),
    )
}

// ---------------------------------------------------------------- 6

fn mutation_sensitivity() -> Check {
    let started = Instant::now();
    let fixtures: &[(&str, &str, &str, &[&str])] = &[
        (
            "average",
            "average.rs",
            "```inputs\n([1, 2])\n([])\n([5, 6, 8])\n```",
            &["average_integer_division.rs"],
        ),
        (
            "caesar_decrypt",
            "caesar_decrypt.rs",
            "```inputs\n(\"Khoor, Zruog!\", 3)\n(\"abc\", 1)\n```",
            &["caesar_drops_punctuation.rs", "caesar_wrong_direction.rs"],
        ),
        (
            "Session.checksum",
            "checksum.rs",
            "```inputs\n(x\"ffff01\")\n(x\"\")\n```",
            &["checksum_modulus.rs", "checksum_skip_first.rs"],
        ),
        (
            "clamp",
            "clamp.rs",
            "```inputs\n(5, 0, 10)\n(-3, 0, 10)\n(42, 0, 10)\n```",
            &[
                "clamp_lo_off_by_one.rs",
                "clamp_no_upper.rs",
                "clamp_swapped_bounds.rs",
            ],
        ),
        (
            "parse_length_prefix",
            "parse_length_prefix.rs",
            "```inputs\n(x\"00000010ff\")\n(x\"0102\")\n```",
            &[
                "length_prefix_little_endian.rs",
                "length_prefix_short_zero.rs",
            ],
        ),
        (
            "normalize_name",
            "normalize_name.rs",
            "```inputs\n(\"  Ada   LOVELACE \")\n```",
            &["normalize_name_keep_case.rs"],
        ),
        (
            "pack_record",
            "pack_record.rs",
            "```inputs\n(1, 2)\n(7, 5000)\n```",
            &["pack_record_little_endian.rs", "pack_record_panics.rs"],
        ),
        (
            "xor_cipher",
            "xor_cipher.rs",
            "```inputs\n(x\"010203\", x\"ff01\")\n(x\"01\", x\"\")\n```",
            &["xor_cipher_fixed_key.rs"],
        ),
    ];
    let dir = tempfile::tempdir().unwrap();
    let (mut killed, mut mutants, mut identities) = (0, 0, 0);
    let mut problems = Vec::new();
    for (qual, original, inputs, muts) in fixtures {
        let rec = common::record(qual);
        let suite = common::scripted_suite(&rec, &[inputs]);
        let work = dir.path().join(rec.slug());
        std::fs::create_dir_all(&work).unwrap();
        let orig = common::original(&rec, &work);
        let oracle = Oracle::new(&rec, &suite, &orig, ValidateOptions::default())
            .map_err(|v| v.feedback())?;
        let v = oracle.check(&common::build(&rec, &common::native_source(original)));
        identities += 1;
        if v.outcome != EquivalenceOutcome::Equivalent {
            problems.push(format!("identity {original}: {}", v.feedback()));
        }
        for m in *muts {
            mutants += 1;
            let v = oracle.check(&common::build(
                &rec,
                &common::native_source(&format!("mutants/{m}")),
            ));
            if v.outcome == EquivalenceOutcome::Different {
                killed += 1;
            } else {
                problems.push(format!("mutant {m}: {}", v.outcome));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(problems.is_empty(), "{}", problems.join("; "));
    ensure!(mutants >= 10, "only {mutants} mutants");
    ensure!(secs < 120.0, "took {secs:.0} s");
    Ok(format!("{killed}/{mutants} mutants DIFFERENT, {identities}/{identities} identity rebuilds EQUIVALENT, {secs:.1} s"))
}

// ---------------------------------------------------------------- 7

fn determinism_shim() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let mut summary = Vec::new();
    for (qual, native, inputs) in [
        (
            "generate_salt",
            "generate_salt.rs",
            "```inputs\n(8)\n(0)\n(16)\n```",
        ),
        (
            "salted_hash",
            "salted_hash.rs",
            "```inputs\n(\"pw\", 4)\n(\"\", 0)\n```",
        ),
    ] {
        let rec = common::record(qual);
        ensure!(
            teeport_core::validate::shim::uses_randomness(&rec),
            "{qual} is not seen as random"
        );
        let suite = common::scripted_suite(&rec, &[inputs]);
        ensure!(
            suite.cases.iter().all(|c| c.random.is_some()),
            "{qual}: cases without a random stream"
        );
        let work = dir.path().join(rec.slug());
        std::fs::create_dir_all(&work).unwrap();
        let orig = common::original(&rec, &work);
        let build = common::build(&rec, &common::native_source(native));
        let exe = Executable::native(
            qual,
            build.binary.as_ref().unwrap(),
            &rec.signature.ret,
            false,
        );
        let run_side = |exe: &Executable| -> Vec<String> {
            suite
                .cases
                .iter()
                .map(|c| {
                    run_case(exe, &c.case_id, &c.line(), c.random.as_ref(), timeout())
                        .canonical_output()
                        .unwrap_or_else(|| "<failed>".into())
                })
                .collect()
        };
        let source_runs: Vec<Vec<String>> = (0..5).map(|_| run_side(&orig)).collect();
        let native_runs: Vec<Vec<String>> = (0..5).map(|_| run_side(&exe)).collect();
        ensure!(
            source_runs.iter().all(|r| r == &source_runs[0]),
            "{qual}: source outputs vary across runs"
        );
        ensure!(
            native_runs.iter().all(|r| r == &native_runs[0]),
            "{qual}: native outputs vary across runs"
        );
        ensure!(
            source_runs[0] == native_runs[0],
            "{qual}: sides differ {:?} vs {:?}",
            source_runs[0],
            native_runs[0]
        );
        ensure!(
            !source_runs[0].iter().any(|o| o.contains("<failed>")),
            "{qual}: a case failed"
        );
        summary.push(format!("{qual} {} cases", suite.cases.len()));
    }
    Ok(format!(
        "5 runs identical on both sides: {}",
        summary.join(", ")
    ))
}

// ---------------------------------------------------------------- 8 + 11

struct EndToEnd {
    _dir: tempfile::TempDir,
    ws: Workspace,
    linked: PathBuf,
    served: pipeline::Served,
}

fn end_to_end_setup() -> Result<EndToEnd, String> {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::init(dir.path().join("ws"), PipelineConfig::default())
        .map_err(|e| e.to_string())?;
    let fixtures = common::corpus().join("transcripts");
    let mode = Parallelism::Parallel;
    let e = |e: pipeline::PipelineError| e.to_string();
    pipeline::scan(
        &ws,
        &common::corpus().join("python"),
        &LanguageId::python(),
        mode,
    )
    .map_err(e)?;
    pipeline::identify(
        &ws,
        pipeline::backend(&ws, Some(&fixtures)).map_err(e)?,
        mode,
    )
    .map_err(e)?;
    pipeline::gen_tests(
        &ws,
        pipeline::backend(&ws, Some(&fixtures)).map_err(e)?,
        mode,
    )
    .map_err(e)?;
    pipeline::transform(
        &ws,
        pipeline::backend(&ws, Some(&fixtures)).map_err(e)?,
        mode,
    )
    .map_err(e)?;
    pipeline::adapt(&ws, &BTreeMap::new(), mode).map_err(e)?;
    let linked = dir.path().join("linked");
    pipeline::link(&ws, &common::corpus().join("python"), &linked).map_err(e)?;
    let served = pipeline::serve(&ws, &linked, Some(enclave_program())).map_err(e)?;
    Ok(EndToEnd {
        _dir: dir,
        ws,
        linked,
        served,
    })
}

fn linker_transparency(e2e: &EndToEnd) -> Check {
    let recs = e2e
        .ws
        .latest_by_fqid::<FunctionRecord>()
        .map_err(|e| e.to_string())?;
    let suites = e2e
        .ws
        .latest_by_fqid::<TestSuite>()
        .map_err(|e| e.to_string())?;
    let arts = e2e
        .ws
        .latest_by_fqid::<xform::TransformArtifact>()
        .map_err(|e| e.to_string())?;
    let succeeded: BTreeSet<&String> = arts
        .values()
        .filter(|a| a.outcome != TransformOutcome::Failed)
        .map(|a| &a.fqid)
        .collect();
    let linked: BTreeSet<&String> = e2e
        .served
        .handles
        .iter()
        .map(|(img, _)| &img.fqid)
        .collect();
    ensure!(
        !linked.is_empty() && linked == succeeded,
        "linked {linked:?} vs successful {succeeded:?}"
    );
    let scratch = e2e._dir.path().join("check");
    let mut cases = 0;
    for (img, _) in &e2e.served.handles {
        let rec = &recs[&img.fqid];
        let suite = &suites[&img.fqid];
        let work = scratch.join(rec.slug());
        std::fs::create_dir_all(work.join("stub")).unwrap();
        let orig = common::original(rec, &work);
        let stub = source_driver(rec, &work.join("stub"), DriverMode::Run, Some(&e2e.linked))
            .map_err(|e| e.to_string())?;
        let direct = Executable::native(&rec.name, &img.binary, &rec.signature.ret, true);
        for c in &suite.cases {
            let out = |exe: &Executable| {
                let r = run_case(exe, &c.case_id, &c.line(), c.random.as_ref(), timeout());
                r.canonical_output()
                    .ok_or_else(|| format!("{} on {}: {}", exe.label, c.line(), r.describe()))
            };
            let (o, d, s) = (out(&orig)?, out(&direct)?, out(&stub)?);
            ensure!(
                o == d && d == s,
                "{} ({}): original {o} direct {d} stub {s}",
                rec.qualname,
                c.line()
            );
            cases += 1;
        }
    }

    // Tampering, against the first served image.
    let (img, handle) = &e2e.served.handles[0];
    let keys = pipeline::keys(&e2e.ws).map_err(|e| e.to_string())?;
    let verifier = || QuoteVerifier::new(keys.attestation.verifying_key());
    let line = suites[&img.fqid].cases[0].line();
    let mut closed = 0;

    let copy = scratch.join("flipped.bin");
    let mut bytes = std::fs::read(&img.binary).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    std::fs::write(&copy, bytes).unwrap();
    let opts = LaunchOptions {
        program: enclave_program(),
        args: vec![],
        log: scratch.join("flipped.log"),
        case_timeout: timeout(),
    };
    let flipped = SignedImage {
        binary: copy,
        ..img.clone()
    };
    match launch_enclave(&flipped, &keys, &opts) {
        Err(EnclaveError::MeasurementMismatch { .. }) => closed += 1,
        Err(other) => return Err(format!("flipped binary rejected with {other}")),
        Ok(_) => return Err("flipped binary launched".into()),
    }

    let replay =
        TamperProxy::start(&handle.endpoint(), Tamper::ReplayQuote).map_err(|e| e.to_string())?;
    let mut c = EnclaveClient::new(&replay.endpoint(), verifier());
    c.call(&img.fqid, &img.measurement, &line, None)
        .map_err(|e| format!("first call through the replay proxy: {e}"))?;
    let err = c
        .call(&img.fqid, &img.measurement, &line, None)
        .unwrap_err();
    ensure!(err.code() == "NONCE_REPLAY", "replayed nonce gave {err}");
    closed += 1;

    let swap =
        TamperProxy::start(&handle.endpoint(), Tamper::SwapServerKey).map_err(|e| e.to_string())?;
    let err = EnclaveClient::new(&swap.endpoint(), verifier())
        .call(&img.fqid, &img.measurement, &line, None)
        .unwrap_err();
    ensure!(err.code() == "CHANNEL_NOT_BOUND", "unbound key gave {err}");
    closed += 1;

    let mut conn = TcpStream::connect(handle.endpoint()).map_err(|e| e.to_string())?;
    write_frame(
        &mut conn,
        &Frame::new(FrameType::Call, "early", json!({"ciphertext": "00"})),
    )
    .map_err(|e| e.to_string())?;
    let f = read_frame(&mut conn).map_err(|e| e.to_string())?;
    ensure!(
        f.kind == FrameType::Error && f.payload["code"] == "PROTOCOL_VIOLATION",
        "early CALL answered {:?}",
        f.payload
    );
    ensure!(
        read_frame(&mut conn).is_err(),
        "session stayed open after the violation"
    );
    conn.flush().ok();
    closed += 1;

    Ok(format!(
        "{} functions, {cases} cases: stub == direct == original; {closed}/4 tamper cases fail closed",
        linked.len()
    ))
}

fn overhead_harness(e2e: &EndToEnd) -> Check {
    let md5 = OverheadRow::from_samples("MD5 (Java)", true, &[28.0; 5], &[338.0; 5], 5)
        .map_err(|e| e.to_string())?;
    ensure!(
        md5.multiple() == Some(12.1),
        "MD5 row gives {:?}",
        md5.multiple()
    );
    ensure!(
        OverheadRow::from_samples("short", false, &[1.0; 4], &[2.0; 4], 5).is_err(),
        "4 samples accepted for 5 runs"
    );
    let table = OverheadTable(std::slice::from_ref(&md5)).to_string();
    for col in ["case", "ext.lib", "oriCost(ms)", "teeCost(ms)", "multiple"] {
        ensure!(
            table.lines().next().unwrap_or("").contains(col),
            "table header lacks {col}"
        );
    }

    let rows = pipeline::bench(&e2e.ws, &e2e.linked).map_err(|e| e.to_string())?;
    ensure!(!rows.is_empty(), "no rows measured");
    for r in &rows {
        ensure!(
            r.excluded.is_none(),
            "{} excluded: {:?}",
            r.case_name,
            r.excluded
        );
        ensure!(r.runs == 5, "{}: {} runs", r.case_name, r.runs);
        ensure!(
            r.tee_cost_ms >= r.ori_cost_ms,
            "{}: tee {} < ori {}",
            r.case_name,
            r.tee_cost_ms,
            r.ori_cost_ms
        );
    }
    let (lo, hi) = rows
        .iter()
        .filter_map(|r| r.multiple())
        .fold((f64::MAX, 0f64), |(l, h), m| (l.min(m), h.max(m)));
    Ok(format!("MD5 338/28 -> 12.1; {} local rows, 5 runs each, tee >= ori everywhere (multiples {lo:.0}x..{hi:.0}x)", rows.len()))
}

// ---------------------------------------------------------------- 9

fn policy_enforcement() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let project = dir.path().join("probe");
    std::fs::create_dir_all(&project).unwrap();
    std::fs::write(
        project.join("probe.py"),
        "def env_count() -> int:\n    return 0\n",
    )
    .unwrap();
    let parsed = analyzer::parse_project(&project, &LanguageId::python(), Parallelism::Sequential)
        .map_err(|e| e.to_string())?;
    let probe = &parsed.records[0];
    let build = common::build(probe, &common::native_source("env_probe.rs"));
    let bin = build.binary.as_ref().unwrap();
    let no_args = teeport_core::vector::encode_case(&[]);
    let inside = run_case(
        &Executable::native("probe", bin, &probe.signature.ret, true),
        "c0",
        &no_args,
        None,
        timeout(),
    );
    let outside = run_case(
        &Executable::native("probe", bin, &probe.signature.ret, false),
        "c0",
        &no_args,
        None,
        timeout(),
    );
    ensure!(
        inside.canonical_output().as_deref() == Some("0"),
        "sandboxed probe saw {}",
        inside.describe()
    );
    ensure!(
        outside.canonical_output().as_deref() != Some("0"),
        "the unsandboxed probe also saw no variables"
    );

    let rec = common::record("Session.checksum");
    let suite = common::scripted_suite(&rec, &["```inputs\n(x\"ffff01\")\n(x\"\")\n```"]);
    let work = dir.path().join("checksum");
    std::fs::create_dir_all(&work).unwrap();
    let orig = common::original(&rec, &work);
    let mut oracle =
        Oracle::new(&rec, &suite, &orig, ValidateOptions::default()).map_err(|v| v.feedback())?;
    oracle.sandbox = true;
    let timed = common::native_source("checksum_timed.rs");
    let before = oracle.check(&common::build(&rec, &timed));
    ensure!(
        before.outcome != EquivalenceOutcome::Equivalent,
        "the unadapted timer passed under the policy"
    );
    let adapted = adapt_platform(
        &timed,
        &TeeProfile::by_id("process", BTreeMap::new()).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    ensure!(!adapted.rewrites.is_empty(), "no rewrites applied");
    let after = oracle.check(&common::build(&rec, &adapted.code));
    ensure!(
        after.outcome == EquivalenceOutcome::Equivalent,
        "adapted build: {}",
        after.feedback()
    );
    Ok(format!(
        "probe sees 0 variables inside (>0 outside); timer fixture {} before adapt, EQUIVALENT after ({} rewrite(s))",
        before.outcome,
        adapted.rewrites.len()
    ))
}

// ---------------------------------------------------------------- 10

fn combinations(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::new(), f);
}

/// U and two-sided p by listing every labelling of the pooled sample.
fn brute_mann_whitney(a: &[f64], b: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    // midranks by counting, independent of the library's sort
    let rank = |x: f64| {
        let below = pooled.iter().filter(|&&y| y < x).count() as f64;
        let equal = pooled.iter().filter(|&&y| y == x).count() as f64;
        below + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = pooled.iter().map(|&x| rank(x)).collect();
    let (n1, n2) = (a.len(), b.len());
    let u =
        |idx: &[usize]| idx.iter().map(|&i| ranks[i]).sum::<f64>() - (n1 * (n1 + 1)) as f64 / 2.0;
    let obs: Vec<usize> = (0..n1).collect();
    let u_obs = u(&obs);
    let mean = (n1 * n2) as f64 / 2.0;
    let (mut hit, mut total) = (0u64, 0u64);
    combinations(n1 + n2, n1, &mut |idx| {
        total += 1;
        if (u(idx) - mean).abs() >= (u_obs - mean).abs() - 1e-9 {
            hit += 1;
        }
    });
    (u_obs, hit as f64 / total as f64)
}

/// Exact McNemar p by listing all 2^n sign patterns of the discordant pairs.
fn brute_mcnemar(b: u32, c: u32) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let k = b.min(c);
    let hits = (0u64..1 << n).filter(|m| {
        let ones = m.count_ones();
        ones.min(n - ones) <= k
    });
    hits.count() as f64 / (1u64 << n) as f64
}

fn statistics() -> Check {
    let fixtures: Vec<(Vec<f64>, Vec<f64>)> = vec![
        (vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]),
        (vec![1.0, 2.0, 2.0, 3.0], vec![2.0, 3.0, 4.0, 4.0, 5.0]),
        (
            vec![0.91, 0.93, 0.95, 0.94, 0.96],
            vec![0.90, 0.93, 0.92, 0.89, 0.95, 0.91],
        ),
        (
            vec![3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0],
            vec![5.0, 3.0, 5.0, 8.0, 9.0, 7.0, 9.0, 3.0],
        ),
        (vec![7.0], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0]),
        (vec![2.0, 2.0, 2.0], vec![2.0, 2.0]),
    ];
    for (a, b) in &fixtures {
        let got = mann_whitney_u(a, b).map_err(|e| e.to_string())?;
        let (u, p) = brute_mann_whitney(a, b);
        ensure!(
            got.u_a == u && (got.p - p).abs() < 1e-12,
            "{a:?} vs {b:?}: U {} p {} (brute force U {u} p {p})",
            got.u_a,
            got.p
        );
    }
    let ranks = midranks(&[3.0, 1.0, 3.0, 2.0]);
    ensure!(ranks == vec![3.5, 1.0, 3.5, 2.0], "midranks {ranks:?}");
    let a3 = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    ensure!(
        a3.u == 0.0 && (a3.p - 0.1).abs() < 1e-12,
        "[1,2,3] vs [4,5,6]: U {} p {}",
        a3.u,
        a3.p
    );

    for (b, c) in [(15u32, 5u32), (3, 0), (2, 2), (0, 7), (1, 1), (11, 12)] {
        let got = mcnemar_counts(b as u64, c as u64);
        let want = brute_mcnemar(b, c);
        ensure!(
            (got.p - want).abs() < 1e-12,
            "McNemar b={b} c={c}: p {} vs brute force {want}",
            got.p
        );
    }
    let zero = mcnemar_test(&[(true, true), (false, false), (true, true)]);
    ensure!(
        zero.b + zero.c == 0 && zero.p == 1.0,
        "zero discordant pairs gave p {}",
        zero.p
    );
    Ok(format!(
        "{} Mann-Whitney fixtures and 6 McNemar fixtures match enumeration; zero-discordant p = 1",
        fixtures.len()
    ))
}

// ----------------------------------------------------------------

/// Criteria expected to fail, with the reason. Their FAIL line is still
/// printed; it just does not fail the test target.
const KNOWN_FAILURES: &[(usize, &str)] = &[(
    3,
    "the published LLaMA3.1 Java F1 (0.906) is not derivable from its rounded P/R (0.9054997); likely a mean of per-run F1",
)];

fn run(n: usize, name: &str, f: &mut dyn FnMut() -> Check) -> bool {
    let started = Instant::now();
    let r = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = started.elapsed().as_secs_f64();
    match r {
        Ok(detail) => {
            println!("PASS {n:>2} {name}: {detail} [{secs:.1} s]");
            true
        }
        Err(why) => match KNOWN_FAILURES.iter().find(|(k, _)| *k == n) {
            Some((_, reason)) => {
                println!("FAIL {n:>2} {name}: {why} [{secs:.1} s] (known: {reason})");
                true
            }
            None => {
                println!("FAIL {n:>2} {name}: {why} [{secs:.1} s]");
                false
            }
        },
    }
}

fn main() {
    // `cargo test -- --list` and filters: this target has a single entry.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if let Some(filter) = args.iter().find(|a| !a.starts_with('-')) {
        if !"acceptance".contains(filter.as_str()) {
            return;
        }
    }
    // Native builds share one target directory across test binaries.
    std::env::set_var(
        "TEEPORT_CARGO_TARGET_DIR",
        Path::new(env!("CARGO_TARGET_TMPDIR"))
            .join("native")
            .join("target"),
    );

    let mut ok = true;
    ok &= run(1, "leaf extraction oracle", &mut leaf_extraction);
    ok &= run(
        2,
        "identification replay determinism",
        &mut identification_replay,
    );
    ok &= run(3, "detection metric arithmetic", &mut detection_metrics);
    ok &= run(4, "coverage loop contract", &mut coverage_loop);
    ok &= run(5, "refinement loop contract", &mut react_loop);
    ok &= run(6, "mutation sensitivity", &mut mutation_sensitivity);
    ok &= run(7, "determinism shim", &mut determinism_shim);
    let e2e = panic::catch_unwind(end_to_end_setup)
        .unwrap_or_else(|_| Err("pipeline setup panicked".into()));
    ok &= run(8, "end-to-end linker transparency", &mut || match &e2e {
        Ok(e) => linker_transparency(e),
        Err(e) => Err(format!("pipeline: {e}")),
    });
    ok &= run(9, "policy enforcement", &mut policy_enforcement);
    ok &= run(10, "statistics oracles", &mut statistics);
    ok &= run(11, "overhead harness", &mut || match &e2e {
        Ok(e) => overhead_harness(e),
        Err(e) => Err(format!("pipeline: {e}")),
    });
    drop(e2e);
    if !ok {
        std::process::exit(1);
    }
}
