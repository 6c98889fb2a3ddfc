//! Coverage-guided test-suite generation.
//!
//! The model proposes inputs, a language coverage adapter measures them, and
//! the uncovered sites are fed back until coverage is full or stops
//! improving for `stagnation_limit` consecutive iterations.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drivers::{self, DriverError, DriverMode, RandomSource};
use crate::llm::{prompts, render_template, Conversation, LlmError};
use crate::model::{FunctionRecord, LanguageId, ModelError, SemType, Signature};
use crate::validate::shim;
use crate::vector::{check_case, encode_case, parse_case, Value};
use crate::workspace::{Record, SUITES_DIR};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("{0} does not have a basic signature")]
    NotBasic(String),
    #[error("no coverage adapter for `{0}`")]
    NoAdapter(LanguageId),
    #[error("coverage measurement failed: {0}")]
    Measure(String),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestInput {
    pub case_id: String,
    pub args: Vec<Value>,
    /// Stream fed to the randomness shim, for functions that draw random bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomSource>,
}

impl TestInput {
    pub fn line(&self) -> String {
        encode_case(&self.args)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SiteKind {
    Line,
    Branch,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UncoveredSite {
    pub kind: SiteKind,
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub line_pct: f64,
    pub branch_pct: f64,
    pub uncovered: Vec<UncoveredSite>,
}

impl CoverageReport {
    pub fn is_full(&self) -> bool {
        self.line_pct >= 100.0 && self.branch_pct >= 100.0
    }

    /// A strict increase of either component counts as progress.
    pub fn improves_on(&self, prev: &CoverageReport) -> bool {
        self.line_pct > prev.line_pct || self.branch_pct > prev.branch_pct
    }

    pub fn check(&self) -> Result<(), ModelError> {
        for (pct, kind) in [
            (self.line_pct, SiteKind::Line),
            (self.branch_pct, SiteKind::Branch),
        ] {
            if !(0.0..=100.0).contains(&pct) {
                return Err(ModelError::Invariant(format!(
                    "{kind:?} coverage {pct} out of range"
                )));
            }
            let missing = self.uncovered.iter().any(|s| s.kind == kind);
            if (pct >= 100.0) == missing {
                return Err(ModelError::Invariant(format!(
                    "{kind:?} coverage {pct} disagrees with the uncovered list"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseError {
    pub case_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub report: CoverageReport,
    pub errors: Vec<CaseError>,
}

pub trait CoverageAdapter: Send + Sync {
    /// Run every case under coverage. Cases that raise are reported in
    /// `errors` and contribute nothing to the report.
    fn measure(
        &self,
        record: &FunctionRecord,
        cases: &[TestInput],
    ) -> Result<Measurement, SuiteError>;
}

/// Line and branch coverage through the Python driver's tracer.
///
/// Statements are the function's own AST statements minus a leading
/// docstring. Branch sites are `if` / `while` / `for` headers with two
/// outcomes each: "then" is the transition into the first body statement,
/// "else" is any other transition out of the header.
pub struct PythonCoverage {
    pub work_dir: PathBuf,
    pub timeout: Duration,
}

#[derive(Deserialize)]
struct RawCoverage {
    statements: Vec<i64>,
    branches: Vec<(i64, i64)>,
    executed: Vec<i64>,
    arcs: Vec<(i64, i64)>,
    cases: Vec<RawCase>,
}

#[derive(Deserialize)]
struct RawCase {
    ok: bool,
    #[serde(default)]
    error: Option<String>,
}

fn pct(hit: usize, total: usize) -> f64 {
    if total == 0 {
        100.0
    } else {
        100.0 * hit as f64 / total as f64
    }
}

impl CoverageAdapter for PythonCoverage {
    fn measure(
        &self,
        record: &FunctionRecord,
        cases: &[TestInput],
    ) -> Result<Measurement, SuiteError> {
        let dir = self.work_dir.join(record.slug());
        let exe = drivers::source_driver(record, &dir, DriverMode::Coverage, None)?;
        let input: String = cases
            .iter()
            .map(|c| serde_json::json!({"case": c.line(), "random": c.random}).to_string() + "\n")
            .collect();
        let out = drivers::run_batch(&exe, &input, self.timeout * (cases.len().max(1) as u32))
            .map_err(|e| SuiteError::Measure(e.to_string()))?;
        let raw: RawCoverage = serde_json::from_str(&out)
            .map_err(|e| SuiteError::Measure(format!("bad driver report: {e}")))?;
        if raw.cases.len() != cases.len() {
            return Err(SuiteError::Measure(format!(
                "driver reported {} cases for {} inputs",
                raw.cases.len(),
                cases.len()
            )));
        }
        let errors: Vec<CaseError> = cases
            .iter()
            .zip(&raw.cases)
            .filter(|(_, r)| !r.ok)
            .map(|(c, r)| CaseError {
                case_id: c.case_id.clone(),
                message: r.error.clone().unwrap_or_default(),
            })
            .collect();
        let any_ok = raw.cases.iter().any(|c| c.ok);
        Ok(Measurement {
            report: coverage_from_trace(
                &raw.statements,
                &raw.branches,
                &raw.executed,
                &raw.arcs,
                any_ok,
            ),
            errors,
        })
    }
}

/// Fold a raw trace into a report. Exposed for testing against hand traces.
pub fn coverage_from_trace(
    statements: &[i64],
    branches: &[(i64, i64)],
    executed: &[i64],
    arcs: &[(i64, i64)],
    any_case_ran: bool,
) -> CoverageReport {
    let executed: BTreeSet<i64> = executed.iter().copied().collect();
    let arcs: BTreeSet<(i64, i64)> = arcs.iter().copied().collect();
    let mut uncovered = Vec::new();
    let mut lines_hit = 0;
    for &l in statements {
        if executed.contains(&l) {
            lines_hit += 1;
        } else {
            uncovered.push(UncoveredSite {
                kind: SiteKind::Line,
                location: format!("line {l}"),
            });
        }
    }
    let line_pct = if statements.is_empty() {
        if any_case_ran {
            100.0
        } else {
            0.0
        }
    } else {
        pct(lines_hit, statements.len())
    };
    if statements.is_empty() && !any_case_ran {
        uncovered.push(UncoveredSite {
            kind: SiteKind::Line,
            location: "entry".into(),
        });
    }
    let mut outcomes_hit = 0;
    for &(l, first) in branches {
        let then = arcs.contains(&(l, first));
        let other = arcs.iter().any(|&(a, b)| a == l && b != first);
        for (hit, side) in [(then, "then"), (other, "else")] {
            if hit {
                outcomes_hit += 1;
            } else {
                uncovered.push(UncoveredSite {
                    kind: SiteKind::Branch,
                    location: format!("line {l}: {side}"),
                });
            }
        }
    }
    let branch_pct = if branches.is_empty() {
        if any_case_ran {
            100.0
        } else {
            uncovered.push(UncoveredSite {
                kind: SiteKind::Branch,
                location: "entry".into(),
            });
            0.0
        }
    } else {
        pct(outcomes_hit, branches.len() * 2)
    };
    CoverageReport {
        line_pct,
        branch_pct,
        uncovered,
    }
}

pub fn coverage_adapter(
    language: &LanguageId,
    work_dir: PathBuf,
    timeout: Duration,
) -> Result<Box<dyn CoverageAdapter>, SuiteError> {
    if *language == LanguageId::python() {
        Ok(Box::new(PythonCoverage { work_dir, timeout }))
    } else {
        Err(SuiteError::NoAdapter(language.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SuiteStatus {
    FullCoverage,
    Stagnated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub report: CoverageReport,
    pub added: usize,
    /// Proposed inputs that were rejected, with the reason.
    pub rejected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSuite {
    pub fqid: String,
    pub cases: Vec<TestInput>,
    pub status: SuiteStatus,
    pub history: Vec<IterationRecord>,
    pub warnings: Vec<String>,
    pub transcript_id: String,
}

impl TestSuite {
    pub fn final_report(&self) -> Option<&CoverageReport> {
        self.history.last().map(|h| &h.report)
    }
}

impl Record for TestSuite {
    const KIND: &'static str = "suite";
    const DIR: &'static str = SUITES_DIR;

    fn validate(&self) -> Result<(), ModelError> {
        let last = self
            .final_report()
            .ok_or_else(|| ModelError::Invariant("suite has no coverage history".into()))?;
        if self.status == SuiteStatus::FullCoverage && !last.is_full() {
            return Err(ModelError::Invariant(
                "FULL_COVERAGE suite with incomplete coverage".into(),
            ));
        }
        let ids: BTreeSet<&str> = self.cases.iter().map(|c| c.case_id.as_str()).collect();
        if ids.len() != self.cases.len() {
            return Err(ModelError::Invariant("duplicate case ids".into()));
        }
        for h in &self.history {
            h.report.check()?;
        }
        Ok(())
    }

    fn fqid(&self) -> Option<&str> {
        Some(&self.fqid)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteSettings {
    pub stagnation_limit: u32,
    pub iteration_cap: u32,
}

/// Pull candidate lines out of a reply: the ```inputs block if present,
/// otherwise any fenced block, otherwise the whole text.
fn candidate_lines(reply: &str) -> Vec<String> {
    let block = fenced(reply, "inputs")
        .or_else(|| fenced(reply, ""))
        .unwrap_or(reply);
    block
        .lines()
        .map(|l| l.trim().trim_start_matches("- ").trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            if l.len() > 2 && l.starts_with('(') && l.ends_with(')') {
                l[1..l.len() - 1].to_string()
            } else {
                l.to_string()
            }
        })
        .collect()
}

fn fenced<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let mut search = 0;
    while let Some(i) = text[search..].find("```") {
        let start = search + i + 3;
        let line_end = text[start..].find('\n').map(|j| start + j)?;
        let info = text[start..line_end].trim();
        let end = text[line_end..].find("```").map(|j| line_end + j)?;
        if tag.is_empty() || info == tag {
            return Some(&text[line_end + 1..end]);
        }
        search = end + 3;
    }
    None
}

/// Parse one proposed case, widening integer literals where a float is declared.
pub fn parse_input(line: &str, sig: &Signature) -> Result<Vec<Value>, String> {
    let mut args = parse_case(line).map_err(|e| e.to_string())?;
    for (a, p) in args.iter_mut().zip(&sig.params) {
        if let (Value::Int(i), SemType::Float) = (&*a, &p.ty) {
            *a = Value::Float(*i as f64);
        }
    }
    check_case(&args, sig).map_err(|e| e.to_string())?;
    Ok(args)
}

/// Turn a reply into new, distinct inputs; returns (inputs, rejections).
pub fn inputs_from_reply(
    reply: &str,
    record: &FunctionRecord,
    existing: &[TestInput],
    next_id: &mut usize,
) -> (Vec<TestInput>, Vec<String>) {
    let mut seen: BTreeSet<String> = existing.iter().map(|c| c.line()).collect();
    let mut out = Vec::new();
    let mut rejected = Vec::new();
    let random = shim::uses_randomness(record);
    for line in candidate_lines(reply) {
        match parse_input(&line, &record.signature) {
            Ok(args) => {
                let key = encode_case(&args);
                if seen.insert(key) {
                    *next_id += 1;
                    out.push(TestInput {
                        case_id: format!("c{:03}", *next_id),
                        args,
                        random: random.then(|| RandomSource::Seed(*next_id as u64)),
                    });
                }
            }
            Err(e) => rejected.push(format!("{line}: {e}")),
        }
    }
    (out, rejected)
}

pub fn session_id(record: &FunctionRecord) -> String {
    format!("tests--{}", record.slug())
}

pub fn measure_coverage(
    record: &FunctionRecord,
    cases: &[TestInput],
    adapter: &dyn CoverageAdapter,
) -> Result<Measurement, SuiteError> {
    adapter.measure(record, cases)
}

/// Ask for inputs that reach the uncovered sites of `report`.
pub fn refine_inputs(
    record: &FunctionRecord,
    conv: &mut Conversation,
    report: &CoverageReport,
    existing: &[TestInput],
    next_id: &mut usize,
) -> Result<(Vec<TestInput>, Vec<String>), SuiteError> {
    let uncovered: Vec<String> = report
        .uncovered
        .iter()
        .map(|s| {
            format!(
                "- {}: {}",
                if s.kind == SiteKind::Line {
                    "line"
                } else {
                    "branch"
                },
                s.location
            )
        })
        .collect();
    let prompt = render_template(
        prompts::TESTS_REFINE,
        &[
            ("line_pct", &format!("{:.1}", report.line_pct)),
            ("branch_pct", &format!("{:.1}", report.branch_pct)),
            ("uncovered", &uncovered.join("\n")),
        ],
    )?;
    let reply = conv.ask(&prompt)?;
    Ok(inputs_from_reply(&reply, record, existing, next_id))
}

/// Measure `cases ++ fresh`; erroring fresh cases are dropped.
fn grow(
    record: &FunctionRecord,
    adapter: &dyn CoverageAdapter,
    cases: &mut Vec<TestInput>,
    fresh: Vec<TestInput>,
    rejected: &mut Vec<String>,
    warnings: &mut Vec<String>,
) -> Result<(CoverageReport, usize), SuiteError> {
    let mut all = cases.clone();
    all.extend(fresh.iter().cloned());
    let m = adapter.measure(record, &all)?;
    if m.errors.is_empty() {
        let n = fresh.len();
        *cases = all;
        return Ok((m.report, n));
    }
    let bad: BTreeSet<&str> = m.errors.iter().map(|e| e.case_id.as_str()).collect();
    for e in &m.errors {
        if cases.iter().any(|c| c.case_id == e.case_id) {
            warnings.push(format!(
                "existing case {} now fails: {}",
                e.case_id, e.message
            ));
        } else {
            let line = fresh
                .iter()
                .find(|c| c.case_id == e.case_id)
                .map(|c| c.line())
                .unwrap_or_default();
            rejected.push(format!("{line}: raised {}", e.message));
        }
    }
    let kept: Vec<TestInput> = fresh
        .into_iter()
        .filter(|c| !bad.contains(c.case_id.as_str()))
        .collect();
    let n = kept.len();
    cases.extend(kept);
    // Re-measure so the report describes exactly the retained suite.
    let m = adapter.measure(record, cases)?;
    Ok((m.report, n))
}

pub fn build_suite(
    record: &FunctionRecord,
    conv: &mut Conversation,
    adapter: &dyn CoverageAdapter,
    settings: SuiteSettings,
) -> Result<TestSuite, SuiteError> {
    if !record.signature.is_basic() {
        return Err(SuiteError::NotBasic(record.fqid.clone()));
    }
    conv.system(prompts::TESTS_SYSTEM);
    let prompt = render_template(
        prompts::TESTS_INITIAL,
        &[
            ("language", record.language.as_str()),
            ("code", &record.body),
            ("signature", &record.signature.render(&record.name)),
        ],
    )?;
    let reply = conv.ask(&prompt)?;
    let mut next_id = 0;
    let mut cases = Vec::new();
    let mut warnings = Vec::new();
    let (fresh, mut rejected) = inputs_from_reply(&reply, record, &cases, &mut next_id);
    let (mut report, added) = grow(
        record,
        adapter,
        &mut cases,
        fresh,
        &mut rejected,
        &mut warnings,
    )?;
    let mut history = vec![IterationRecord {
        iteration: 1,
        report: report.clone(),
        added,
        rejected,
    }];
    let mut stagnant = 0;
    let status = loop {
        if report.is_full() {
            break SuiteStatus::FullCoverage;
        }
        if stagnant >= settings.stagnation_limit {
            break SuiteStatus::Stagnated;
        }
        if history.len() as u32 >= settings.iteration_cap {
            warnings.push(format!("iteration cap {} reached", settings.iteration_cap));
            break SuiteStatus::Stagnated;
        }
        let (fresh, mut rejected) = refine_inputs(record, conv, &report, &cases, &mut next_id)?;
        let (next, added) = grow(
            record,
            adapter,
            &mut cases,
            fresh,
            &mut rejected,
            &mut warnings,
        )?;
        if next.improves_on(&report) {
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        report = next;
        history.push(IterationRecord {
            iteration: history.len() as u32 + 1,
            report: report.clone(),
            added,
            rejected,
        });
    };
    Ok(TestSuite {
        fqid: record.fqid.clone(),
        cases,
        status,
        history,
        warnings,
        transcript_id: conv.session().to_string(),
    })
}
