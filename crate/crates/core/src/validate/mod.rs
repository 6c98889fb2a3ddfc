//! Differential validation: run every suite case through the original
//! function and the native binary and compare canonical outputs.

pub mod shim;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::drivers::{run_case, CaseOutcome, Executable, ExecutionResult};
use crate::model::{FunctionRecord, ModelError};
use crate::par::{self, Parallelism};
use crate::suite::{TestInput, TestSuite};
use crate::transform::toolchain::CompileReport;
use crate::transform::Equivalence;
use crate::workspace::{Record, ARTIFACTS_DIR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EquivalenceOutcome {
    Equivalent,
    Different,
    ExecutionError,
}

impl fmt::Display for EquivalenceOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EquivalenceOutcome::Equivalent => "EQUIVALENT",
            EquivalenceOutcome::Different => "DIFFERENT",
            EquivalenceOutcome::ExecutionError => "EXECUTION_ERROR",
        })
    }
}

pub const UNSHIMMABLE_RANDOMNESS: &str = "UNSHIMMABLE_RANDOMNESS";
pub const ORIGINAL_FAILED: &str = "ORIGINAL_FAILED";
pub const EMPTY_SUITE: &str = "EMPTY_SUITE";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseDiff {
    pub case_id: String,
    pub input: String,
    pub original: String,
    pub native: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivalenceVerdict {
    pub fqid: String,
    pub outcome: EquivalenceOutcome,
    pub cases_run: usize,
    #[serde(default)]
    pub first_difference: Option<CaseDiff>,
    /// Case that made the comparison impossible.
    #[serde(default)]
    pub case_id: Option<String>,
    #[serde(default)]
    pub error_tag: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
}

impl EquivalenceVerdict {
    fn error(fqid: &str, tag: &str, case_id: Option<String>, msg: String) -> Self {
        EquivalenceVerdict {
            fqid: fqid.to_string(),
            outcome: EquivalenceOutcome::ExecutionError,
            cases_run: 0,
            first_difference: None,
            case_id,
            error_tag: Some(tag.to_string()),
            error: Some(msg),
        }
    }

    /// One-line observation for the refinement loop.
    pub fn feedback(&self) -> String {
        match (&self.outcome, &self.first_difference) {
            (EquivalenceOutcome::Equivalent, _) => "equivalent".into(),
            (EquivalenceOutcome::Different, Some(d)) => format!(
                "different: on input ({}) the original returned {} but the Rust code returned {}",
                d.input, d.original, d.native
            ),
            _ => format!(
                "validation could not run: {}",
                self.error.clone().unwrap_or_else(|| "unknown error".into())
            ),
        }
    }
}

impl Record for EquivalenceVerdict {
    const KIND: &'static str = "equivalence";
    const DIR: &'static str = ARTIFACTS_DIR;

    fn validate(&self) -> Result<(), ModelError> {
        match self.outcome {
            EquivalenceOutcome::Different if self.first_difference.is_none() => Err(
                ModelError::Invariant("DIFFERENT verdict without a differing case".into()),
            ),
            EquivalenceOutcome::ExecutionError if self.error.is_none() => Err(
                ModelError::Invariant("EXECUTION_ERROR verdict without an error".into()),
            ),
            _ => Ok(()),
        }
    }

    fn fqid(&self) -> Option<&str> {
        Some(&self.fqid)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ValidateOptions {
    pub timeout: Duration,
    pub mode: Parallelism,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            timeout: Duration::from_secs(10),
            mode: Parallelism::default(),
        }
    }
}

/// Canonical outputs of the original function, computed once per suite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OriginalOutputs {
    pub fqid: String,
    pub outputs: Vec<String>,
}

fn run_all(exe: &Executable, cases: &[TestInput], opts: ValidateOptions) -> Vec<ExecutionResult> {
    par::map(opts.mode, cases, |c| {
        run_case(exe, &c.case_id, &c.line(), c.random.as_ref(), opts.timeout)
    })
}

pub fn run_original(
    record: &FunctionRecord,
    suite: &TestSuite,
    original: &Executable,
    opts: ValidateOptions,
) -> Result<OriginalOutputs, EquivalenceVerdict> {
    let bad = shim::unshimmable_source_calls(record);
    if !bad.is_empty() {
        return Err(EquivalenceVerdict::error(
            &record.fqid,
            UNSHIMMABLE_RANDOMNESS,
            None,
            format!(
                "source draws randomness the shim cannot route: {}",
                bad.join(", ")
            ),
        ));
    }
    if suite.cases.is_empty() {
        return Err(EquivalenceVerdict::error(
            &record.fqid,
            EMPTY_SUITE,
            None,
            "the suite has no cases".into(),
        ));
    }
    let mut outputs = Vec::with_capacity(suite.cases.len());
    for r in run_all(original, &suite.cases, opts) {
        match r.canonical_output() {
            Some(out) => outputs.push(out),
            None => {
                return Err(EquivalenceVerdict::error(
                    &record.fqid,
                    ORIGINAL_FAILED,
                    Some(r.case_id.clone()),
                    format!("original failed on case {}: {}", r.case_id, r.describe()),
                ))
            }
        }
    }
    Ok(OriginalOutputs {
        fqid: record.fqid.clone(),
        outputs,
    })
}

/// Compare a native executable against precomputed original outputs.
/// `native_unshimmable` lists generator calls found in the native source.
pub fn compare(
    record: &FunctionRecord,
    suite: &TestSuite,
    original: &OriginalOutputs,
    native: &Executable,
    native_unshimmable: &[String],
    opts: ValidateOptions,
) -> EquivalenceVerdict {
    if shim::uses_randomness(record) && !native_unshimmable.is_empty() {
        return EquivalenceVerdict::error(
            &record.fqid,
            UNSHIMMABLE_RANDOMNESS,
            None,
            format!(
                "native code draws randomness the shim cannot route: {}",
                native_unshimmable.join(", ")
            ),
        );
    }
    let results = run_all(native, &suite.cases, opts);
    for ((case, expected), got) in suite.cases.iter().zip(&original.outputs).zip(&results) {
        let same = matches!(&got.outcome, CaseOutcome::Returned(_))
            && got.canonical_output().as_deref() == Some(expected);
        if !same {
            return EquivalenceVerdict {
                fqid: record.fqid.clone(),
                outcome: EquivalenceOutcome::Different,
                cases_run: results.len(),
                first_difference: Some(CaseDiff {
                    case_id: case.case_id.clone(),
                    input: case.line(),
                    original: expected.clone(),
                    native: got.describe(),
                }),
                case_id: None,
                error_tag: None,
                error: None,
            };
        }
    }
    EquivalenceVerdict {
        fqid: record.fqid.clone(),
        outcome: EquivalenceOutcome::Equivalent,
        cases_run: results.len(),
        first_difference: None,
        case_id: None,
        error_tag: None,
        error: None,
    }
}

pub fn validate(
    record: &FunctionRecord,
    suite: &TestSuite,
    original: &Executable,
    native: &Executable,
    native_unshimmable: &[String],
    opts: ValidateOptions,
) -> EquivalenceVerdict {
    match run_original(record, suite, original, opts) {
        Ok(outs) => compare(record, suite, &outs, native, native_unshimmable, opts),
        Err(v) => v,
    }
}

/// Validation against one suite with the original side run once.
pub struct Oracle<'a> {
    pub record: &'a FunctionRecord,
    pub suite: &'a TestSuite,
    pub original: OriginalOutputs,
    pub opts: ValidateOptions,
    /// Run native binaries under the enclave policy.
    pub sandbox: bool,
}

impl<'a> Oracle<'a> {
    pub fn new(
        record: &'a FunctionRecord,
        suite: &'a TestSuite,
        original: &Executable,
        opts: ValidateOptions,
    ) -> Result<Self, EquivalenceVerdict> {
        let original = run_original(record, suite, original, opts)?;
        Ok(Oracle {
            record,
            suite,
            original,
            opts,
            sandbox: false,
        })
    }

    pub fn native(&self, binary: &std::path::Path) -> Executable {
        Executable::native(
            &format!("native:{}", self.record.name),
            binary,
            &self.record.signature.ret,
            self.sandbox,
        )
    }
}

impl Equivalence for Oracle<'_> {
    fn check(&self, build: &CompileReport) -> EquivalenceVerdict {
        match &build.binary {
            Some(b) => compare(
                self.record,
                self.suite,
                &self.original,
                &self.native(b),
                &build.unshimmable,
                self.opts,
            ),
            None => EquivalenceVerdict::error(
                &self.record.fqid,
                "NO_BINARY",
                None,
                "the code has not been built".into(),
            ),
        }
    }
}
