//! Executables that run one function on one input vector.
//!
//! Every driver speaks the same line protocol: the case literal on stdin, and
//! `ok <literal>` or `err <message>` on stdout. Exit status 0 / 1 go with
//! ok / err; anything else is a crash.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::model::{FunctionRecord, LanguageId, SemType};
use crate::vector::{parse_value, Value};

pub const PY_DRIVER: &str = include_str!("../data/driver.py");
pub const PY_RUNTIME: &str = include_str!("../data/teeport_rt.py");

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("no driver for language `{0}`")]
    Unsupported(LanguageId),
    #[error("required tool `{0}` was not found on PATH")]
    ToolMissing(String),
    #[error("cannot prepare driver in {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("driver failed: {0}")]
    Failed(String),
}

/// Source of bytes for every randomness API the shim intercepts.
///
/// `Bytes` repeats cyclically; `Seed` expands through splitmix64 (little
/// endian words). Both sides of a comparison consume the same stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum RandomSource {
    Seed(u64),
    Bytes(Vec<u8>),
}

impl fmt::Display for RandomSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RandomSource::Seed(s) => write!(f, "seed:{s}"),
            RandomSource::Bytes(b) => write!(f, "bytes:{}", hex::encode(b)),
        }
    }
}

impl FromStr for RandomSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            Some(("seed", n)) => n
                .parse()
                .map(RandomSource::Seed)
                .map_err(|e| format!("bad seed: {e}")),
            Some(("bytes", h)) => {
                let b = hex::decode(h).map_err(|e| format!("bad byte stream: {e}"))?;
                if b.is_empty() {
                    return Err("empty byte stream".into());
                }
                Ok(RandomSource::Bytes(b))
            }
            _ => Err(format!("unknown random source `{s}`")),
        }
    }
}

impl From<RandomSource> for String {
    fn from(r: RandomSource) -> String {
        r.to_string()
    }
}

impl TryFrom<String> for RandomSource {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// splitmix64 byte stream, the reference for both runtimes.
pub fn splitmix_bytes(seed: u64, n: usize) -> Vec<u8> {
    let mut state = seed;
    let mut out = Vec::with_capacity(n + 8);
    while out.len() < n {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        out.extend_from_slice(&(z ^ (z >> 31)).to_le_bytes());
    }
    out.truncate(n);
    out
}

/// Something that can be spawned once per case.
#[derive(Debug, Clone)]
pub struct Executable {
    pub label: String,
    pub program: PathBuf,
    pub args: Vec<String>,
    pub ret: SemType,
    /// Run under the enclave policy (see [`apply_enclave_policy`]).
    pub sandbox: bool,
}

/// Policy for code running inside the simulated enclave: no inherited
/// environment and no user-mode timestamp counter (`rdtsc` faults).
pub fn apply_enclave_policy(cmd: &mut Command) {
    use std::os::unix::process::CommandExt;
    cmd.env_clear();
    // SAFETY: prctl is async-signal-safe and touches only the calling thread.
    unsafe {
        cmd.pre_exec(|| {
            if libc::prctl(libc::PR_SET_TSC, libc::PR_TSC_SIGSEGV, 0, 0, 0) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            Ok(())
        });
    }
}

impl Executable {
    pub fn native(label: &str, binary: &Path, ret: &SemType, sandbox: bool) -> Self {
        Executable {
            label: label.to_string(),
            program: binary.to_path_buf(),
            args: Vec::new(),
            ret: ret.clone(),
            sandbox,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaseOutcome {
    Returned(Value),
    /// The function raised / panicked.
    Raised(String),
    /// The process died or spoke outside the protocol.
    Crashed(String),
    TimedOut,
}

#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub case_id: String,
    pub exit_status: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub wall_time: Duration,
    pub outcome: CaseOutcome,
}

impl ExecutionResult {
    pub fn canonical_output(&self) -> Option<String> {
        match &self.outcome {
            CaseOutcome::Returned(v) => Some(v.canonical()),
            _ => None,
        }
    }

    /// Short description used in diagnostics and feedback.
    pub fn describe(&self) -> String {
        match &self.outcome {
            CaseOutcome::Returned(v) => v.canonical(),
            CaseOutcome::Raised(m) => format!("error: {m}"),
            CaseOutcome::Crashed(m) => format!("crash: {m}"),
            CaseOutcome::TimedOut => "timed out".into(),
        }
    }
}

/// Interpret one `ok` / `err` reply.
pub fn parse_reply(stdout: &str, ret: &SemType) -> CaseOutcome {
    let line = stdout.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if let Some(lit) = line.strip_prefix("ok ") {
        match parse_value(lit) {
            Ok(v) if v.matches(ret) => CaseOutcome::Returned(v),
            Ok(v) => {
                CaseOutcome::Crashed(format!("returned {} where {ret} was declared", v.kind()))
            }
            Err(e) => CaseOutcome::Crashed(format!("unreadable result: {e}")),
        }
    } else if let Some(msg) = line.strip_prefix("err ") {
        CaseOutcome::Raised(msg.to_string())
    } else if let Some(msg) = line.strip_prefix("fatal ") {
        CaseOutcome::Crashed(msg.to_string())
    } else {
        CaseOutcome::Crashed(if line.is_empty() {
            "no output".into()
        } else {
            format!("unexpected output `{line}`")
        })
    }
}

pub fn run_case(
    exe: &Executable,
    case_id: &str,
    case_line: &str,
    random: Option<&RandomSource>,
    timeout: Duration,
) -> ExecutionResult {
    let mut cmd = Command::new(&exe.program);
    cmd.args(&exe.args);
    cmd.arg(random.map(|r| r.to_string()).unwrap_or_default());
    if exe.sandbox {
        apply_enclave_policy(&mut cmd);
    }
    cmd.stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let start = Instant::now();
    let fail = |msg: String| ExecutionResult {
        case_id: case_id.to_string(),
        exit_status: None,
        stdout: String::new(),
        stderr: String::new(),
        wall_time: start.elapsed(),
        outcome: CaseOutcome::Crashed(msg),
    };
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => return fail(format!("cannot start {}: {e}", exe.program.display())),
    };
    if let Some(mut stdin) = child.stdin.take() {
        let _ = stdin.write_all(case_line.trim_end().as_bytes());
        let _ = stdin.write_all(b"\n");
    }
    // Drain pipes on threads so a chatty child cannot block on a full pipe.
    let mut out_pipe = child.stdout.take().expect("piped");
    let mut err_pipe = child.stderr.take().expect("piped");
    let out_t = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = out_pipe.read_to_string(&mut s);
        s
    });
    let err_t = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = err_pipe.read_to_string(&mut s);
        s
    });
    let status = match child.wait_timeout(timeout) {
        Ok(Some(st)) => Some(st),
        Ok(None) => {
            let _ = child.kill();
            let _ = child.wait();
            None
        }
        Err(e) => return fail(format!("wait failed: {e}")),
    };
    let stdout = out_t.join().unwrap_or_default();
    let stderr = err_t.join().unwrap_or_default();
    let wall_time = start.elapsed();
    let (exit_status, outcome) = match status {
        None => (None, CaseOutcome::TimedOut),
        Some(st) => {
            let code = st.code();
            let outcome = match code {
                Some(0) | Some(1) => parse_reply(&stdout, &exe.ret),
                Some(c) => match parse_reply(&stdout, &exe.ret) {
                    CaseOutcome::Crashed(_) => {
                        CaseOutcome::Crashed(format!("exit status {c}: {}", last_line(&stderr)))
                    }
                    other => other,
                },
                None => CaseOutcome::Crashed(format!("killed by signal: {}", signal_of(&st))),
            };
            (code, outcome)
        }
    };
    ExecutionResult {
        case_id: case_id.to_string(),
        exit_status,
        stdout,
        stderr,
        wall_time,
        outcome,
    }
}

fn last_line(s: &str) -> &str {
    s.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("")
}

fn signal_of(st: &std::process::ExitStatus) -> String {
    use std::os::unix::process::ExitStatusExt;
    match st.signal() {
        Some(libc::SIGSEGV) => "SIGSEGV".into(),
        Some(libc::SIGKILL) => "SIGKILL".into(),
        Some(libc::SIGABRT) => "SIGABRT".into(),
        Some(n) => format!("signal {n}"),
        None => "unknown".into(),
    }
}

/// Python interpreter used for source-side drivers (`TEEPORT_PYTHON`, default `python3`).
pub fn python_program() -> PathBuf {
    std::env::var_os("TEEPORT_PYTHON")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("python3"))
}

pub fn tool_available(program: &Path) -> bool {
    Command::new(program)
        .arg("--version")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

pub fn write_runtime(dir: &Path) -> Result<(), DriverError> {
    let io = |e| DriverError::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join("driver.py"), PY_DRIVER).map_err(io)?;
    std::fs::write(dir.join("teeport_rt.py"), PY_RUNTIME).map_err(io)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverMode {
    Run,
    Coverage,
    Bench,
}

/// Write the driver files for `record` into `dir` and return how to invoke it.
/// `project_root` overrides the record's root (used for linked copies).
pub fn source_driver(
    record: &FunctionRecord,
    dir: &Path,
    mode: DriverMode,
    project_root: Option<&Path>,
) -> Result<Executable, DriverError> {
    if record.language != LanguageId::python() {
        if record.language == LanguageId::java() {
            // The Java driver needs a JDK; report that precisely.
            for tool in ["javac", "java"] {
                if !tool_available(Path::new(tool)) {
                    return Err(DriverError::ToolMissing(tool.into()));
                }
            }
        }
        return Err(DriverError::Unsupported(record.language.clone()));
    }
    write_runtime(dir)?;
    let root = project_root
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&record.project_root));
    let root = std::fs::canonicalize(&root).unwrap_or(root);
    let spec = serde_json::json!({
        "project_root": root,
        "module": record.module,
        "qualname": record.qualname,
        "params": record.signature.params.iter().map(|p| p.ty.to_string()).collect::<Vec<_>>(),
        "ret": record.signature.ret.to_string(),
        "mode": mode,
    });
    let name = format!(
        "spec-{}.json",
        serde_json::to_value(mode).unwrap().as_str().unwrap()
    );
    let spec_path = dir.join(name);
    std::fs::write(&spec_path, serde_json::to_vec_pretty(&spec).unwrap()).map_err(|e| {
        DriverError::Io {
            path: spec_path.clone(),
            source: e,
        }
    })?;
    Ok(Executable {
        label: format!("python:{}", record.qualname),
        program: python_program(),
        args: vec![
            "-B".into(),
            dir.join("driver.py").display().to_string(),
            spec_path.display().to_string(),
        ],
        ret: record.signature.ret.clone(),
        sandbox: false,
    })
}

/// Run the driver in a non-`run` mode with the whole request on stdin.
pub fn run_batch(exe: &Executable, input: &str, timeout: Duration) -> Result<String, DriverError> {
    let mut child = Command::new(&exe.program)
        .args(&exe.args)
        .arg("")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| DriverError::Failed(format!("cannot start {}: {e}", exe.program.display())))?;
    let mut stdin = child.stdin.take().expect("piped");
    let input = input.to_string();
    let writer = std::thread::spawn(move || {
        let _ = stdin.write_all(input.as_bytes());
    });
    let mut out_pipe = child.stdout.take().expect("piped");
    let mut err_pipe = child.stderr.take().expect("piped");
    let out_t = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = out_pipe.read_to_string(&mut s);
        s
    });
    let err_t = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = err_pipe.read_to_string(&mut s);
        s
    });
    let status = child
        .wait_timeout(timeout)
        .map_err(|e| DriverError::Failed(e.to_string()))?;
    if status.is_none() {
        let _ = child.kill();
        let _ = child.wait();
    }
    let _ = writer.join();
    let stdout = out_t.join().unwrap_or_default();
    let stderr = err_t.join().unwrap_or_default();
    match status {
        None => Err(DriverError::Failed(format!("timed out after {timeout:?}"))),
        Some(st) if st.success() => Ok(stdout),
        Some(_) => {
            let msg = stdout
                .strip_prefix("fatal ")
                .map(str::trim)
                .unwrap_or_else(|| last_line(&stderr));
            Err(DriverError::Failed(msg.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_source_roundtrip() {
        for s in ["seed:42", "bytes:00ff10"] {
            let r: RandomSource = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
        assert!("bytes:".parse::<RandomSource>().is_err());
        assert!("dice:4".parse::<RandomSource>().is_err());
    }

    #[test]
    fn splitmix_reference_vector() {
        // First output of splitmix64 seeded with 0 is 0xe220a8397b1dcdaf.
        assert_eq!(
            splitmix_bytes(0, 8),
            0xe220a8397b1dcdafu64.to_le_bytes().to_vec()
        );
        assert_eq!(splitmix_bytes(7, 3), splitmix_bytes(7, 16)[..3].to_vec());
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(
            parse_reply("ok 3\n", &SemType::Int),
            CaseOutcome::Returned(Value::Int(3))
        );
        assert!(matches!(
            parse_reply("ok 3\n", &SemType::Str),
            CaseOutcome::Crashed(_)
        ));
        assert_eq!(
            parse_reply("err ValueError: x\n", &SemType::Int),
            CaseOutcome::Raised("ValueError: x".into())
        );
        assert!(matches!(
            parse_reply("", &SemType::Int),
            CaseOutcome::Crashed(_)
        ));
    }
}
