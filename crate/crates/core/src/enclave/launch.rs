//! Starting the runtime process.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use super::runtime::LaunchBundle;
use super::{verify_image, EnclaveError, KeyStore, SignedImage};

pub const RUNTIME_BIN: &str = "teeport-enclave";

/// How to start the runtime: `TEEPORT_ENCLAVE_BIN`, else the
/// `teeport-enclave` binary next to the current executable (or one
/// directory up, for test binaries under `deps/`).
pub fn runtime_program() -> Result<PathBuf, EnclaveError> {
    if let Some(p) = std::env::var_os("TEEPORT_ENCLAVE_BIN") {
        return Ok(PathBuf::from(p));
    }
    let exe = std::env::current_exe().map_err(|e| EnclaveError::RuntimeMissing(e.to_string()))?;
    let dir = exe.parent().unwrap_or(Path::new("."));
    for cand in [dir.join(RUNTIME_BIN), dir.join("..").join(RUNTIME_BIN)] {
        if cand.is_file() {
            return Ok(cand);
        }
    }
    Err(EnclaveError::RuntimeMissing(format!(
        "{RUNTIME_BIN} not found near {}",
        exe.display()
    )))
}

#[derive(Debug, Clone)]
pub struct LaunchOptions {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub log: PathBuf,
    pub case_timeout: Duration,
}

/// A running runtime; killed on drop.
pub struct EnclaveHandle {
    pub port: u16,
    pub log: PathBuf,
    child: Child,
}

impl EnclaveHandle {
    pub fn endpoint(&self) -> String {
        format!("127.0.0.1:{}", self.port)
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    pub fn log_text(&self) -> String {
        std::fs::read_to_string(&self.log).unwrap_or_default()
    }
}

impl Drop for EnclaveHandle {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Verify the image against the harness key, then start a runtime for it
/// with an empty environment. One function per runtime process.
pub fn launch_enclave(
    image: &SignedImage,
    keys: &KeyStore,
    opts: &LaunchOptions,
) -> Result<EnclaveHandle, EnclaveError> {
    let bytes = std::fs::read(&image.binary).map_err(|source| EnclaveError::Io {
        path: image.binary.clone(),
        source,
    })?;
    verify_image(image, &bytes, &keys.harness.verifying_key())?;
    let bundle = LaunchBundle {
        image: SignedImage {
            binary: std::fs::canonicalize(&image.binary).unwrap_or_else(|_| image.binary.clone()),
            ..image.clone()
        },
        harness_public: keys.harness_public(),
        attestation_secret: hex::encode(keys.attestation.to_bytes()),
        case_timeout_ms: opts.case_timeout.as_millis() as u64,
    };
    if let Some(parent) = opts.log.parent() {
        std::fs::create_dir_all(parent).map_err(|source| EnclaveError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let log = std::fs::File::create(&opts.log).map_err(|source| EnclaveError::Io {
        path: opts.log.clone(),
        source,
    })?;
    let mut child = Command::new(&opts.program)
        .args(&opts.args)
        .env_clear()
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::from(log))
        .spawn()
        .map_err(|e| EnclaveError::RuntimeMissing(format!("{}: {e}", opts.program.display())))?;
    {
        let mut stdin = child.stdin.take().expect("piped");
        let body = serde_json::to_vec(&bundle).expect("bundles serialize");
        stdin.write_all(&body).map_err(|source| EnclaveError::Io {
            path: opts.program.clone(),
            source,
        })?;
    }
    let mut first = String::new();
    let stdout = child.stdout.take().expect("piped");
    let _ = BufReader::new(stdout).read_line(&mut first);
    let first = first.trim();
    if let Some(port) = first
        .strip_prefix("LISTENING ")
        .and_then(|p| p.parse().ok())
    {
        return Ok(EnclaveHandle {
            port,
            log: opts.log.clone(),
            child,
        });
    }
    let _ = child.kill();
    let _ = child.wait();
    Err(EnclaveError::Refused(
        first.strip_prefix("REFUSED ").unwrap_or(first).to_string(),
    ))
}
