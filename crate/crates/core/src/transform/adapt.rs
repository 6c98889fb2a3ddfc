//! Platform adaptation: rewrite native code for what the target enclave
//! profile forbids.
//!
//! The `process` profile starts code with an empty environment and without
//! access to the timestamp counter, so environment reads are inlined from
//! launch-time values and `rdtsc` becomes a read of the runtime clock. The `vm`
//! profile runs a full guest and needs nothing.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeeProfile {
    pub id: String,
    /// Values for environment variables the code reads.
    pub env: BTreeMap<String, String>,
}

impl TeeProfile {
    pub fn process(env: BTreeMap<String, String>) -> Self {
        TeeProfile {
            id: "process".into(),
            env,
        }
    }

    pub fn vm() -> Self {
        TeeProfile {
            id: "vm".into(),
            env: BTreeMap::new(),
        }
    }

    pub fn by_id(id: &str, env: BTreeMap<String, String>) -> Result<Self, AdaptError> {
        match id {
            "process" => Ok(Self::process(env)),
            "vm" => Ok(Self::vm()),
            other => Err(AdaptError::UnknownProfile(other.into())),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AdaptError {
    #[error("environment variables read by the code have no value: {}", .0.join(", "))]
    MissingEnv(Vec<String>),
    #[error("unknown enclave profile `{0}`")]
    UnknownProfile(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adapted {
    pub code: String,
    pub rewrites: Vec<String>,
}

fn env_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| {
        Regex::new(r#"(?:(?:::)?std::)?env::(var|var_os)\s*\(\s*"([^"\\]*)"\s*\)"#).unwrap()
    })
}

fn tsc_re() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| {
        Regex::new(r"(?:(?:::)?(?:core|std)::arch::x86(?:_64)?::)?(?:_rdtsc\s*\(\s*\)|__rdtscp\s*\([^)]*\))").unwrap()
    })
}

/// The harness runtime's clock issues the syscall directly; the vDSO fast
/// path reads the timestamp counter and would fault inside the enclave.
const CLOCK: &str = "crate::rt::clock_ns()";

fn rust_str(s: &str) -> String {
    format!("{s:?}")
}

pub fn adapt_platform(code: &str, profile: &TeeProfile) -> Result<Adapted, AdaptError> {
    if profile.id == "vm" {
        return Ok(Adapted {
            code: code.to_string(),
            rewrites: Vec::new(),
        });
    }
    let mut missing: Vec<String> = env_re()
        .captures_iter(code)
        .map(|c| c[2].to_string())
        .filter(|k| !profile.env.contains_key(k))
        .collect();
    missing.sort();
    missing.dedup();
    if !missing.is_empty() {
        return Err(AdaptError::MissingEnv(missing));
    }
    let mut rewrites = Vec::new();
    let out = env_re().replace_all(code, |c: &Captures| {
        let value = &profile.env[&c[2]];
        rewrites.push(format!("inlined {}", &c[2]));
        if &c[1] == "var" {
            format!(
                "Ok::<String, std::env::VarError>(String::from({}))",
                rust_str(value)
            )
        } else {
            format!("Some(std::ffi::OsString::from({}))", rust_str(value))
        }
    });
    let out = tsc_re().replace_all(&out, |c: &Captures| {
        rewrites.push(format!("replaced `{}` with the runtime clock", c[0].trim()));
        CLOCK.to_string()
    });
    Ok(Adapted {
        code: out.into_owned(),
        rewrites,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inlines_env_and_rewrites_timer() {
        let env = BTreeMap::from([("KEY_PATH".to_string(), "/tmp/k".to_string())]);
        let src = "let p = std::env::var(\"KEY_PATH\").unwrap();\nlet t = unsafe { core::arch::x86_64::_rdtsc() };";
        let a = adapt_platform(src, &TeeProfile::process(env)).unwrap();
        assert!(a.code.contains("String::from(\"/tmp/k\")"));
        assert!(!a.code.contains("_rdtsc"));
        assert_eq!(a.rewrites.len(), 2);
    }

    #[test]
    fn vm_is_identity_and_missing_env_is_named() {
        let src = "let a = env::var(\"A\"); let b = std::env::var_os(\"B\");";
        assert_eq!(adapt_platform(src, &TeeProfile::vm()).unwrap().code, src);
        let err = adapt_platform(src, &TeeProfile::process(BTreeMap::new())).unwrap_err();
        assert_eq!(err, AdaptError::MissingEnv(vec!["A".into(), "B".into()]));
    }
}
