//! Determinism shim: both sides of a comparison draw random bytes from one
//! predefined stream.
//!
//! Only byte-level APIs can be routed through the stream without changing
//! their semantics. Functions that reach any other generator are reported as
//! unshimmable instead of being compared.

use regex::Regex;
use std::sync::OnceLock;

use crate::model::{FunctionRecord, LanguageId};

/// Python APIs the driver runtime patches.
pub const PY_SHIMMED: &[&str] = &[
    "os.urandom",
    "secrets.token_bytes",
    "secrets.token_hex",
    "random.randbytes",
    "uuid.uuid4",
];

const PY_RANDOM_PREFIXES: &[&str] = &[
    "random.",
    "secrets.",
    "numpy.random.",
    "os.urandom",
    "uuid.uuid1",
    "uuid.uuid4",
];

const JAVA_RANDOM_MARKERS: &[&str] = &[
    "SecureRandom",
    "Random",
    "Math.random",
    "ThreadLocalRandom",
    "UUID.randomUUID",
];

/// Calls in `record` that draw randomness.
pub fn random_calls(record: &FunctionRecord) -> Vec<String> {
    let mut out: Vec<String> = record
        .call_sites
        .iter()
        .map(|c| c.callee_symbol.clone())
        .filter(|s| {
            if record.language == LanguageId::java() {
                JAVA_RANDOM_MARKERS.iter().any(|m| s.contains(m))
            } else {
                PY_RANDOM_PREFIXES.iter().any(|p| s.starts_with(p))
            }
        })
        .collect();
    out.sort();
    out.dedup();
    out
}

pub fn uses_randomness(record: &FunctionRecord) -> bool {
    !random_calls(record).is_empty()
}

/// Random calls on the source side that the shim cannot route.
pub fn unshimmable_source_calls(record: &FunctionRecord) -> Vec<String> {
    random_calls(record)
        .into_iter()
        .filter(|s| record.language == LanguageId::java() || !PY_SHIMMED.contains(&s.as_str()))
        .collect()
}

fn rewrites() -> &'static [(Regex, &'static str)] {
    static R: OnceLock<Vec<(Regex, &'static str)>> = OnceLock::new();
    R.get_or_init(|| {
        vec![
            (
                Regex::new(r"(?:::)?getrandom::(?:getrandom|fill)\s*\(").unwrap(),
                "crate::rt::getrandom(",
            ),
            (
                Regex::new(r"(?:(?:rand|rand_core)::(?:rngs::)?)?OsRng\s*\.\s*fill_bytes\s*\(")
                    .unwrap(),
                "crate::rt::fill_bytes(",
            ),
            (
                Regex::new(r"(?:(?:rand|rand_core)::(?:rngs::)?)?OsRng\s*\.\s*try_fill_bytes\s*\(")
                    .unwrap(),
                "crate::rt::getrandom(",
            ),
        ]
    })
}

fn unshimmable_patterns() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| {
        Regex::new(
            r"thread_rng\s*\(|rand::random\b|from_entropy\s*\(|OsRng\s*\.\s*(?:next_u32|next_u64|gen)|\bStdRng\b|\bSmallRng\b|SystemRandom\s*::\s*new|\bgen_range\s*\(",
        )
        .unwrap()
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShimmedSource {
    pub code: String,
    pub rewritten: usize,
    pub unshimmable: Vec<String>,
}

/// Route byte-level randomness in native code through the harness runtime.
/// Applied to every build, so the validated binary is the deployed binary.
pub fn prepare_native(code: &str) -> ShimmedSource {
    let mut out = code.to_string();
    let mut rewritten = 0;
    for (re, repl) in rewrites() {
        rewritten += re.find_iter(&out).count();
        out = re.replace_all(&out, *repl).into_owned();
    }
    let mut unshimmable: Vec<String> = unshimmable_patterns()
        .find_iter(&out)
        .map(|m| m.as_str().trim_end_matches('(').trim().to_string())
        .collect();
    unshimmable.sort();
    unshimmable.dedup();
    ShimmedSource {
        code: out,
        rewritten,
        unshimmable,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewrites_byte_apis() {
        let s = prepare_native("let mut b = [0u8; 16];\ngetrandom::getrandom(&mut b).unwrap();\nrand::rngs::OsRng.fill_bytes(&mut b);");
        assert_eq!(s.rewritten, 2);
        assert!(s.code.contains("crate::rt::getrandom(&mut b)"));
        assert!(s.code.contains("crate::rt::fill_bytes(&mut b)"));
        assert!(s.unshimmable.is_empty());
    }

    #[test]
    fn flags_generators() {
        let s = prepare_native("let x: u32 = rand::thread_rng().gen_range(0..10);");
        assert_eq!(
            s.unshimmable,
            vec!["gen_range".to_string(), "thread_rng".to_string()]
        );
    }
}
