//! Target toolchain plugin: compile native code behind a generated harness
//! and look up compiler error codes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{SemType, Signature};
use crate::validate::shim;

pub const NATIVE_RT: &str = include_str!("../../data/native_rt.rs");

/// One `name = spec` dependency line; `spec` is a TOML value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dependency {
    pub name: String,
    pub spec: String,
}

impl fmt::Display for Dependency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.name, self.spec)
    }
}

impl Dependency {
    pub fn new(name: &str, version: &str) -> Self {
        Dependency {
            name: name.into(),
            spec: format!("\"{version}\""),
        }
    }
}

fn split_top_level(text: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut in_str = false;
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '"' => in_str = !in_str,
            '{' | '[' if !in_str => depth += 1,
            '}' | ']' if !in_str => depth -= 1,
            ',' | '\n' if !in_str && depth == 0 => {
                parts.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    parts.push(cur);
    parts
        .into_iter()
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .collect()
}

/// Parse `name = "1.0", other = { version = "2", features = ["x"] }`.
/// Surrounding brackets are optional; a bare name means any version.
pub fn parse_dependencies(text: &str) -> Result<Vec<Dependency>, String> {
    let mut t = text.trim();
    if t.starts_with('[') && t.ends_with(']') {
        t = &t[1..t.len() - 1];
    }
    let name_re = Regex::new(r"^[A-Za-z0-9_-]+$").unwrap();
    let mut out: Vec<Dependency> = Vec::new();
    for part in split_top_level(t) {
        let (name, spec) = match part.split_once('=') {
            Some((n, s)) => (n.trim().trim_matches('"').to_string(), s.trim().to_string()),
            None => (part.trim_matches('"').to_string(), "\"*\"".to_string()),
        };
        if !name_re.is_match(&name) {
            return Err(format!("`{part}` is not a dependency"));
        }
        let spec = if spec.starts_with('"') || spec.starts_with('{') {
            spec
        } else {
            format!("\"{spec}\"")
        };
        out.retain(|d| d.name != name);
        out.push(Dependency { name, spec });
    }
    out.sort();
    Ok(out)
}

/// Later entries replace earlier ones with the same name.
pub fn merge_dependencies(base: &[Dependency], update: &[Dependency]) -> Vec<Dependency> {
    let mut out: Vec<Dependency> = base
        .iter()
        .filter(|d| !update.iter().any(|u| u.name == d.name))
        .cloned()
        .collect();
    out.extend(update.iter().cloned());
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub level: String,
    pub code: Option<String>,
    pub message: String,
    pub rendered: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileReport {
    pub success: bool,
    pub errors: Vec<Diagnostic>,
    pub warnings: usize,
    pub binary: Option<PathBuf>,
    pub build_hash: String,
    /// Randomness generator calls the shim cannot route.
    pub unshimmable: Vec<String>,
}

impl CompileReport {
    /// Compact observation text for the model.
    pub fn summary(&self, max_errors: usize) -> String {
        if self.success {
            return "compiled successfully".into();
        }
        let mut out = format!("compilation failed with {} error(s)", self.errors.len());
        for d in self.errors.iter().take(max_errors) {
            out.push('\n');
            out.push_str(d.rendered.trim_end());
        }
        out
    }
}

pub struct BuildRequest<'a> {
    pub entry: &'a str,
    pub signature: &'a Signature,
    pub source: &'a str,
    pub deps: &'a [Dependency],
}

pub trait Toolchain: Send + Sync {
    fn id(&self) -> &str;
    /// Build the source behind the harness; a successful report carries the binary.
    fn compile(&self, req: &BuildRequest) -> CompileReport;
    fn lookup_error_code(&self, code: &str) -> Option<String>;
}

fn entry_re(entry: &str) -> Regex {
    Regex::new(&format!(r"\bfn\s+{}\s*[<(]", regex::escape(entry))).unwrap()
}

fn conv_in(ty: &SemType) -> String {
    match ty {
        SemType::Int => "rt::as_i64".into(),
        SemType::Float => "rt::as_f64".into(),
        SemType::Bool => "rt::as_bool".into(),
        SemType::Str => "rt::as_string".into(),
        SemType::Bytes => "rt::as_bytes".into(),
        SemType::Array(inner) => format!("|v| rt::as_vec(v, {})", conv_in(inner)),
        SemType::Unknown => "|_| Err::<(), String>(\"unsupported type\".into())".into(),
    }
}

fn conv_out(ty: &SemType) -> String {
    match ty {
        SemType::Int => "rt::lit_i64".into(),
        SemType::Float => "rt::lit_f64".into(),
        SemType::Bool => "rt::lit_bool".into(),
        SemType::Str => "rt::lit_string".into(),
        SemType::Bytes => "rt::lit_bytes".into(),
        SemType::Array(inner) => format!(
            "|x: &Vec<{}>| rt::lit_vec(x, {})",
            inner.rust_type(),
            conv_out(inner)
        ),
        SemType::Unknown => "|_: &()| String::new()".into(),
    }
}

/// `main.rs` for a native binary speaking the driver line protocol.
pub fn harness_main(entry: &str, sig: &Signature) -> String {
    let mut s = String::from("mod rt;\ninclude!(\"native.rs\");\n\nfn main() {\n");
    s.push_str("    rt::init(std::env::args().nth(1).unwrap_or_default().as_str());\n");
    s.push_str(&format!(
        "    let mut it = rt::read_case({}).into_iter();\n",
        sig.params.len()
    ));
    let mut names = Vec::new();
    for (i, p) in sig.params.iter().enumerate() {
        s.push_str(&format!(
            "    let a{i}: {} = rt::arg(it.next(), {});\n",
            p.ty.rust_type(),
            conv_in(&p.ty)
        ));
        names.push(format!("a{i}"));
    }
    s.push_str("    rt::quiet_panics();\n");
    s.push_str(&format!(
        "    match std::panic::catch_unwind(move || -> {} {{ {entry}({}) }}) {{\n",
        sig.ret.rust_type(),
        names.join(", ")
    ));
    s.push_str(&format!(
        "        Ok(out) => rt::emit(({})(&out)),\n",
        conv_out(&sig.ret)
    ));
    s.push_str("        Err(p) => rt::panicked(p),\n    }\n}\n");
    s
}

/// Make model output includable at the crate root.
fn sanitize(source: &str) -> String {
    static MAIN: OnceLock<Regex> = OnceLock::new();
    let main = MAIN.get_or_init(|| Regex::new(r"\bfn\s+main\s*\(").unwrap());
    let body: String = source
        .lines()
        .filter(|l| !l.trim_start().starts_with("#!["))
        .collect::<Vec<_>>()
        .join("\n");
    main.replace_all(&body, "fn __original_main(").into_owned() + "\n"
}

/// Images are linked statically: the dynamic loader reads the timestamp
/// counter during startup, which faults under the enclave policy.
pub const RUSTFLAGS: &str = "-C target-feature=+crt-static";

pub fn build_hash(req: &BuildRequest) -> String {
    let mut h = Sha256::new();
    for part in [
        req.entry,
        &req.signature.render(req.entry),
        req.source,
        NATIVE_RT,
        RUSTFLAGS,
    ] {
        h.update(part.as_bytes());
        h.update([0]);
    }
    for d in req.deps {
        h.update(d.to_string().as_bytes());
        h.update([0]);
    }
    hex::encode(&h.finalize()[..8])
}

/// Builds scratch crates with cargo. Scratch crates are content addressed and
/// share one target directory so dependencies compile once.
pub struct CargoToolchain {
    pub scratch: PathBuf,
    pub target_dir: PathBuf,
}

impl CargoToolchain {
    pub fn new(scratch: impl Into<PathBuf>) -> Self {
        let scratch = scratch.into();
        let target_dir = std::env::var_os("TEEPORT_CARGO_TARGET_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| scratch.join("target"));
        CargoToolchain {
            scratch,
            target_dir,
        }
    }

    pub fn with_target_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.target_dir = dir.into();
        self
    }

    fn write_crate(
        &self,
        dir: &Path,
        req: &BuildRequest,
        hash: &str,
        code: &str,
    ) -> std::io::Result<()> {
        std::fs::create_dir_all(dir.join("src"))?;
        let mut manifest = format!(
            "[package]\nname = \"tn-{hash}\"\nversion = \"0.1.0\"\nedition = \"2021\"\n\n[workspace]\n\n[dependencies]\n"
        );
        for d in req.deps {
            manifest.push_str(&format!("{d}\n"));
        }
        manifest
            .push_str("\n[profile.release]\nopt-level = 2\ndebug = false\nincremental = false\n");
        std::fs::write(dir.join("Cargo.toml"), manifest)?;
        std::fs::write(
            dir.join("src/main.rs"),
            harness_main(req.entry, req.signature),
        )?;
        std::fs::write(dir.join("src/rt.rs"), NATIVE_RT)?;
        std::fs::write(dir.join("src/native.rs"), code)?;
        Ok(())
    }
}

fn failure(hash: &str, code: &str, message: String) -> CompileReport {
    CompileReport {
        success: false,
        errors: vec![Diagnostic {
            level: "error".into(),
            code: Some(code.into()),
            rendered: format!("error[{code}]: {message}"),
            message,
        }],
        warnings: 0,
        binary: None,
        build_hash: hash.into(),
        unshimmable: Vec::new(),
    }
}

impl Toolchain for CargoToolchain {
    fn id(&self) -> &str {
        "cargo"
    }

    fn compile(&self, req: &BuildRequest) -> CompileReport {
        let hash = build_hash(req);
        if !entry_re(req.entry).is_match(req.source) {
            return failure(
                &hash,
                "missing-entry",
                format!("no function named `{}` in the source", req.entry),
            );
        }
        let shimmed = shim::prepare_native(&sanitize(req.source));
        let dir = self.scratch.join(&hash);
        let cached = dir.join("native.bin");
        if cached.is_file() {
            return CompileReport {
                success: true,
                errors: Vec::new(),
                warnings: 0,
                binary: Some(cached),
                build_hash: hash,
                unshimmable: shimmed.unshimmable,
            };
        }
        if let Err(e) = self.write_crate(&dir, req, &hash, &shimmed.code) {
            return failure(
                &hash,
                "io",
                format!("cannot write scratch crate {}: {e}", dir.display()),
            );
        }
        let out = Command::new(std::env::var_os("CARGO").unwrap_or_else(|| "cargo".into()))
            .args(["build", "--release", "--quiet", "--message-format=json"])
            .current_dir(&dir)
            .env("CARGO_TARGET_DIR", &self.target_dir)
            .env_remove("CARGO_ENCODED_RUSTFLAGS")
            .env("RUSTFLAGS", RUSTFLAGS)
            .stdin(Stdio::null())
            .output();
        let out = match out {
            Ok(o) => o,
            Err(e) => return failure(&hash, "toolchain", format!("cannot run cargo: {e}")),
        };
        let mut errors = Vec::new();
        let mut warnings = 0;
        for line in String::from_utf8_lossy(&out.stdout).lines() {
            let Ok(v) = serde_json::from_str::<serde_json::Value>(line) else {
                continue;
            };
            if v["reason"] != "compiler-message" {
                continue;
            }
            let m = &v["message"];
            match m["level"].as_str() {
                Some("error") | Some("error: internal compiler error") => {
                    let message = m["message"].as_str().unwrap_or_default().to_string();
                    if message.starts_with("aborting due to") {
                        continue;
                    }
                    errors.push(Diagnostic {
                        level: "error".into(),
                        code: m["code"]["code"].as_str().map(String::from),
                        rendered: m["rendered"].as_str().unwrap_or(&message).to_string(),
                        message,
                    })
                }
                Some("warning") => warnings += 1,
                _ => {}
            }
        }
        if !out.status.success() {
            if errors.is_empty() {
                let stderr = String::from_utf8_lossy(&out.stderr);
                let tail: Vec<&str> = stderr.lines().filter(|l| !l.trim().is_empty()).collect();
                let msg = tail[tail.len().saturating_sub(6)..].join("\n");
                return CompileReport {
                    warnings,
                    ..failure(&hash, "cargo", msg)
                };
            }
            return CompileReport {
                success: false,
                errors,
                warnings,
                binary: None,
                build_hash: hash,
                unshimmable: shimmed.unshimmable,
            };
        }
        let built = self.target_dir.join("release").join(format!("tn-{hash}"));
        if let Err(e) = std::fs::copy(&built, &cached) {
            return failure(&hash, "io", format!("cannot copy {}: {e}", built.display()));
        }
        CompileReport {
            success: true,
            errors,
            warnings,
            binary: Some(cached),
            build_hash: hash,
            unshimmable: shimmed.unshimmable,
        }
    }

    fn lookup_error_code(&self, code: &str) -> Option<String> {
        let code = code.trim();
        if !Regex::new(r"^E\d{4}$").unwrap().is_match(code) {
            return None;
        }
        let out = Command::new("rustc")
            .args(["--explain", code])
            .output()
            .ok()?;
        if !out.status.success() {
            return None;
        }
        let text = String::from_utf8_lossy(&out.stdout).trim().to_string();
        Some(format!("{code}: {text}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Param;

    #[test]
    fn dependency_lists() {
        let d = parse_dependencies("[ring = \"0.17\", hex = \"0.4\", aes = { version = \"0.8\", features = [\"zeroize\"] }]").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(
            d[0].to_string(),
            "aes = { version = \"0.8\", features = [\"zeroize\"] }"
        );
        assert_eq!(parse_dependencies("[]").unwrap(), vec![]);
        assert_eq!(
            parse_dependencies("md-5").unwrap(),
            vec![Dependency::new("md-5", "*")]
        );
        assert!(parse_dependencies("not a dep!").is_err());
        let merged = merge_dependencies(&d, &[Dependency::new("hex", "0.3")]);
        assert!(merged.contains(&Dependency::new("hex", "0.3")));
        assert_eq!(merged.len(), 3);
    }

    #[test]
    fn harness_shape() {
        let sig = Signature {
            params: vec![
                Param {
                    name: "xs".into(),
                    ty: SemType::Array(Box::new(SemType::Int)),
                },
                Param {
                    name: "k".into(),
                    ty: SemType::Bytes,
                },
            ],
            ret: SemType::Array(Box::new(SemType::Str)),
        };
        let main = harness_main("go", &sig);
        assert!(
            main.contains("let a0: Vec<i64> = rt::arg(it.next(), |v| rt::as_vec(v, rt::as_i64));")
        );
        assert!(main.contains("go(a0, a1)"));
    }

    #[test]
    fn empty_source_is_missing_entry() {
        let tc = CargoToolchain::new(std::env::temp_dir().join("teeport-unused"));
        let sig = Signature {
            params: vec![],
            ret: SemType::Int,
        };
        let r = tc.compile(&BuildRequest {
            entry: "answer",
            signature: &sig,
            source: "",
            deps: &[],
        });
        assert!(!r.success);
        assert_eq!(r.errors[0].code.as_deref(), Some("missing-entry"));
    }
}
