//! Domain types shared by every pipeline stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Languages the pipeline knows about: two managed source languages and the
/// native target.
pub const LANGUAGE_REGISTRY: &[&str] = &["java", "python", "rust"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown language `{0}` (registered: java, python, rust)")]
    UnknownLanguage(String),
    #[error("unknown semantic type `{0}`")]
    UnknownType(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageId(String);

impl LanguageId {
    pub fn new(id: &str) -> Result<Self, ModelError> {
        if id.is_empty() || id != id.to_lowercase() || !LANGUAGE_REGISTRY.contains(&id) {
            return Err(ModelError::UnknownLanguage(id.to_string()));
        }
        Ok(LanguageId(id.to_string()))
    }

    pub fn python() -> Self {
        LanguageId("python".into())
    }

    pub fn java() -> Self {
        LanguageId("java".into())
    }

    pub fn rust() -> Self {
        LanguageId("rust".into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_source(&self) -> bool {
        self.0 != "rust"
    }
}

impl TryFrom<String> for LanguageId {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        LanguageId::new(&value)
    }
}

impl From<LanguageId> for String {
    fn from(value: LanguageId) -> Self {
        value.0
    }
}

impl FromStr for LanguageId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LanguageId::new(s)
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Closed vocabulary of argument and return types a leaf function may use.
/// Anything outside it is `Unknown`, which disqualifies leaf status.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SemType {
    Int,
    Float,
    Bool,
    Str,
    Bytes,
    Array(Box<SemType>),
    Unknown,
}

impl SemType {
    pub fn is_basic(&self) -> bool {
        match self {
            SemType::Unknown => false,
            SemType::Array(inner) => inner.is_basic(),
            _ => true,
        }
    }

    /// Rust spelling used in the native entry-point contract.
    pub fn rust_type(&self) -> String {
        match self {
            SemType::Int => "i64".into(),
            SemType::Float => "f64".into(),
            SemType::Bool => "bool".into(),
            SemType::Str => "String".into(),
            SemType::Bytes => "Vec<u8>".into(),
            SemType::Array(inner) => format!("Vec<{}>", inner.rust_type()),
            SemType::Unknown => "()".into(),
        }
    }
}

impl fmt::Display for SemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SemType::Int => f.write_str("int"),
            SemType::Float => f.write_str("float"),
            SemType::Bool => f.write_str("bool"),
            SemType::Str => f.write_str("string"),
            SemType::Bytes => f.write_str("bytes"),
            SemType::Array(inner) => write!(f, "array<{inner}>"),
            SemType::Unknown => f.write_str("unknown"),
        }
    }
}

impl FromStr for SemType {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Ok(match s {
            "int" => SemType::Int,
            "float" => SemType::Float,
            "bool" => SemType::Bool,
            "string" => SemType::Str,
            "bytes" => SemType::Bytes,
            "unknown" => SemType::Unknown,
            _ => {
                if let Some(inner) = s.strip_prefix("array<").and_then(|r| r.strip_suffix('>')) {
                    SemType::Array(Box::new(inner.parse()?))
                } else {
                    return Err(ModelError::UnknownType(s.to_string()));
                }
            }
        })
    }
}

impl TryFrom<String> for SemType {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<SemType> for String {
    fn from(value: SemType) -> Self {
        value.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub ty: SemType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub params: Vec<Param>,
    pub ret: SemType,
}

impl Signature {
    pub fn is_basic(&self) -> bool {
        self.ret.is_basic() && self.params.iter().all(|p| p.ty.is_basic())
    }

    pub fn arity(&self) -> usize {
        self.params.len()
    }

    pub fn render(&self, name: &str) -> String {
        let params: Vec<String> = self
            .params
            .iter()
            .map(|p| format!("{}: {}", p.name, p.ty))
            .collect();
        format!("{name}({}) -> {}", params.join(", "), self.ret)
    }

    /// First eight hex digits of the signature digest; part of every fqid.
    pub fn hash8(&self, name: &str) -> String {
        let digest = Sha256::digest(self.render(name).as_bytes());
        hex::encode(&digest[..4])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn contains_line(&self, line: usize) -> bool {
        line >= self.start && line <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CallKind {
    UserDefined,
    StandardLibrary,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSite {
    pub callee_symbol: String,
    pub kind: CallKind,
    pub span: Span,
}

/// How a declaration is reached: a free function, a static member, or an
/// instance method that needs a receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Receiver {
    Free,
    Static,
    Instance { reads_state: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionRecord {
    /// `relative/path::Qual.name#sighash`
    pub fqid: String,
    pub language: LanguageId,
    pub name: String,
    pub qualname: String,
    /// Importable unit: dotted Python module or fully qualified Java class.
    pub module: String,
    /// Path of the declaring file, relative to the project root.
    pub rel_path: String,
    pub project_root: String,
    pub signature: Signature,
    /// Declaration header exactly as written (up to the body).
    pub header: String,
    /// Full declaration text, header included.
    pub body: String,
    pub span: Span,
    pub receiver: Receiver,
    pub call_sites: Vec<CallSite>,
}

impl FunctionRecord {
    pub fn make_fqid(rel_path: &str, qualname: &str, name: &str, sig: &Signature) -> String {
        format!("{rel_path}::{qualname}#{}", sig.hash8(name))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.fqid.is_empty() {
            return Err(ModelError::Invariant("fqid is empty".into()));
        }
        if self.span.start == 0 || self.span.end < self.span.start {
            return Err(ModelError::Invariant(format!(
                "span {}..{} is empty",
                self.span.start, self.span.end
            )));
        }
        if self.name.is_empty() {
            return Err(ModelError::Invariant("name is empty".into()));
        }
        Ok(())
    }

    /// Stable, filesystem-safe slug used for session and scratch names.
    pub fn slug(&self) -> String {
        slug_of(&self.fqid)
    }

    pub fn source_file(&self) -> std::path::PathBuf {
        std::path::Path::new(&self.project_root).join(&self.rel_path)
    }

    /// snake_case name of the native entry point.
    pub fn native_entry(&self) -> String {
        to_snake_case(&self.name)
    }
}

pub fn slug_of(fqid: &str) -> String {
    let mut out = String::with_capacity(fqid.len());
    let mut last_us = false;
    for ch in fqid.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch);
            last_us = false;
        } else if ch == ':' || ch == '#' {
            if !out.ends_with("__") {
                if last_us {
                    out.push('_');
                } else {
                    out.push_str("__");
                }
            }
            last_us = true;
        } else if !last_us {
            out.push('_');
            last_us = true;
        }
    }
    out
}

pub fn to_snake_case(name: &str) -> String {
    let mut out = String::new();
    let chars: Vec<char> = name.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_ascii_uppercase() {
            let prev_lower =
                i > 0 && (chars[i - 1].is_ascii_lowercase() || chars[i - 1].is_ascii_digit());
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_ascii_lowercase());
            let prev_upper = i > 0 && chars[i - 1].is_ascii_uppercase();
            if i > 0 && (prev_lower || (prev_upper && next_lower)) && !out.ends_with('_') {
                out.push('_');
            }
            out.push(c.to_ascii_lowercase());
        } else {
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureTag {
    SophisticatedCrypto,
    ShiftOperations,
    MissingFlag,
    FunctionalityChange,
    Other,
}

impl FromStr for FailureTag {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "SOPHISTICATED_CRYPTO" => FailureTag::SophisticatedCrypto,
            "SHIFT_OPERATIONS" => FailureTag::ShiftOperations,
            "MISSING_FLAG" => FailureTag::MissingFlag,
            "FUNCTIONALITY_CHANGE" => FailureTag::FunctionalityChange,
            "OTHER" => FailureTag::Other,
            other => {
                return Err(ModelError::Invariant(format!(
                    "unknown failure tag `{other}`"
                )))
            }
        })
    }
}

impl fmt::Display for FailureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FailureTag::SophisticatedCrypto => "SOPHISTICATED_CRYPTO",
            FailureTag::ShiftOperations => "SHIFT_OPERATIONS",
            FailureTag::MissingFlag => "MISSING_FLAG",
            FailureTag::FunctionalityChange => "FUNCTIONALITY_CHANGE",
            FailureTag::Other => "OTHER",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn language_registry() {
        assert!(LanguageId::new("python").is_ok());
        assert!(LanguageId::new("Python").is_err());
        assert!(LanguageId::new("").is_err());
        assert!(LanguageId::new("cobol").is_err());
    }

    #[test]
    fn semtype_text_form() {
        for s in [
            "int",
            "float",
            "bool",
            "string",
            "bytes",
            "array<int>",
            "array<array<bytes>>",
            "unknown",
        ] {
            let t: SemType = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert!("map<int>".parse::<SemType>().is_err());
        assert!(!SemType::Array(Box::new(SemType::Unknown)).is_basic());
    }

    #[test]
    fn snake_case() {
        assert_eq!(to_snake_case("md5Hex"), "md5_hex");
        assert_eq!(to_snake_case("sha256Hex"), "sha256_hex");
        assert_eq!(to_snake_case("aesEncrypt"), "aes_encrypt");
        assert_eq!(to_snake_case("readHTTPHeader"), "read_http_header");
        assert_eq!(to_snake_case("already_snake"), "already_snake");
    }

    #[test]
    fn slug_is_filesystem_safe() {
        let s = slug_of("pkg/crypto_utils.py::Session.checksum#0a1b2c3d");
        assert_eq!(s, "pkg_crypto_utils_py__Session_checksum__0a1b2c3d");
        assert!(s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
    }
}
