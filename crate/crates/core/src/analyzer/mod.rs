//! Source analysis: parse a project into function records, classify every
//! call site, and decide which functions are leaves.

mod java;
pub mod mapping;
mod python;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tree_sitter::Node;

use crate::model::{
    CallKind, CallSite, FunctionRecord, LanguageId, Param, Receiver, SemType, Signature, Span,
};
use crate::par::{self, Parallelism};
use crate::workspace::Record;

pub use mapping::{LibraryMapping, LibraryMappings};

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("project root {0} does not exist or is not a directory")]
    RootMissing(PathBuf),
    #[error("`{0}` is not a source language the analyzer can parse")]
    UnsupportedLanguage(LanguageId),
    #[error("no parsable {language} files under {root}")]
    NoParsableFiles { language: LanguageId, root: PathBuf },
    #[error("io error under {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A file the analyzer had to skip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub rel_path: String,
    pub line: usize,
    pub message: String,
}

/// Project-wide symbol tables used to resolve call sites by name.
#[derive(Debug, Clone, Default)]
pub struct ProjectIndex {
    pub language: Option<LanguageId>,
    pub root: PathBuf,
    pub files: Vec<String>,
    /// Simple names of every declared function, method and class.
    pub user_names: BTreeSet<String>,
    pub user_classes: BTreeSet<String>,
    /// First segment of every project module path.
    pub module_roots: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct ParsedProject {
    pub index: ProjectIndex,
    pub records: Vec<FunctionRecord>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LeafReason {
    CallsUserFunction,
    NonBasicArgument,
    UnmappableLibraryCall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafVerdict {
    pub fqid: String,
    pub is_leaf: bool,
    pub reasons: Vec<LeafReason>,
}

impl Record for LeafVerdict {
    const KIND: &'static str = "leaf";
    const DIR: &'static str = crate::workspace::RECORDS_DIR;

    fn validate(&self) -> Result<(), crate::model::ModelError> {
        if self.is_leaf != self.reasons.is_empty() {
            return Err(crate::model::ModelError::Invariant(
                "leaf verdict must have reasons exactly when it is not a leaf".into(),
            ));
        }
        Ok(())
    }

    fn fqid(&self) -> Option<&str> {
        Some(&self.fqid)
    }
}

// ---------------------------------------------------------------------------
// Language-neutral intermediate form produced by the per-language walkers.

#[derive(Debug, Clone)]
pub(crate) enum CallShape {
    /// `name(...)`
    Bare(String),
    /// `a.b.c(...)` where every segment is a plain name. `method` is `c`.
    Dotted {
        root: String,
        path: String,
        method: String,
    },
    /// `<expr>.method(...)` on an arbitrary value.
    Method(String),
    /// Constructor call of a named type.
    New(String),
    /// A call target the analyzer cannot name (`fs[0]()`, `f()()`).
    Opaque(String),
}

#[derive(Debug, Clone)]
pub(crate) struct RawCall {
    pub shape: CallShape,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub(crate) struct RawFunction {
    pub name: String,
    pub qualname: String,
    pub params: Vec<Param>,
    pub ret: SemType,
    pub header: String,
    pub body: String,
    pub span: Span,
    pub receiver: Receiver,
    pub calls: Vec<RawCall>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct ParsedFile {
    pub rel_path: String,
    pub module: String,
    pub functions: Vec<RawFunction>,
    /// Local binding -> fully qualified origin.
    pub imports: Vec<(String, String)>,
    pub classes: Vec<String>,
    /// Names declared somewhere in the file that do not get their own record
    /// (nested functions).
    pub extra_names: Vec<String>,
}

impl ParsedFile {
    pub fn import_origin(&self, binding: &str) -> Option<&str> {
        self.imports
            .iter()
            .rev()
            .find(|(b, _)| b == binding)
            .map(|(_, o)| o.as_str())
    }
}

pub(crate) fn node_text<'a>(n: Node, src: &'a str) -> &'a str {
    &src[n.byte_range()]
}

pub(crate) fn span_of(n: Node) -> Span {
    Span::new(n.start_position().row + 1, n.end_position().row + 1)
}

/// Pre-order traversal over every node under `n`.
pub(crate) fn walk<'t>(n: Node<'t>, f: &mut impl FnMut(Node<'t>)) {
    f(n);
    let mut cursor = n.walk();
    for child in n.children(&mut cursor) {
        walk(child, f);
    }
}

fn first_error_line(n: Node) -> usize {
    let mut line = n.start_position().row + 1;
    let mut found = false;
    walk(n, &mut |c| {
        if !found && (c.is_error() || c.is_missing()) {
            line = c.start_position().row + 1;
            found = true;
        }
    });
    line
}

// ---------------------------------------------------------------------------

fn source_files(root: &Path, ext: &str) -> Result<Vec<PathBuf>, AnalyzerError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = std::fs::read_dir(&dir).map_err(|source| AnalyzerError::Io {
            path: dir.clone(),
            source,
        })?;
        for entry in entries {
            let entry = entry.map_err(|source| AnalyzerError::Io {
                path: dir.clone(),
                source,
            })?;
            let path = entry.path();
            let name = entry.file_name().to_string_lossy().to_string();
            if path.is_dir() {
                if !name.starts_with('.')
                    && !matches!(
                        name.as_str(),
                        "__pycache__" | "target" | "build" | "node_modules"
                    )
                {
                    stack.push(path);
                }
            } else if path.extension().and_then(|e| e.to_str()) == Some(ext) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn rel(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().to_string())
        .collect::<Vec<_>>()
        .join("/")
}

/// Parse every source file of `language` under `root`. Files with syntax
/// errors are skipped and reported as diagnostics.
pub fn parse_project(
    root: &Path,
    language: &LanguageId,
    mode: Parallelism,
) -> Result<ParsedProject, AnalyzerError> {
    if !root.is_dir() {
        return Err(AnalyzerError::RootMissing(root.to_path_buf()));
    }
    let ext = match language.as_str() {
        "python" => "py",
        "java" => "java",
        _ => return Err(AnalyzerError::UnsupportedLanguage(language.clone())),
    };
    let files = source_files(root, ext)?;
    let mut inputs = Vec::with_capacity(files.len());
    for path in &files {
        let text = std::fs::read_to_string(path).map_err(|source| AnalyzerError::Io {
            path: path.clone(),
            source,
        })?;
        inputs.push((rel(root, path), text));
    }
    let parsed: Vec<Result<ParsedFile, ParseDiagnostic>> =
        par::map(mode, &inputs, |(rel_path, text)| match ext {
            "py" => python::parse_file(rel_path, text),
            _ => java::parse_file(rel_path, text),
        });

    let mut ok = Vec::new();
    let mut diagnostics = Vec::new();
    for p in parsed {
        match p {
            Ok(f) => ok.push(f),
            Err(d) => diagnostics.push(d),
        }
    }
    if ok.is_empty() {
        return Err(AnalyzerError::NoParsableFiles {
            language: language.clone(),
            root: root.to_path_buf(),
        });
    }

    let mut index = ProjectIndex {
        language: Some(language.clone()),
        root: root.to_path_buf(),
        ..Default::default()
    };
    for f in &ok {
        index.files.push(f.rel_path.clone());
        index
            .module_roots
            .insert(f.module.split('.').next().unwrap_or_default().to_string());
        for c in &f.classes {
            index.user_classes.insert(c.clone());
            index.user_names.insert(c.clone());
        }
        for func in &f.functions {
            index.user_names.insert(func.name.clone());
        }
        for n in &f.extra_names {
            index.user_names.insert(n.clone());
        }
    }

    let root_text = root.to_string_lossy().to_string();
    let mut records = Vec::new();
    for f in &ok {
        for func in &f.functions {
            let call_sites = func
                .calls
                .iter()
                .map(|c| {
                    let (callee_symbol, kind) = match language.as_str() {
                        "python" => python::classify(&c.shape, f, &index),
                        _ => java::classify(&c.shape, f, &index),
                    };
                    CallSite {
                        callee_symbol,
                        kind,
                        span: c.span,
                    }
                })
                .collect();
            let signature = Signature {
                params: func.params.clone(),
                ret: func.ret.clone(),
            };
            records.push(FunctionRecord {
                fqid: FunctionRecord::make_fqid(
                    &f.rel_path,
                    &func.qualname,
                    &func.name,
                    &signature,
                ),
                language: language.clone(),
                name: func.name.clone(),
                qualname: func.qualname.clone(),
                module: f.module.clone(),
                rel_path: f.rel_path.clone(),
                project_root: root_text.clone(),
                signature,
                header: func.header.clone(),
                body: func.body.clone(),
                span: func.span,
                receiver: func.receiver,
                call_sites,
            });
        }
    }
    Ok(ParsedProject {
        index,
        records,
        diagnostics,
    })
}

/// Leaf status of one record: no user-defined calls, basic-typed signature,
/// and every library call covered by the mapping table.
pub fn leaf_verdict(record: &FunctionRecord, mappings: &LibraryMappings) -> LeafVerdict {
    let mut reasons = BTreeSet::new();
    for call in &record.call_sites {
        match call.kind {
            CallKind::UserDefined => {
                reasons.insert(LeafReason::CallsUserFunction);
            }
            CallKind::StandardLibrary => {
                if !mappings.covers(&record.language, &call.callee_symbol) {
                    reasons.insert(LeafReason::UnmappableLibraryCall);
                }
            }
            CallKind::Unknown => {
                reasons.insert(LeafReason::UnmappableLibraryCall);
            }
        }
    }
    let reads_state = matches!(record.receiver, Receiver::Instance { reads_state: true });
    if !record.signature.is_basic() || reads_state {
        reasons.insert(LeafReason::NonBasicArgument);
    }
    let reasons: Vec<LeafReason> = reasons.into_iter().collect();
    LeafVerdict {
        fqid: record.fqid.clone(),
        is_leaf: reasons.is_empty(),
        reasons,
    }
}

pub fn extract_leaf_functions(
    records: &[FunctionRecord],
    mappings: &LibraryMappings,
    mode: Parallelism,
) -> Vec<LeafVerdict> {
    par::map(mode, records, |r| leaf_verdict(r, mappings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn project(files: &[(&str, &str)]) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        for (name, text) in files {
            let p = dir.path().join(name);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, text).unwrap();
        }
        dir
    }

    fn verdicts(dir: &Path, lang: LanguageId) -> Vec<(String, LeafVerdict)> {
        let parsed = parse_project(dir, &lang, Parallelism::Sequential).unwrap();
        let m = LibraryMappings::builtin();
        parsed
            .records
            .iter()
            .map(|r| (r.qualname.clone(), leaf_verdict(r, &m)))
            .collect()
    }

    #[test]
    fn python_leaf_rules() {
        let dir = project(&[(
            "pkg/util.py",
            "import hashlib\nimport socket\n\n\
def digest(data: bytes) -> str:\n    return hashlib.sha256(data).hexdigest()\n\n\
def wrapper(data: bytes) -> str:\n    return digest(data)\n\n\
def untyped(x):\n    return x\n\n\
def net(host: str) -> int:\n    return socket.gethostbyname(host)\n\n\
def fact(n: int) -> int:\n    return 1 if n < 2 else n * fact(n - 1)\n",
        )]);
        let v = verdicts(dir.path(), LanguageId::python());
        let get = |q: &str| v.iter().find(|(n, _)| n == q).unwrap().1.clone();
        assert!(get("digest").is_leaf);
        assert_eq!(get("wrapper").reasons, vec![LeafReason::CallsUserFunction]);
        assert_eq!(get("untyped").reasons, vec![LeafReason::NonBasicArgument]);
        assert_eq!(get("net").reasons, vec![LeafReason::UnmappableLibraryCall]);
        assert_eq!(get("fact").reasons, vec![LeafReason::CallsUserFunction]);
    }

    #[test]
    fn syntax_errors_skip_only_that_file() {
        let dir = project(&[
            ("good.py", "def f(a: int) -> int:\n    return a\n"),
            ("bad.py", "def g(:\n  pass\n"),
        ]);
        let parsed =
            parse_project(dir.path(), &LanguageId::python(), Parallelism::Sequential).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.diagnostics.len(), 1);
        assert_eq!(parsed.diagnostics[0].rel_path, "bad.py");
    }

    #[test]
    fn rust_and_missing_roots_are_rejected() {
        let dir = project(&[("a.py", "x = 1\n")]);
        assert!(matches!(
            parse_project(dir.path(), &LanguageId::rust(), Parallelism::Sequential),
            Err(AnalyzerError::UnsupportedLanguage(_))
        ));
        assert!(matches!(
            parse_project(
                &dir.path().join("nope"),
                &LanguageId::python(),
                Parallelism::Sequential
            ),
            Err(AnalyzerError::RootMissing(_))
        ));
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(
            parse_project(empty.path(), &LanguageId::java(), Parallelism::Sequential),
            Err(AnalyzerError::NoParsableFiles { .. })
        ));
    }

    #[test]
    fn java_leaf_rules() {
        let dir = project(&[(
            "src/com/acme/Util.java",
            "package com.acme;\nimport java.security.MessageDigest;\n\
public class Util {\n  private byte[] key;\n\
  public static byte[] md5(byte[] in) throws Exception {\n    MessageDigest md = MessageDigest.getInstance(\"MD5\");\n    return md.digest(in);\n  }\n\
  public static byte[] twice(byte[] in) throws Exception { return md5(md5(in)); }\n\
  public byte[] keyed(byte[] in) { return this.key; }\n\
  public static java.util.List<String> parts(String s) { return null; }\n\
  public static double root(double x) { return Math.sqrt(x); }\n}\n",
        )]);
        let v = verdicts(dir.path(), LanguageId::java());
        let get = |q: &str| v.iter().find(|(n, _)| n == q).unwrap().1.clone();
        assert!(get("Util.md5").is_leaf, "{:?}", get("Util.md5"));
        assert!(get("Util.root").is_leaf);
        assert_eq!(
            get("Util.twice").reasons,
            vec![LeafReason::CallsUserFunction]
        );
        assert_eq!(
            get("Util.keyed").reasons,
            vec![LeafReason::NonBasicArgument]
        );
        assert_eq!(
            get("Util.parts").reasons,
            vec![LeafReason::NonBasicArgument]
        );
    }

    #[test]
    fn overloads_get_distinct_fqids() {
        let dir = project(&[(
            "M.java",
            "class M {\n  static int f(int a) { return a; }\n  static int f(int a, int b) { return a + b; }\n}\n",
        )]);
        let parsed =
            parse_project(dir.path(), &LanguageId::java(), Parallelism::Sequential).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert_ne!(parsed.records[0].fqid, parsed.records[1].fqid);
    }
}
