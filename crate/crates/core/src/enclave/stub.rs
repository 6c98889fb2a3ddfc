//! Linking: replace partitioned functions in a copy of the project with stubs
//! that forward to the enclave.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drivers::PY_RUNTIME;
use crate::model::FunctionRecord;

pub const LINK_FILE: &str = "teeport_link.json";

/// Where one partitioned function is served and what it must measure as.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkTarget {
    pub endpoint: String,
    pub measurement: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub attestation_public: String,
    /// One runtime per function, so one endpoint per fqid.
    pub images: BTreeMap<String, LinkTarget>,
}

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{fqid}: declaration at lines {start}..{end} not found in {path}")]
    Stale {
        fqid: String,
        path: PathBuf,
        start: usize,
        end: usize,
    },
    #[error("{0}: no stub generator for this language")]
    Unsupported(String),
    #[error("{0}: no measurement in the link configuration")]
    NotPartitioned(String),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> LinkError + '_ {
    move |source| LinkError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn py_str(s: &str) -> String {
    // JSON string syntax is valid Python for the characters fqids contain.
    serde_json::to_string(s).expect("strings serialize")
}

/// Python stub replacing the declaration `record` (header kept verbatim).
/// `link_rel` is the path to the link file relative to the module's directory.
pub fn python_stub(record: &FunctionRecord, indent: &str, link_rel: &str) -> String {
    let names: Vec<&str> = record
        .signature
        .params
        .iter()
        .map(|p| p.name.as_str())
        .collect();
    let types: Vec<String> = record
        .signature
        .params
        .iter()
        .map(|p| py_str(&p.ty.to_string()))
        .collect();
    let inner = format!("{indent}    ");
    format!(
        "{indent}{header}\n{inner}import teeport_rt\n{inner}return teeport_rt.enclave_call({fqid}, [{args}], [{types}], {ret}, __file__, {rel})\n",
        header = record.header.trim_start(),
        fqid = py_str(&record.fqid),
        args = names.join(", "),
        types = types.join(", "),
        ret = py_str(&record.signature.ret.to_string()),
        rel = py_str(link_rel),
    )
}

/// Java stub body. It delegates to the `teeport call` command, which performs
/// attestation and the encrypted call.
pub fn java_stub(record: &FunctionRecord, indent: &str) -> String {
    let inner = format!("{indent}    ");
    let mut parts = Vec::new();
    for p in &record.signature.params {
        parts.push(match p.ty {
            crate::model::SemType::Str => format!("teeport.Link.str({})", p.name),
            crate::model::SemType::Bytes => format!("teeport.Link.bytes({})", p.name),
            _ => format!("String.valueOf({})", p.name),
        });
    }
    let args = if parts.is_empty() {
        "\"()\"".to_string()
    } else {
        parts.join(" + \", \" + ")
    };
    format!(
        "{indent}{header} {{\n{inner}return teeport.Link.call_{ret}({fqid}, {args});\n{indent}}}\n",
        header = record.header.trim(),
        ret = record.signature.ret.to_string().replace(['<', '>'], "_"),
        fqid = py_str(&record.fqid),
    )
}

fn copy_tree(src: &Path, dst: &Path) -> Result<(), LinkError> {
    std::fs::create_dir_all(dst).map_err(io(dst))?;
    for entry in std::fs::read_dir(src).map_err(io(src))? {
        let entry = entry.map_err(io(src))?;
        let name = entry.file_name();
        if name == "__pycache__" || name == ".teeport" || name.to_string_lossy().starts_with(".git")
        {
            continue;
        }
        let from = entry.path();
        let to = dst.join(&name);
        if entry.file_type().map_err(io(&from))?.is_dir() {
            copy_tree(&from, &to)?;
        } else {
            std::fs::copy(&from, &to).map_err(io(&from))?;
        }
    }
    Ok(())
}

/// Copy `src_root` to `out_root`, replace each record's declaration with a
/// stub, and write the link file and the Python runtime at the root.
/// Returns the rewritten files.
pub fn link_python_project(
    src_root: &Path,
    out_root: &Path,
    records: &[FunctionRecord],
    config: &LinkConfig,
) -> Result<Vec<PathBuf>, LinkError> {
    for r in records {
        if r.language.as_str() != "python" {
            return Err(LinkError::Unsupported(r.fqid.clone()));
        }
        if !config.images.contains_key(&r.fqid) {
            return Err(LinkError::NotPartitioned(r.fqid.clone()));
        }
    }
    copy_tree(src_root, out_root)?;
    let mut by_file: BTreeMap<&str, Vec<&FunctionRecord>> = BTreeMap::new();
    for r in records {
        by_file.entry(r.rel_path.as_str()).or_default().push(r);
    }
    let mut touched = Vec::new();
    for (rel, mut recs) in by_file {
        let path = out_root.join(rel);
        let text = std::fs::read_to_string(&path).map_err(io(&path))?;
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        // Bottom-up so earlier spans stay valid.
        recs.sort_by_key(|r| std::cmp::Reverse(r.span.start));
        let depth = Path::new(rel).components().count().saturating_sub(1);
        let link_rel = format!("{}{LINK_FILE}", "../".repeat(depth));
        for r in recs {
            let (s, e) = (r.span.start, r.span.end);
            let first = lines
                .get(s.wrapping_sub(1))
                .map(String::as_str)
                .unwrap_or("");
            if e > lines.len()
                || !first
                    .trim_start()
                    .starts_with(r.header.lines().next().unwrap_or("").trim())
            {
                return Err(LinkError::Stale {
                    fqid: r.fqid.clone(),
                    path: path.clone(),
                    start: s,
                    end: e,
                });
            }
            let indent: String = first.chars().take_while(|c| c.is_whitespace()).collect();
            let stub = python_stub(r, &indent, &link_rel);
            lines.splice(s - 1..e, stub.lines().map(str::to_string));
        }
        let mut out = lines.join("\n");
        out.push('\n');
        std::fs::write(&path, out).map_err(io(&path))?;
        touched.push(path);
    }
    let rt = out_root.join("teeport_rt.py");
    std::fs::write(&rt, PY_RUNTIME).map_err(io(&rt))?;
    let cfg = out_root.join(LINK_FILE);
    std::fs::write(
        &cfg,
        serde_json::to_string_pretty(config).expect("configs serialize"),
    )
    .map_err(io(&cfg))?;
    Ok(touched)
}
