//! Cross-language library equivalence table.
//!
//! File format, one concept per stanza:
//!
//! ```text
//! [SHA-256 Hashing]
//! python = hashlib.sha256()
//! java   = MessageDigest.getInstance("SHA-256")
//! rust   = ring::digest::Context::new(&SHA256)
//! ```
//!
//! A pattern that starts with a `<placeholder>` receiver (e.g.
//! `<digest>.hexdigest()`) matches the method on any value.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::LanguageId;

pub const BUILTIN_TABLE: &str = include_str!("../../data/library-map.txt");

#[derive(Debug, Error, PartialEq)]
pub enum MappingError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("concept `{concept}` is missing a pattern for {language}")]
    Incomplete { concept: String, language: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryMapping {
    pub concept: String,
    pub per_language: Vec<(LanguageId, String)>,
}

impl LibraryMapping {
    pub fn pattern(&self, lang: &LanguageId) -> Option<&str> {
        self.per_language
            .iter()
            .find(|(l, _)| l == lang)
            .map(|(_, p)| p.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct LibraryMappings {
    entries: Vec<LibraryMapping>,
    by_callee: HashMap<(String, String), Vec<usize>>,
}

/// Callee part of a pattern: everything before the argument list, with a
/// placeholder receiver collapsed to a bare `.method`.
pub fn pattern_callee(pattern: &str) -> String {
    let head = pattern.split('(').next().unwrap_or(pattern).trim();
    if head.starts_with('<') {
        if let Some(close) = head.find('>') {
            return head[close + 1..].to_string();
        }
    }
    head.to_string()
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .flat_map(|c| c.to_lowercase())
        .collect()
}

impl LibraryMappings {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_TABLE).expect("bundled mapping table is well-formed")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::parse(&text)?)
    }

    pub fn parse(text: &str) -> Result<Self, MappingError> {
        let mut entries: Vec<LibraryMapping> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                entries.push(LibraryMapping {
                    concept: name.trim().to_string(),
                    per_language: Vec::new(),
                });
                continue;
            }
            let (lang, pattern) = line.split_once('=').ok_or_else(|| MappingError::Syntax {
                line: i + 1,
                msg: "expected `language = pattern`".into(),
            })?;
            let lang = LanguageId::new(lang.trim()).map_err(|e| MappingError::Syntax {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let entry = entries.last_mut().ok_or_else(|| MappingError::Syntax {
                line: i + 1,
                msg: "pattern outside of a [concept] stanza".into(),
            })?;
            if entry.pattern(&lang).is_some() {
                return Err(MappingError::Syntax {
                    line: i + 1,
                    msg: format!("duplicate {lang} pattern for `{}`", entry.concept),
                });
            }
            entry.per_language.push((lang, pattern.trim().to_string()));
        }
        for e in &entries {
            for lang in crate::model::LANGUAGE_REGISTRY {
                let id = LanguageId::new(lang).expect("registry ids are valid");
                if e.pattern(&id).is_none() {
                    return Err(MappingError::Incomplete {
                        concept: e.concept.clone(),
                        language: lang.to_string(),
                    });
                }
            }
        }
        let mut by_callee: HashMap<(String, String), Vec<usize>> = HashMap::new();
        for (idx, e) in entries.iter().enumerate() {
            for (lang, pattern) in &e.per_language {
                by_callee
                    .entry((lang.to_string(), pattern_callee(pattern)))
                    .or_default()
                    .push(idx);
            }
        }
        Ok(LibraryMappings { entries, by_callee })
    }

    pub fn entries(&self) -> &[LibraryMapping] {
        &self.entries
    }

    /// Whether a classified library callee (e.g. `hashlib.sha256`,
    /// `.hexdigest`) has an equivalent in the table.
    pub fn covers(&self, lang: &LanguageId, callee: &str) -> bool {
        self.by_callee
            .contains_key(&(lang.to_string(), callee.to_string()))
    }

    /// Deterministic lookup. Tries the exact pattern, then the callee, then
    /// the concept name; never guesses beyond that.
    pub fn map_call(&self, symbol: &str, from: &LanguageId, to: &LanguageId) -> Option<String> {
        if from == to {
            return Some(symbol.to_string());
        }
        let symbol = symbol.trim();
        let find = |pred: &dyn Fn(&LibraryMapping) -> bool| {
            self.entries
                .iter()
                .find(|e| pred(e))
                .and_then(|e| e.pattern(to))
                .map(str::to_string)
        };
        if let Some(hit) = find(&|e| e.pattern(from) == Some(symbol)) {
            return Some(hit);
        }
        let callee = pattern_callee(symbol);
        if let Some(hit) =
            find(&|e| e.pattern(from).map(pattern_callee).as_deref() == Some(callee.as_str()))
        {
            return Some(hit);
        }
        let norm = normalize(symbol);
        if norm.is_empty() {
            return None;
        }
        find(&|e| {
            normalize(&e.concept) == norm
                || e.pattern(from).map(|p| normalize(&pattern_callee(p))) == Some(norm.clone())
        })
    }
}
