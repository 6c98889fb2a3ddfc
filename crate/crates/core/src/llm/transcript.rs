//! Plain-text conversation transcripts.
//!
//! ```text
//! # teeport transcript v1
//! session: identify--crypto_utils_py__sha256_hex__1a2b3c4d
//! backend: script
//!
//! @@ turn 0
//! role: user
//! hash: 9f2c4e...
//! tokens: 41
//! bytes: 163
//! <exactly `bytes` bytes of content>
//! ```

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{LlmError, Role};

const MAGIC: &str = "# teeport transcript v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptTurn {
    pub role: Role,
    pub content: String,
    pub hash: String,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transcript {
    pub session: String,
    pub backend: String,
    pub turns: Vec<TranscriptTurn>,
}

/// Whitespace-insensitive content hash used to match replayed prompts.
pub fn content_hash(text: &str) -> String {
    let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
    hex::encode(&Sha256::digest(normalized.as_bytes())[..8])
}

pub fn transcript_path(dir: &Path, session: &str) -> PathBuf {
    dir.join(format!("{session}.transcript"))
}

impl Transcript {
    pub fn new(session: &str, backend: &str) -> Self {
        Transcript {
            session: session.to_string(),
            backend: backend.to_string(),
            turns: Vec::new(),
        }
    }

    pub fn push(&mut self, role: Role, content: &str, tokens: u64) {
        self.turns.push(TranscriptTurn {
            role,
            content: content.to_string(),
            hash: content_hash(content),
            tokens,
        });
    }

    pub fn total_tokens(&self) -> u64 {
        self.turns.iter().map(|t| t.tokens).sum()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{MAGIC}\nsession: {}\nbackend: {}\n",
            self.session, self.backend
        );
        for (i, t) in self.turns.iter().enumerate() {
            out.push_str(&format!(
                "\n@@ turn {i}\nrole: {}\nhash: {}\ntokens: {}\nbytes: {}\n{}\n",
                t.role.as_str(),
                t.hash,
                t.tokens,
                t.content.len(),
                t.content
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let bad = |msg: &str| LlmError::Malformed(format!("transcript: {msg}"));
        let mut rest = text
            .strip_prefix(MAGIC)
            .ok_or_else(|| bad("missing header"))?;
        let header = |key: &str, rest: &mut &str| -> Result<String, LlmError> {
            let r = rest.trim_start_matches('\n');
            let (line, tail) = r.split_once('\n').unwrap_or((r, ""));
            let value = line
                .strip_prefix(key)
                .and_then(|l| l.strip_prefix(": "))
                .ok_or_else(|| bad(&format!("expected `{key}:`")))?;
            *rest = tail;
            Ok(value.to_string())
        };
        let session = header("session", &mut rest)?;
        let backend = header("backend", &mut rest)?;
        let mut t = Transcript::new(&session, &backend);
        loop {
            let r = rest.trim_start_matches('\n');
            if r.is_empty() {
                break;
            }
            let (marker, tail) = r.split_once('\n').ok_or_else(|| bad("truncated turn"))?;
            if !marker.starts_with("@@ turn ") {
                return Err(bad(&format!("expected turn marker, found `{marker}`")));
            }
            rest = tail;
            let role: Role = header("role", &mut rest)?.parse()?;
            let hash = header("hash", &mut rest)?;
            let tokens = header("tokens", &mut rest)?
                .parse()
                .map_err(|_| bad("tokens is not a number"))?;
            let len: usize = header("bytes", &mut rest)?
                .parse()
                .map_err(|_| bad("bytes is not a number"))?;
            if rest.len() < len || !rest.is_char_boundary(len) {
                return Err(bad("content shorter than declared"));
            }
            let content = rest[..len].to_string();
            rest = rest[len..].strip_prefix('\n').unwrap_or(&rest[len..]);
            t.turns.push(TranscriptTurn {
                role,
                content,
                hash,
                tokens,
            });
        }
        Ok(t)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, LlmError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| LlmError::Io(format!("{}: {e}", dir.display())))?;
        let path = transcript_path(dir, &self.session);
        std::fs::write(&path, self.render())
            .map_err(|e| LlmError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn load(dir: &Path, session: &str) -> Result<Self, LlmError> {
        let path = transcript_path(dir, session);
        let text = std::fs::read_to_string(&path)
            .map_err(|_| LlmError::MissingTranscript(path.clone()))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_awkward_content() {
        let mut t = Transcript::new("s--x", "script");
        t.push(Role::System, "sys", 1);
        t.push(Role::User, "line one\n@@ turn 9\nrole: fake\n\n", 12);
        t.push(Role::Assistant, "", 0);
        t.push(Role::Assistant, "ünïcode ✓", 3);
        let back = Transcript::parse(&t.render()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.total_tokens(), 16);
    }

    #[test]
    fn hash_ignores_whitespace_layout() {
        assert_eq!(content_hash("a  b\n c"), content_hash("a b c"));
        assert_ne!(content_hash("a b"), content_hash("ab"));
    }

    #[test]
    fn rejects_garbage() {
        assert!(Transcript::parse("hello").is_err());
        let mut t = Transcript::new("s", "b");
        t.push(Role::User, "abcdef", 1);
        let text = t.render().replace("bytes: 6", "bytes: 60");
        assert!(Transcript::parse(&text).is_err());
    }
}
