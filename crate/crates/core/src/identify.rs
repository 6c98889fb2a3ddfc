//! Three-round sensitivity classification with self-correction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::llm::{prompts, render_template, Backend, Conversation, LlmError};
use crate::model::{FunctionRecord, ModelError};
use crate::par::{self, Parallelism};
use crate::workspace::{Record, RECORDS_DIR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SensitivityCategory {
    Encryption,
    Decryption,
    Signature,
    Verification,
    Hash,
    SeedGeneration,
    RandomNumberGeneration,
    Serialization,
    Deserialization,
}

impl SensitivityCategory {
    pub const ALL: [SensitivityCategory; 9] = [
        SensitivityCategory::Encryption,
        SensitivityCategory::Decryption,
        SensitivityCategory::Signature,
        SensitivityCategory::Verification,
        SensitivityCategory::Hash,
        SensitivityCategory::SeedGeneration,
        SensitivityCategory::RandomNumberGeneration,
        SensitivityCategory::Serialization,
        SensitivityCategory::Deserialization,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            SensitivityCategory::Encryption => "Encryption",
            SensitivityCategory::Decryption => "Decryption",
            SensitivityCategory::Signature => "Signature",
            SensitivityCategory::Verification => "Verification",
            SensitivityCategory::Hash => "Hash",
            SensitivityCategory::SeedGeneration => "Seed generation",
            SensitivityCategory::RandomNumberGeneration => "Random number generation",
            SensitivityCategory::Serialization => "Serialization",
            SensitivityCategory::Deserialization => "Deserialization",
        }
    }

    /// Categories whose implementations draw on randomness.
    pub fn uses_randomness(self) -> bool {
        matches!(
            self,
            SensitivityCategory::SeedGeneration | SensitivityCategory::RandomNumberGeneration
        )
    }
}

impl fmt::Display for SensitivityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for SensitivityCategory {
    type Err = String;

    /// Case, spacing and punctuation are ignored; a few inflections are
    /// accepted ("Hashing", "Encrypt"). Anything else is rejected.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        use SensitivityCategory::*;
        Ok(match n.as_str() {
            "encryption" | "encrypt" | "encrypting" => Encryption,
            "decryption" | "decrypt" | "decrypting" => Decryption,
            "signature" | "signing" | "sign" => Signature,
            "verification" | "verify" | "verifying" => Verification,
            "hash" | "hashing" | "hashes" => Hash,
            "seedgeneration" => SeedGeneration,
            "randomnumbergeneration" | "rng" => RandomNumberGeneration,
            "serialization" | "serialisation" | "serialize" => Serialization,
            "deserialization" | "deserialisation" | "deserialize" => Deserialization,
            _ => return Err(s.trim().to_string()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Sensitive,
    NonSensitive,
    /// The protocol could not reach a verdict; left for manual triage.
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitivityVerdict {
    pub fqid: String,
    pub label: Label,
    pub categories: BTreeSet<SensitivityCategory>,
    pub evidence: BTreeMap<SensitivityCategory, Vec<String>>,
    /// Session id of the transcript that produced this verdict.
    pub transcript_id: String,
    pub retracted_at_round: Option<u8>,
    /// Rounds actually issued (1..=3).
    pub rounds: u8,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

impl SensitivityVerdict {
    fn new(fqid: &str, session: &str) -> Self {
        SensitivityVerdict {
            fqid: fqid.to_string(),
            label: Label::Unresolved,
            categories: BTreeSet::new(),
            evidence: BTreeMap::new(),
            transcript_id: session.to_string(),
            retracted_at_round: None,
            rounds: 0,
            warnings: Vec::new(),
            error: None,
        }
    }

    /// Check the label/category/evidence invariants against the body the
    /// verdict was computed for.
    pub fn check(&self, body: Option<&str>) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Invariant(format!("verdict {}: {m}", self.fqid)));
        match self.label {
            Label::Sensitive => {
                // round-1-only ablation runs cannot name categories
                if self.rounds >= 2 && self.categories.is_empty() {
                    return bad("sensitive without categories");
                }
                if let Some(body) = body {
                    for stmts in self.evidence.values() {
                        if let Some(s) = stmts.iter().find(|s| !body.contains(s.as_str())) {
                            return bad(&format!("evidence `{s}` is not in the body"));
                        }
                    }
                }
            }
            Label::NonSensitive | Label::Unresolved => {
                if !self.categories.is_empty() {
                    return bad("categories on a non-sensitive verdict");
                }
            }
        }
        if self.evidence.keys().any(|k| !self.categories.contains(k)) {
            return bad("evidence for a category that is not claimed");
        }
        Ok(())
    }
}

impl Record for SensitivityVerdict {
    const KIND: &'static str = "verdict";
    const DIR: &'static str = RECORDS_DIR;

    fn validate(&self) -> Result<(), ModelError> {
        self.check(None)
    }

    fn fqid(&self) -> Option<&str> {
        Some(&self.fqid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoundReply {
    Yes,
    No,
    Retract,
    Unparseable(String),
    Categories {
        set: BTreeSet<SensitivityCategory>,
        unknown: Vec<String>,
    },
    Evidence(BTreeMap<SensitivityCategory, Vec<String>>),
}

pub fn is_retraction(text: &str) -> bool {
    text.trim_start()
        .to_ascii_lowercase()
        .starts_with("sorry, the previous response")
}

fn bracket_body(text: &str) -> &str {
    match (text.find('['), text.rfind(']')) {
        (Some(a), Some(b)) if b > a => &text[a + 1..b],
        _ => text,
    }
}

fn clean_item(s: &str) -> &str {
    s.trim()
        .trim_matches(|c: char| {
            c == '"' || c == '\'' || c == '`' || c == '.' || c == '*' || c == '-'
        })
        .trim()
}

fn backtick_spans(text: &str) -> Vec<String> {
    let parts: Vec<&str> = text.split('`').collect();
    // odd pieces sit between a pair of backticks; an unpaired tail is ignored
    (1..parts.len().saturating_sub(1))
        .step_by(2)
        .map(|i| parts[i].trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Structure one reply of the protocol.
pub fn parse_round_response(round: u8, text: &str) -> RoundReply {
    if is_retraction(text) {
        return RoundReply::Retract;
    }
    match round {
        1 => {
            let word: String = text
                .split_whitespace()
                .next()
                .unwrap_or("")
                .chars()
                .filter(|c| c.is_ascii_alphanumeric())
                .collect::<String>()
                .to_ascii_lowercase();
            match word.as_str() {
                "yes" => RoundReply::Yes,
                "no" => RoundReply::No,
                _ => RoundReply::Unparseable(text.trim().to_string()),
            }
        }
        2 => {
            let mut set = BTreeSet::new();
            let mut unknown = Vec::new();
            for item in bracket_body(text).split([',', ';', '\n']) {
                let item = clean_item(item);
                if item.is_empty() {
                    continue;
                }
                match item.parse::<SensitivityCategory>() {
                    Ok(c) => {
                        set.insert(c);
                    }
                    Err(u) => unknown.push(u),
                }
            }
            RoundReply::Categories { set, unknown }
        }
        _ => {
            let mut map: BTreeMap<SensitivityCategory, Vec<String>> = BTreeMap::new();
            let mut current: Option<SensitivityCategory> = None;
            for line in text.lines() {
                let trimmed = line.trim().trim_start_matches(['-', '*']).trim();
                let mut rest = trimmed;
                if let Some((head, tail)) = trimmed.split_once(':') {
                    if !head.contains('`') {
                        if let Ok(c) = clean_item(head).parse::<SensitivityCategory>() {
                            current = Some(c);
                            map.entry(c).or_default();
                            rest = tail;
                        }
                    }
                }
                let Some(c) = current else { continue };
                let spans = backtick_spans(rest);
                let stmts = if !spans.is_empty() {
                    spans
                } else if rest.trim_start().starts_with('[') {
                    bracket_body(rest)
                        .split(", ")
                        .map(|s| clean_item(s).to_string())
                        .collect()
                } else if rest.trim().is_empty() {
                    Vec::new()
                } else {
                    vec![rest.trim().to_string()]
                };
                let entry = map.entry(c).or_default();
                for s in stmts.into_iter().filter(|s| !s.is_empty()) {
                    if !entry.contains(&s) {
                        entry.push(s);
                    }
                }
            }
            RoundReply::Evidence(map)
        }
    }
}

fn category_list(set: &BTreeSet<SensitivityCategory>) -> String {
    set.iter()
        .map(|c| c.display_name())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Run the protocol for one function on an open conversation. `rounds`
/// (1..=3) stops early for prompt-ablation runs; production runs use 3.
pub fn classify_function(
    record: &FunctionRecord,
    conv: &mut Conversation,
    rounds: u8,
) -> SensitivityVerdict {
    let mut v = SensitivityVerdict::new(&record.fqid, conv.session());
    match run_protocol(record, conv, rounds.clamp(1, 3), &mut v) {
        Ok(()) => {}
        Err(e) => {
            v.label = Label::Unresolved;
            v.categories.clear();
            v.evidence.clear();
            v.error = Some(e.to_string());
        }
    }
    v
}

fn run_protocol(
    record: &FunctionRecord,
    conv: &mut Conversation,
    rounds: u8,
    v: &mut SensitivityVerdict,
) -> Result<(), LlmError> {
    conv.system(prompts::IDENTIFY_SYSTEM);
    let r1 = render_template(
        prompts::IDENTIFY_ROUND1,
        &[
            ("crypto_kinds", prompts::CRYPTO_KINDS),
            ("serial_kinds", prompts::SERIAL_KINDS),
            ("language", record.language.as_str()),
            ("code", &record.body),
        ],
    )?;
    v.rounds = 1;
    match parse_round_response(1, &conv.ask(&r1)?) {
        RoundReply::Yes => {}
        RoundReply::No => {
            v.label = Label::NonSensitive;
            return Ok(());
        }
        RoundReply::Retract => {
            v.warnings
                .push("round 1 answered with a retraction; treated as No".into());
            v.label = Label::NonSensitive;
            return Ok(());
        }
        RoundReply::Unparseable(text) => {
            v.label = Label::Unresolved;
            v.error = Some(format!("round 1 reply is neither yes nor no: {text:?}"));
            return Ok(());
        }
        other => unreachable!("round 1 parser returned {other:?}"),
    }
    if rounds == 1 {
        v.label = Label::Sensitive;
        return Ok(());
    }

    let r2 = render_template(
        prompts::IDENTIFY_ROUND2,
        &[
            ("crypto_kinds", prompts::CRYPTO_KINDS),
            ("serial_kinds", prompts::SERIAL_KINDS),
        ],
    )?;
    v.rounds = 2;
    let set = match parse_round_response(2, &conv.ask(&r2)?) {
        RoundReply::Retract => {
            v.label = Label::NonSensitive;
            v.retracted_at_round = Some(2);
            return Ok(());
        }
        RoundReply::Categories { set, unknown } => {
            for u in unknown {
                v.warnings
                    .push(format!("round 2 named unknown category `{u}`"));
            }
            set
        }
        other => unreachable!("round 2 parser returned {other:?}"),
    };
    if set.is_empty() {
        v.label = Label::Unresolved;
        v.error = Some("round 2 named no known category".into());
        return Ok(());
    }
    if rounds == 2 {
        v.label = Label::Sensitive;
        v.categories = set;
        return Ok(());
    }

    let names = category_list(&set);
    let r3 = render_template(prompts::IDENTIFY_ROUND3, &[("categories", &names)])?;
    v.rounds = 3;
    let listed = match parse_round_response(3, &conv.ask(&r3)?) {
        RoundReply::Retract => {
            v.label = Label::NonSensitive;
            v.retracted_at_round = Some(3);
            return Ok(());
        }
        RoundReply::Evidence(map) => map,
        other => unreachable!("round 3 parser returned {other:?}"),
    };
    for (cat, stmts) in &listed {
        if !set.contains(cat) {
            v.warnings.push(format!(
                "round 3 listed {cat}, which round 2 did not name; ignored"
            ));
            continue;
        }
        let mut kept = Vec::new();
        for s in stmts {
            if record.body.contains(s.as_str()) {
                kept.push(s.clone());
            } else {
                v.warnings.push(format!(
                    "dropped {cat} evidence not found in the body: `{s}`"
                ));
            }
        }
        if !kept.is_empty() {
            v.evidence.insert(*cat, kept);
        }
    }
    for cat in &set {
        if v.evidence.contains_key(cat) {
            v.categories.insert(*cat);
        } else {
            v.warnings
                .push(format!("dropped category {cat}: no verbatim evidence"));
        }
    }
    v.label = if v.categories.is_empty() {
        v.warnings
            .push("no category kept any evidence; labelled non-sensitive".into());
        Label::NonSensitive
    } else {
        Label::Sensitive
    };
    Ok(())
}

pub fn session_id(record: &FunctionRecord) -> String {
    format!("identify--{}", record.slug())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BatchSummary {
    pub sensitive: usize,
    pub non_sensitive: usize,
    pub unresolved: usize,
}

/// Classify every record in its own session. Failures become UNRESOLVED
/// verdicts; the batch never aborts. Completed transcripts are written to
/// `transcripts_out` when given.
pub fn classify_batch(
    records: &[FunctionRecord],
    backend: Arc<dyn Backend>,
    rounds: u8,
    transcripts_out: Option<&Path>,
    mode: Parallelism,
) -> (Vec<SensitivityVerdict>, BatchSummary) {
    let verdicts = par::map(mode, records, |record| {
        let mut conv = Conversation::new(backend.clone(), &session_id(record));
        let mut v = classify_function(record, &mut conv, rounds);
        // a failed backend call leaves a partial transcript; never let it
        // overwrite a recording
        let failed_call = v.label == Label::Unresolved
            && v.error.is_some()
            && v.rounds as usize > conv.requests();
        if let (Some(dir), false) = (transcripts_out, failed_call) {
            if let Err(e) = conv.save(dir) {
                v.warnings.push(format!("transcript not saved: {e}"));
            }
        }
        v
    });
    let mut summary = BatchSummary::default();
    for v in &verdicts {
        match v.label {
            Label::Sensitive => summary.sensitive += 1,
            Label::NonSensitive => summary.non_sensitive += 1,
            Label::Unresolved => summary.unresolved += 1,
        }
    }
    (verdicts, summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_one_normalization() {
        assert_eq!(parse_round_response(1, "Yes."), RoundReply::Yes);
        assert_eq!(
            parse_round_response(1, "  NO, it does not."),
            RoundReply::No
        );
        assert_eq!(
            parse_round_response(1, "sorry, the previous response is incorrect."),
            RoundReply::Retract
        );
        assert!(matches!(
            parse_round_response(1, "Maybe"),
            RoundReply::Unparseable(_)
        ));
    }

    #[test]
    fn round_two_closed_set() {
        let RoundReply::Categories { set, unknown } =
            parse_round_response(2, "[Decryption, Verification]")
        else {
            panic!()
        };
        assert_eq!(
            set.into_iter().collect::<Vec<_>>(),
            [
                SensitivityCategory::Decryption,
                SensitivityCategory::Verification
            ]
        );
        assert!(unknown.is_empty());
        let RoundReply::Categories { set, unknown } = parse_round_response(2, "[Steganography]")
        else {
            panic!()
        };
        assert!(set.is_empty());
        assert_eq!(unknown, ["Steganography"]);
    }

    #[test]
    fn round_three_statements() {
        let text = "Hash: `hashlib.sha256(data)`, `h.hexdigest()`\nEncryption:\n- `xor(a, b)`\nSerialization: [json.dumps(x), y]";
        let RoundReply::Evidence(map) = parse_round_response(3, text) else {
            panic!()
        };
        assert_eq!(
            map[&SensitivityCategory::Hash],
            ["hashlib.sha256(data)", "h.hexdigest()"]
        );
        assert_eq!(map[&SensitivityCategory::Encryption], ["xor(a, b)"]);
        assert_eq!(
            map[&SensitivityCategory::Serialization],
            ["json.dumps(x)", "y"]
        );
    }

    #[test]
    fn invariant_gate() {
        let mut v = SensitivityVerdict::new("f", "s");
        v.label = Label::Sensitive;
        v.rounds = 3;
        assert!(v.check(None).is_err());
        v.categories.insert(SensitivityCategory::Hash);
        v.evidence
            .insert(SensitivityCategory::Hash, vec!["md5(".into()]);
        assert!(v.check(Some("return md5(x)")).is_ok());
        assert!(v.check(Some("return sha1(x)")).is_err());
    }
}
