//! Model-driven transformation into Rust.
//!
//! An initial few-shot translation is compiled and validated. If it is not
//! already equivalent, a reason/act loop lets the model search compiler
//! error docs, edit code, edit dependencies, compile and validate, until the
//! code validates or the refinement threshold is spent.

pub mod adapt;
pub mod toolchain;

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::identify::SensitivityCategory;
use crate::llm::{prompts, render_template, Conversation, LlmError};
use crate::model::{FailureTag, FunctionRecord, LanguageId, ModelError};
use crate::validate::{EquivalenceOutcome, EquivalenceVerdict};
use crate::workspace::{Record, ARTIFACTS_DIR};

use toolchain::{
    merge_dependencies, parse_dependencies, BuildRequest, CompileReport, Dependency, Toolchain,
};

pub const FEW_SHOT_DATA: &str = include_str!("../../data/few-shot.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleKind {
    Crypto,
    Serialization,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotExample {
    pub title: String,
    pub kind: ExampleKind,
    pub language: LanguageId,
    pub source: String,
    pub native: String,
    pub deps: Vec<Dependency>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotPack {
    pub examples: Vec<FewShotExample>,
}

impl FewShotPack {
    pub fn builtin() -> Self {
        Self::parse(FEW_SHOT_DATA).expect("bundled few-shot pack parses")
    }

    /// Sections: `=== title | kind | language`, then `--- source`,
    /// `--- native` and `--- deps` blocks.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut examples = Vec::new();
        for chunk in text.split("\n=== ").map(|c| c.trim_start_matches("=== ")) {
            if chunk.trim().is_empty() {
                continue;
            }
            let (head, rest) = chunk.split_once('\n').ok_or("example without body")?;
            let fields: Vec<&str> = head.split('|').map(str::trim).collect();
            let [title, kind, lang] = fields[..] else {
                return Err(format!("bad example header `{head}`"));
            };
            let kind = match kind {
                "crypto" => ExampleKind::Crypto,
                "serialization" => ExampleKind::Serialization,
                k => return Err(format!("unknown example kind `{k}`")),
            };
            let section = |name: &str| -> Result<String, String> {
                let marker = format!("--- {name}\n");
                let start = rest
                    .find(&marker)
                    .ok_or(format!("`{title}` lacks a {name} section"))?
                    + marker.len();
                let end = rest[start..]
                    .find("\n--- ")
                    .map(|i| start + i)
                    .unwrap_or(rest.len());
                Ok(rest[start..end].trim_end().to_string())
            };
            examples.push(FewShotExample {
                title: title.to_string(),
                kind,
                language: LanguageId::new(lang).map_err(|e| e.to_string())?,
                source: section("source")?,
                native: section("native")?,
                deps: parse_dependencies(&section("deps")?)?,
            });
        }
        Ok(FewShotPack { examples })
    }

    /// Up to `k` examples, most relevant first: same kind, then same language.
    pub fn select(
        &self,
        language: &LanguageId,
        categories: &BTreeSet<SensitivityCategory>,
        k: usize,
    ) -> Vec<&FewShotExample> {
        let serial = categories.iter().any(|c| {
            matches!(
                c,
                SensitivityCategory::Serialization | SensitivityCategory::Deserialization
            )
        });
        let want = if serial && categories.len() == 1 {
            ExampleKind::Serialization
        } else {
            ExampleKind::Crypto
        };
        let mut ranked: Vec<(usize, &FewShotExample)> = self.examples.iter().enumerate().collect();
        ranked.sort_by_key(|(i, e)| (e.kind != want, e.language != *language, *i));
        ranked.into_iter().take(k).map(|(_, e)| e).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TransformOutcome {
    Direct,
    Equivalent,
    Failed,
}

impl fmt::Display for TransformOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformOutcome::Direct => "DIRECT",
            TransformOutcome::Equivalent => "EQUIVALENT",
            TransformOutcome::Failed => "FAILED",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActionKind {
    IssuesSearch,
    CodeModification,
    DependencyUpdate,
    CompilabilityCheck,
    EquivalenceValidation,
}

impl ActionKind {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name.trim() {
            "ISSUES_SEARCH" => ActionKind::IssuesSearch,
            "CODE_MODIFICATION" => ActionKind::CodeModification,
            "DEPENDENCY_UPDATE" => ActionKind::DependencyUpdate,
            "COMPILABILITY_CHECK" => ActionKind::CompilabilityCheck,
            "EQUIVALENCE_VALIDATION" => ActionKind::EquivalenceValidation,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactStep {
    pub step: u32,
    pub thought: String,
    /// `None` when the reply had no usable action or the action was refused.
    pub action: Option<ActionKind>,
    pub observation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformArtifact {
    pub fqid: String,
    pub outcome: TransformOutcome,
    /// Refinement steps taken; the final passing validation is not counted.
    pub iterations: u32,
    pub native_code: String,
    pub dependencies: Vec<Dependency>,
    pub objective: String,
    pub trace: Vec<ReactStep>,
    pub failure_tags: Vec<FailureTag>,
    pub build_hash: Option<String>,
    pub binary: Option<PathBuf>,
    pub transcript_id: String,
    pub warnings: Vec<String>,
    /// Enclave profile the code was adapted and revalidated for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub platform: Option<String>,
}

impl Record for TransformArtifact {
    const KIND: &'static str = "transform";
    const DIR: &'static str = ARTIFACTS_DIR;

    fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Invariant(m.into()));
        match self.outcome {
            TransformOutcome::Direct if self.iterations != 0 || !self.trace.is_empty() => {
                bad("DIRECT artifact with refinement steps")
            }
            TransformOutcome::Equivalent if self.iterations == 0 => {
                bad("EQUIVALENT artifact without refinement")
            }
            TransformOutcome::Failed if self.failure_tags.is_empty() => {
                bad("FAILED artifact without a failure tag")
            }
            TransformOutcome::Direct | TransformOutcome::Equivalent if self.binary.is_none() => {
                bad("successful artifact without a binary")
            }
            _ => Ok(()),
        }
    }

    fn fqid(&self) -> Option<&str> {
        Some(&self.fqid)
    }
}

/// Equivalence oracle for a built binary.
pub trait Equivalence {
    fn check(&self, build: &CompileReport) -> EquivalenceVerdict;
}

pub struct TransformContext<'a> {
    pub toolchain: &'a dyn Toolchain,
    pub oracle: &'a dyn Equivalence,
    pub pack: &'a FewShotPack,
    pub few_shot_count: usize,
    pub threshold: u32,
    pub categories: BTreeSet<SensitivityCategory>,
}

pub fn session_id(record: &FunctionRecord) -> String {
    format!("transform--{}", record.slug())
}

fn fenced_block(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?s)```([A-Za-z0-9_+-]*)[^\n]*\n(.*?)```").unwrap());
    let blocks: Vec<(String, String)> = re
        .captures_iter(text)
        .map(|c| (c[1].to_string(), c[2].to_string()))
        .collect();
    blocks
        .iter()
        .find(|(tag, _)| tag == "rust" || tag == "rs")
        .or_else(|| blocks.first())
        .map(|(_, body)| body.trim_end().to_string() + "\n")
}

/// The Rust code of a reply: the first ```rust block, else the first block.
pub fn extract_code(reply: &str) -> Option<String> {
    fenced_block(reply).filter(|c| !c.trim().is_empty())
}

/// Dependencies from a `Dependencies: [...]` line.
pub fn extract_deps(reply: &str) -> Result<Vec<Dependency>, String> {
    match reply
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix("Dependencies:"))
    {
        Some(list) => parse_dependencies(list),
        None => Ok(Vec::new()),
    }
}

/// Parse `Thought: ...` / `Action: NAME(payload)`. The payload runs to the
/// last `)` of the reply so it can span lines.
pub fn parse_action(reply: &str) -> Result<(String, ActionKind, String), String> {
    let idx = reply.find("Action:").ok_or("no `Action:` line")?;
    let thought = reply[..idx]
        .trim()
        .strip_prefix("Thought:")
        .unwrap_or(reply[..idx].trim())
        .trim()
        .to_string();
    let rest = reply[idx + "Action:".len()..].trim_start();
    let open = rest.find('(').ok_or("action without `(`")?;
    let kind = ActionKind::parse(&rest[..open])
        .ok_or_else(|| format!("unknown action `{}`", rest[..open].trim()))?;
    let close = rest
        .rfind(')')
        .filter(|&c| c > open)
        .ok_or("action without `)`")?;
    let raw = &rest[open + 1..close];
    let payload = fenced_block(raw).unwrap_or_else(|| raw.trim().to_string());
    Ok((thought, kind, payload))
}

struct State {
    code: String,
    deps: Vec<Dependency>,
    /// Build of the current code, if it compiled.
    build: Option<CompileReport>,
    last_verdict: Option<EquivalenceVerdict>,
    ever_compiled: bool,
}

fn compile(ctx: &TransformContext, record: &FunctionRecord, st: &mut State) -> CompileReport {
    let entry = record.native_entry();
    let report = ctx.toolchain.compile(&BuildRequest {
        entry: &entry,
        signature: &record.signature,
        source: &st.code,
        deps: &st.deps,
    });
    st.ever_compiled |= report.success;
    st.build = report.success.then(|| report.clone());
    report
}

fn failure_tags(record: &FunctionRecord, ctx: &TransformContext, st: &State) -> Vec<FailureTag> {
    static FLAG: OnceLock<Regex> = OnceLock::new();
    let flag =
        FLAG.get_or_init(|| Regex::new(r#""[A-Za-z0-9-]+/[A-Za-z0-9]+/[A-Za-z0-9]+""#).unwrap());
    let body = &record.body;
    if st.last_verdict.as_ref().map(|v| v.outcome) == Some(EquivalenceOutcome::Different) {
        if body.contains("<<") || body.contains(">>") {
            return vec![FailureTag::ShiftOperations];
        }
        if flag.is_match(body) {
            return vec![FailureTag::MissingFlag];
        }
        return vec![FailureTag::FunctionalityChange];
    }
    let heavy = ctx.categories.iter().any(|c| {
        matches!(
            c,
            SensitivityCategory::Encryption
                | SensitivityCategory::Decryption
                | SensitivityCategory::Signature
                | SensitivityCategory::Verification
        )
    });
    if !st.ever_compiled && heavy {
        return vec![FailureTag::SophisticatedCrypto];
    }
    vec![FailureTag::Other]
}

fn artifact(
    record: &FunctionRecord,
    conv: &Conversation,
    st: &State,
    outcome: TransformOutcome,
) -> TransformArtifact {
    TransformArtifact {
        fqid: record.fqid.clone(),
        outcome,
        iterations: 0,
        native_code: st.code.clone(),
        dependencies: st.deps.clone(),
        objective: String::new(),
        trace: Vec::new(),
        failure_tags: Vec::new(),
        build_hash: st.build.as_ref().map(|b| b.build_hash.clone()),
        binary: st.build.as_ref().and_then(|b| b.binary.clone()),
        transcript_id: conv.session().to_string(),
        warnings: Vec::new(),
        platform: None,
    }
}

/// Objective question plus few-shot translation. Returns (objective, code,
/// dependencies); `None` code means the model never produced a code block.
pub fn initial_transform(
    record: &FunctionRecord,
    conv: &mut Conversation,
    ctx: &TransformContext,
) -> Result<(String, Option<String>, Vec<Dependency>, Vec<String>), LlmError> {
    conv.system(prompts::TRANSFORM_SYSTEM);
    let objective = conv.ask(&render_template(
        prompts::TRANSFORM_OBJECTIVE,
        &[
            ("language", record.language.as_str()),
            ("code", &record.body),
        ],
    )?)?;
    let mut examples = String::new();
    for ex in ctx
        .pack
        .select(&record.language, &ctx.categories, ctx.few_shot_count)
    {
        let deps: Vec<String> = ex.deps.iter().map(|d| d.to_string()).collect();
        examples.push_str(&render_template(
            prompts::FEW_SHOT_ITEM,
            &[
                ("language", ex.language.as_str()),
                ("source", &ex.source),
                ("native", &ex.native),
                ("deps", &deps.join(", ")),
            ],
        )?);
    }
    let entry = format!("fn {}{}", record.native_entry(), rust_signature(record));
    let prompt = render_template(
        prompts::TRANSFORM_CODE,
        &[("examples", &examples), ("entry", &entry)],
    )?;
    let mut warnings = Vec::new();
    let mut reply = conv.ask(&prompt)?;
    if extract_code(&reply).is_none() {
        warnings.push("first translation reply had no code block; asked again".into());
        reply = conv.ask("Reply with the complete Rust code in one ```rust block.")?;
    }
    let deps = extract_deps(&reply).unwrap_or_else(|e| {
        warnings.push(format!("ignored dependency line: {e}"));
        Vec::new()
    });
    Ok((objective, extract_code(&reply), deps, warnings))
}

fn rust_signature(record: &FunctionRecord) -> String {
    let params: Vec<String> = record
        .signature
        .params
        .iter()
        .map(|p| {
            format!(
                "{}: {}",
                crate::model::to_snake_case(&p.name),
                p.ty.rust_type()
            )
        })
        .collect();
    format!(
        "({}) -> {}",
        params.join(", "),
        record.signature.ret.rust_type()
    )
}

/// Full transformation of one function.
pub fn transform_function(
    record: &FunctionRecord,
    conv: &mut Conversation,
    ctx: &TransformContext,
) -> TransformArtifact {
    let empty = State {
        code: String::new(),
        deps: Vec::new(),
        build: None,
        last_verdict: None,
        ever_compiled: false,
    };
    let (objective, code, deps, warnings) = match initial_transform(record, conv, ctx) {
        Ok(x) => x,
        Err(e) => {
            let mut a = artifact(record, conv, &empty, TransformOutcome::Failed);
            a.failure_tags = vec![FailureTag::Other];
            a.warnings.push(format!("model call failed: {e}"));
            return a;
        }
    };
    let Some(code) = code else {
        let mut a = artifact(record, conv, &empty, TransformOutcome::Failed);
        a.objective = objective;
        a.failure_tags = vec![FailureTag::Other];
        a.warnings = warnings;
        a.warnings
            .push("no-code: the model produced no Rust code".into());
        return a;
    };
    let mut st = State {
        code,
        deps,
        build: None,
        last_verdict: None,
        ever_compiled: false,
    };
    let report = compile(ctx, record, &mut st);
    let observation = if report.success {
        let v = ctx.oracle.check(&report);
        if v.outcome == EquivalenceOutcome::Equivalent {
            let mut a = artifact(record, conv, &st, TransformOutcome::Direct);
            a.objective = objective;
            a.warnings = warnings;
            return a;
        }
        let fb = format!(
            "the code compiles; equivalence validation: {}",
            v.feedback()
        );
        st.last_verdict = Some(v);
        fb
    } else {
        report.summary(3)
    };
    let mut a = react_refine(record, conv, ctx, st, &observation);
    a.objective = objective;
    let mut w = warnings;
    w.append(&mut a.warnings);
    a.warnings = w;
    a
}

fn react_refine(
    record: &FunctionRecord,
    conv: &mut Conversation,
    ctx: &TransformContext,
    mut st: State,
    observation: &str,
) -> TransformArtifact {
    let deps_text = |d: &[Dependency]| {
        d.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut prompt = match render_template(
        prompts::REACT_TASK,
        &[
            ("code", &record.body),
            ("native", st.code.trim_end()),
            ("deps", &deps_text(&st.deps)),
            ("observation", observation),
        ],
    ) {
        Ok(p) => format!("{}\n\n{p}", prompts::REACT_SYSTEM),
        Err(e) => unreachable!("react template: {e}"),
    };
    let mut trace: Vec<ReactStep> = Vec::new();
    let mut warnings = Vec::new();
    let mut steps = 0u32;
    while steps < ctx.threshold {
        let reply = match conv.ask(&prompt) {
            Ok(r) => r,
            Err(e) => {
                warnings.push(format!("model call failed: {e}"));
                break;
            }
        };
        steps += 1;
        let (thought, action, observation) = match parse_action(&reply) {
            Err(e) => (
                String::new(),
                None,
                format!("{e}. Reply with `Thought: ...` and `Action: NAME(payload)`."),
            ),
            Ok((thought, kind, payload)) => {
                let obs = match kind {
                    ActionKind::IssuesSearch => match ctx.toolchain.lookup_error_code(&payload) {
                        Some(text) => text,
                        None => format!("no documentation found for `{payload}`"),
                    },
                    ActionKind::CodeModification => {
                        st.code = payload.trim_end().to_string() + "\n";
                        st.build = None;
                        "code updated".into()
                    }
                    ActionKind::DependencyUpdate => match parse_dependencies(&payload) {
                        Ok(d) => {
                            st.deps = merge_dependencies(&st.deps, &d);
                            st.build = None;
                            format!("dependencies are now [{}]", deps_text(&st.deps))
                        }
                        Err(e) => format!("dependency list not understood: {e}"),
                    },
                    ActionKind::CompilabilityCheck => compile(ctx, record, &mut st).summary(3),
                    ActionKind::EquivalenceValidation => match &st.build {
                        None => {
                            trace.push(ReactStep {
                                step: steps,
                                thought,
                                action: None,
                                observation: "EQUIVALENCE_VALIDATION needs a successful COMPILABILITY_CHECK of the current code first".into(),
                            });
                            prompt = render_template(
                                prompts::REACT_OBSERVATION,
                                &[("observation", &trace.last().unwrap().observation)],
                            )
                            .expect("observation template");
                            continue;
                        }
                        Some(build) => {
                            let v = ctx.oracle.check(build);
                            if v.outcome == EquivalenceOutcome::Equivalent {
                                let mut a =
                                    artifact(record, conv, &st, TransformOutcome::Equivalent);
                                a.iterations = steps - 1;
                                a.trace = trace;
                                a.warnings = warnings;
                                return a;
                            }
                            let fb = v.feedback();
                            st.last_verdict = Some(v);
                            fb
                        }
                    },
                };
                (thought, Some(kind), obs)
            }
        };
        trace.push(ReactStep {
            step: steps,
            thought,
            action,
            observation: observation.clone(),
        });
        prompt = render_template(prompts::REACT_OBSERVATION, &[("observation", &observation)])
            .expect("observation template");
    }
    let mut a = artifact(record, conv, &st, TransformOutcome::Failed);
    a.iterations = steps;
    a.failure_tags = failure_tags(record, ctx, &st);
    a.trace = trace;
    a.warnings = warnings;
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_pack() {
        let pack = FewShotPack::builtin();
        assert_eq!(pack.examples.len(), 3);
        assert_eq!(
            pack.examples
                .iter()
                .filter(|e| e.kind == ExampleKind::Crypto)
                .count(),
            2
        );
        let serial = BTreeSet::from([SensitivityCategory::Serialization]);
        assert_eq!(
            pack.select(&LanguageId::python(), &serial, 1)[0].kind,
            ExampleKind::Serialization
        );
        assert_eq!(pack.examples[2].deps, vec![]);
    }

    #[test]
    fn action_grammar() {
        let (t, k, p) = parse_action(
            "Thought: fix it\nAction: CODE_MODIFICATION(```rust\nfn f() -> i64 { (1) }\n```)",
        )
        .unwrap();
        assert_eq!((t.as_str(), k), ("fix it", ActionKind::CodeModification));
        assert_eq!(p, "fn f() -> i64 { (1) }\n");
        assert_eq!(
            parse_action("Action: COMPILABILITY_CHECK()").unwrap().1,
            ActionKind::CompilabilityCheck
        );
        assert_eq!(
            parse_action("Action: ISSUES_SEARCH(E0308)").unwrap().2,
            "E0308"
        );
        assert!(parse_action("Action: RUN(x)").is_err());
        assert!(parse_action("I think so").is_err());
    }

    #[test]
    fn code_and_deps_from_reply() {
        let reply = "Sure.\n```rust\npub fn f() -> i64 { 1 }\n```\nDependencies: [hex = \"0.4\"]";
        assert_eq!(extract_code(reply).unwrap(), "pub fn f() -> i64 { 1 }\n");
        assert_eq!(
            extract_deps(reply).unwrap(),
            vec![Dependency::new("hex", "0.4")]
        );
        assert!(extract_code("no code here").is_none());
    }
}
