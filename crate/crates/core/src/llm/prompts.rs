//! Prompt templates. Placeholders use `{{name}}`.
//!
//! The leading sentence of each template is the published prompt wording;
//! what follows pins the reply format so replies can be parsed mechanically.

pub const RETRACTION: &str = "Sorry, the previous response is incorrect.";

pub const CRYPTO_KINDS: &str = "Encryption, Decryption, Signature, Verification, Hash, Seed generation, Random number generation";
pub const SERIAL_KINDS: &str = "Serialization, Deserialization";

pub const IDENTIFY_SYSTEM: &str = "You review source code for security-sensitive operations. Answer precisely and correct yourself when an earlier answer was wrong.";

pub const IDENTIFY_ROUND1: &str = "Does this function utilize or implement any operations related to [cryptography, serialization]? Please respond with 'Yes'; otherwise, respond with 'No.' Specifically, cryptography includes [{{crypto_kinds}}]; serialization includes [{{serial_kinds}}].

```{{language}}
{{code}}
```";

pub const IDENTIFY_ROUND2: &str = "What type of operation does this function involve? Reply with a bracketed list such as [Encryption, Verification] using only these types: [{{crypto_kinds}}, {{serial_kinds}}]. If the function involves none of them, reply: Sorry, the previous response is incorrect.";

pub const IDENTIFY_ROUND3: &str = "List the statements involved in [{{categories}}]. Write one line per type as `Type: ` followed by each statement quoted verbatim from the function between backticks. If there are no such statements, reply: Sorry, the previous response is incorrect.";

pub const TESTS_SYSTEM: &str = "You write test inputs for functions. Inputs are data, not code.";

pub const TESTS_INITIAL: &str = "Generate a set of diverse test inputs that invoke this function with the goal of maximizing both line and branch coverage.

```{{language}}
{{code}}
```

Signature: {{signature}}
Write each test input on its own line as a parenthesised tuple of literals in parameter order, inside one ```inputs block. Literals: integers (42), decimals (1.5), booleans (true/false), double-quoted strings (\"abc\"), hex byte strings (x\"00ff\"), bracketed arrays ([1, 2]).";

pub const TESTS_REFINE: &str = "The inputs so far reach {{line_pct}}% line coverage and {{branch_pct}}% branch coverage. Uncovered sites:
{{uncovered}}
Generate additional test inputs that reach the uncovered sites, in the same format.";

pub const TRANSFORM_SYSTEM: &str =
    "You port functions to safe Rust. Keep observable behaviour identical.";

pub const TRANSFORM_OBJECTIVE: &str = "What objective does this function accomplish?

```{{language}}
{{code}}
```";

pub const TRANSFORM_CODE: &str = "Transform this code into Rust. For example,
{{examples}}
The entry point must be `{{entry}}`. Reply with one ```rust block, then a line `Dependencies: [name = \"version\", ...]` (empty brackets when none are needed).";

/// One few-shot item inside [`TRANSFORM_CODE`].
pub const FEW_SHOT_ITEM: &str = "```{{language}}
{{source}}
```
to
```rust
{{native}}
```
with dependency [{{deps}}].
";

pub const REACT_SYSTEM: &str = "You refine Rust code until it compiles and behaves exactly like the original. Every reply is exactly one step:
Thought: <your reasoning>
Action: NAME(payload)
NAME is one of:
ISSUES_SEARCH(<compiler error code, e.g. E0308>)
CODE_MODIFICATION(<the complete new Rust source>)
DEPENDENCY_UPDATE(<name = \"version\", ...>)
COMPILABILITY_CHECK()
EQUIVALENCE_VALIDATION()
Equivalence validation is only available after a successful compilability check of the current code.";

pub const REACT_TASK: &str =
    "Implement this code using Rust with the same input type and return type {{code}}

Current Rust code:
```rust
{{native}}
```
Current dependencies: [{{deps}}]
Latest observation: {{observation}}";

pub const REACT_OBSERVATION: &str = "Observation: {{observation}}";

#[cfg(test)]
mod tests {
    use super::super::{render_template, LlmError};
    use super::*;

    #[test]
    fn round_one_wording() {
        let text = render_template(
            IDENTIFY_ROUND1,
            &[
                ("crypto_kinds", CRYPTO_KINDS),
                ("serial_kinds", SERIAL_KINDS),
                ("language", "python"),
                ("code", "def f(): pass"),
            ],
        )
        .unwrap();
        assert!(text.contains("Please respond with 'Yes'"));
        assert!(!text.contains("{{"));
    }

    #[test]
    fn missing_code_binding() {
        let err = render_template(TRANSFORM_OBJECTIVE, &[("language", "java")]).unwrap_err();
        assert_eq!(err, LlmError::MissingBindings(vec!["code".into()]));
        assert_eq!(render_template(RETRACTION, &[]).unwrap(), RETRACTION);
    }
}
