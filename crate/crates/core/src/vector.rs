//! Typed argument literals, the one-case-per-line input-vector format, and
//! canonical output rendering shared by drivers, native binaries and the
//! enclave.
//!
//! Literal grammar:
//!
//! ```text
//! value  := int | float | bool | string | bytes | array
//! int    := -?[0-9]+
//! float  := -?[0-9]+(\.[0-9]+)?([eE][+-]?[0-9]+)?   (must contain '.' or an exponent)
//!         | nan | inf | -inf
//! bool   := true | false
//! string := '"' ( escape | any char except '"' '\' ) * '"'   escapes: \" \\ \n \r \t \uXXXX
//! bytes  := x"<even number of hex digits>"
//! array  := '[' ( value ( ',' value )* )? ']'
//! case   := value ( ',' value )*  |  '()'
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{SemType, Signature};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Value {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    Bytes(Vec<u8>),
    Array(Vec<Value>),
}

#[derive(Debug, Error, PartialEq)]
pub enum VectorError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("expected {expected} arguments, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("argument {index} (`{name}`): expected {expected}, found {found}")]
    Type {
        index: usize,
        name: String,
        expected: SemType,
        found: String,
    },
}

impl Value {
    pub fn kind(&self) -> String {
        match self {
            Value::Int(_) => "int".into(),
            Value::Float(_) => "float".into(),
            Value::Bool(_) => "bool".into(),
            Value::Str(_) => "string".into(),
            Value::Bytes(_) => "bytes".into(),
            Value::Array(items) => match items.first() {
                Some(v) => format!("array<{}>", v.kind()),
                None => "array".into(),
            },
        }
    }

    /// Exact type match; no numeric widening, no string/bytes coercion.
    pub fn matches(&self, ty: &SemType) -> bool {
        match (self, ty) {
            (Value::Int(_), SemType::Int)
            | (Value::Float(_), SemType::Float)
            | (Value::Bool(_), SemType::Bool)
            | (Value::Str(_), SemType::Str)
            | (Value::Bytes(_), SemType::Bytes) => true,
            (Value::Array(items), SemType::Array(inner)) => items.iter().all(|v| v.matches(inner)),
            _ => false,
        }
    }

    pub fn to_literal(&self) -> String {
        let mut out = String::new();
        write_literal(&mut out, self);
        out
    }

    /// Canonical output form: top-level strings raw, top-level bytes as
    /// lowercase hex, everything else as a literal.
    pub fn canonical(&self) -> String {
        match self {
            Value::Str(s) => s.clone(),
            Value::Bytes(b) => hex::encode(b),
            other => other.to_literal(),
        }
    }

    /// Inverse of [`Value::canonical`] given the declared return type.
    pub fn from_canonical(text: &str, ty: &SemType) -> Result<Value, VectorError> {
        match ty {
            SemType::Str => Ok(Value::Str(text.to_string())),
            SemType::Bytes => {
                hex::decode(text)
                    .map(Value::Bytes)
                    .map_err(|e| VectorError::Syntax {
                        pos: 0,
                        msg: format!("bad hex output: {e}"),
                    })
            }
            _ => parse_value(text),
        }
    }
}

impl From<Value> for String {
    fn from(v: Value) -> Self {
        v.to_literal()
    }
}

impl TryFrom<String> for Value {
    type Error = VectorError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        parse_value(&s)
    }
}

/// Mimics C's `%.12g`, which is what the source-side drivers print.
pub fn format_float(x: f64) -> String {
    const PRECISION: i32 = 12;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.*e}", (PRECISION - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -4 || exp >= PRECISION {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let fixed = format!("{:.*}", (PRECISION - 1 - exp) as usize, x);
        strip_zeros(&fixed).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn write_literal(out: &mut String, v: &Value) {
    match v {
        Value::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Value::Float(f) => {
            let s = format_float(*f);
            out.push_str(&s);
            if !s.contains(['.', 'e', 'n', 'i']) {
                out.push_str(".0");
            }
        }
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Str(s) => {
            out.push('"');
            for ch in s.chars() {
                match ch {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\r' => out.push_str("\\r"),
                    '\t' => out.push_str("\\t"),
                    c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                        let _ = write!(out, "\\u{:04x}", c as u32);
                    }
                    c => out.push(c),
                }
            }
            out.push('"');
        }
        Value::Bytes(b) => {
            out.push_str("x\"");
            out.push_str(&hex::encode(b));
            out.push('"');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_literal(out, item);
            }
            out.push(']');
        }
    }
}

/// One test case rendered as a single input-vector line.
pub fn encode_case(args: &[Value]) -> String {
    if args.is_empty() {
        return "()".into();
    }
    args.iter()
        .map(Value::to_literal)
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn parse_case(line: &str) -> Result<Vec<Value>, VectorError> {
    let trimmed = line.trim();
    if trimmed == "()" {
        return Ok(Vec::new());
    }
    let mut p = Parser {
        src: line.as_bytes(),
        pos: 0,
    };
    let mut out = Vec::new();
    p.skip_ws();
    if p.at_end() {
        return Err(p.err("empty case (use `()` for zero arguments)"));
    }
    loop {
        out.push(p.value()?);
        p.skip_ws();
        if p.at_end() {
            break;
        }
        p.expect(b',')?;
        p.skip_ws();
    }
    Ok(out)
}

pub fn parse_value(text: &str) -> Result<Value, VectorError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    let v = p.value()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.err("trailing input after value"));
    }
    Ok(v)
}

/// Parse and type-check a case against a signature.
pub fn parse_typed_case(line: &str, sig: &Signature) -> Result<Vec<Value>, VectorError> {
    let args = parse_case(line)?;
    check_case(&args, sig)?;
    Ok(args)
}

pub fn check_case(args: &[Value], sig: &Signature) -> Result<(), VectorError> {
    if args.len() != sig.arity() {
        return Err(VectorError::Arity {
            expected: sig.arity(),
            found: args.len(),
        });
    }
    for (i, (arg, param)) in args.iter().zip(&sig.params).enumerate() {
        if !arg.matches(&param.ty) {
            return Err(VectorError::Type {
                index: i,
                name: param.name.clone(),
                expected: param.ty.clone(),
                found: arg.kind(),
            });
        }
    }
    Ok(())
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> VectorError {
        VectorError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, b: u8) -> Result<(), VectorError> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", b as char)))
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.src[self.pos..].starts_with(w.as_bytes()) {
            let end = self.pos + w.len();
            let boundary = self.src.get(end).is_none_or(|c| !c.is_ascii_alphanumeric());
            if boundary {
                self.pos = end;
                return true;
            }
        }
        false
    }

    fn value(&mut self) -> Result<Value, VectorError> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some(b'"') => self.string().map(Value::Str),
            Some(b'x') if self.src.get(self.pos + 1) == Some(&b'"') => {
                self.pos += 1;
                let s = self.string()?;
                hex::decode(&s)
                    .map(Value::Bytes)
                    .map_err(|_| self.err("invalid hex in byte literal"))
            }
            Some(b'[') => {
                self.pos += 1;
                let mut items = Vec::new();
                self.skip_ws();
                if self.peek() == Some(b']') {
                    self.pos += 1;
                    return Ok(Value::Array(items));
                }
                loop {
                    self.skip_ws();
                    items.push(self.value()?);
                    self.skip_ws();
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b']') => {
                            self.pos += 1;
                            return Ok(Value::Array(items));
                        }
                        _ => return Err(self.err("expected `,` or `]` in array")),
                    }
                }
            }
            Some(_) => {
                if self.eat_word("true") {
                    return Ok(Value::Bool(true));
                }
                if self.eat_word("false") {
                    return Ok(Value::Bool(false));
                }
                if self.eat_word("nan") {
                    return Ok(Value::Float(f64::NAN));
                }
                if self.eat_word("inf") {
                    return Ok(Value::Float(f64::INFINITY));
                }
                if self.eat_word("-inf") {
                    return Ok(Value::Float(f64::NEG_INFINITY));
                }
                self.number()
            }
        }
    }

    fn number(&mut self) -> Result<Value, VectorError> {
        let start = self.pos;
        if matches!(self.peek(), Some(b'-' | b'+')) {
            self.pos += 1;
        }
        let mut is_float = false;
        let mut digits = 0;
        while let Some(c) = self.peek() {
            match c {
                b'0'..=b'9' => digits += 1,
                b'.' | b'e' | b'E' => is_float = true,
                b'+' | b'-' if matches!(self.src[self.pos - 1], b'e' | b'E') => {}
                _ => break,
            }
            self.pos += 1;
        }
        if digits == 0 {
            self.pos = start;
            return Err(self.err("expected a literal"));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        if is_float {
            text.parse::<f64>().map(Value::Float).map_err(|_| {
                self.pos = start;
                self.err("malformed decimal")
            })
        } else {
            text.parse::<i64>().map(Value::Int).map_err(|_| {
                self.pos = start;
                self.err("integer out of range")
            })
        }
    }

    fn string(&mut self) -> Result<String, VectorError> {
        self.expect(b'"')?;
        let mut out: Vec<u8> = Vec::new();
        loop {
            let Some(c) = self.peek() else {
                return Err(self.err("unterminated string"));
            };
            self.pos += 1;
            match c {
                b'"' => break,
                b'\\' => {
                    let Some(e) = self.peek() else {
                        return Err(self.err("dangling escape"));
                    };
                    self.pos += 1;
                    match e {
                        b'"' => out.push(b'"'),
                        b'\\' => out.push(b'\\'),
                        b'n' => out.push(b'\n'),
                        b'r' => out.push(b'\r'),
                        b't' => out.push(b'\t'),
                        b'u' => {
                            let hex = self
                                .src
                                .get(self.pos..self.pos + 4)
                                .and_then(|h| std::str::from_utf8(h).ok())
                                .and_then(|h| u32::from_str_radix(h, 16).ok())
                                .and_then(char::from_u32)
                                .ok_or_else(|| self.err("bad \\u escape"))?;
                            self.pos += 4;
                            let mut buf = [0u8; 4];
                            out.extend_from_slice(hex.encode_utf8(&mut buf).as_bytes());
                        }
                        _ => return Err(self.err("unknown escape")),
                    }
                }
                other => out.push(other),
            }
        }
        String::from_utf8(out).map_err(|_| self.err("string is not UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn literals() {
        let args = parse_case(r#"42, -1.5, true, "a\"b", x"00ff", [1, 2]"#).unwrap();
        assert_eq!(
            args,
            vec![
                Value::Int(42),
                Value::Float(-1.5),
                Value::Bool(true),
                Value::Str("a\"b".into()),
                Value::Bytes(vec![0, 255]),
                Value::Array(vec![Value::Int(1), Value::Int(2)]),
            ]
        );
        assert_eq!(parse_case("()").unwrap(), vec![]);
        assert!(parse_case("").is_err());
        assert!(parse_case("1,").is_err());
        assert!(parse_case("x\"abc\"").is_err());
    }

    #[test]
    fn canonical_rules() {
        assert_eq!(Value::Str("x".into()).canonical(), "x");
        assert_eq!(Value::Bytes(vec![0xab, 0x01]).canonical(), "ab01");
        assert_eq!(Value::Bool(false).canonical(), "false");
        assert_eq!(
            Value::Array(vec![Value::Str("a".into()), Value::Bytes(vec![1])]).canonical(),
            r#"["a", x"01"]"#
        );
    }

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(format_float(0.1), "0.1");
        assert_eq!(format_float(1.0), "1");
        assert_eq!(format_float(1e-9), "1e-09");
        assert_eq!(format_float(123456789012345.0), "1.23456789012e+14");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_float(-2.5e-5), "-2.5e-05");
        assert_eq!(format_float(0.0001), "0.0001");
        assert_eq!(format_float(999999999999.5), "1e+12");
        assert_eq!(format_float(-0.0), "-0");
    }

    #[test]
    fn type_check_never_coerces() {
        let sig = Signature {
            params: vec![crate::model::Param {
                name: "x".into(),
                ty: SemType::Float,
            }],
            ret: SemType::Float,
        };
        assert!(parse_typed_case("1.0", &sig).is_ok());
        assert!(matches!(
            parse_typed_case("1", &sig),
            Err(VectorError::Type { .. })
        ));
        assert!(matches!(
            parse_typed_case("1.0, 2.0", &sig),
            Err(VectorError::Arity { .. })
        ));
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            any::<i64>().prop_map(Value::Int),
            (-1e12f64..1e12).prop_map(|f| Value::Float(format_float(f).parse().unwrap())),
            any::<bool>().prop_map(Value::Bool),
            ".*".prop_map(Value::Str),
            proptest::collection::vec(any::<u8>(), 0..16).prop_map(Value::Bytes),
        ];
        leaf.prop_recursive(2, 12, 4, |inner| {
            proptest::collection::vec(inner, 0..4).prop_map(Value::Array)
        })
    }

    proptest! {
        #[test]
        fn case_roundtrip(args in proptest::collection::vec(arb_value(), 0..5)) {
            let line = encode_case(&args);
            prop_assert!(!line.contains('\n'));
            let back = parse_case(&line).unwrap();
            prop_assert_eq!(encode_case(&back), line);
        }
    }
}
