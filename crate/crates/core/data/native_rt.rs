// Harness runtime compiled into every native binary: literal I/O and the
// byte stream behind the randomness shim.
#![allow(dead_code)]

use std::io::Read;
use std::sync::Mutex;

pub enum V {
    I(i64),
    F(f64),
    B(bool),
    S(String),
    Y(Vec<u8>),
    A(Vec<V>),
}

// ---------------------------------------------------------------- randomness

struct Stream {
    fixed: Option<Vec<u8>>,
    pos: usize,
    state: u64,
    buf: Vec<u8>,
}

static STREAM: Mutex<Option<Stream>> = Mutex::new(None);

pub fn init(spec: &str) {
    let stream = if let Some(seed) = spec.strip_prefix("seed:") {
        Stream { fixed: None, pos: 0, state: seed.parse().unwrap_or_else(|_| fatal("bad seed")), buf: Vec::new() }
    } else if let Some(hex) = spec.strip_prefix("bytes:") {
        let bytes = unhex(hex).unwrap_or_else(|| fatal("bad byte stream"));
        if bytes.is_empty() {
            fatal("empty byte stream");
        }
        Stream { fixed: Some(bytes), pos: 0, state: 0, buf: Vec::new() }
    } else {
        return;
    };
    *STREAM.lock().unwrap() = Some(stream);
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug)]
pub struct Error(String);

impl std::fmt::Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Error {}

pub fn getrandom(dest: &mut [u8]) -> Result<(), Error> {
    let mut guard = STREAM.lock().unwrap();
    match guard.as_mut() {
        Some(s) => {
            for b in dest.iter_mut() {
                *b = match &s.fixed {
                    Some(f) => {
                        let v = f[s.pos % f.len()];
                        s.pos += 1;
                        v
                    }
                    None => {
                        if s.buf.is_empty() {
                            s.buf = splitmix(&mut s.state).to_le_bytes().to_vec();
                        }
                        s.buf.remove(0)
                    }
                };
            }
            Ok(())
        }
        None => std::fs::File::open("/dev/urandom")
            .and_then(|mut f| f.read_exact(dest))
            .map_err(|e| Error(e.to_string())),
    }
}

pub fn fill_bytes(dest: &mut [u8]) {
    getrandom(dest).expect("random source failed")
}

/// Wall-clock nanoseconds via a direct `clock_gettime` syscall, usable where
/// the timestamp counter is disabled.
pub fn clock_ns() -> u64 {
    #[cfg(all(target_os = "linux", target_arch = "x86_64"))]
    {
        let mut ts = [0i64; 2];
        let ret: i64;
        // SAFETY: clock_gettime(CLOCK_REALTIME, &ts) writes two i64s into ts.
        unsafe {
            std::arch::asm!(
                "syscall",
                inlateout("rax") 228i64 => ret,
                in("rdi") 0i64,
                in("rsi") ts.as_mut_ptr(),
                lateout("rcx") _,
                lateout("r11") _,
                options(nostack)
            );
        }
        if ret == 0 {
            return ts[0] as u64 * 1_000_000_000 + ts[1] as u64;
        }
    }
    0
}

// ---------------------------------------------------------------- literals

fn unhex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok()).collect()
}

struct P<'a> {
    s: &'a [u8],
    i: usize,
}

impl P<'_> {
    fn ws(&mut self) {
        while self.i < self.s.len() && (self.s[self.i] as char).is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn eat(&mut self, c: u8) -> Result<(), String> {
        self.ws();
        if self.s.get(self.i) == Some(&c) {
            self.i += 1;
            Ok(())
        } else {
            Err(format!("expected `{}` at {}", c as char, self.i))
        }
    }

    fn value(&mut self) -> Result<V, String> {
        self.ws();
        let rest = &self.s[self.i..];
        match rest.first() {
            None => Err("unexpected end of input".into()),
            Some(b'"') => self.string().map(V::S),
            Some(b'x') if rest.get(1) == Some(&b'"') => {
                self.i += 1;
                let h = self.string()?;
                unhex(&h).map(V::Y).ok_or_else(|| "bad hex".into())
            }
            Some(b'[') => {
                self.i += 1;
                let mut items = Vec::new();
                self.ws();
                if self.s.get(self.i) == Some(&b']') {
                    self.i += 1;
                    return Ok(V::A(items));
                }
                loop {
                    items.push(self.value()?);
                    self.ws();
                    if self.s.get(self.i) == Some(&b']') {
                        self.i += 1;
                        return Ok(V::A(items));
                    }
                    self.eat(b',')?;
                }
            }
            _ => {
                for (w, v) in [("true", 1), ("false", 0)] {
                    if rest.starts_with(w.as_bytes()) {
                        self.i += w.len();
                        return Ok(V::B(v == 1));
                    }
                }
                for (w, v) in [("nan", f64::NAN), ("inf", f64::INFINITY), ("-inf", f64::NEG_INFINITY)] {
                    if rest.starts_with(w.as_bytes()) {
                        self.i += w.len();
                        return Ok(V::F(v));
                    }
                }
                let start = self.i;
                while self.i < self.s.len() && b"+-0123456789.eE".contains(&self.s[self.i]) {
                    self.i += 1;
                }
                let tok = std::str::from_utf8(&self.s[start..self.i]).unwrap();
                if tok.is_empty() {
                    return Err(format!("unexpected character at {start}"));
                }
                if tok.contains(['.', 'e', 'E']) {
                    tok.parse().map(V::F).map_err(|_| format!("bad float `{tok}`"))
                } else {
                    tok.parse().map(V::I).map_err(|_| format!("bad int `{tok}`"))
                }
            }
        }
    }

    fn string(&mut self) -> Result<String, String> {
        self.eat(b'"')?;
        let mut out = Vec::new();
        loop {
            let c = *self.s.get(self.i).ok_or("unterminated string")?;
            self.i += 1;
            match c {
                b'"' => return String::from_utf8(out).map_err(|_| "invalid utf-8".into()),
                b'\\' => {
                    let e = *self.s.get(self.i).ok_or("bad escape")?;
                    self.i += 1;
                    match e {
                        b'n' => out.push(b'\n'),
                        b'r' => out.push(b'\r'),
                        b't' => out.push(b'\t'),
                        b'"' => out.push(b'"'),
                        b'\\' => out.push(b'\\'),
                        b'u' => {
                            let h = std::str::from_utf8(self.s.get(self.i..self.i + 4).ok_or("bad escape")?).unwrap();
                            let ch = u32::from_str_radix(h, 16).ok().and_then(char::from_u32).ok_or("bad escape")?;
                            self.i += 4;
                            let mut buf = [0u8; 4];
                            out.extend_from_slice(ch.encode_utf8(&mut buf).as_bytes());
                        }
                        _ => return Err("bad escape".into()),
                    }
                }
                _ => out.push(c),
            }
        }
    }
}

pub fn fatal(msg: &str) -> ! {
    println!("err {}", msg.split_whitespace().collect::<Vec<_>>().join(" "));
    std::process::exit(1)
}

pub fn read_case(arity: usize) -> Vec<V> {
    let mut line = String::new();
    let _ = std::io::stdin().read_line(&mut line);
    let line = line.trim();
    if line == "()" {
        if arity != 0 {
            fatal(&format!("expected {arity} arguments, found 0"));
        }
        return Vec::new();
    }
    let mut p = P { s: line.as_bytes(), i: 0 };
    let mut out = Vec::new();
    loop {
        match p.value() {
            Ok(v) => out.push(v),
            Err(e) => fatal(&format!("bad input: {e}")),
        }
        p.ws();
        if p.i >= p.s.len() {
            break;
        }
        if let Err(e) = p.eat(b',') {
            fatal(&format!("bad input: {e}"));
        }
    }
    if out.len() != arity {
        fatal(&format!("expected {arity} arguments, found {}", out.len()));
    }
    out
}

pub fn arg<T>(v: Option<V>, f: impl Fn(V) -> Result<T, String>) -> T {
    match v.map(f) {
        Some(Ok(x)) => x,
        Some(Err(e)) => fatal(&format!("bad argument: {e}")),
        None => fatal("missing argument"),
    }
}

pub fn as_i64(v: V) -> Result<i64, String> {
    match v {
        V::I(x) => Ok(x),
        _ => Err("expected int".into()),
    }
}

pub fn as_f64(v: V) -> Result<f64, String> {
    match v {
        V::F(x) => Ok(x),
        V::I(x) => Ok(x as f64),
        _ => Err("expected float".into()),
    }
}

pub fn as_bool(v: V) -> Result<bool, String> {
    match v {
        V::B(x) => Ok(x),
        _ => Err("expected bool".into()),
    }
}

pub fn as_string(v: V) -> Result<String, String> {
    match v {
        V::S(x) => Ok(x),
        _ => Err("expected string".into()),
    }
}

pub fn as_bytes(v: V) -> Result<Vec<u8>, String> {
    match v {
        V::Y(x) => Ok(x),
        _ => Err("expected bytes".into()),
    }
}

pub fn as_vec<T>(v: V, f: impl Fn(V) -> Result<T, String>) -> Result<Vec<T>, String> {
    match v {
        V::A(items) => items.into_iter().map(f).collect(),
        _ => Err("expected array".into()),
    }
}

pub fn lit_i64(x: &i64) -> String {
    x.to_string()
}

pub fn lit_f64(x: &f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if *x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        let s = format!("{x:?}");
        if s.contains(['.', 'e', 'E']) { s } else { format!("{s}.0") }
    }
}

pub fn lit_bool(x: &bool) -> String {
    x.to_string()
}

pub fn lit_string(x: &String) -> String {
    let mut out = String::from("\"");
    for ch in x.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 || c as u32 == 0x7f => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

pub fn lit_bytes(x: &Vec<u8>) -> String {
    let mut out = String::from("x\"");
    for b in x {
        out.push_str(&format!("{b:02x}"));
    }
    out.push('"');
    out
}

pub fn lit_vec<T>(x: &[T], f: impl Fn(&T) -> String) -> String {
    format!("[{}]", x.iter().map(f).collect::<Vec<_>>().join(", "))
}

pub fn emit(lit: String) {
    println!("ok {lit}");
}

pub fn quiet_panics() {
    std::panic::set_hook(Box::new(|_| {}));
}

pub fn panicked(p: Box<dyn std::any::Any + Send>) -> ! {
    let msg = if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".to_string()
    };
    fatal(&format!("panic: {msg}"))
}
