//! The enclave runtime process. It reads a launch bundle on stdin, admits
//! the image only if it verifies, listens on loopback and serves sessions one
//! at a time, one per connection:
//!
//! `AWAIT_QUOTE_REQ -> AWAIT_CHANNEL_INIT -> READY`
//!
//! Anything out of order, undecodable or failing authentication ends the
//! session with an `ERROR` frame.

use std::io::{BufRead, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use x25519_dalek::{PublicKey, StaticSecret};

use super::channel::{derive_keys, SecureChannel, Side};
use super::frame::{decode_frame, read_raw, write_frame, Frame, FrameError, FrameType};
use super::{make_quote, signing_key, verify_image, verifying_key, SignedImage};
use crate::drivers::{run_case, CaseOutcome, Executable, RandomSource};
use ed25519_dalek::SigningKey;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaunchBundle {
    pub image: SignedImage,
    pub harness_public: String,
    pub attestation_secret: String,
    pub case_timeout_ms: u64,
}

struct Admitted {
    image: SignedImage,
    measurement: [u8; 32],
    /// Private copy of the verified bytes; the original path may change.
    sealed: PathBuf,
}

struct Ctx {
    image: Admitted,
    attestation: SigningKey,
    timeout: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    AwaitQuoteReq,
    AwaitChannelInit,
    Ready,
}

impl State {
    fn name(self) -> &'static str {
        match self {
            State::AwaitQuoteReq => "AWAIT_QUOTE_REQ",
            State::AwaitChannelInit => "AWAIT_CHANNEL_INIT",
            State::Ready => "READY",
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CallRequest {
    pub fqid: String,
    pub args: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CallReply {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn admit(bundle: &LaunchBundle, dir: &std::path::Path) -> Result<Ctx, String> {
    let harness = verifying_key(&bundle.harness_public).map_err(|e| e.to_string())?;
    let attestation = signing_key(&bundle.attestation_secret).map_err(|e| e.to_string())?;
    let img = &bundle.image;
    let bytes = std::fs::read(&img.binary).map_err(|e| format!("{}: {e}", img.binary.display()))?;
    verify_image(img, &bytes, &harness).map_err(|e| e.to_string())?;
    let sealed = dir.join("image");
    std::fs::write(&sealed, &bytes).map_err(|e| e.to_string())?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&sealed, std::fs::Permissions::from_mode(0o500))
            .map_err(|e| e.to_string())?;
    }
    Ok(Ctx {
        image: Admitted {
            image: img.clone(),
            measurement: super::measure(&bytes),
            sealed,
        },
        attestation,
        timeout: Duration::from_millis(bundle.case_timeout_ms.max(1)),
    })
}

/// Entry point of the runtime binary. Prints `LISTENING <port>` or
/// `REFUSED <reason>` on stdout and returns the exit code.
pub fn serve_from_stdin() -> i32 {
    let mut line = String::new();
    let stdin = std::io::stdin();
    let mut input = String::new();
    while stdin
        .lock()
        .read_line(&mut line)
        .map(|n| n > 0)
        .unwrap_or(false)
    {
        input.push_str(&line);
        line.clear();
    }
    let refuse = |why: String| {
        println!("REFUSED {}", why.replace('\n', " "));
        let _ = std::io::stdout().flush();
        2
    };
    let bundle: LaunchBundle = match serde_json::from_str(&input) {
        Ok(b) => b,
        Err(e) => return refuse(format!("bad launch bundle: {e}")),
    };
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return refuse(format!("no private storage: {e}")),
    };
    let ctx = match admit(&bundle, dir.path()) {
        Ok(c) => c,
        Err(e) => return refuse(e),
    };
    let listener = match TcpListener::bind("127.0.0.1:0") {
        Ok(l) => l,
        Err(e) => return refuse(format!("cannot listen: {e}")),
    };
    let port = listener.local_addr().map(|a| a.port()).unwrap_or(0);
    eprintln!(
        "runtime: admitted {} ({}), listening on {port}",
        ctx.image.image.fqid, ctx.image.image.measurement
    );
    println!("LISTENING {port}");
    let _ = std::io::stdout().flush();
    for conn in listener.incoming() {
        let Ok(conn) = conn else { continue };
        serve_session(conn, &ctx);
    }
    0
}

fn send_error(conn: &mut TcpStream, session: &str, code: &str, message: &str) {
    eprintln!("session {session}: ERROR {code}: {message}");
    let _ = write_frame(
        conn,
        &Frame::new(
            FrameType::Error,
            session,
            json!({"code": code, "message": message}),
        ),
    );
}

struct Session {
    id: String,
    state: State,
    image: Option<String>,
    nonce: Vec<u8>,
    secret: Option<StaticSecret>,
    channel: Option<SecureChannel>,
}

impl Session {
    fn goto(&mut self, next: State) {
        eprintln!(
            "session {}: {} -> {}",
            self.id,
            self.state.name(),
            next.name()
        );
        self.state = next;
    }
}

fn hex32(v: &serde_json::Value) -> Option<[u8; 32]> {
    hex::decode(v.as_str()?).ok()?.try_into().ok()
}

/// Sessions are served one at a time; an idle peer may hold the runtime
/// only this long.
const IDLE: Duration = Duration::from_secs(30);

fn serve_session(mut conn: TcpStream, ctx: &Ctx) {
    let _ = conn.set_read_timeout(Some(IDLE));
    // small request/reply frames; Nagle plus delayed ACKs would add ~40 ms a call
    let _ = conn.set_nodelay(true);
    let mut s = Session {
        id: "-".into(),
        state: State::AwaitQuoteReq,
        image: None,
        nonce: Vec::new(),
        secret: None,
        channel: None,
    };
    loop {
        let frame = match read_raw(&mut conn).and_then(|b| decode_frame(&b)) {
            Ok(f) => f,
            Err(FrameError::Closed) => return,
            Err(FrameError::Io(_)) => return,
            Err(e) => return send_error(&mut conn, &s.id, "DECODE_ERROR", &e.to_string()),
        };
        if s.state == State::AwaitQuoteReq {
            s.id = frame.session_id.clone();
        } else if frame.session_id != s.id {
            return send_error(
                &mut conn,
                &s.id,
                "PROTOCOL_VIOLATION",
                "session id changed mid-session",
            );
        }
        match (s.state, frame.kind) {
            (State::AwaitQuoteReq, FrameType::QuoteReq) => {
                let nonce = frame
                    .payload
                    .get("nonce")
                    .and_then(|n| n.as_str())
                    .and_then(|n| hex::decode(n).ok());
                let Some(nonce) = nonce.filter(|n| (16..=64).contains(&n.len())) else {
                    return send_error(
                        &mut conn,
                        &s.id,
                        "DECODE_ERROR",
                        "QUOTE_REQ needs a 16-64 byte hex nonce",
                    );
                };
                let fqid = frame
                    .payload
                    .get("fqid")
                    .and_then(|f| f.as_str())
                    .unwrap_or_default();
                let img = &ctx.image;
                if img.image.fqid != fqid {
                    return send_error(
                        &mut conn,
                        &s.id,
                        "UNKNOWN_FUNCTION",
                        &format!("no image for `{fqid}`"),
                    );
                }
                let secret = StaticSecret::random_from_rng(rand::rngs::OsRng);
                let public = PublicKey::from(&secret);
                let quote = make_quote(
                    &ctx.attestation,
                    &img.measurement,
                    &nonce,
                    public.as_bytes(),
                    &img.image.toolchain,
                );
                let payload = serde_json::to_value(&quote).expect("quotes serialize");
                if write_frame(&mut conn, &Frame::new(FrameType::Quote, &s.id, payload)).is_err() {
                    return;
                }
                s.image = Some(fqid.to_string());
                s.nonce = nonce;
                s.secret = Some(secret);
                s.goto(State::AwaitChannelInit);
            }
            (State::AwaitChannelInit, FrameType::ChannelInit) => {
                let Some(client) = frame.payload.get("client_key").and_then(hex32) else {
                    return send_error(
                        &mut conn,
                        &s.id,
                        "DECODE_ERROR",
                        "CHANNEL_INIT needs a 32-byte client_key",
                    );
                };
                let secret = s.secret.take().expect("set with the quote");
                let server_pub = PublicKey::from(&secret);
                let shared = secret.diffie_hellman(&PublicKey::from(client));
                let keys = derive_keys(shared.as_bytes(), &s.nonce, &client, server_pub.as_bytes());
                s.channel = Some(SecureChannel::new(&keys, Side::Server));
                s.goto(State::Ready);
            }
            (State::Ready, FrameType::Call) => {
                let ch = s.channel.as_mut().expect("ready implies a channel");
                let ct = frame
                    .payload
                    .get("ciphertext")
                    .and_then(|c| c.as_str())
                    .unwrap_or_default();
                let Ok(plain) = ch.open("CALL", &s.id, ct) else {
                    return send_error(
                        &mut conn,
                        &s.id,
                        "INTEGRITY_FAILURE",
                        "CALL failed authentication",
                    );
                };
                let reply = match serde_json::from_slice::<CallRequest>(&plain) {
                    Err(e) => CallReply {
                        ok: false,
                        output: None,
                        error: Some(format!("bad call: {e}")),
                    },
                    Ok(req) if Some(&req.fqid) != s.image.as_ref() => CallReply {
                        ok: false,
                        output: None,
                        error: Some("call targets a function other than the attested one".into()),
                    },
                    Ok(req) => execute(ctx, &req),
                };
                let ok = reply.ok;
                let body = serde_json::to_vec(&reply).expect("replies serialize");
                let kind = if ok {
                    FrameType::Result
                } else {
                    FrameType::Error
                };
                let sealed = ch.seal(kind.as_str(), &s.id, &body);
                eprintln!("session {}: CALL -> {}", s.id, kind.as_str());
                if write_frame(
                    &mut conn,
                    &Frame::new(kind, &s.id, json!({"ciphertext": sealed})),
                )
                .is_err()
                {
                    return;
                }
            }
            (state, kind) => {
                return send_error(
                    &mut conn,
                    &s.id,
                    "PROTOCOL_VIOLATION",
                    &format!("{} not allowed in state {}", kind.as_str(), state.name()),
                )
            }
        }
    }
}

fn execute(ctx: &Ctx, req: &CallRequest) -> CallReply {
    let img = &ctx.image;
    let random = match req.random.as_deref().map(str::parse::<RandomSource>) {
        None => None,
        Some(Ok(r)) => Some(r),
        Some(Err(e)) => {
            return CallReply {
                ok: false,
                output: None,
                error: Some(e.to_string()),
            }
        }
    };
    let exe = Executable::native(&req.fqid, &img.sealed, &img.image.ret, true);
    let res = run_case(&exe, "call", &req.args, random.as_ref(), ctx.timeout);
    match res.outcome {
        CaseOutcome::Returned(v) => CallReply {
            ok: true,
            output: Some(v.to_literal()),
            error: None,
        },
        _ => CallReply {
            ok: false,
            output: None,
            error: Some(res.describe()),
        },
    }
}
