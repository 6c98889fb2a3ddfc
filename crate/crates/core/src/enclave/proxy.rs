//! A man-in-the-middle relay for exercising the fail-closed paths.

use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

use serde_json::Value;

use super::frame::{read_frame, write_frame, Frame, FrameType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tamper {
    /// Relay unchanged.
    None,
    /// Flip one byte of the CALL ciphertext.
    FlipCallByte,
    /// Flip one byte of the quote signature.
    FlipQuoteSignature,
    /// Replace the runtime's channel key in the quote with the proxy's own.
    SwapServerKey,
    /// Answer every QUOTE_REQ after the first with the first quote seen.
    ReplayQuote,
}

pub struct TamperProxy {
    pub port: u16,
}

impl TamperProxy {
    pub fn endpoint(&self) -> String {
        format!("127.0.0.1:{}", self.port)
    }

    /// Listen on loopback and relay each connection to `upstream`.
    pub fn start(upstream: &str, tamper: Tamper) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let port = listener.local_addr()?.port();
        let upstream = upstream.to_string();
        let recorded: Arc<Mutex<Option<Frame>>> = Arc::new(Mutex::new(None));
        std::thread::spawn(move || {
            for client in listener.incoming().flatten() {
                let upstream = upstream.clone();
                let recorded = Arc::clone(&recorded);
                std::thread::spawn(move || relay(client, &upstream, tamper, recorded));
            }
        });
        Ok(TamperProxy { port })
    }
}

fn flip_hex(v: &mut Value, key: &str) {
    if let Some(s) = v.get(key).and_then(|s| s.as_str()) {
        let mut bytes = hex::decode(s).unwrap_or_default();
        if let Some(b) = bytes.get_mut(0) {
            *b ^= 0x01;
        }
        v[key] = Value::String(hex::encode(bytes));
    }
}

fn relay(client: TcpStream, upstream: &str, tamper: Tamper, recorded: Arc<Mutex<Option<Frame>>>) {
    let Ok(server) = TcpStream::connect(upstream) else {
        return;
    };
    let _ = (client.set_nodelay(true), server.set_nodelay(true));
    let (Ok(mut c_read), Ok(s_write)) = (client.try_clone(), server.try_clone()) else {
        return;
    };
    let c_write = Arc::new(Mutex::new(client));
    let mut s_read = server;
    let mut s_write = s_write;

    let back = Arc::clone(&c_write);
    let rec = Arc::clone(&recorded);
    let down = std::thread::spawn(move || {
        while let Ok(mut f) = read_frame(&mut s_read) {
            if f.kind == FrameType::Quote {
                match tamper {
                    Tamper::FlipQuoteSignature => flip_hex(&mut f.payload, "signature"),
                    Tamper::SwapServerKey => {
                        let fake = x25519_dalek::PublicKey::from(
                            &x25519_dalek::StaticSecret::random_from_rng(rand::rngs::OsRng),
                        );
                        f.payload["server_key"] = Value::String(hex::encode(fake.as_bytes()));
                    }
                    Tamper::ReplayQuote => {
                        rec.lock().unwrap().get_or_insert_with(|| f.clone());
                    }
                    _ => {}
                }
            }
            if write_frame(&mut *back.lock().unwrap(), &f).is_err() {
                break;
            }
        }
        let _ = back.lock().unwrap().shutdown(Shutdown::Both);
    });

    while let Ok(mut f) = read_frame(&mut c_read) {
        if f.kind == FrameType::QuoteReq && tamper == Tamper::ReplayQuote {
            let old = recorded.lock().unwrap().clone();
            if let Some(mut old) = old {
                old.session_id = f.session_id.clone();
                let _ = write_frame(&mut *c_write.lock().unwrap(), &old);
                continue;
            }
        }
        if f.kind == FrameType::Call && tamper == Tamper::FlipCallByte {
            flip_hex(&mut f.payload, "ciphertext");
        }
        if write_frame(&mut s_write, &f).is_err() {
            break;
        }
    }
    let _ = s_write.shutdown(Shutdown::Both);
    let _ = down.join();
}
