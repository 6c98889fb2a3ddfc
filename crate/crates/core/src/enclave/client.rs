//! Verifier side of a session: challenge, check the quote, bind the channel,
//! then issue encrypted calls.

use std::net::TcpStream;
use std::time::Duration;

use rand::RngCore;
use serde_json::json;
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

use super::channel::{derive_keys, SecureChannel, Side};
use super::frame::{read_frame, write_frame, Frame, FrameError, FrameType};
use super::runtime::{CallReply, CallRequest};
use super::{AttestError, Quote, QuoteVerifier};
use crate::drivers::RandomSource;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("attestation failed: {0}")]
    Attest(#[from] AttestError),
    #[error("enclave reported {code}: {message}")]
    Remote { code: String, message: String },
    #[error("function failed inside the enclave: {0}")]
    Call(String),
    #[error("INTEGRITY_FAILURE: reply failed authentication")]
    Integrity,
    #[error("channel error: {0}")]
    Channel(#[from] FrameError),
    #[error("unexpected frame {0}")]
    Unexpected(&'static str),
}

impl ClientError {
    /// Stable failure code for reports and tests.
    pub fn code(&self) -> String {
        match self {
            ClientError::Attest(a) => a.code().into(),
            ClientError::Remote { code, .. } => code.clone(),
            ClientError::Call(_) => "CALL_FAILED".into(),
            ClientError::Integrity => "INTEGRITY_FAILURE".into(),
            ClientError::Channel(_) => "CHANNEL_ERROR".into(),
            ClientError::Unexpected(_) => "PROTOCOL_VIOLATION".into(),
        }
    }
}

fn remote_error(f: &Frame) -> ClientError {
    ClientError::Remote {
        code: f
            .payload
            .get("code")
            .and_then(|c| c.as_str())
            .unwrap_or("ERROR")
            .to_string(),
        message: f
            .payload
            .get("message")
            .and_then(|c| c.as_str())
            .unwrap_or_default()
            .to_string(),
    }
}

pub struct EnclaveClient {
    pub endpoint: String,
    pub verifier: QuoteVerifier,
    pub io_timeout: Duration,
}

/// An attested, channel-bound session to one image.
pub struct AttestedSession {
    conn: TcpStream,
    session: String,
    fqid: String,
    channel: SecureChannel,
}

impl EnclaveClient {
    pub fn new(endpoint: &str, verifier: QuoteVerifier) -> Self {
        EnclaveClient {
            endpoint: endpoint.to_string(),
            verifier,
            io_timeout: Duration::from_secs(30),
        }
    }

    pub fn connect(&self) -> Result<TcpStream, ClientError> {
        let conn = TcpStream::connect(&self.endpoint).map_err(FrameError::Io)?;
        conn.set_read_timeout(Some(self.io_timeout))
            .map_err(FrameError::Io)?;
        conn.set_nodelay(true).map_err(FrameError::Io)?;
        Ok(conn)
    }

    pub fn attest(
        &mut self,
        fqid: &str,
        expected_measurement: &str,
    ) -> Result<AttestedSession, ClientError> {
        let mut conn = self.connect()?;
        let mut rng = rand::rngs::OsRng;
        let session = format!("{:016x}", rng.next_u64());
        let mut nonce = [0u8; 32];
        rng.fill_bytes(&mut nonce);
        write_frame(
            &mut conn,
            &Frame::new(
                FrameType::QuoteReq,
                &session,
                json!({"nonce": hex::encode(nonce), "fqid": fqid}),
            ),
        )?;
        let reply = read_frame(&mut conn)?;
        let quote: Quote = match reply.kind {
            FrameType::Quote => serde_json::from_value(reply.payload)
                .map_err(|e| AttestError::Malformed(e.to_string()))?,
            FrameType::Error => return Err(remote_error(&reply)),
            other => return Err(ClientError::Unexpected(other.as_str())),
        };
        let server_pub = self
            .verifier
            .verify_quote(&quote, expected_measurement, &nonce)?;
        let secret = StaticSecret::random_from_rng(rng);
        let client_pub = PublicKey::from(&secret);
        let shared = secret.diffie_hellman(&PublicKey::from(server_pub));
        let keys = derive_keys(
            shared.as_bytes(),
            &nonce,
            client_pub.as_bytes(),
            &server_pub,
        );
        write_frame(
            &mut conn,
            &Frame::new(
                FrameType::ChannelInit,
                &session,
                json!({"client_key": hex::encode(client_pub.as_bytes())}),
            ),
        )?;
        Ok(AttestedSession {
            conn,
            session,
            fqid: fqid.to_string(),
            channel: SecureChannel::new(&keys, Side::Client),
        })
    }

    /// Attest and make one call; returns the result literal.
    pub fn call(
        &mut self,
        fqid: &str,
        expected_measurement: &str,
        args_line: &str,
        random: Option<&RandomSource>,
    ) -> Result<String, ClientError> {
        self.attest(fqid, expected_measurement)?
            .call(args_line, random)
    }
}

impl AttestedSession {
    pub fn call(
        &mut self,
        args_line: &str,
        random: Option<&RandomSource>,
    ) -> Result<String, ClientError> {
        let req = CallRequest {
            fqid: self.fqid.clone(),
            args: args_line.to_string(),
            random: random.map(|r| r.to_string()),
        };
        let ct = self.channel.seal(
            "CALL",
            &self.session,
            &serde_json::to_vec(&req).expect("requests serialize"),
        );
        write_frame(
            &mut self.conn,
            &Frame::new(FrameType::Call, &self.session, json!({"ciphertext": ct})),
        )?;
        let reply = read_frame(&mut self.conn)?;
        if !matches!(reply.kind, FrameType::Result | FrameType::Error) {
            return Err(ClientError::Unexpected(reply.kind.as_str()));
        }
        let Some(ct) = reply.payload.get("ciphertext").and_then(|c| c.as_str()) else {
            return Err(remote_error(&reply));
        };
        let plain = self
            .channel
            .open(reply.kind.as_str(), &self.session, ct)
            .map_err(|_| ClientError::Integrity)?;
        let body: CallReply = serde_json::from_slice(&plain).map_err(|_| ClientError::Integrity)?;
        match (body.ok, body.output) {
            (true, Some(out)) => Ok(out),
            _ => Err(ClientError::Call(body.error.unwrap_or_default())),
        }
    }
}
