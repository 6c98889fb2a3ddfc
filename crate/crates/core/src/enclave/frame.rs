//! Wire frames: a 4-byte big-endian length followed by a JSON object
//! `{"type", "sessionId", "payload"}`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_FRAME: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FrameType {
    QuoteReq,
    Quote,
    ChannelInit,
    Call,
    Result,
    Error,
}

impl FrameType {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameType::QuoteReq => "QUOTE_REQ",
            FrameType::Quote => "QUOTE",
            FrameType::ChannelInit => "CHANNEL_INIT",
            FrameType::Call => "CALL",
            FrameType::Result => "RESULT",
            FrameType::Error => "ERROR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    #[serde(rename = "type")]
    pub kind: FrameType,
    #[serde(rename = "sessionId")]
    pub session_id: String,
    pub payload: serde_json::Value,
}

impl Frame {
    pub fn new(kind: FrameType, session_id: &str, payload: serde_json::Value) -> Self {
        Frame {
            kind,
            session_id: session_id.to_string(),
            payload,
        }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("connection closed")]
    Closed,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("cannot decode frame: {0}")]
    Decode(String),
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let body = serde_json::to_vec(frame).expect("frames serialize");
    let mut out = (body.len() as u32).to_be_bytes().to_vec();
    out.extend_from_slice(&body);
    out
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<(), FrameError> {
    w.write_all(&encode_frame(frame))?;
    w.flush()?;
    Ok(())
}

/// Read one raw frame body.
pub fn read_raw(r: &mut impl Read) -> Result<Vec<u8>, FrameError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Err(FrameError::Closed),
        Err(e) => return Err(e.into()),
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(FrameError::TooLarge(n));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    Ok(body)
}

pub fn decode_frame(body: &[u8]) -> Result<Frame, FrameError> {
    serde_json::from_slice(body).map_err(|e| FrameError::Decode(e.to_string()))
}

pub fn read_frame(r: &mut impl Read) -> Result<Frame, FrameError> {
    decode_frame(&read_raw(r)?)
}
