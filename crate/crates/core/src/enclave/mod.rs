//! Simulated enclave: signed native images, attestation quotes, an
//! authenticated encrypted channel and a sandboxed runtime process.
//!
//! Trust chain: the harness signing key signs each image's measurement; the
//! runtime refuses images whose signature or measurement does not check out.
//! Quotes are signed with the attestation key and bind the verifier's nonce
//! and the runtime's per-session channel key, so a quote cannot be replayed
//! or spliced onto another key exchange.

pub mod channel;
pub mod client;
pub mod frame;
pub mod launch;
pub mod proxy;
pub mod runtime;
pub mod stub;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier as _, VerifyingKey};
use rand::rngs::OsRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{ModelError, SemType};
use crate::workspace::{Record, ARTIFACTS_DIR};

pub const IMAGE_DOMAIN: &[u8] = b"teeport-image-v1";
pub const QUOTE_DOMAIN: &[u8] = b"teeport-quote-v1";

#[derive(Debug, Error)]
pub enum EnclaveError {
    #[error("binary {0} is empty")]
    EmptyBinary(PathBuf),
    #[error("image for {0} has an invalid signature")]
    InvalidSignature(String),
    #[error("image for {fqid} does not match its measurement")]
    MeasurementMismatch { fqid: String },
    #[error("bad key material: {0}")]
    BadKey(String),
    #[error("enclave runtime refused to start: {0}")]
    Refused(String),
    #[error("enclave runtime not found: {0}")]
    RuntimeMissing(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EnclaveError + '_ {
    move |source| EnclaveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn key32(hex_text: &str) -> Result<[u8; 32], EnclaveError> {
    hex::decode(hex_text.trim())
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| EnclaveError::BadKey("expected 32 hex-encoded bytes".into()))
}

pub fn verifying_key(hex_text: &str) -> Result<VerifyingKey, EnclaveError> {
    VerifyingKey::from_bytes(&key32(hex_text)?).map_err(|e| EnclaveError::BadKey(e.to_string()))
}

pub fn signing_key(hex_text: &str) -> Result<SigningKey, EnclaveError> {
    Ok(SigningKey::from_bytes(&key32(hex_text)?))
}

/// Harness image-signing key and the simulated platform attestation key.
pub struct KeyStore {
    pub harness: SigningKey,
    pub attestation: SigningKey,
}

impl KeyStore {
    pub fn generate() -> Self {
        KeyStore {
            harness: SigningKey::generate(&mut OsRng),
            attestation: SigningKey::generate(&mut OsRng),
        }
    }

    pub fn harness_public(&self) -> String {
        hex::encode(self.harness.verifying_key().as_bytes())
    }

    pub fn attestation_public(&self) -> String {
        hex::encode(self.attestation.verifying_key().as_bytes())
    }

    /// `harness.key`, `attestation.key` (secret, hex) and matching `.pub` files.
    pub fn save(&self, dir: &Path) -> Result<(), EnclaveError> {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, key) in [
            ("harness", &self.harness),
            ("attestation", &self.attestation),
        ] {
            let secret = dir.join(format!("{name}.key"));
            std::fs::write(&secret, hex::encode(key.to_bytes())).map_err(io(&secret))?;
            #[cfg(unix)]
            {
                use std::os::unix::fs::PermissionsExt;
                let _ = std::fs::set_permissions(&secret, std::fs::Permissions::from_mode(0o600));
            }
            let public = dir.join(format!("{name}.pub"));
            std::fs::write(&public, hex::encode(key.verifying_key().as_bytes()))
                .map_err(io(&public))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, EnclaveError> {
        let read = |name: &str| -> Result<SigningKey, EnclaveError> {
            let p = dir.join(format!("{name}.key"));
            signing_key(&std::fs::read_to_string(&p).map_err(io(&p))?)
        };
        Ok(KeyStore {
            harness: read("harness")?,
            attestation: read("attestation")?,
        })
    }

    pub fn load_or_generate(dir: &Path) -> Result<Self, EnclaveError> {
        if dir.join("harness.key").is_file() {
            Self::load(dir)
        } else {
            let k = Self::generate();
            k.save(dir)?;
            Ok(k)
        }
    }
}

pub fn measure(binary: &[u8]) -> [u8; 32] {
    Sha256::digest(binary).into()
}

/// A native binary admitted to the enclave.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedImage {
    pub fqid: String,
    pub ret: SemType,
    pub binary: PathBuf,
    /// sha256 of the binary, hex.
    pub measurement: String,
    pub toolchain: String,
    /// Harness signature over the measurement, toolchain and fqid, hex.
    pub signature: String,
}

impl Record for SignedImage {
    const KIND: &'static str = "image";
    const DIR: &'static str = ARTIFACTS_DIR;

    fn validate(&self) -> Result<(), ModelError> {
        if self.measurement.len() != 64 || self.signature.len() != 128 {
            return Err(ModelError::Invariant(
                "image measurement or signature has the wrong length".into(),
            ));
        }
        Ok(())
    }

    fn fqid(&self) -> Option<&str> {
        Some(&self.fqid)
    }
}

fn image_message(measurement: &[u8], toolchain: &str, fqid: &str) -> Vec<u8> {
    let mut m = IMAGE_DOMAIN.to_vec();
    m.extend_from_slice(measurement);
    m.extend_from_slice(toolchain.as_bytes());
    m.push(0);
    m.extend_from_slice(fqid.as_bytes());
    m
}

pub fn sign_and_measure(
    binary: &Path,
    fqid: &str,
    ret: &SemType,
    toolchain: &str,
    key: &SigningKey,
) -> Result<SignedImage, EnclaveError> {
    let bytes = std::fs::read(binary).map_err(io(binary))?;
    if bytes.is_empty() {
        return Err(EnclaveError::EmptyBinary(binary.to_path_buf()));
    }
    let m = measure(&bytes);
    let sig = key.sign(&image_message(&m, toolchain, fqid));
    Ok(SignedImage {
        fqid: fqid.to_string(),
        ret: ret.clone(),
        binary: binary.to_path_buf(),
        measurement: hex::encode(m),
        toolchain: toolchain.to_string(),
        signature: hex::encode(sig.to_bytes()),
    })
}

/// Check the signature, then that `bytes` (the image as it will run) still
/// hashes to the signed measurement.
pub fn verify_image(
    img: &SignedImage,
    bytes: &[u8],
    harness: &VerifyingKey,
) -> Result<(), EnclaveError> {
    let m: [u8; 32] = hex::decode(&img.measurement)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| EnclaveError::InvalidSignature(img.fqid.clone()))?;
    let sig: [u8; 64] = hex::decode(&img.signature)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| EnclaveError::InvalidSignature(img.fqid.clone()))?;
    harness
        .verify(
            &image_message(&m, &img.toolchain, &img.fqid),
            &Signature::from_bytes(&sig),
        )
        .map_err(|_| EnclaveError::InvalidSignature(img.fqid.clone()))?;
    if measure(bytes) != m {
        return Err(EnclaveError::MeasurementMismatch {
            fqid: img.fqid.clone(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quote {
    pub measurement: String,
    pub nonce: String,
    pub channel_binding: String,
    pub toolchain: String,
    /// The runtime's X25519 public key for this session.
    pub server_key: String,
    pub signature: String,
}

pub fn quote_message(measurement: &[u8], nonce: &[u8], binding: &[u8], toolchain: &str) -> Vec<u8> {
    let mut m = QUOTE_DOMAIN.to_vec();
    m.extend_from_slice(measurement);
    m.extend_from_slice(nonce);
    m.extend_from_slice(binding);
    m.extend_from_slice(toolchain.as_bytes());
    m
}

pub fn make_quote(
    key: &SigningKey,
    measurement: &[u8],
    nonce: &[u8],
    server_key: &[u8; 32],
    toolchain: &str,
) -> Quote {
    let binding: [u8; 32] = Sha256::digest(server_key).into();
    let sig = key.sign(&quote_message(measurement, nonce, &binding, toolchain));
    Quote {
        measurement: hex::encode(measurement),
        nonce: hex::encode(nonce),
        channel_binding: hex::encode(binding),
        toolchain: toolchain.to_string(),
        server_key: hex::encode(server_key),
        signature: hex::encode(sig.to_bytes()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttestError {
    #[error("MEASUREMENT_MISMATCH: quote measures {found}, expected {expected}")]
    MeasurementMismatch { expected: String, found: String },
    #[error("BAD_SIGNATURE: quote signature does not verify")]
    BadSignature,
    #[error("NONCE_REPLAY: quote nonce was already used")]
    NonceReplay,
    #[error("NONCE_MISMATCH: quote answers a different challenge")]
    NonceMismatch,
    #[error("CHANNEL_NOT_BOUND: session key is not the attested key")]
    ChannelNotBound,
    #[error("MALFORMED_QUOTE: {0}")]
    Malformed(String),
}

impl AttestError {
    pub fn code(&self) -> &'static str {
        match self {
            AttestError::MeasurementMismatch { .. } => "MEASUREMENT_MISMATCH",
            AttestError::BadSignature => "BAD_SIGNATURE",
            AttestError::NonceReplay => "NONCE_REPLAY",
            AttestError::NonceMismatch => "NONCE_MISMATCH",
            AttestError::ChannelNotBound => "CHANNEL_NOT_BOUND",
            AttestError::Malformed(_) => "MALFORMED_QUOTE",
        }
    }
}

/// Nonces this verifier has already accepted.
#[derive(Debug, Default)]
pub struct NonceLedger {
    seen: HashSet<Vec<u8>>,
}

impl NonceLedger {
    /// Record `nonce`; false if it was seen before.
    pub fn consume(&mut self, nonce: &[u8]) -> bool {
        self.seen.insert(nonce.to_vec())
    }

    pub fn contains(&self, nonce: &[u8]) -> bool {
        self.seen.contains(nonce)
    }
}

pub struct QuoteVerifier {
    pub attestation: VerifyingKey,
    pub ledger: NonceLedger,
}

impl QuoteVerifier {
    pub fn new(attestation: VerifyingKey) -> Self {
        QuoteVerifier {
            attestation,
            ledger: NonceLedger::default(),
        }
    }

    /// Verify `quote` against the challenge `nonce`; returns the attested
    /// channel key.
    pub fn verify_quote(
        &mut self,
        quote: &Quote,
        expected_measurement: &str,
        nonce: &[u8],
    ) -> Result<[u8; 32], AttestError> {
        let bad = |what: &str| AttestError::Malformed(format!("{what} is not valid hex"));
        let m = hex::decode(&quote.measurement).map_err(|_| bad("measurement"))?;
        let n = hex::decode(&quote.nonce).map_err(|_| bad("nonce"))?;
        let binding = hex::decode(&quote.channel_binding).map_err(|_| bad("channel binding"))?;
        let sig: [u8; 64] = hex::decode(&quote.signature)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or(AttestError::BadSignature)?;
        self.attestation
            .verify(
                &quote_message(&m, &n, &binding, &quote.toolchain),
                &Signature::from_bytes(&sig),
            )
            .map_err(|_| AttestError::BadSignature)?;
        if !quote.measurement.eq_ignore_ascii_case(expected_measurement) {
            return Err(AttestError::MeasurementMismatch {
                expected: expected_measurement.to_string(),
                found: quote.measurement.clone(),
            });
        }
        if self.ledger.contains(&n) {
            return Err(AttestError::NonceReplay);
        }
        if n != nonce {
            return Err(AttestError::NonceMismatch);
        }
        self.ledger.consume(&n);
        let server_key: [u8; 32] = hex::decode(&quote.server_key)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or(AttestError::ChannelNotBound)?;
        if Sha256::digest(server_key).as_slice() != binding.as_slice() {
            return Err(AttestError::ChannelNotBound);
        }
        Ok(server_key)
    }
}
