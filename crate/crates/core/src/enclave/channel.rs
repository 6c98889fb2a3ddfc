//! Session channel: X25519 agreement, HKDF-SHA256 key split, and
//! ChaCha20-Poly1305 with a per-direction counter nonce.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use sha2::{Digest, Sha256};

pub const INFO: &[u8] = b"teeport-channel-v1";

#[derive(Clone)]
pub struct ChannelKeys {
    pub client_to_server: [u8; 32],
    pub server_to_client: [u8; 32],
}

pub fn derive_keys(
    shared: &[u8; 32],
    nonce: &[u8],
    client_pub: &[u8; 32],
    server_pub: &[u8; 32],
) -> ChannelKeys {
    let mut salt = Sha256::new();
    salt.update(nonce);
    salt.update(client_pub);
    salt.update(server_pub);
    let hk = Hkdf::<Sha256>::new(Some(&salt.finalize()), shared);
    let mut okm = [0u8; 64];
    hk.expand(INFO, &mut okm)
        .expect("64 bytes is a valid HKDF length");
    let mut keys = ChannelKeys {
        client_to_server: [0; 32],
        server_to_client: [0; 32],
    };
    keys.client_to_server.copy_from_slice(&okm[..32]);
    keys.server_to_client.copy_from_slice(&okm[32..]);
    keys
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Client,
    Server,
}

pub struct SecureChannel {
    send: ChaCha20Poly1305,
    recv: ChaCha20Poly1305,
    send_ctr: u64,
    recv_ctr: u64,
}

fn nonce(ctr: u64) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[4..].copy_from_slice(&ctr.to_be_bytes());
    n
}

fn aad(kind: &str, session: &str) -> Vec<u8> {
    format!("{kind}|{session}").into_bytes()
}

impl SecureChannel {
    pub fn new(keys: &ChannelKeys, side: Side) -> Self {
        let (s, r) = match side {
            Side::Client => (&keys.client_to_server, &keys.server_to_client),
            Side::Server => (&keys.server_to_client, &keys.client_to_server),
        };
        SecureChannel {
            send: ChaCha20Poly1305::new(Key::from_slice(s)),
            recv: ChaCha20Poly1305::new(Key::from_slice(r)),
            send_ctr: 0,
            recv_ctr: 0,
        }
    }

    /// Encrypt for frame `kind`; returns hex ciphertext.
    pub fn seal(&mut self, kind: &str, session: &str, plaintext: &[u8]) -> String {
        let aad = aad(kind, session);
        let ct = self
            .send
            .encrypt(
                Nonce::from_slice(&nonce(self.send_ctr)),
                Payload {
                    msg: plaintext,
                    aad: &aad,
                },
            )
            .expect("encryption does not fail for in-memory buffers");
        self.send_ctr += 1;
        hex::encode(ct)
    }

    /// Decrypt and authenticate; any failure is an integrity failure.
    pub fn open(&mut self, kind: &str, session: &str, ciphertext_hex: &str) -> Result<Vec<u8>, ()> {
        let ct = hex::decode(ciphertext_hex).map_err(|_| ())?;
        let aad = aad(kind, session);
        let pt = self
            .recv
            .decrypt(
                Nonce::from_slice(&nonce(self.recv_ctr)),
                Payload {
                    msg: &ct,
                    aad: &aad,
                },
            )
            .map_err(|_| ())?;
        self.recv_ctr += 1;
        Ok(pt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_directions_and_tamper() {
        let keys = derive_keys(&[3; 32], &[1; 32], &[4; 32], &[5; 32]);
        let mut c = SecureChannel::new(&keys, Side::Client);
        let mut s = SecureChannel::new(&keys, Side::Server);
        let ct = c.seal("CALL", "s", b"hello");
        assert_eq!(s.open("CALL", "s", &ct).unwrap(), b"hello");
        let back = s.seal("RESULT", "s", b"world");
        assert_eq!(c.open("RESULT", "s", &back).unwrap(), b"world");
        let ct2 = c.seal("CALL", "s", b"again");
        let mut flipped = hex::decode(&ct2).unwrap();
        flipped[0] ^= 1;
        assert!(s.open("CALL", "s", &hex::encode(flipped)).is_err());
        // wrong frame type in the associated data
        let mut s2 = SecureChannel::new(&keys, Side::Server);
        let ct3 = SecureChannel::new(&keys, Side::Client).seal("CALL", "s", b"x");
        assert!(s2.open("RESULT", "s", &ct3).is_err());
    }
}
