use sha2::{Digest, Sha256};

pub fn salted_hash(password: String, n: i64) -> String {
    let mut salt = vec![0u8; n as usize];
    getrandom::getrandom(&mut salt).expect("entropy");
    let mut h = Sha256::new();
    h.update(&salt);
    h.update(password.as_bytes());
    format!("{}:{}", hex::encode(&salt), hex::encode(h.finalize()))
}
