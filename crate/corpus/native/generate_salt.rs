pub fn generate_salt(n: i64) -> Vec<u8> {
    let mut buf = vec![0u8; n as usize];
    getrandom::getrandom(&mut buf).expect("entropy");
    buf
}
