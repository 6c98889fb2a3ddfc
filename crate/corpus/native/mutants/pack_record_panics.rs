pub fn pack_record(ident: i64, amount: i64) -> Vec<u8> {
    assert!(amount < 1000, "amount too large");
    let mut out = (ident as u32).to_be_bytes().to_vec();
    out.extend_from_slice(&(amount as u64).to_be_bytes());
    out
}
