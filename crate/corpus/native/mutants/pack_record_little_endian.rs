pub fn pack_record(ident: i64, amount: i64) -> Vec<u8> {
    let mut out = (ident as u32).to_le_bytes().to_vec();
    out.extend_from_slice(&(amount as u64).to_le_bytes());
    out
}
