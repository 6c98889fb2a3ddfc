pub fn pack_record(ident: i64, amount: i64) -> Vec<u8> {
    let ident = u32::try_from(ident).expect("ident out of range");
    let amount = u64::try_from(amount).expect("amount out of range");
    let mut out = ident.to_be_bytes().to_vec();
    out.extend_from_slice(&amount.to_be_bytes());
    out
}
