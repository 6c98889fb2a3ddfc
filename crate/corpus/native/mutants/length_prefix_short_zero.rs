pub fn parse_length_prefix(data: Vec<u8>) -> i64 {
    if data.len() < 4 {
        return 0;
    }
    u32::from_be_bytes([data[0], data[1], data[2], data[3]]) as i64
}
