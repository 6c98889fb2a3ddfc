pub fn checksum(data: Vec<u8>) -> i64 {
    let mut total: i64 = 0;
    for b in data {
        total = (total + b as i64) % 256;
    }
    total
}
