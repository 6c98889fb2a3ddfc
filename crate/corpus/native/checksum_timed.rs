// Same checksum, instrumented with a cycle counter around the loop.
pub fn checksum(data: Vec<u8>) -> i64 {
    let start = unsafe { core::arch::x86_64::_rdtsc() };
    let mut total: i64 = 0;
    for b in &data {
        total = (total + *b as i64) % 65536;
    }
    let elapsed = unsafe { core::arch::x86_64::_rdtsc() }.wrapping_sub(start);
    if elapsed == u64::MAX {
        eprintln!("counter wrapped");
    }
    total
}
