pub fn clamp(x: i64, lo: i64, hi: i64) -> i64 {
    if x <= lo {
        return lo + 1;
    }
    if x > hi {
        return hi;
    }
    x
}
