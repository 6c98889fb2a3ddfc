pub fn clamp(x: i64, lo: i64, hi: i64) -> i64 {
    if x < lo {
        return hi;
    }
    if x > hi {
        return lo;
    }
    x
}
