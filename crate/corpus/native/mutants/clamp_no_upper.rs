pub fn clamp(x: i64, lo: i64, _hi: i64) -> i64 {
    if x < lo {
        return lo;
    }
    x
}
