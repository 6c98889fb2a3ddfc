pub fn env_count() -> i64 {
    std::env::vars_os().count() as i64
}
