pub fn key_path(name: String) -> String {
    let base = std::env::var("KEY_PATH").unwrap_or_default();
    format!("{base}/{name}")
}
