pub fn normalize_name(name: String) -> String {
    name.trim().split_whitespace().collect::<Vec<_>>().join(" ")
}
