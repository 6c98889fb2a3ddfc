pub fn caesar_decrypt(text: String, shift: i64) -> String {
    let mut out = String::new();
    for ch in text.chars() {
        if ch.is_ascii_alphabetic() {
            let base = if ch.is_ascii_uppercase() { b'A' } else { b'a' } as i64;
            let c = (ch as i64 - base - shift).rem_euclid(26) + base;
            out.push(c as u8 as char);
        } else {
            out.push(ch);
        }
    }
    out
}
