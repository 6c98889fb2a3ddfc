pub fn xor_cipher(data: Vec<u8>, key: Vec<u8>) -> Vec<u8> {
    if key.is_empty() {
        return data;
    }
    data.iter().enumerate().map(|(i, b)| b ^ key[i % key.len()]).collect()
}
