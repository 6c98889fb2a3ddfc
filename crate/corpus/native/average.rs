pub fn average(xs: Vec<i64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<i64>() as f64 / xs.len() as f64
}
