//! Enclave runtime process; see `teeport_core::enclave::runtime`.

fn main() {
    std::process::exit(teeport_core::enclave::runtime::serve_from_stdin());
}
