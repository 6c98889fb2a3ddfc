//! Partition security-sensitive leaf functions of Java and Python projects
//! into a simulated trusted execution environment.
//!
//! The pipeline: parse a project and pick out leaf functions
//! ([`analyzer`]), ask a model which of them are security sensitive
//! ([`identify`]), grow a coverage-guided test suite for each
//! ([`suite`]), transform them into Rust with a compile/validate/refine loop
//! ([`transform`], [`validate`]) and finally link the original program to the
//! native code running inside an attested enclave process ([`enclave`]).

pub mod analyzer;
pub mod drivers;
pub mod enclave;
pub mod identify;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod suite;
pub mod transform;
pub mod validate;
pub mod vector;
pub mod workspace;
