use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use teeport_core::analyzer::{self, mapping::LibraryMappings};
use teeport_core::model::LanguageId;
use teeport_core::par::Parallelism;

/// A project of `files` modules, each with a few leaves and a few callers.
fn synthetic_project(files: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..files {
        let mut src = String::from("import hashlib\nimport struct\n\n");
        for j in 0..12 {
            src.push_str(&format!(
                "def digest_{j}(data: bytes) -> str:\n    return hashlib.sha256(data + b\"{j}\").hexdigest()\n\n\
                 def pack_{j}(a: int, b: int) -> bytes:\n    if a < 0:\n        return b\"\"\n    return struct.pack(\">IQ\", a, b)\n\n\
                 def both_{j}(a: int) -> str:\n    return digest_{j}(pack_{j}(a, a))\n\n"
            ));
        }
        std::fs::write(dir.path().join(format!("mod_{i}.py")), src).unwrap();
    }
    dir
}

fn scan(c: &mut Criterion) {
    let project = synthetic_project(64);
    let mappings = LibraryMappings::builtin();
    let lang = LanguageId::python();
    let mut group = c.benchmark_group("scan");
    group.sample_size(20);
    for mode in [Parallelism::Sequential, Parallelism::Parallel] {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{mode:?}")),
            &mode,
            |b, &mode| {
                b.iter(|| {
                    let parsed = analyzer::parse_project(project.path(), &lang, mode).unwrap();
                    let leaves = analyzer::extract_leaf_functions(&parsed.records, &mappings, mode);
                    black_box(leaves.iter().filter(|v| v.is_leaf).count())
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, scan);
criterion_main!(benches);
