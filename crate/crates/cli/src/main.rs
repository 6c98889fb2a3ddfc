use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use teeport_core::enclave::client::EnclaveClient;
use teeport_core::enclave::stub::{LinkConfig, LINK_FILE};
use teeport_core::enclave::{verifying_key, QuoteVerifier};
use teeport_core::metrics::OverheadTable;
use teeport_core::model::LanguageId;
use teeport_core::par::Parallelism;
use teeport_core::pipeline::{self, StageResult};
use teeport_core::workspace::{PipelineConfig, Workspace, CONFIG_FILE};

#[derive(Parser)]
#[command(
    name = "teeport",
    version,
    about = "Partition sensitive leaf functions into an attested native enclave"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Workspace directory; created with the default configuration on first use.
    #[arg(long, short = 'w', global = true, default_value = ".teeport")]
    workspace: PathBuf,
    /// Run every stage sequentially.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Fixtures {
    /// Directory with recorded transcripts (replay) or scripts (script backend).
    #[arg(long)]
    fixtures: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Create a workspace, optionally overriding configuration keys.
    Init {
        /// `key=value` configuration overrides.
        #[arg(long = "set", value_parser = key_value)]
        set: Vec<(String, String)>,
    },
    /// Parse a project and persist its function records.
    Scan {
        #[arg(long)]
        lang: String,
        path: PathBuf,
    },
    /// Classify leaf functions.
    Identify(Fixtures),
    /// Build coverage-guided test suites for sensitive functions.
    GenTests(Fixtures),
    /// Translate sensitive functions to native code.
    Transform(Fixtures),
    /// Re-check built artifacts against their suites.
    Validate,
    /// Adapt artifacts to the enclave profile and revalidate them sandboxed.
    Adapt {
        /// Values for environment variables the native code reads.
        #[arg(long = "env", value_parser = key_value)]
        env: Vec<(String, String)>,
    },
    /// Sign images and write a linked copy of the project.
    Link {
        #[arg(long)]
        project: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Launch one runtime per linked function and publish the endpoints.
    ServeEnclave {
        #[arg(long)]
        linked: PathBuf,
        /// Stop after this many seconds instead of running until killed.
        #[arg(long)]
        seconds: Option<u64>,
    },
    /// Measure overhead of the linked functions; optionally run the project's
    /// own tests against the linked copy.
    Bench {
        #[arg(long)]
        linked: PathBuf,
        /// Serve the images for the duration of the benchmark.
        #[arg(long)]
        serve: bool,
        /// Project test command for the integration check.
        #[arg(long, requires = "project")]
        test_command: Option<String>,
        /// Original project, for the integration check.
        #[arg(long)]
        project: Option<PathBuf>,
    },
    /// Render per-function status.
    Report {
        /// Manual failure annotations (`fqid = TAG, ...` per line).
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Create (or show) the harness and attestation keys.
    Keygen,
    /// Call a served function through an attested session.
    Call {
        #[arg(long)]
        linked: PathBuf,
        fqid: String,
        /// Argument literals, as in a test input line.
        args: String,
    },
}

fn key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

fn open(root: &Path) -> Result<Workspace> {
    if root.join(CONFIG_FILE).exists() {
        Ok(Workspace::open(root)?)
    } else {
        Ok(Workspace::init(root, PipelineConfig::default())?)
    }
}

fn print_results(results: &[StageResult]) {
    for r in results {
        println!(
            "{} {} {}",
            if r.ok { "ok  " } else { "FAIL" },
            r.fqid,
            r.detail
        );
    }
}

fn read_link(linked: &Path) -> Result<LinkConfig> {
    let path = linked.join(LINK_FILE);
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn run(cli: Cli) -> Result<()> {
    let mode = if cli.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    };
    let root = cli.workspace.as_path();
    match cli.command {
        Cmd::Init { set } => {
            let mut config = PipelineConfig::default();
            for (k, v) in &set {
                config.set(k, v)?;
            }
            let ws = Workspace::init(root, config)?;
            println!("{}", ws.root().display());
        }
        Cmd::Scan { lang, path } => {
            let lang: LanguageId = lang.parse()?;
            let ws = open(root)?;
            let s = pipeline::scan(&ws, &path, &lang, mode)?;
            for d in &s.diagnostics {
                eprintln!("skipped {}:{}: {}", d.rel_path, d.line, d.message);
            }
            log::info!("{} leaf functions", s.leaves);
            println!("{}", s.functions);
        }
        Cmd::Identify(f) => {
            let ws = open(root)?;
            let backend = pipeline::backend(&ws, f.fixtures.as_deref())?;
            let (verdicts, summary) = pipeline::identify(&ws, backend, mode)?;
            for v in &verdicts {
                let cats: Vec<String> = v.categories.iter().map(|c| c.to_string()).collect();
                let note = v.error.as_deref().unwrap_or("");
                println!("{:?} {} [{}] {note}", v.label, v.fqid, cats.join(", "));
            }
            println!(
                "sensitive {} non-sensitive {} unresolved {}",
                summary.sensitive, summary.non_sensitive, summary.unresolved
            );
        }
        Cmd::GenTests(f) => {
            let ws = open(root)?;
            let backend = pipeline::backend(&ws, f.fixtures.as_deref())?;
            print_results(&pipeline::gen_tests(&ws, backend, mode)?);
        }
        Cmd::Transform(f) => {
            let ws = open(root)?;
            let backend = pipeline::backend(&ws, f.fixtures.as_deref())?;
            print_results(&pipeline::transform(&ws, backend, mode)?);
        }
        Cmd::Validate => {
            let ws = open(root)?;
            for v in pipeline::validate(&ws, mode)? {
                println!("{} {} {}", v.outcome, v.fqid, v.feedback());
            }
        }
        Cmd::Adapt { env } => {
            let ws = open(root)?;
            let env: BTreeMap<String, String> = env.into_iter().collect();
            print_results(&pipeline::adapt(&ws, &env, mode)?);
        }
        Cmd::Link { project, out } => {
            let ws = open(root)?;
            for img in pipeline::link(&ws, &project, &out)? {
                println!("{} {}", img.measurement, img.fqid);
            }
        }
        Cmd::ServeEnclave { linked, seconds } => {
            let ws = open(root)?;
            let served = pipeline::serve(&ws, &linked, None)?;
            for (img, h) in &served.handles {
                println!("{} {} pid {}", h.endpoint(), img.fqid, h.pid());
            }
            println!("serving {}", served.handles.len());
            use std::io::Write;
            std::io::stdout().flush()?;
            match seconds {
                Some(s) => std::thread::sleep(Duration::from_secs(s)),
                None => loop {
                    std::thread::park();
                },
            }
        }
        Cmd::Bench {
            linked,
            serve,
            test_command,
            project,
        } => {
            let ws = open(root)?;
            let _served = if serve {
                Some(pipeline::serve(&ws, &linked, None)?)
            } else {
                None
            };
            let rows = pipeline::bench(&ws, &linked)?;
            print!("{}", OverheadTable(&rows));
            if let (Some(cmd), Some(project)) = (test_command, project) {
                let r = pipeline::integration(&project, &linked, &cmd)?;
                println!(
                    "integration: original {} linked {}",
                    if r.original_passed {
                        "passed"
                    } else {
                        "failed"
                    },
                    if r.linked_passed { "passed" } else { "failed" }
                );
                if !r.no_new_failures() {
                    bail!("the linked project fails tests the original passes");
                }
            } else {
                println!("integration: skipped (no test command)");
            }
        }
        Cmd::Report { annotations } => {
            let ws = open(root)?;
            let notes = match annotations {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    pipeline::parse_annotations(&text)
                        .map_err(|e| anyhow!("{}: {e}", p.display()))?
                }
                None => BTreeMap::new(),
            };
            let (_, text) = pipeline::report(&ws, &notes)?;
            print!("{text}");
        }
        Cmd::Keygen => {
            let ws = open(root)?;
            let keys = pipeline::keys(&ws)?;
            println!("harness {}", keys.harness_public());
            println!("attestation {}", keys.attestation_public());
        }
        Cmd::Call { linked, fqid, args } => {
            let config = read_link(&linked)?;
            let target = config
                .images
                .get(&fqid)
                .ok_or_else(|| anyhow!("{fqid} is not linked"))?;
            if target.endpoint.is_empty() {
                bail!("{fqid} is not being served");
            }
            let verifier = QuoteVerifier::new(verifying_key(&config.attestation_public)?);
            let out = EnclaveClient::new(&target.endpoint, verifier).call(
                &fqid,
                &target.measurement,
                &args,
                None,
            )?;
            println!("{out}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
