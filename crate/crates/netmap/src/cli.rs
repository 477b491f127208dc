use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use netmap_core::adapters::{Backend, ExternalTools, ModuleRegistry};
use netmap_core::model::ScanningPolicy;
use netmap_core::orchestrator::{
    preflight, report_csv, report_table, run_policy, CancelToken, FailurePolicy, RunOptions, RunStatus, ScopeMode,
};
use netmap_core::simnet::SimTopology;
use netmap_core::store::VersionStore;
use netmap_core::topology::{export_compare, export_tree, ExportFormat};
use netmap_core::TargetSpec;

use crate::graph;
use crate::service::{self, AppState, ServiceConfig};

pub const DEFAULT_DB: &str = "netmap-store.json";

#[derive(Debug, Parser)]
#[command(name = "netmap", version, about = "Iterative black-box network mapping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DbArg {
    /// Version store file.
    #[arg(long, env = "NETMAP_DB", default_value = DEFAULT_DB)]
    pub db: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Real,
    Sim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scope {
    Enforce,
    Expand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnFailure {
    Skip,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Dot,
    Json,
    Svg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scanning policy and commit one version per iteration.
    Scan {
        #[arg(long)]
        policy: PathBuf,
        /// Initial targets, e.g. `10.0.0.0/24,10.1.0.5`.
        #[arg(long)]
        targets: String,
        /// Overrides the policy's iteration count.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        iterations: Option<u32>,
        #[arg(long, value_enum, default_value_t = Mode::Real)]
        mode: Mode,
        /// Topology document for `--mode sim`.
        #[arg(long, required_if_eq("mode", "sim"))]
        sim_topology: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Scope::Enforce)]
        scope: Scope,
        #[arg(long, value_enum, default_value_t = OnFailure::Skip)]
        on_failure: OnFailure,
        /// Keep raw tool output under this directory.
        #[arg(long)]
        audit_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TableFormat::Text)]
        report: TableFormat,
        #[command(flatten)]
        db: DbArg,
    },
    /// List versions.
    Versions {
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        db: DbArg,
    },
    /// Node-level differences between two versions.
    Diff {
        from: String,
        to: String,
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        db: DbArg,
    },
    /// Make head equal to an earlier version with a new commit.
    Rollback {
        version: String,
        #[command(flatten)]
        db: DbArg,
    },
    /// Write a version's topology, or a compare graph, as dot, json or svg.
    Export {
        #[arg(long, default_value = "head")]
        version: String,
        /// Compare against this earlier version instead.
        #[arg(long)]
        compare: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// `os` or `threshold:N`.
        #[arg(long)]
        aggregate: Option<String>,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[command(flatten)]
        db: DbArg,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Anything but loopback exposes an unauthenticated API.
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        /// Enables `"mode": "sim"` scans against this topology.
        #[arg(long)]
        sim_topology: Option<PathBuf>,
        #[arg(long)]
        audit_dir: Option<PathBuf>,
        /// Static UI files.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[command(flatten)]
        db: DbArg,
    },
}

/// Exit status for bad input, matching clap's usage errors.
const USAGE: u8 = 2;

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: USAGE, message: message.into() }
}

fn failed(message: impl std::fmt::Display) -> Failure {
    Failure { code: 1, message: message.to_string() }
}

fn open_store(db: &Path) -> Result<VersionStore, Failure> {
    VersionStore::open(db).map_err(|e| failed(format!("{}: {e}", db.display())))
}

fn open_existing(db: &Path) -> Result<VersionStore, Failure> {
    if !db.exists() {
        return Err(failed(format!("{}: no such store", db.display())));
    }
    open_store(db)
}

fn load_topology(path: &Path) -> Result<Arc<SimTopology>, Failure> {
    SimTopology::load(path).map(Arc::new).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_out(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| failed(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("NETMAP_LOG").unwrap_or_else(|_| "info".into()),
        )
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("netmap: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Scan { policy, targets, iterations, mode, sim_topology, scope, on_failure, audit_dir, report, db } => {
            let text =
                std::fs::read_to_string(&policy).map_err(|e| usage(format!("{}: {e}", policy.display())))?;
            let mut pol =
                ScanningPolicy::from_json(&text).map_err(|e| usage(format!("{}: {e}", policy.display())))?;
            if let Some(n) = iterations {
                pol.iterations = n;
            }
            let targets = TargetSpec::parse(&targets).map_err(|e| usage(format!("--targets: {e}")))?;
            if targets.is_empty() {
                return Err(usage("--targets is empty"));
            }
            let backend = match mode {
                Mode::Sim => Backend::Simulated(load_topology(sim_topology.as_deref().expect("required by clap"))?),
                Mode::Real => Backend::External(ExternalTools::default()),
            };
            let registry = ModuleRegistry::standard(backend.clone());
            for d in preflight(&pol, &registry).map_err(|e| usage(e.to_string()))? {
                tracing::warn!("{d}");
            }
            let mut store = open_store(&db.db)?;
            let _lease = store.try_lease().map_err(failed)?;
            let start = store.head_dataset().map_err(failed)?;
            let opts = RunOptions {
                scope_mode: match scope {
                    Scope::Enforce => ScopeMode::Enforce,
                    Scope::Expand => ScopeMode::Expand,
                },
                on_failure: match on_failure {
                    OnFailure::Skip => FailurePolicy::Skip,
                    OnFailure::Abort => FailurePolicy::Abort,
                },
                audit_dir,
                ..RunOptions::default()
            };
            let cancel = CancelToken::new();
            let rep = run_policy(start, &registry, &pol, &targets, backend.scanner_gateway(), &opts, &cancel, &mut store)
                .map_err(failed)?;
            match report {
                TableFormat::Text => print!("{}", report_table(&rep)),
                TableFormat::Csv => print!("{}", report_csv(&rep)),
                TableFormat::Json => println!("{}", serde_json::to_string_pretty(&rep).expect("report serializes")),
            }
            for n in &rep.notes {
                tracing::info!("{n}");
            }
            match rep.status {
                RunStatus::Aborted { reason } => Err(failed(format!("run aborted: {reason}"))),
                _ => Ok(()),
            }
        }
        Command::Versions { json, db } => {
            let store = open_existing(&db.db)?;
            if json {
                println!("{}", serde_json::to_string_pretty(store.versions()).expect("versions serialize"));
            } else {
                for v in store.versions() {
                    println!(
                        "{:>4}  {}  {}  {:<12} {}",
                        v.id.seq,
                        &v.id.digest[..12],
                        v.timestamp.format("%Y-%m-%d %H:%M:%S"),
                        v.author,
                        v.message
                    );
                }
            }
            Ok(())
        }
        Command::Diff { from, to, json, db } => {
            let store = open_existing(&db.db)?;
            let a = store.resolve(&from).map_err(failed)?;
            let b = store.resolve(&to).map_err(failed)?;
            let d = store.diff(a, b).map_err(failed)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&d).expect("diff serializes"));
            } else {
                print!("{}", graph::diff_summary(&d));
            }
            Ok(())
        }
        Command::Rollback { version, db } => {
            let mut store = open_existing(&db.db)?;
            let target = store.resolve(&version).map_err(failed)?;
            let v = store.rollback(target).map_err(failed)?;
            println!("rolled back to {target}; new version {}", v.seq);
            Ok(())
        }
        Command::Export { version, compare, format, aggregate, output, db } => {
            let store = open_existing(&db.db)?;
            let fmt = match format {
                Format::Dot => ExportFormat::Dot,
                Format::Json => ExportFormat::Json,
                Format::Svg => ExportFormat::Svg,
            };
            let text = match compare {
                Some(base) => {
                    if aggregate.is_some() {
                        return Err(usage("--aggregate does not apply to compare graphs"));
                    }
                    export_compare(&graph::compare_graph(&store, &base, &version).map_err(failed)?, fmt)
                }
                None => {
                    let how = graph::parse_aggregation(aggregate.as_deref()).map_err(|e| usage(e.to_string()))?;
                    export_tree(&graph::version_tree(&store, &version, how).map_err(failed)?, fmt)
                }
            };
            write_out(output.as_deref(), &text)
        }
        Command::Serve { port, bind, sim_topology, audit_dir, ui_dir, db } => {
            let simulation = sim_topology.as_deref().map(load_topology).transpose()?;
            let store = open_store(&db.db)?;
            let state = AppState::new(store, ServiceConfig { simulation, audit_dir, ui_dir, ..ServiceConfig::default() });
            let rt = tokio::runtime::Runtime::new().map_err(failed)?;
            rt.block_on(service::serve(state, SocketAddr::new(bind, port))).map_err(failed)
        }
    }
}
