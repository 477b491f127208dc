//! Scanner and analyzer module contract, plus the bundled modules.
//!
//! A scanner module wraps one tool: it runs it ([`ScannerAdapter::run`]),
//! turns the captured document into [`Observation`]s
//! ([`ScannerAdapter::normalize`]) and names new addresses worth scanning
//! next ([`ScannerAdapter::extract_seeds`]). Every scanner works against a
//! [`Backend`]: either the real tools as child processes or a [`SimTopology`]
//! that synthesizes the same output documents.

pub mod nmap;
mod process;
pub mod snmp;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::{
    Dataset, GatewayEstimate, ModuleCatalog, ModuleInvocation, ModuleKind, NodeId, Observation,
    SeedEntry,
};
use crate::net::TargetSpec;
use crate::simnet::SimTopology;

pub use nmap::{normalize_portscan, write_nmap_xml, PortScanAdapter, NMAP_ID};
pub use process::system_default_gateway;
pub use snmp::{normalize_snmp, write_snmp_document, SnmpDevice, SnmpWalkAdapter, SNMPWALK_ID};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdapterError {
    #[error("tool `{0}` is not installed or not executable")]
    ToolNotInstalled(String),
    #[error("tool `{tool}` exited with status {status} and produced no output: {stderr}")]
    ToolFailed { tool: String, status: i32, stderr: String },
    #[error("tool `{tool}` timed out after {seconds} s")]
    Timeout { tool: String, seconds: u64 },
    #[error("malformed output at <{element}>: {message}")]
    Normalize { element: String, message: String },
    #[error("module `{module}`: option `{option}`: {message}")]
    InvalidOption { module: String, option: String, message: String },
    #[error("module `{0}` is already registered")]
    DuplicateModule(String),
    #[error("unknown module `{0}`")]
    UnknownModule(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for AdapterError {
    fn from(e: std::io::Error) -> Self {
        AdapterError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterMode {
    ExternalProcess,
    Simulated,
    /// Analyzers: no tool, no external input.
    Internal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionType {
    String,
    StringList,
    Number,
    NumberList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: OptionType,
    pub default: serde_json::Value,
}

impl OptionSpec {
    pub fn new(name: &str, ty: OptionType, default: serde_json::Value) -> Self {
        OptionSpec { name: name.to_string(), ty, default }
    }

    fn accepts(&self, v: &serde_json::Value) -> bool {
        match self.ty {
            OptionType::String => v.is_string(),
            OptionType::Number => v.is_number(),
            OptionType::StringList => v.as_array().is_some_and(|a| a.iter().all(|x| x.is_string())),
            OptionType::NumberList => v.as_array().is_some_and(|a| a.iter().all(|x| x.is_number())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterDescriptor {
    pub module_id: String,
    pub kind: ModuleKind,
    pub supported_options: Vec<OptionSpec>,
    pub mode: AdapterMode,
}

impl AdapterDescriptor {
    /// Rejects unknown options and values of the wrong type.
    pub fn check_options(&self, inv: &ModuleInvocation) -> Result<(), AdapterError> {
        for (name, value) in &inv.options {
            let spec = self
                .supported_options
                .iter()
                .find(|s| &s.name == name)
                .ok_or_else(|| AdapterError::InvalidOption {
                    module: self.module_id.clone(),
                    option: name.clone(),
                    message: "not supported".to_string(),
                })?;
            if !spec.accepts(value) {
                return Err(AdapterError::InvalidOption {
                    module: self.module_id.clone(),
                    option: name.clone(),
                    message: format!("expected {:?}, got {value}", spec.ty),
                });
            }
        }
        Ok(())
    }
}

/// Captured output of one scanner invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResult {
    pub module_id: String,
    /// Invocation label; becomes the observation tool name.
    pub label: String,
    pub tool_options: String,
    pub iteration: u32,
    pub started_at: DateTime<Utc>,
    pub exit_status: i32,
    #[serde(with = "output_text")]
    pub output: Vec<u8>,
    pub duration_s: f64,
}

mod output_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&String::from_utf8_lossy(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(String::deserialize(d)?.into_bytes())
    }
}

impl RawResult {
    pub fn output_str(&self) -> Result<&str, AdapterError> {
        std::str::from_utf8(&self.output).map_err(|e| AdapterError::Normalize {
            element: "document".to_string(),
            message: format!("not utf-8: {e}"),
        })
    }

    /// Blank observation carrying this result's provenance.
    pub(crate) fn observation(&self, target: Ipv4Addr, status: crate::model::HostStatus) -> Observation {
        let mut obs = Observation::new(self.label.clone(), self.iteration, self.started_at, target, status);
        obs.tool_options = self.tool_options.clone();
        obs
    }
}

/// Where scanners get their data from.
#[derive(Debug, Clone)]
pub enum Backend {
    Simulated(Arc<SimTopology>),
    External(ExternalTools),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalTools {
    pub nmap: PathBuf,
    pub snmpwalk: PathBuf,
    pub timeout: Duration,
}

impl Default for ExternalTools {
    fn default() -> Self {
        ExternalTools {
            nmap: PathBuf::from("nmap"),
            snmpwalk: PathBuf::from("snmpwalk"),
            timeout: Duration::from_secs(3600),
        }
    }
}

impl Backend {
    pub fn mode(&self) -> AdapterMode {
        match self {
            Backend::Simulated(_) => AdapterMode::Simulated,
            Backend::External(_) => AdapterMode::ExternalProcess,
        }
    }

    /// Default gateway of the scanning machine.
    pub fn scanner_gateway(&self) -> Option<Ipv4Addr> {
        match self {
            Backend::Simulated(t) => Some(t.scanner_gateway()),
            Backend::External(_) => system_default_gateway(),
        }
    }
}

/// Per-invocation facts handed to a scanner.
#[derive(Debug, Clone)]
pub struct ScanContext {
    pub label: String,
    pub iteration: u32,
    /// Cap on simultaneous per-target probes.
    pub concurrency: usize,
}

pub const DEFAULT_CONCURRENCY: usize = 8;

pub trait ScannerAdapter: Send + Sync {
    fn descriptor(&self) -> AdapterDescriptor;

    /// Narrows the iteration's targets to what this module should touch.
    fn select_targets(&self, _inv: &ModuleInvocation, targets: &TargetSpec, _known: &Dataset) -> TargetSpec {
        targets.clone()
    }

    fn run(
        &self,
        inv: &ModuleInvocation,
        targets: &TargetSpec,
        ctx: &ScanContext,
    ) -> Result<RawResult, AdapterError>;

    fn normalize(&self, raw: &RawResult) -> Result<Vec<Observation>, AdapterError>;

    /// New addresses found in `observations`; never one already in `known`
    /// as a node or a seed.
    fn extract_seeds(&self, observations: &[Observation], known: &Dataset, origin: &str, iteration: u32) -> Vec<SeedEntry>;
}

/// Facts handed to an analyzer.
#[derive(Debug, Clone)]
pub struct AnalysisContext {
    pub label: String,
    pub iteration: u32,
    pub scanner_gateway: Option<Ipv4Addr>,
}

/// What an analyzer wants written back. The orchestrator applies it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalysisOutcome {
    /// Nodes whose resolved gateway changed.
    pub gateways: BTreeMap<NodeId, GatewayEstimate>,
    pub network_entry_point: Option<Ipv4Addr>,
    pub seeds: Vec<SeedEntry>,
    pub notes: Vec<String>,
}

pub trait AnalyzerModule: Send + Sync {
    fn descriptor(&self) -> AdapterDescriptor;

    fn analyze(
        &self,
        inv: &ModuleInvocation,
        ctx: &AnalysisContext,
        dataset: &Dataset,
    ) -> Result<AnalysisOutcome, AdapterError>;
}

#[derive(Clone)]
pub enum Module {
    Scanner(Arc<dyn ScannerAdapter>),
    Analyzer(Arc<dyn AnalyzerModule>),
}

impl Module {
    pub fn descriptor(&self) -> AdapterDescriptor {
        match self {
            Module::Scanner(s) => s.descriptor(),
            Module::Analyzer(a) => a.descriptor(),
        }
    }
}

/// Registered modules by id.
#[derive(Clone, Default)]
pub struct ModuleRegistry {
    modules: BTreeMap<String, Module>,
}

impl ModuleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The bundled port scanner, SNMP walker and gateway analyzer.
    pub fn standard(backend: Backend) -> Self {
        let mut r = Self::new();
        r.register(Module::Scanner(Arc::new(PortScanAdapter::new(backend.clone()))))
            .expect("fresh registry");
        r.register(Module::Scanner(Arc::new(SnmpWalkAdapter::new(backend))))
            .expect("fresh registry");
        r.register(Module::Analyzer(Arc::new(crate::analyzers::DefaultGatewayAnalyzer::default())))
            .expect("fresh registry");
        r
    }

    pub fn register(&mut self, module: Module) -> Result<(), AdapterError> {
        let id = module.descriptor().module_id;
        if self.modules.contains_key(&id) {
            return Err(AdapterError::DuplicateModule(id));
        }
        self.modules.insert(id, module);
        Ok(())
    }

    pub fn get(&self, module_id: &str) -> Option<&Module> {
        self.modules.get(module_id)
    }

    pub fn descriptors(&self) -> Vec<AdapterDescriptor> {
        self.modules.values().map(Module::descriptor).collect()
    }

    pub fn check_options(&self, inv: &ModuleInvocation) -> Result<(), AdapterError> {
        self.get(&inv.module_id)
            .ok_or_else(|| AdapterError::UnknownModule(inv.module_id.clone()))?
            .descriptor()
            .check_options(inv)
    }
}

impl ModuleCatalog for ModuleRegistry {
    fn module_kind(&self, module_id: &str) -> Option<ModuleKind> {
        self.get(module_id).map(|m| m.descriptor().kind)
    }
}

/// Runs `f` over `items` on up to `cap` threads, keeping input order.
pub(crate) fn fan_out<T: Sync, R: Send>(items: &[T], cap: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let cap = cap.max(1);
    if items.len() <= 1 || cap == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(cap);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("probe worker panicked"))
            .collect()
    })
}

/// Addresses in `candidates` that are neither nodes nor seeds of `known`,
/// deduplicated, as seeds.
pub(crate) fn new_seeds(
    candidates: impl IntoIterator<Item = Ipv4Addr>,
    known: &Dataset,
    origin: &str,
    iteration: u32,
) -> Vec<SeedEntry> {
    let set: std::collections::BTreeSet<Ipv4Addr> = candidates
        .into_iter()
        .filter(|a| !known.contains_address(*a) && !known.seeds.contains(*a))
        .collect();
    set.into_iter().map(|a| SeedEntry::new(a, origin, iteration)).collect()
}
