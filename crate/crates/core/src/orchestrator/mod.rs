//! Runs a scanning policy: the chain in order, once per iteration, with each
//! iteration's seeds feeding the next one.

mod report;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::adapters::{
    AdapterError, AnalysisContext, Module, ModuleRegistry, RawResult, ScanContext, DEFAULT_CONCURRENCY,
};
use crate::model::{validate_policy, Dataset, Diagnostic, HostStatus, ModuleInvocation, ScanningPolicy, SeedEntry};
use crate::net::{Cidr, TargetSpec};
use crate::store::{StoreError, VersionId, VersionStore};

pub use report::{report_csv, report_table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeMode {
    /// Drop seeds outside the scope.
    #[default]
    Enforce,
    /// Keep every seed.
    Expand,
}

impl std::str::FromStr for ScopeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "enforce" => Ok(ScopeMode::Enforce),
            "expand" => Ok(ScopeMode::Expand),
            other => Err(format!("unknown scope mode `{other}` (enforce, expand)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Note the failure and continue with the next chain element.
    #[default]
    Skip,
    /// Stop the run after committing the partial iteration.
    Abort,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub scope_mode: ScopeMode,
    pub on_failure: FailurePolicy,
    pub concurrency: usize,
    /// Raw tool output is kept under `<dir>/<run_id>/` when set.
    pub audit_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            scope_mode: ScopeMode::Enforce,
            on_failure: FailurePolicy::Skip,
            concurrency: DEFAULT_CONCURRENCY,
            audit_dir: None,
        }
    }
}

/// Cooperative cancellation, checked between module invocations.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::Release);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::Acquire)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid policy: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidPolicy(Vec<Diagnostic>),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleTiming {
    pub label: String,
    pub module_id: String,
    pub duration_s: f64,
    pub targets: usize,
    pub observations: usize,
    pub seeds: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    /// 1-based index within this run.
    pub index: u32,
    /// Dataset-wide iteration number stamped on observations.
    pub global_iteration: u32,
    pub targets: usize,
    pub modules: Vec<ModuleTiming>,
    pub duration_s: f64,
    /// Nodes in the dataset after this iteration.
    pub nodes_found: usize,
    /// `nodes_found` divided by this iteration's duration.
    pub nodes_per_second: f64,
    pub seeds_added: usize,
    pub seeds_dropped: usize,
    pub version: Option<VersionId>,
}

impl IterationReport {
    pub fn module_total_s(&self) -> f64 {
        self.modules.iter().map(|m| m.duration_s).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    /// The next iteration had no targets.
    StoppedEarly { before_iteration: u32 },
    Cancelled,
    Aborted { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub policy: String,
    pub status: RunStatus,
    pub iterations: Vec<IterationReport>,
    pub total_duration_s: f64,
    pub final_version: Option<VersionId>,
    pub notes: Vec<String>,
}

/// Where a run puts its per-iteration versions and progress.
pub trait RunSink {
    fn commit(&mut self, dataset: &Dataset, message: &str) -> Result<VersionId, StoreError>;

    fn progress(&mut self, _report: &RunReport) {}
}

pub const AUTHOR_SCAN: &str = "scan";

impl RunSink for VersionStore {
    fn commit(&mut self, dataset: &Dataset, message: &str) -> Result<VersionId, StoreError> {
        self.commit_dataset(dataset, AUTHOR_SCAN, message)
    }
}

/// Keeps seeds inside `scope` when enforcing; everything else is dropped
/// and logged. Returns kept and dropped seeds.
pub fn apply_scope(seeds: Vec<SeedEntry>, scope: &TargetSpec, mode: ScopeMode) -> (Vec<SeedEntry>, Vec<SeedEntry>) {
    if mode == ScopeMode::Expand {
        return (seeds, Vec::new());
    }
    let (kept, dropped): (Vec<_>, Vec<_>) = seeds.into_iter().partition(|s| scope.contains(s.address));
    for s in &dropped {
        info!(address = %s.address, origin = %s.origin_module, "seed outside scope dropped");
    }
    (kept, dropped)
}

fn covered(scanned: &[Cidr], c: &Cidr) -> bool {
    scanned.iter().any(|s| s.covers(c))
}

struct RunState<'a> {
    registry: &'a ModuleRegistry,
    policy: &'a ScanningPolicy,
    opts: &'a RunOptions,
    scope: TargetSpec,
    scanned: BTreeMap<String, Vec<Cidr>>,
    run_id: String,
    ds: Dataset,
}

enum Step {
    Done(ModuleTiming),
    Failed(ModuleTiming, String),
}

impl RunState<'_> {
    fn add_seeds(&mut self, seeds: Vec<SeedEntry>, added: &mut usize, dropped: &mut usize) -> usize {
        let (kept, out) = apply_scope(seeds, &self.scope, self.opts.scope_mode);
        *dropped += out.len();
        let mut n = 0;
        for s in kept {
            if !self.ds.contains_address(s.address) && self.ds.seeds.insert(s) {
                n += 1;
            }
        }
        *added += n;
        n
    }

    fn audit(&self, raw: &RawResult) {
        let Some(dir) = &self.opts.audit_dir else { return };
        let dir = dir.join(&self.run_id);
        let name = format!("{:04}-{}.out", raw.iteration, sanitize(&raw.label));
        if let Err(e) = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(dir.join(name), &raw.output)) {
            warn!("could not keep raw output: {e}");
        }
    }

    fn run_module(
        &mut self,
        inv: &ModuleInvocation,
        targets: &TargetSpec,
        iteration: u32,
        seeds_added: &mut usize,
        seeds_dropped: &mut usize,
    ) -> Step {
        let label = inv.label();
        let mut timing = ModuleTiming {
            label: label.clone(),
            module_id: inv.module_id.clone(),
            duration_s: 0.0,
            targets: 0,
            observations: 0,
            seeds: 0,
            error: None,
        };
        let clock = Instant::now();
        let module = self.registry.get(&inv.module_id).cloned().expect("validated");
        let result: Result<(), AdapterError> = match module {
            Module::Scanner(s) => {
                let already = self.scanned.get(&label).map(Vec::as_slice).unwrap_or(&[]);
                let fresh: TargetSpec = targets.entries().iter().filter(|c| !covered(already, c)).copied().collect();
                let selected: TargetSpec = s
                    .select_targets(inv, &fresh, &self.ds)
                    .entries()
                    .iter()
                    .filter(|c| !covered(already, c))
                    .copied()
                    .collect();
                timing.targets = selected.len();
                let ctx = ScanContext { label: label.clone(), iteration, concurrency: self.opts.concurrency };
                (|| {
                    let raw = s.run(inv, &selected, &ctx)?;
                    self.audit(&raw);
                    self.scanned.entry(label.clone()).or_default().extend(selected.entries().iter().copied());
                    let observations = s.normalize(&raw)?;
                    for obs in &observations {
                        // a host that did not answer is not a node
                        if obs.status != HostStatus::Up && !self.ds.contains_address(obs.target) {
                            continue;
                        }
                        match self.ds.record_observation(obs.target, obs.clone()) {
                            Ok(_) => timing.observations += 1,
                            Err(e) => warn!("{label}: observation dropped: {e}"),
                        }
                    }
                    let seeds = s.extract_seeds(&observations, &self.ds, &label, iteration);
                    timing.seeds = self.add_seeds(seeds, seeds_added, seeds_dropped);
                    Ok(())
                })()
            }
            Module::Analyzer(a) => {
                let ctx = AnalysisContext {
                    label: label.clone(),
                    iteration,
                    scanner_gateway: self.ds.meta.scanner_gateway,
                };
                a.analyze(inv, &ctx, &self.ds).map(|outcome| {
                    for (id, est) in outcome.gateways {
                        if let Some(n) = self.ds.node_mut(id) {
                            n.gateway = Some(est);
                        }
                    }
                    if outcome.network_entry_point.is_some() {
                        self.ds.meta.network_entry_point = outcome.network_entry_point;
                    }
                    for note in outcome.notes {
                        info!("{label}: {note}");
                    }
                    timing.seeds = self.add_seeds(outcome.seeds, seeds_added, seeds_dropped);
                })
            }
        };
        timing.duration_s = clock.elapsed().as_secs_f64();
        match result {
            Ok(()) => Step::Done(timing),
            Err(e) => {
                let msg = format!("{label}: {e}");
                timing.error = Some(e.to_string());
                Step::Failed(timing, msg)
            }
        }
    }
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Checks the policy and its module options against the registry.
pub fn preflight(policy: &ScanningPolicy, registry: &ModuleRegistry) -> Result<Vec<Diagnostic>, OrchestratorError> {
    let diags = validate_policy(policy, registry);
    if diags.iter().any(Diagnostic::is_error) {
        return Err(OrchestratorError::InvalidPolicy(diags));
    }
    for inv in &policy.chain {
        registry.check_options(inv)?;
    }
    Ok(diags)
}

/// Runs `policy` on top of `start`, committing one version per iteration to `sink`.
///
/// The target set of iteration k is the initial targets (first iteration
/// only) plus every unscanned seed; a module never scans an address twice
/// within the run. The run stops early when an iteration has no targets.
pub fn run_policy(
    start: Dataset,
    registry: &ModuleRegistry,
    policy: &ScanningPolicy,
    initial_targets: &TargetSpec,
    scanner_gateway: Option<Ipv4Addr>,
    opts: &RunOptions,
    cancel: &CancelToken,
    sink: &mut dyn RunSink,
) -> Result<RunReport, OrchestratorError> {
    let warnings = preflight(policy, registry)?;
    let run_clock = Instant::now();

    let mut ds = start;
    ds.meta.runs += 1;
    let run_id = format!("run-{}", ds.meta.runs);
    if scanner_gateway.is_some() {
        ds.meta.scanner_gateway = scanner_gateway;
    }
    ds.meta.targets.extend(initial_targets);
    let scope = if policy.scope.is_empty() { initial_targets.clone() } else { policy.scope.clone() };

    let mut state = RunState {
        registry,
        policy,
        opts,
        scope,
        scanned: BTreeMap::new(),
        run_id: run_id.clone(),
        ds,
    };
    let mut report = RunReport {
        run_id,
        policy: policy.name.clone(),
        status: RunStatus::Running,
        iterations: Vec::new(),
        total_duration_s: 0.0,
        final_version: None,
        notes: warnings.iter().map(ToString::to_string).collect(),
    };
    sink.progress(&report);

    'iterations: for k in 1..=state.policy.iterations {
        if cancel.is_cancelled() {
            report.status = RunStatus::Cancelled;
            break;
        }
        let mut targets = if k == 1 { initial_targets.clone() } else { TargetSpec::default() };
        let pending: Vec<Ipv4Addr> = state.ds.seeds.unscanned().map(|s| s.address).collect();
        for a in &pending {
            targets.push(Cidr::host(*a));
        }
        if targets.is_empty() {
            report.status = RunStatus::StoppedEarly { before_iteration: k };
            report.notes.push(format!("stopped before iteration {k}: no targets"));
            break;
        }
        for a in pending {
            state.ds.seeds.mark_scanned(a);
        }
        state.ds.meta.iteration += 1;
        let global = state.ds.meta.iteration;
        let clock = Instant::now();
        let mut it = IterationReport {
            index: k,
            global_iteration: global,
            targets: targets.len(),
            modules: Vec::new(),
            duration_s: 0.0,
            nodes_found: 0,
            nodes_per_second: 0.0,
            seeds_added: 0,
            seeds_dropped: 0,
            version: None,
        };
        let mut stop = None;
        for inv in &state.policy.chain.clone() {
            if cancel.is_cancelled() {
                stop = Some(RunStatus::Cancelled);
                break;
            }
            let (mut added, mut dropped) = (0, 0);
            let step = state.run_module(inv, &targets, global, &mut added, &mut dropped);
            it.seeds_added += added;
            it.seeds_dropped += dropped;
            match step {
                Step::Done(t) => it.modules.push(t),
                Step::Failed(t, msg) => {
                    warn!("{msg}");
                    report.notes.push(format!("iteration {k}: {msg}"));
                    it.modules.push(t);
                    if opts.on_failure == FailurePolicy::Abort {
                        stop = Some(RunStatus::Aborted { reason: msg });
                        break;
                    }
                }
            }
        }
        it.duration_s = clock.elapsed().as_secs_f64();
        it.nodes_found = state.ds.len();
        it.nodes_per_second = if it.duration_s > 0.0 { it.nodes_found as f64 / it.duration_s } else { 0.0 };
        let message = format!("{} iteration {k}", report.run_id);
        let version = sink.commit(&state.ds, &message)?;
        it.version = Some(version.clone());
        report.final_version = Some(version);
        report.iterations.push(it);
        report.total_duration_s = run_clock.elapsed().as_secs_f64();
        sink.progress(&report);
        if let Some(s) = stop {
            report.status = s;
            break 'iterations;
        }
    }
    if report.status == RunStatus::Running {
        report.status = RunStatus::Completed;
    }
    report.total_duration_s = run_clock.elapsed().as_secs_f64();
    sink.progress(&report);
    Ok(report)
}
