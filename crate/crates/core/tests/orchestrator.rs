mod common;

use std::collections::BTreeSet;
use std::net::Ipv4Addr;
use std::sync::Arc;

use netmap_core::adapters::{
    AdapterDescriptor, AdapterError, AdapterMode, Module, ModuleRegistry, RawResult, ScanContext, ScannerAdapter,
};
use netmap_core::model::{Dataset, ModuleInvocation, ModuleKind, Observation, SeedEntry};
use netmap_core::orchestrator::{
    report_table, run_policy, CancelToken, FailurePolicy, RunOptions, RunStatus, ScopeMode,
};
use netmap_core::store::VersionStore;
use netmap_core::topology::build_tree;
use netmap_core::TargetSpec;

use common::*;

fn ip(s: &str) -> Ipv4Addr {
    s.parse().unwrap()
}

#[test]
fn three_tier_expands_per_iteration() {
    let mut store = VersionStore::in_memory();
    let report = run_three_tier(&mut store, 3, &RunOptions::default());
    assert_eq!(report.status, RunStatus::Completed);
    let counts: Vec<usize> = report.iterations.iter().map(|i| i.nodes_found).collect();
    assert_eq!(counts, vec![1, 4, 120]);
    assert_eq!(store.versions().len(), 3);

    let ds = store.head_dataset().unwrap();
    assert_eq!(ds.meta.network_entry_point, Some(ip("10.1.0.1")));
    assert_eq!(ds.meta.scanner_gateway, Some(ip("10.0.0.1")));
    let tree = build_tree(&ds);
    tree.validate().unwrap();
    assert_eq!(tree.root, "10.1.0.1");
    assert_eq!(tree.depth(), 3);
    assert!(!tree.vertices.contains_key("unplaced"));

    let topo = three_tier();
    for host in topo.hosts() {
        if let Some(node) = ds.nodes.values().find(|n| n.address() == host.address) {
            let gw = node.gateway.as_ref().expect("every host is placed").gateway_address;
            assert_eq!(gw, topo.ground_truth_gateway(host.address).unwrap(), "{}", host.address);
        }
    }

    let table = report_table(&report);
    let first: Vec<&str> = table.lines().filter(|l| !l.starts_with('-')).map(|l| l.split(" | ").next().unwrap().trim()).collect();
    assert_eq!(
        first,
        vec![
            "Iteration",
            "nmap(profile=full)",
            "dgw-analyzer",
            "nmap(profile=udp161)",
            "snmpwalk(communities=[\"public\"])",
            "Modules",
            "Total",
            "Number of found nodes",
            "Nodes per second"
        ]
    );
}

#[test]
fn stops_when_nothing_is_left() {
    let mut store = VersionStore::in_memory();
    let report = run_three_tier(&mut store, 6, &RunOptions::default());
    assert_eq!(report.status, RunStatus::StoppedEarly { before_iteration: 4 });
    assert_eq!(report.iterations.len(), 3);
    assert_eq!(store.versions().len(), 3);
}

#[test]
fn single_iteration_scans_the_seed_only() {
    let mut store = VersionStore::in_memory();
    let report = run_three_tier(&mut store, 1, &RunOptions::default());
    assert_eq!(report.status, RunStatus::Completed);
    assert_eq!(report.iterations[0].nodes_found, 1);
    assert_eq!(report.iterations[0].targets, 1);
}

#[test]
fn runs_are_deterministic_and_never_rescan() {
    let run = || {
        let mut store = VersionStore::in_memory();
        run_three_tier(&mut store, 3, &RunOptions::default());
        store.head_dataset().unwrap()
    };
    let (a, b) = (run(), run());
    let shape = |ds: &Dataset| {
        ds.nodes
            .values()
            .map(|n| (n.node_id, n.device_class, n.gateway.clone(), n.observations.len()))
            .collect::<Vec<_>>()
    };
    assert_eq!(shape(&a), shape(&b));
    for node in a.nodes.values() {
        let mut seen = BTreeSet::new();
        for o in &node.observations {
            assert!(seen.insert(o.tool_name.clone()), "{} scanned twice by {}", node.node_id, o.tool_name);
        }
    }
}

#[test]
fn scope_enforcement_drops_outside_seeds() {
    let topo = three_tier();
    let registry = sim_registry(&topo);
    let mut policy = three_tier_policy();
    policy.scope = TargetSpec::parse("10.3.0.0/24").unwrap();
    let mut store = VersionStore::in_memory();
    let report = run_policy(
        Dataset::new(),
        &registry,
        &policy,
        &TargetSpec::parse("10.3.0.10").unwrap(),
        Some(topo.scanner_gateway()),
        &RunOptions::default(),
        &CancelToken::new(),
        &mut store,
    )
    .unwrap();
    let ds = store.head_dataset().unwrap();
    assert!(ds.nodes.keys().all(|n| n.address().octets()[1] == 3));
    assert!(report.iterations.iter().map(|i| i.seeds_dropped).sum::<usize>() > 0);
    assert_eq!(ds.len(), 38);

    let opts = RunOptions { scope_mode: ScopeMode::Expand, ..RunOptions::default() };
    let mut store = VersionStore::in_memory();
    run_policy(
        Dataset::new(),
        &registry,
        &policy,
        &TargetSpec::parse("10.3.0.10").unwrap(),
        Some(topo.scanner_gateway()),
        &opts,
        &CancelToken::new(),
        &mut store,
    )
    .unwrap();
    assert_eq!(store.head_dataset().unwrap().len(), 120);
}

#[test]
fn raw_output_is_audited() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { audit_dir: Some(dir.path().to_path_buf()), ..RunOptions::default() };
    let mut store = VersionStore::in_memory();
    let report = run_three_tier(&mut store, 2, &opts);
    let files: BTreeSet<String> = std::fs::read_dir(dir.path().join(&report.run_id))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(files.contains("0001-nmap_profile_full_.out"), "{files:?}");
    assert!(files.iter().any(|f| f.starts_with("0002-snmpwalk")));
}

/// Scanner that always fails, or cancels the run when it is reached.
struct Broken {
    cancel: Option<CancelToken>,
}

impl ScannerAdapter for Broken {
    fn descriptor(&self) -> AdapterDescriptor {
        AdapterDescriptor {
            module_id: "broken".into(),
            kind: ModuleKind::Scanner,
            supported_options: vec![],
            mode: AdapterMode::Simulated,
        }
    }

    fn run(&self, _inv: &ModuleInvocation, _targets: &TargetSpec, _ctx: &ScanContext) -> Result<RawResult, AdapterError> {
        if let Some(c) = &self.cancel {
            c.cancel();
        }
        Err(AdapterError::ToolFailed { tool: "broken".into(), status: 3, stderr: "boom".into() })
    }

    fn normalize(&self, _raw: &RawResult) -> Result<Vec<Observation>, AdapterError> {
        Ok(vec![])
    }

    fn extract_seeds(&self, _o: &[Observation], _k: &Dataset, _origin: &str, _it: u32) -> Vec<SeedEntry> {
        vec![]
    }
}

fn with_broken(cancel: Option<CancelToken>) -> (ModuleRegistry, netmap_core::model::ScanningPolicy) {
    let topo = three_tier();
    let mut registry = sim_registry(&topo);
    registry.register(Module::Scanner(Arc::new(Broken { cancel }))).unwrap();
    let mut policy = three_tier_policy();
    policy.chain.insert(1, ModuleInvocation::new("broken"));
    (registry, policy)
}

fn run_with(registry: &ModuleRegistry, policy: &netmap_core::model::ScanningPolicy, opts: &RunOptions, cancel: &CancelToken, store: &mut VersionStore) -> netmap_core::orchestrator::RunReport {
    run_policy(
        Dataset::new(),
        registry,
        policy,
        &TargetSpec::parse("10.3.0.10").unwrap(),
        Some(ip("10.0.0.1")),
        opts,
        cancel,
        store,
    )
    .unwrap()
}

#[test]
fn failing_module_is_skipped_or_aborts() {
    let (registry, policy) = with_broken(None);
    let mut store = VersionStore::in_memory();
    let report = run_with(&registry, &policy, &RunOptions::default(), &CancelToken::new(), &mut store);
    assert_eq!(report.status, RunStatus::Completed);
    assert_eq!(report.iterations.last().unwrap().nodes_found, 120);
    let failed = &report.iterations[0].modules[1];
    assert_eq!(failed.label, "broken");
    assert!(failed.error.as_deref().unwrap().contains("boom"));
    assert!(report_table(&report).contains("(failed)"));

    let opts = RunOptions { on_failure: FailurePolicy::Abort, ..RunOptions::default() };
    let mut store = VersionStore::in_memory();
    let report = run_with(&registry, &policy, &opts, &CancelToken::new(), &mut store);
    assert!(matches!(report.status, RunStatus::Aborted { .. }));
    assert_eq!(report.iterations.len(), 1);
    // the partial iteration is still committed
    assert_eq!(store.versions().len(), 1);
    assert_eq!(store.head_dataset().unwrap().len(), 1);
}

#[test]
fn cancellation_stops_between_modules() {
    let cancel = CancelToken::new();
    let (registry, policy) = with_broken(Some(cancel.clone()));
    let mut store = VersionStore::in_memory();
    let report = run_with(&registry, &policy, &RunOptions::default(), &cancel, &mut store);
    assert_eq!(report.status, RunStatus::Cancelled);
    assert_eq!(report.iterations.len(), 1);
    assert_eq!(report.iterations[0].modules.len(), 2);
    assert_eq!(store.versions().len(), 1);
}

#[test]
fn invalid_policy_is_rejected_before_running() {
    let topo = three_tier();
    let registry = sim_registry(&topo);
    let mut policy = three_tier_policy();
    policy.chain.push(ModuleInvocation::new("nope"));
    let mut store = VersionStore::in_memory();
    let err = run_policy(
        Dataset::new(),
        &registry,
        &policy,
        &TargetSpec::parse("10.3.0.10").unwrap(),
        None,
        &RunOptions::default(),
        &CancelToken::new(),
        &mut store,
    )
    .unwrap_err();
    assert!(err.to_string().contains("nope"));
    assert!(store.versions().is_empty());
}
