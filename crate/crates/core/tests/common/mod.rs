#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use netmap_core::adapters::{Backend, ModuleRegistry};
use netmap_core::model::{Dataset, ScanningPolicy};
use netmap_core::orchestrator::{run_policy, CancelToken, RunOptions, RunReport};
use netmap_core::simnet::SimTopology;
use netmap_core::store::VersionStore;
use netmap_core::TargetSpec;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn three_tier() -> Arc<SimTopology> {
    Arc::new(SimTopology::load(&fixture("v1/three-tier.json")).expect("fixture loads"))
}

pub fn three_tier_policy() -> ScanningPolicy {
    let text = std::fs::read_to_string(fixture("v1/policy-three-tier.json")).unwrap();
    ScanningPolicy::from_json(&text).unwrap()
}

pub fn sim_registry(topo: &Arc<SimTopology>) -> ModuleRegistry {
    ModuleRegistry::standard(Backend::Simulated(topo.clone()))
}

/// Runs the three-tier policy from the usual seed into `store`.
pub fn run_three_tier(store: &mut VersionStore, iterations: u32, opts: &RunOptions) -> RunReport {
    let topo = three_tier();
    let registry = sim_registry(&topo);
    let mut policy = three_tier_policy();
    policy.iterations = iterations;
    let start = store.head_dataset().unwrap_or_else(|_| Dataset::new());
    run_policy(
        start,
        &registry,
        &policy,
        &TargetSpec::parse("10.3.0.10").unwrap(),
        Some(topo.scanner_gateway()),
        opts,
        &CancelToken::new(),
        store,
    )
    .expect("run succeeds")
}
