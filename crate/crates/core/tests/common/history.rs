//! Random edit histories over datasets, plus a field-by-field diff oracle.
#![allow(dead_code)]

use std::net::Ipv4Addr;

use chrono::{DateTime, Utc};
use netmap_core::model::{
    Dataset, GatewayEstimate, HostStatus, NodeId, Observation, OsGuess, PortFinding, PortState, Protocol, SeedEntry,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn observe(rng: &mut ChaCha8Rng, addr: Ipv4Addr, iteration: u32, tool: &str) -> Observation {
    let ts = DateTime::<Utc>::from_timestamp(1_700_000_000 + i64::from(iteration) * 60, 0).unwrap();
    let mut o = Observation::new(tool, iteration, ts, addr, HostStatus::Up);
    for _ in 0..rng.random_range(0..4) {
        let port = [22u16, 23, 80, 161, 443][rng.random_range(0..5)];
        if o.ports.iter().all(|p| p.port != port) {
            o.ports.push(PortFinding {
                port,
                protocol: if port == 161 { Protocol::Udp } else { Protocol::Tcp },
                state: PortState::Open,
                service_name: None,
            });
        }
    }
    if rng.random_bool(0.5) {
        let (name, class) = if rng.random_bool(0.2) { ("Cisco IOS", "router") } else { ("Linux 5.4", "general purpose") };
        o.os_guesses.push(OsGuess { name: name.into(), class: class.into(), accuracy: rng.random_range(80..100) });
    }
    o
}

/// Applies one to three random edits; every step changes the dataset.
pub fn mutate(rng: &mut ChaCha8Rng, ds: &mut Dataset, step: u32) {
    ds.meta.iteration = step;
    let edits = rng.random_range(1..=3);
    for _ in 0..edits {
        let ids: Vec<NodeId> = ds.nodes.keys().copied().collect();
        let pick = if ids.is_empty() { 0 } else { rng.random_range(0..10) };
        match pick {
            0..=3 => {
                let addr = Ipv4Addr::new(10, 9, rng.random_range(0..4), rng.random_range(1..255));
                if !ds.contains_address(addr) {
                    let o = observe(rng, addr, step, "nmap");
                    ds.record_observation(addr, o).unwrap();
                }
            }
            4 | 5 => {
                let id = ids[rng.random_range(0..ids.len())];
                let tool = ["nmap", "nmap(profile=udp161)", "snmpwalk"][rng.random_range(0..3)];
                let o = observe(rng, id.address(), step, tool);
                let _ = ds.record_observation(id.address(), o);
            }
            6 => {
                let id = ids[rng.random_range(0..ids.len())];
                let gw = ids[rng.random_range(0..ids.len())];
                let node = ds.node_mut(id).unwrap();
                node.gateway = Some(if rng.random_bool(0.5) {
                    GatewayEstimate::manual(id, gw.address(), step)
                } else {
                    GatewayEstimate {
                        node_id: id,
                        gateway_address: gw.address(),
                        method: netmap_core::model::EstimateMethod::Trace,
                        confidence: 0.9,
                        iteration: step,
                    }
                });
            }
            7 => {
                let id = ids[rng.random_range(0..ids.len())];
                ds.nodes.remove(&id);
            }
            8 => {
                let addr = Ipv4Addr::new(10, 8, rng.random(), rng.random_range(1..255));
                ds.seeds.insert(SeedEntry::new(addr, "nmap", step));
            }
            _ => {
                ds.meta.network_entry_point = Some(ids[rng.random_range(0..ids.len())].address());
            }
        }
    }
}

/// Snapshots after each of `commits` steps, starting from an empty dataset.
pub fn random_history(seed: u64, commits: usize) -> Vec<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = Dataset::new();
    let mut out = Vec::with_capacity(commits);
    for step in 1..=commits as u32 {
        mutate(&mut rng, &mut ds, step);
        out.push(ds.clone());
    }
    out
}

/// Which node-level facts differ between two snapshots, computed by direct
/// comparison of the records. Returns (added, removed, changed, gateway-moved).
pub fn brute_force_diff(a: &Dataset, b: &Dataset) -> (Vec<NodeId>, Vec<NodeId>, Vec<(NodeId, Vec<&'static str>)>, Vec<NodeId>) {
    let added = b.nodes.keys().filter(|k| !a.nodes.contains_key(k)).copied().collect();
    let removed = a.nodes.keys().filter(|k| !b.nodes.contains_key(k)).copied().collect();
    let mut changed = Vec::new();
    let mut moved = Vec::new();
    for (id, x) in &a.nodes {
        let Some(y) = b.nodes.get(id) else { continue };
        let mut f = Vec::new();
        if x.addresses != y.addresses {
            f.push("addresses");
        }
        if x.device_class != y.device_class {
            f.push("device_class");
        }
        if x.first_seen_iteration != y.first_seen_iteration {
            f.push("first_seen_iteration");
        }
        if x.hostnames != y.hostnames {
            f.push("hostnames");
        }
        if x.manual_device_class != y.manual_device_class {
            f.push("manual_device_class");
        }
        if x.observations != y.observations {
            f.push("observations");
        }
        if !f.is_empty() {
            changed.push((*id, f));
        }
        if x.gateway.as_ref().map(|g| g.gateway_address) != y.gateway.as_ref().map(|g| g.gateway_address) {
            moved.push(*id);
        }
    }
    (added, removed, changed, moved)
}
