//! Default-gateway estimation, network entry point detection and hop-based
//! seed contribution.
//!
//! Three estimators produce [`GatewayEstimate`] candidates:
//!
//! * by trace: the hop before the host in a traceroute, or the scanner's own
//!   gateway when the host is one hop away;
//! * by singleton router: when exactly one router is known, it is everyone's
//!   gateway;
//! * by usual suspects: `.1`/`.254` style addresses of a target's /24 that
//!   turn out to be routers.
//!
//! [`resolve_gateways`] picks one candidate per node: manual beats trace,
//! trace beats singleton, singleton beats usual suspects.

mod dgw;

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::model::{
    Dataset, EstimateMethod, GatewayEstimate, NodeId, NodeRecord, SeedEntry, TracePath,
};
use crate::net::TargetSpec;

pub use dgw::{DefaultGatewayAnalyzer, DGW_ANALYZER_ID};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalyzerError {
    #[error("no complete trace paths to compute a network entry point from")]
    NoTraces,
}

/// Confidence knobs and usual-suspect finals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub trace_confidence: f64,
    pub singleton_confidence: f64,
    pub usual_suspect_confidence: f64,
    pub usual_finals: Vec<u8>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            trace_confidence: 0.9,
            singleton_confidence: 0.6,
            usual_suspect_confidence: 0.4,
            usual_finals: vec![1, 254],
        }
    }
}

/// Gateway from the node's newest trace.
///
/// A single-hop trace means the host shares the scanner's subnet, so it gets
/// the scanner's gateway. Otherwise the hop before the host is the gateway;
/// when that hop did not answer there is no estimate.
pub fn estimate_gateway_by_trace(
    node: &NodeRecord,
    scanner_dgw: Ipv4Addr,
    config: &EstimatorConfig,
    iteration: u32,
) -> Option<GatewayEstimate> {
    let trace = node.latest_trace()?;
    let gateway = gateway_from_trace(trace, scanner_dgw)?;
    Some(GatewayEstimate {
        node_id: node.node_id,
        gateway_address: gateway,
        method: EstimateMethod::Trace,
        confidence: config.trace_confidence,
        iteration,
    })
}

/// The trace rule on a bare path.
pub fn gateway_from_trace(trace: &TracePath, scanner_dgw: Ipv4Addr) -> Option<Ipv4Addr> {
    match trace.hop_count() {
        0 => None,
        1 => Some(scanner_dgw),
        n => trace.address_at(n - 1),
    }
}

/// The last router shared by all paths before they diverge.
///
/// Paths are walked in parallel from hop 1; at the first position where not
/// all of them carry the same address, the address one position earlier is
/// the entry point. A one-hop path anywhere in the set (a host on the
/// scanner's own subnet), or divergence at hop 1, yields the scanner's
/// gateway. Without divergence the entry point is the hop before the final
/// hop of the shortest path. Incomplete paths are ignored.
pub fn compute_network_entry_point(
    traces: &[&TracePath],
    scanner_dgw: Ipv4Addr,
) -> Result<Ipv4Addr, AnalyzerError> {
    let paths: Vec<&TracePath> = traces
        .iter()
        .copied()
        .filter(|t| t.complete && t.hop_count() > 0)
        .collect();
    if paths.is_empty() {
        return Err(AnalyzerError::NoTraces);
    }
    if paths.iter().any(|t| t.hop_count() == 1) {
        return Ok(scanner_dgw);
    }
    let shortest = paths.iter().map(|t| t.hop_count()).min().expect("non-empty");
    for position in 1..=shortest {
        let first = paths[0].address_at(position);
        let diverges = paths.windows(2).any(|w| w[0].address_at(position) != w[1].address_at(position));
        if diverges || first.is_none() {
            return Ok(match position {
                1 => scanner_dgw,
                p => paths[0].address_at(p - 1).expect("complete path"),
            });
        }
    }
    Ok(paths[0]
        .address_at(shortest - 1)
        .expect("shortest path has at least two hops"))
}

/// Nodes the fallback estimators may assign: non-routers without a gateway.
fn gateway_less_hosts(dataset: &Dataset) -> impl Iterator<Item = &NodeRecord> {
    dataset
        .nodes
        .values()
        .filter(|n| !n.is_router() && n.gateway.is_none())
}

/// When exactly one router is known, every gateway-less non-router points at it.
pub fn estimate_gateway_by_singleton(
    dataset: &Dataset,
    config: &EstimatorConfig,
    iteration: u32,
) -> Vec<GatewayEstimate> {
    let mut routers = dataset.routers();
    let (Some(router), None) = (routers.next(), routers.next()) else {
        return Vec::new();
    };
    gateway_less_hosts(dataset)
        .map(|n| GatewayEstimate {
            node_id: n.node_id,
            gateway_address: router.address(),
            method: EstimateMethod::Singleton,
            confidence: config.singleton_confidence,
            iteration,
        })
        .collect()
}

/// Candidate router addresses: each target's first three octets joined with
/// every configured final, duplicates removed, in first-seen order.
pub fn usual_suspect_candidates(targets: &TargetSpec, finals: &[u8]) -> Vec<Ipv4Addr> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for entry in targets.entries() {
        let [a, b, c, _] = entry.network().octets();
        for f in finals {
            let cand = Ipv4Addr::new(a, b, c, *f);
            if seen.insert(cand) {
                out.push(cand);
            }
        }
    }
    out
}

fn same_slash24(a: Ipv4Addr, b: Ipv4Addr) -> bool {
    a.octets()[..3] == b.octets()[..3]
}

/// Usual-suspect candidates that the dataset knows to be routers become the
/// gateway of gateway-less hosts in the same /24.
pub fn estimate_gateway_by_usual_suspects(
    targets: &TargetSpec,
    dataset: &Dataset,
    config: &EstimatorConfig,
    iteration: u32,
) -> Vec<GatewayEstimate> {
    let routers: Vec<Ipv4Addr> = usual_suspect_candidates(targets, &config.usual_finals)
        .into_iter()
        .filter(|c| dataset.node(NodeId::new(*c)).is_some_and(NodeRecord::is_router))
        .collect();
    let mut out = Vec::new();
    for node in gateway_less_hosts(dataset) {
        // first matching candidate in candidate order wins
        if let Some(gw) = routers.iter().find(|r| same_slash24(**r, node.address())) {
            out.push(GatewayEstimate {
                node_id: node.node_id,
                gateway_address: *gw,
                method: EstimateMethod::UsualSuspect,
                confidence: config.usual_suspect_confidence,
                iteration,
            });
        }
    }
    out
}

/// Candidate estimates per node, at most one per method.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateSet {
    candidates: BTreeMap<NodeId, BTreeMap<EstimateMethod, GatewayEstimate>>,
}

fn candidate_rank(e: &GatewayEstimate) -> (u32, u64, Ipv4Addr) {
    (e.iteration, e.confidence.to_bits(), e.gateway_address)
}

impl EstimateSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a candidate. Two candidates for the same node and method collapse
    /// to the newer one (then higher confidence, then higher address), so
    /// insertion order never matters.
    pub fn add(&mut self, estimate: GatewayEstimate) {
        let slot = self.candidates.entry(estimate.node_id).or_default();
        match slot.get(&estimate.method) {
            Some(existing) if candidate_rank(existing) >= candidate_rank(&estimate) => {}
            _ => {
                slot.insert(estimate.method, estimate);
            }
        }
    }

    pub fn extend(&mut self, estimates: impl IntoIterator<Item = GatewayEstimate>) {
        for e in estimates {
            self.add(e);
        }
    }

    pub fn candidates_for(&self, node: NodeId) -> impl Iterator<Item = &GatewayEstimate> {
        self.candidates.get(&node).into_iter().flat_map(|m| m.values())
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// One resolved estimate per node that has any candidate.
pub fn resolve_gateways(estimates: &EstimateSet) -> BTreeMap<NodeId, GatewayEstimate> {
    estimates
        .candidates
        .iter()
        .filter_map(|(id, by_method)| {
            by_method
                .values()
                .max_by_key(|e| e.method.precedence())
                .map(|e| (*id, e.clone()))
        })
        .collect()
}

/// Trace hop addresses that are neither known nodes nor queued seeds.
pub fn contribute_seeds(dataset: &Dataset, origin: &str, iteration: u32) -> Vec<SeedEntry> {
    let mut found = BTreeSet::new();
    for node in dataset.nodes.values() {
        for obs in &node.observations {
            if let Some(trace) = &obs.trace {
                for addr in trace.addresses() {
                    if !dataset.contains_address(addr) && !dataset.seeds.contains(addr) {
                        found.insert(addr);
                    }
                }
            }
        }
    }
    found
        .into_iter()
        .map(|a| SeedEntry::new(a, origin, iteration))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DeviceClass, Hop, HostStatus, Observation, OsGuess};
    use crate::net::Cidr;
    use crate::simnet::{generate, GeneratorParams};
    use chrono::{TimeZone, Utc};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn node_with_trace(addr: Ipv4Addr, hops: &[Ipv4Addr]) -> NodeRecord {
        let mut ds = Dataset::new();
        let mut obs = Observation::new("nmap", 1, Utc.timestamp_opt(0, 0).unwrap(), addr, HostStatus::Up);
        obs.trace = Some(TracePath::from_addresses(hops));
        ds.record_observation(addr, obs).unwrap();
        ds.nodes.into_values().next().unwrap()
    }

    fn add_node(ds: &mut Dataset, addr: &str, class: &str) {
        let a = ip(addr);
        let mut obs = Observation::new("nmap", 1, Utc.timestamp_opt(0, 0).unwrap(), a, HostStatus::Up);
        obs.os_guesses.push(OsGuess { name: "x".into(), class: class.into(), accuracy: 90 });
        ds.record_observation(a, obs).unwrap();
    }

    /// Brute-force oracle: longest common prefix of all hop sequences, last element.
    fn lcp_oracle(paths: &[Vec<Ipv4Addr>], scanner_dgw: Ipv4Addr) -> Ipv4Addr {
        if paths.iter().any(|p| p.len() == 1) {
            return scanner_dgw;
        }
        let mut prefix: Vec<Ipv4Addr> = paths[0].clone();
        for p in &paths[1..] {
            let common = prefix.iter().zip(p).take_while(|(a, b)| a == b).count();
            prefix.truncate(common);
        }
        *prefix.last().unwrap_or(&scanner_dgw)
    }

    fn diverges(paths: &[Vec<Ipv4Addr>]) -> bool {
        let shortest = paths.iter().map(Vec::len).min().unwrap();
        (0..shortest).any(|i| paths.iter().any(|p| p[i] != paths[0][i]))
    }

    #[test]
    fn trace_single_hop_uses_scanner_gateway() {
        let h = ip("10.0.0.9");
        let est = estimate_gateway_by_trace(&node_with_trace(h, &[h]), ip("10.0.0.1"), &EstimatorConfig::default(), 1)
            .unwrap();
        assert_eq!(est.gateway_address, ip("10.0.0.1"));
        assert_eq!(est.method, EstimateMethod::Trace);
        assert_eq!(est.confidence, 0.9);
    }

    #[test]
    fn trace_uses_hop_before_host() {
        let h = ip("10.2.0.7");
        let node = node_with_trace(h, &[ip("10.1.0.1"), ip("10.2.0.1"), h]);
        let est = estimate_gateway_by_trace(&node, ip("10.0.0.1"), &EstimatorConfig::default(), 1).unwrap();
        assert_eq!(est.gateway_address, ip("10.2.0.1"));
    }

    #[test]
    fn trace_with_silent_predecessor_gives_nothing() {
        let h = ip("10.2.0.7");
        let trace = TracePath::new(vec![
            Hop { position: 1, address: Some(ip("10.1.0.1")), rtt_ms: None },
            Hop { position: 2, address: None, rtt_ms: None },
            Hop { position: 3, address: Some(h), rtt_ms: None },
        ])
        .unwrap();
        assert_eq!(gateway_from_trace(&trace, ip("10.0.0.1")), None);
        // a silent hop further up does not matter
        let trace = TracePath::new(vec![
            Hop { position: 1, address: None, rtt_ms: None },
            Hop { position: 2, address: Some(ip("10.2.0.1")), rtt_ms: None },
            Hop { position: 3, address: Some(h), rtt_ms: None },
        ])
        .unwrap();
        assert_eq!(gateway_from_trace(&trace, ip("10.0.0.1")), Some(ip("10.2.0.1")));
    }

    #[test]
    fn trace_estimates_match_simnet_ground_truth() {
        let cfg = EstimatorConfig::default();
        let params = GeneratorParams::default();
        for seed in 0..25u64 {
            let topo = generate(seed, &params);
            for host in topo.hosts() {
                let trace = topo.trace(host.address).unwrap();
                let gw = gateway_from_trace(&trace, topo.scanner_gateway()).unwrap();
                assert_eq!(gw, topo.ground_truth_gateway(host.address).unwrap(), "seed {seed} host {}", host.address);
            }
            let _ = cfg.clone();
        }
    }

    #[test]
    fn nep_divergence() {
        let (a, b, c, d) = (ip("10.0.1.1"), ip("10.0.2.1"), ip("10.0.3.1"), ip("10.0.4.1"));
        let (h1, h2) = (ip("10.0.3.5"), ip("10.0.4.5"));
        let p1 = TracePath::from_addresses(&[a, b, c, h1]);
        let p2 = TracePath::from_addresses(&[a, b, d, h2]);
        assert_eq!(compute_network_entry_point(&[&p1, &p2], ip("10.0.0.1")).unwrap(), b);
    }

    #[test]
    fn nep_single_hop_member() {
        let p1 = TracePath::from_addresses(&[ip("10.0.1.1"), ip("10.0.3.5")]);
        let p2 = TracePath::from_addresses(&[ip("10.0.0.9")]);
        assert_eq!(compute_network_entry_point(&[&p1, &p2], ip("10.0.0.1")).unwrap(), ip("10.0.0.1"));
    }

    #[test]
    fn nep_without_divergence_is_last_shared_router() {
        let p = TracePath::from_addresses(&[ip("10.1.0.1"), ip("10.2.0.1"), ip("10.3.0.1"), ip("10.3.0.10")]);
        assert_eq!(compute_network_entry_point(&[&p], ip("10.0.0.1")).unwrap(), ip("10.3.0.1"));
        let q = p.clone();
        assert_eq!(compute_network_entry_point(&[&p, &q], ip("10.0.0.1")).unwrap(), ip("10.3.0.1"));
    }

    #[test]
    fn nep_empty_is_error() {
        assert_eq!(compute_network_entry_point(&[], ip("10.0.0.1")), Err(AnalyzerError::NoTraces));
        let incomplete = TracePath::new(vec![Hop { position: 1, address: None, rtt_ms: None }]).unwrap();
        assert_eq!(
            compute_network_entry_point(&[&incomplete], ip("10.0.0.1")),
            Err(AnalyzerError::NoTraces)
        );
    }

    #[test]
    fn nep_matches_lcp_oracle_on_random_path_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dgw = ip("10.0.0.1");
        let mut checked = 0;
        for seed in 0..200u64 {
            let topo = generate(seed, &GeneratorParams::default());
            let hosts = topo.hosts();
            let m = rng.random_range(1..=hosts.len().min(12));
            let paths: Vec<Vec<Ipv4Addr>> = (0..m)
                .map(|_| {
                    let h = &hosts[rng.random_range(0..hosts.len())];
                    topo.trace(h.address).unwrap().addresses().collect()
                })
                .collect();
            if !diverges(&paths) && !paths.iter().any(|p| p.len() == 1) {
                continue;
            }
            let traces: Vec<TracePath> = paths.iter().map(|p| TracePath::from_addresses(p)).collect();
            let refs: Vec<&TracePath> = traces.iter().collect();
            assert_eq!(compute_network_entry_point(&refs, dgw).unwrap(), lcp_oracle(&paths, dgw), "seed {seed}");
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn singleton_gating() {
        let mut ds = Dataset::new();
        add_node(&mut ds, "10.0.0.1", "router");
        for i in 2..7 {
            add_node(&mut ds, &format!("10.0.0.{i}"), "general purpose");
        }
        let cfg = EstimatorConfig::default();
        let est = estimate_gateway_by_singleton(&ds, &cfg, 1);
        assert_eq!(est.len(), 5);
        assert!(est.iter().all(|e| e.gateway_address == ip("10.0.0.1") && e.confidence == 0.6));

        add_node(&mut ds, "10.0.0.254", "router");
        assert!(estimate_gateway_by_singleton(&ds, &cfg, 1).is_empty());

        let mut none = Dataset::new();
        add_node(&mut none, "10.0.0.2", "general purpose");
        assert!(estimate_gateway_by_singleton(&none, &cfg, 1).is_empty());
    }

    #[test]
    fn usual_suspect_candidates_dedup() {
        let one = TargetSpec::new(["10.0.5.0/24".parse::<Cidr>().unwrap()]);
        assert_eq!(usual_suspect_candidates(&one, &[1, 254]), vec![ip("10.0.5.1"), ip("10.0.5.254")]);
        let halves = TargetSpec::parse("10.0.5.0/25,10.0.5.128/25").unwrap();
        assert_eq!(usual_suspect_candidates(&halves, &[1, 254]), vec![ip("10.0.5.1"), ip("10.0.5.254")]);
    }

    #[test]
    fn usual_suspect_requires_router() {
        let cfg = EstimatorConfig::default();
        let targets = TargetSpec::parse("10.0.5.0/24").unwrap();
        let mut ds = Dataset::new();
        add_node(&mut ds, "10.0.5.1", "general purpose");
        add_node(&mut ds, "10.0.5.20", "general purpose");
        assert!(estimate_gateway_by_usual_suspects(&targets, &ds, &cfg, 1).is_empty());

        add_node(&mut ds, "10.0.5.254", "router");
        add_node(&mut ds, "10.0.6.20", "general purpose");
        let est = estimate_gateway_by_usual_suspects(&targets, &ds, &cfg, 1);
        // 10.0.5.1 and 10.0.5.20 get it, 10.0.6.20 is in another /24
        assert_eq!(est.len(), 2);
        assert!(est.iter().all(|e| e.gateway_address == ip("10.0.5.254")));
        assert_eq!(ds.node(NodeId::new(ip("10.0.5.254"))).unwrap().device_class, DeviceClass::Router);
    }

    fn est(node: &str, gw: &str, method: EstimateMethod) -> GatewayEstimate {
        let confidence = if method == EstimateMethod::Manual { 1.0 } else { 0.5 };
        GatewayEstimate { node_id: NodeId::new(ip(node)), gateway_address: ip(gw), method, confidence, iteration: 1 }
    }

    #[test]
    fn resolution_precedence() {
        let mut set = EstimateSet::new();
        set.add(est("10.0.0.5", "10.0.0.1", EstimateMethod::Trace));
        set.add(est("10.0.0.5", "10.0.0.2", EstimateMethod::UsualSuspect));
        assert_eq!(resolve_gateways(&set)[&NodeId::new(ip("10.0.0.5"))].gateway_address, ip("10.0.0.1"));

        set.add(est("10.0.0.5", "10.0.0.3", EstimateMethod::Manual));
        assert_eq!(resolve_gateways(&set)[&NodeId::new(ip("10.0.0.5"))].gateway_address, ip("10.0.0.3"));

        assert!(resolve_gateways(&EstimateSet::new()).is_empty());
    }

    #[test]
    fn seeds_from_unknown_hops() {
        let mut ds = Dataset::new();
        let h = ip("10.0.0.5");
        let mut obs = Observation::new("nmap", 1, Utc.timestamp_opt(0, 0).unwrap(), h, HostStatus::Up);
        obs.trace = Some(TracePath::from_addresses(&[ip("198.51.100.1"), h]));
        ds.record_observation(h, obs).unwrap();
        let seeds = contribute_seeds(&ds, "dgw-analyzer", 1);
        assert_eq!(seeds.len(), 1);
        assert_eq!(seeds[0].address, ip("198.51.100.1"));

        ds.seeds.insert(seeds[0].clone());
        assert!(contribute_seeds(&ds, "dgw-analyzer", 1).is_empty());
    }

    mod props {
        use super::{resolve_gateways, EstimateMethod, EstimateSet, GatewayEstimate, Ipv4Addr, NodeId};
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;
        use proptest::prelude::*;

        fn arb_estimate() -> impl Strategy<Value = GatewayEstimate> {
            (0u8..4, 0u8..4, 0usize..4, 1u32..4, 1u32..10).prop_map(|(n, g, m, it, c)| {
                let method = [EstimateMethod::Trace, EstimateMethod::Singleton, EstimateMethod::UsualSuspect, EstimateMethod::Manual][m];
                GatewayEstimate {
                    node_id: NodeId::new(Ipv4Addr::new(10, 0, 0, n)),
                    gateway_address: Ipv4Addr::new(10, 0, 1, g),
                    method,
                    confidence: if method == EstimateMethod::Manual { 1.0 } else { f64::from(c) / 10.0 },
                    iteration: it,
                }
            })
        }

        proptest! {
            #[test]
            fn resolution_is_order_insensitive_and_idempotent(
                mut list in prop::collection::vec(arb_estimate(), 0..24),
                seed in any::<u64>(),
            ) {
                let mut a = EstimateSet::new();
                a.extend(list.clone());
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for i in (1..list.len()).rev() {
                    let j = rng.random_range(0..=i);
                    list.swap(i, j);
                }
                let mut b = EstimateSet::new();
                b.extend(list);
                let ra = resolve_gateways(&a);
                prop_assert_eq!(&ra, &resolve_gateways(&b));
                // feeding the resolution back in changes nothing
                let mut c = a.clone();
                c.extend(ra.values().cloned());
                prop_assert_eq!(ra, resolve_gateways(&c));
            }
        }
    }
}
