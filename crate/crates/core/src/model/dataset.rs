use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::{
    DeviceClass, GatewayEstimate, HostStatus, ModelError, NodeId, NodeRecord, Observation,
    OsGuess, PortState, Protocol, SeedEntry,
};
use crate::net::TargetSpec;

/// Addresses waiting to be scanned, keyed by address.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeedSet {
    entries: BTreeMap<Ipv4Addr, SeedEntry>,
}

impl SeedSet {
    /// Inserts a seed unless its address is already present.
    pub fn insert(&mut self, seed: SeedEntry) -> bool {
        if self.entries.contains_key(&seed.address) {
            return false;
        }
        self.entries.insert(seed.address, seed);
        true
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        self.entries.contains_key(&addr)
    }

    pub fn get(&self, addr: Ipv4Addr) -> Option<&SeedEntry> {
        self.entries.get(&addr)
    }

    /// Flips `scanned` to true. Returns false if the seed is unknown or was
    /// already scanned.
    pub fn mark_scanned(&mut self, addr: Ipv4Addr) -> bool {
        match self.entries.get_mut(&addr) {
            Some(seed) if !seed.scanned => {
                seed.scanned = true;
                true
            }
            _ => false,
        }
    }

    pub fn unscanned(&self) -> impl Iterator<Item = &SeedEntry> {
        self.entries.values().filter(|s| !s.scanned)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SeedEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Dataset-wide facts that are not tied to one node.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Default gateway of the scanning machine, DGW(X).
    pub scanner_gateway: Option<Ipv4Addr>,
    pub network_entry_point: Option<Ipv4Addr>,
    /// Last global iteration number handed out.
    pub iteration: u32,
    /// Number of runs started against this dataset.
    pub runs: u32,
    /// Union of all initial targets ever scanned.
    pub targets: TargetSpec,
}

/// The whole result set: nodes, seeds and metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub nodes: BTreeMap<NodeId, NodeRecord>,
    pub seeds: SeedSet,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeRecord> {
        self.nodes.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut NodeRecord> {
        self.nodes.get_mut(&id)
    }

    pub fn contains_address(&self, addr: Ipv4Addr) -> bool {
        self.nodes.contains_key(&NodeId::new(addr))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends `obs` to the node keyed by `key`, creating the node on first
    /// sight. Manually set fields are left alone.
    pub fn record_observation(
        &mut self,
        key: Ipv4Addr,
        obs: Observation,
    ) -> Result<&NodeRecord, ModelError> {
        obs.validate()?;
        if obs.target != key {
            return Err(ModelError::InvalidObservation(format!(
                "observation targets {} but was recorded under {key}",
                obs.target
            )));
        }
        let id = NodeId::new(key);
        if let Some(node) = self.nodes.get(&id) {
            let dup = node.observations.iter().any(|o| {
                o.tool_name == obs.tool_name && o.iteration == obs.iteration && o.target == obs.target
            });
            if dup {
                return Err(ModelError::DuplicateObservation {
                    tool: obs.tool_name,
                    iteration: obs.iteration,
                    target: obs.target,
                });
            }
        }
        let node = self
            .nodes
            .entry(id)
            .or_insert_with(|| NodeRecord::new(key, obs.iteration));
        node.hostnames.extend(obs.hostnames.iter().cloned());
        node.observations.push(obs);
        node.device_class = node.derive_device_class();
        Ok(node)
    }

    /// Records an operator-chosen gateway. It outranks every automated estimate.
    pub fn set_manual_gateway(
        &mut self,
        id: NodeId,
        gateway: Ipv4Addr,
    ) -> Result<&GatewayEstimate, ModelError> {
        let iteration = self.meta.iteration.max(1);
        let node = self.nodes.get_mut(&id).ok_or(ModelError::UnknownNode(id))?;
        node.gateway = Some(GatewayEstimate::manual(id, gateway, iteration));
        Ok(node.gateway.as_ref().expect("just set"))
    }

    pub fn set_manual_device_class(
        &mut self,
        id: NodeId,
        class: DeviceClass,
    ) -> Result<(), ModelError> {
        let node = self.nodes.get_mut(&id).ok_or(ModelError::UnknownNode(id))?;
        node.manual_device_class = Some(class);
        node.device_class = class;
        Ok(())
    }

    /// Per-tool breakdown plus a merged summary of one node.
    pub fn resolve_view(&self, id: NodeId) -> Result<NodeView, ModelError> {
        let node = self.nodes.get(&id).ok_or(ModelError::UnknownNode(id))?;
        let per_tool: BTreeMap<String, Observation> = node
            .latest_by_tool()
            .into_iter()
            .map(|(t, o)| (t.to_string(), o.clone()))
            .collect();

        let status = node
            .newest_observation_where(|o| o.status != HostStatus::Unknown)
            .map_or(HostStatus::Unknown, |o| o.status);

        let mut hostname_sources: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for (tool, obs) in &per_tool {
            if !obs.hostnames.is_empty() {
                let set = hostname_sources.entry(tool.as_str()).or_default();
                set.extend(obs.hostnames.iter().map(String::as_str));
            }
        }
        let distinct: BTreeSet<&BTreeSet<&str>> = hostname_sources.values().collect();
        let hostname_conflict = distinct.len() > 1;

        let mut ports: BTreeMap<(u16, Protocol), OpenPort> = BTreeMap::new();
        for (tool, obs) in &per_tool {
            for p in obs.ports.iter().filter(|p| p.state == PortState::Open) {
                let entry = ports.entry((p.port, p.protocol)).or_insert_with(|| OpenPort {
                    port: p.port,
                    protocol: p.protocol,
                    service_name: p.service_name.clone(),
                    tools: BTreeSet::new(),
                });
                if entry.service_name.is_none() {
                    entry.service_name = p.service_name.clone();
                }
                entry.tools.insert(tool.clone());
            }
        }

        let os = per_tool
            .values()
            .filter_map(|o| o.best_os())
            .reduce(|best, g| if g.accuracy > best.accuracy { g } else { best })
            .cloned();

        let summary = NodeSummary {
            addresses: node.addresses.clone(),
            hostnames: node.hostnames.clone(),
            hostname_conflict,
            status,
            device_class: node.device_class,
            open_ports: ports.into_values().collect(),
            os,
            gateway: node.gateway.clone(),
            first_seen_iteration: node.first_seen_iteration,
        };
        Ok(NodeView {
            node_id: id,
            per_tool,
            summary,
        })
    }

    /// Routers in the dataset, ordered by address.
    pub fn routers(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values().filter(|n| n.is_router())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenPort {
    pub port: u16,
    pub protocol: Protocol,
    pub service_name: Option<String>,
    /// Tools whose latest observation lists the port as open.
    pub tools: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub addresses: BTreeSet<Ipv4Addr>,
    pub hostnames: BTreeSet<String>,
    /// Tools disagree on the host name; all names are kept.
    pub hostname_conflict: bool,
    pub status: HostStatus,
    pub device_class: DeviceClass,
    pub open_ports: Vec<OpenPort>,
    pub os: Option<OsGuess>,
    pub gateway: Option<GatewayEstimate>,
    pub first_seen_iteration: u32,
}

/// Display view of a node: newest observation per tool and a summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub node_id: NodeId,
    pub per_tool: BTreeMap<String, Observation>,
    pub summary: NodeSummary,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PortFinding, TracePath};
    use chrono::{Duration, TimeZone, Utc};
    use proptest::prelude::*;

    fn t0() -> chrono::DateTime<Utc> {
        Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap()
    }

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    #[test]
    fn first_observation_creates_node() {
        let mut ds = Dataset::new();
        let obs = Observation::new("nmap", 1, t0(), ip("10.0.0.5"), HostStatus::Up);
        ds.record_observation(ip("10.0.0.5"), obs).unwrap();
        assert_eq!(ds.len(), 1);
        let node = ds.node(NodeId::new(ip("10.0.0.5"))).unwrap();
        assert_eq!(node.observations.len(), 1);
        assert_eq!(node.first_seen_iteration, 1);
    }

    #[test]
    fn newer_observation_wins_display() {
        let mut ds = Dataset::new();
        let a = ip("10.0.0.5");
        ds.record_observation(a, Observation::new("nmap", 1, t0(), a, HostStatus::Up))
            .unwrap();
        ds.record_observation(
            a,
            Observation::new("nmap", 2, t0() + Duration::seconds(5), a, HostStatus::Down),
        )
        .unwrap();
        let view = ds.resolve_view(NodeId::new(a)).unwrap();
        assert_eq!(view.summary.status, HostStatus::Down);
        assert_eq!(view.per_tool["nmap"].iteration, 2);
    }

    #[test]
    fn duplicate_triple_rejected() {
        let mut ds = Dataset::new();
        let a = ip("10.0.0.5");
        ds.record_observation(a, Observation::new("nmap", 1, t0(), a, HostStatus::Up))
            .unwrap();
        let err = ds
            .record_observation(a, Observation::new("nmap", 1, t0(), a, HostStatus::Down))
            .unwrap_err();
        assert!(matches!(err, ModelError::DuplicateObservation { .. }));
        // another tool in the same iteration is fine
        ds.record_observation(a, Observation::new("snmpwalk", 1, t0(), a, HostStatus::Up))
            .unwrap();
    }

    #[test]
    fn key_must_match_target() {
        let mut ds = Dataset::new();
        let obs = Observation::new("nmap", 1, t0(), ip("10.0.0.5"), HostStatus::Up);
        assert!(ds.record_observation(ip("10.0.0.6"), obs).is_err());
    }

    #[test]
    fn manual_gateway_survives_automated_observations() {
        let mut ds = Dataset::new();
        let a = ip("10.0.0.5");
        ds.record_observation(a, Observation::new("nmap", 1, t0(), a, HostStatus::Up))
            .unwrap();
        ds.set_manual_gateway(NodeId::new(a), ip("10.0.0.254")).unwrap();
        let before = serde_json::to_string(&ds.node(NodeId::new(a)).unwrap().gateway).unwrap();
        let mut obs = Observation::new("nmap", 2, t0(), a, HostStatus::Up);
        obs.trace = Some(TracePath::from_addresses(&[ip("10.0.0.1"), a]));
        ds.record_observation(a, obs).unwrap();
        let after = serde_json::to_string(&ds.node(NodeId::new(a)).unwrap().gateway).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn view_keeps_tools_apart() {
        let mut ds = Dataset::new();
        let a = ip("10.0.0.1");
        let mut nmap = Observation::new("nmap", 1, t0(), a, HostStatus::Up);
        nmap.ports.push(PortFinding {
            port: 161,
            protocol: Protocol::Udp,
            state: PortState::Open,
            service_name: Some("snmp".into()),
        });
        nmap.hostnames = vec!["gw.example".into()];
        ds.record_observation(a, nmap).unwrap();
        let mut snmp = Observation::new("snmpwalk", 1, t0(), a, HostStatus::Up);
        snmp.hostnames = vec!["core-router".into()];
        ds.record_observation(a, snmp).unwrap();
        let view = ds.resolve_view(NodeId::new(a)).unwrap();
        assert_eq!(view.per_tool.len(), 2);
        assert!(view.summary.hostname_conflict);
        assert_eq!(view.summary.hostnames.len(), 2);
        assert_eq!(view.summary.open_ports[0].tools.len(), 1);
    }

    #[test]
    fn unknown_node_view() {
        let ds = Dataset::new();
        assert!(matches!(
            ds.resolve_view(NodeId::new(ip("10.9.9.9"))),
            Err(ModelError::UnknownNode(_))
        ));
    }

    #[test]
    fn router_class_from_os() {
        let mut ds = Dataset::new();
        let a = ip("10.0.0.1");
        let mut obs = Observation::new("nmap", 1, t0(), a, HostStatus::Up);
        obs.os_guesses.push(OsGuess { name: "Cisco IOS 15".into(), class: "router".into(), accuracy: 95 });
        ds.record_observation(a, obs).unwrap();
        assert!(ds.node(NodeId::new(a)).unwrap().is_router());
        ds.set_manual_device_class(NodeId::new(a), DeviceClass::Host).unwrap();
        let mut obs = Observation::new("nmap", 2, t0(), a, HostStatus::Up);
        obs.os_guesses.push(OsGuess { name: "Cisco IOS 15".into(), class: "router".into(), accuracy: 95 });
        ds.record_observation(a, obs).unwrap();
        assert_eq!(ds.node(NodeId::new(a)).unwrap().device_class, DeviceClass::Host);
    }

    #[test]
    fn seeds_flip_once() {
        let mut seeds = SeedSet::default();
        assert!(seeds.insert(SeedEntry::new(ip("192.0.2.1"), "nmap", 1)));
        assert!(!seeds.insert(SeedEntry::new(ip("192.0.2.1"), "snmpwalk", 2)));
        assert!(seeds.mark_scanned(ip("192.0.2.1")));
        assert!(!seeds.mark_scanned(ip("192.0.2.1")));
        assert_eq!(seeds.unscanned().count(), 0);
    }

    // (tool index, iteration, timestamp offset, status) and a brute-force
    // re-derivation of the newest observation per tool.
    fn arb_events() -> impl Strategy<Value = Vec<(usize, u32, i64, bool)>> {
        prop::collection::vec((0usize..3, 1u32..6, 0i64..4, any::<bool>()), 1..30)
    }

    proptest! {
        #[test]
        fn latest_wins_matches_brute_force(events in arb_events()) {
            let tools = ["nmap", "snmpwalk", "traceroute"];
            let a = ip("10.0.0.7");
            let mut ds = Dataset::new();
            let mut accepted: Vec<Observation> = Vec::new();
            for (t, it, off, up) in events {
                let status = if up { HostStatus::Up } else { HostStatus::Down };
                let obs = Observation::new(tools[t], it, t0() + Duration::milliseconds(off), a, status);
                if ds.record_observation(a, obs.clone()).is_ok() {
                    accepted.push(obs);
                }
            }
            let node = ds.node(NodeId::new(a)).unwrap();
            for tool in tools {
                let mut expected: Option<&Observation> = None;
                for o in accepted.iter().filter(|o| o.tool_name == tool) {
                    if expected.map_or(true, |e| o.timestamp >= e.timestamp) {
                        expected = Some(o);
                    }
                }
                let got = node.latest_by_tool().get(tool).copied();
                prop_assert_eq!(got, expected);
            }
            // one object per observation, never merged
            prop_assert_eq!(node.observations.len(), accepted.len());
        }
    }
}
