//! Normalized data model shared by scanners, analyzers, the store and the
//! topology builder.
//!
//! Every tool's findings for a node stay in their own [`Observation`]; the
//! model never merges them. Display code asks a [`NodeRecord`] for the newest
//! observation per tool and builds its summary from those.

mod dataset;
mod policy;

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use dataset::{Dataset, DatasetMeta, NodeSummary, NodeView, OpenPort, SeedSet};
pub use policy::{
    validate_policy, Diagnostic, DiagnosticKind, ModuleCatalog, ModuleInvocation, ModuleKind,
    ScanningPolicy, Severity,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("observation already recorded for tool `{tool}` in iteration {iteration} on {target}")]
    DuplicateObservation {
        tool: String,
        iteration: u32,
        target: Ipv4Addr,
    },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("invalid gateway estimate: {0}")]
    InvalidEstimate(String),
}

/// Stable node identifier. Nodes are keyed by their primary IPv4 address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(Ipv4Addr);

impl NodeId {
    pub fn new(addr: Ipv4Addr) -> Self {
        NodeId(addr)
    }

    pub fn address(&self) -> Ipv4Addr {
        self.0
    }
}

impl From<Ipv4Addr> for NodeId {
    fn from(addr: Ipv4Addr) -> Self {
        NodeId(addr)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl FromStr for NodeId {
    type Err = std::net::AddrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(NodeId)
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceClass {
    Host,
    Router,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostStatus {
    Up,
    Down,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Tcp,
    Udp,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
        })
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tcp" => Ok(Protocol::Tcp),
            "udp" => Ok(Protocol::Udp),
            other => Err(format!("unsupported protocol `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortState {
    Open,
    Closed,
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortFinding {
    pub port: u16,
    pub protocol: Protocol,
    pub state: PortState,
    pub service_name: Option<String>,
}

/// One OS fingerprint match. `class` is the device type (`router`,
/// `general purpose`, ...), `accuracy` a percentage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OsGuess {
    pub name: String,
    pub class: String,
    pub accuracy: u8,
}

impl OsGuess {
    pub fn is_router(&self) -> bool {
        self.class.eq_ignore_ascii_case("router")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub position: u32,
    /// `None` for a hop that did not answer.
    pub address: Option<Ipv4Addr>,
    pub rtt_ms: Option<f64>,
}

/// Ordered hop list from the scanner to a target; the last hop is the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePath {
    pub hops: Vec<Hop>,
    pub complete: bool,
}

impl TracePath {
    /// Builds a path from hops that must already be numbered `1..=n`.
    pub fn new(hops: Vec<Hop>) -> Result<Self, ModelError> {
        for (i, hop) in hops.iter().enumerate() {
            if hop.position as usize != i + 1 {
                return Err(ModelError::InvalidObservation(format!(
                    "trace hop positions must be 1..n, found {} at index {i}",
                    hop.position
                )));
            }
            if matches!(hop.rtt_ms, Some(r) if !(r >= 0.0)) {
                return Err(ModelError::InvalidObservation(
                    "negative hop rtt".to_string(),
                ));
            }
        }
        let complete = hops.iter().all(|h| h.address.is_some());
        Ok(TracePath { hops, complete })
    }

    /// Convenience constructor for fully answered paths.
    pub fn from_addresses(addrs: &[Ipv4Addr]) -> Self {
        let hops = addrs
            .iter()
            .enumerate()
            .map(|(i, a)| Hop {
                position: i as u32 + 1,
                address: Some(*a),
                rtt_ms: None,
            })
            .collect();
        TracePath {
            hops,
            complete: true,
        }
    }

    /// The hop count `n`.
    pub fn hop_count(&self) -> usize {
        self.hops.len()
    }

    /// Address at 1-based `position`.
    pub fn address_at(&self, position: usize) -> Option<Ipv4Addr> {
        position
            .checked_sub(1)
            .and_then(|i| self.hops.get(i))
            .and_then(|h| h.address)
    }

    pub fn addresses(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.hops.iter().filter_map(|h| h.address)
    }

    fn validate(&self) -> Result<(), ModelError> {
        let rebuilt = TracePath::new(self.hops.clone())?;
        if rebuilt.complete != self.complete {
            return Err(ModelError::InvalidObservation(
                "trace completeness flag disagrees with hops".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArpEntry {
    pub address: Ipv4Addr,
    pub mac: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnmpData {
    pub system_description: Option<String>,
    pub neighbors: Vec<ArpEntry>,
}

/// What one tool reported about one target in one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tool_name: String,
    pub tool_options: String,
    pub iteration: u32,
    pub timestamp: DateTime<Utc>,
    pub target: Ipv4Addr,
    pub status: HostStatus,
    #[serde(default)]
    pub hostnames: Vec<String>,
    #[serde(default)]
    pub ports: Vec<PortFinding>,
    #[serde(default)]
    pub os_guesses: Vec<OsGuess>,
    pub trace: Option<TracePath>,
    pub snmp: Option<SnmpData>,
    /// Free-form remark from the adapter, e.g. an SNMP refusal.
    pub note: Option<String>,
}

impl Observation {
    /// A bare observation with nothing but a status.
    pub fn new(
        tool_name: impl Into<String>,
        iteration: u32,
        timestamp: DateTime<Utc>,
        target: Ipv4Addr,
        status: HostStatus,
    ) -> Self {
        Observation {
            tool_name: tool_name.into(),
            tool_options: String::new(),
            iteration,
            timestamp,
            target,
            status,
            hostnames: Vec::new(),
            ports: Vec::new(),
            os_guesses: Vec::new(),
            trace: None,
            snmp: None,
            note: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.tool_name.is_empty() {
            return Err(ModelError::InvalidObservation("empty tool name".to_string()));
        }
        if self.iteration == 0 {
            return Err(ModelError::InvalidObservation(
                "iteration must be positive".to_string(),
            ));
        }
        let mut seen = BTreeSet::new();
        for p in &self.ports {
            if p.port == 0 {
                return Err(ModelError::InvalidObservation("port 0".to_string()));
            }
            if !seen.insert((p.port, p.protocol)) {
                return Err(ModelError::InvalidObservation(format!(
                    "duplicate port {}/{}",
                    p.port, p.protocol
                )));
            }
        }
        if let Some(g) = self.os_guesses.iter().find(|g| g.accuracy > 100) {
            return Err(ModelError::InvalidObservation(format!(
                "os accuracy {} out of range",
                g.accuracy
            )));
        }
        if let Some(trace) = &self.trace {
            trace.validate()?;
        }
        Ok(())
    }

    /// Highest-accuracy OS guess; earlier entries win ties.
    pub fn best_os(&self) -> Option<&OsGuess> {
        self.os_guesses
            .iter()
            .reduce(|best, g| if g.accuracy > best.accuracy { g } else { best })
    }

    pub fn has_open_port(&self, port: u16, protocol: Protocol) -> bool {
        self.ports
            .iter()
            .any(|p| p.port == port && p.protocol == protocol && p.state == PortState::Open)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Trace,
    Singleton,
    UsualSuspect,
    Manual,
}

impl EstimateMethod {
    /// Resolution precedence; larger wins.
    pub fn precedence(self) -> u8 {
        match self {
            EstimateMethod::Manual => 3,
            EstimateMethod::Trace => 2,
            EstimateMethod::Singleton => 1,
            EstimateMethod::UsualSuspect => 0,
        }
    }
}

/// A claim that `gateway_address` is the default gateway of `node_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayEstimate {
    pub node_id: NodeId,
    pub gateway_address: Ipv4Addr,
    pub method: EstimateMethod,
    pub confidence: f64,
    pub iteration: u32,
}

impl GatewayEstimate {
    pub fn manual(node_id: NodeId, gateway_address: Ipv4Addr, iteration: u32) -> Self {
        GatewayEstimate {
            node_id,
            gateway_address,
            method: EstimateMethod::Manual,
            confidence: 1.0,
            iteration,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return Err(ModelError::InvalidEstimate(format!(
                "confidence {} outside (0, 1]",
                self.confidence
            )));
        }
        if self.method == EstimateMethod::Manual && self.confidence != 1.0 {
            return Err(ModelError::InvalidEstimate(
                "manual estimates carry confidence 1.0".to_string(),
            ));
        }
        if self.iteration == 0 {
            return Err(ModelError::InvalidEstimate(
                "iteration must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// One discovered network node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: NodeId,
    pub addresses: BTreeSet<Ipv4Addr>,
    pub hostnames: BTreeSet<String>,
    pub device_class: DeviceClass,
    pub observations: Vec<Observation>,
    pub gateway: Option<GatewayEstimate>,
    pub first_seen_iteration: u32,
    /// Set when an operator fixed the device class by hand.
    #[serde(default)]
    pub manual_device_class: Option<DeviceClass>,
}

impl NodeRecord {
    pub fn new(addr: Ipv4Addr, first_seen_iteration: u32) -> Self {
        NodeRecord {
            node_id: NodeId(addr),
            addresses: BTreeSet::from([addr]),
            hostnames: BTreeSet::new(),
            device_class: DeviceClass::Unknown,
            observations: Vec::new(),
            gateway: None,
            first_seen_iteration,
            manual_device_class: None,
        }
    }

    pub fn address(&self) -> Ipv4Addr {
        self.node_id.address()
    }

    pub fn is_router(&self) -> bool {
        self.device_class == DeviceClass::Router
    }

    pub fn has_manual_gateway(&self) -> bool {
        matches!(&self.gateway, Some(g) if g.method == EstimateMethod::Manual)
    }

    /// Index of the newest observation for every tool. Newer timestamps win;
    /// equal timestamps fall back to insertion order.
    pub fn latest_index_by_tool(&self) -> std::collections::BTreeMap<&str, usize> {
        let mut latest: std::collections::BTreeMap<&str, usize> = Default::default();
        for (i, obs) in self.observations.iter().enumerate() {
            match latest.get(obs.tool_name.as_str()) {
                Some(&j) if self.observations[j].timestamp > obs.timestamp => {}
                _ => {
                    latest.insert(obs.tool_name.as_str(), i);
                }
            }
        }
        latest
    }

    pub fn latest_by_tool(&self) -> std::collections::BTreeMap<&str, &Observation> {
        self.latest_index_by_tool()
            .into_iter()
            .map(|(t, i)| (t, &self.observations[i]))
            .collect()
    }

    /// Newest observation overall, same ordering rule as [`Self::latest_by_tool`].
    pub fn newest_observation_where(
        &self,
        pred: impl Fn(&Observation) -> bool,
    ) -> Option<&Observation> {
        let mut best: Option<&Observation> = None;
        for obs in self.observations.iter().filter(|o| pred(o)) {
            match best {
                Some(b) if b.timestamp > obs.timestamp => {}
                _ => best = Some(obs),
            }
        }
        best
    }

    /// Newest trace among the latest observation of each tool.
    pub fn latest_trace(&self) -> Option<&TracePath> {
        self.newest_observation_where(|o| o.trace.is_some())
            .and_then(|o| o.trace.as_ref())
    }

    pub(crate) fn derive_device_class(&self) -> DeviceClass {
        if let Some(manual) = self.manual_device_class {
            return manual;
        }
        let mut any_os = false;
        for obs in &self.observations {
            for g in &obs.os_guesses {
                if g.is_router() {
                    return DeviceClass::Router;
                }
                any_os = true;
            }
        }
        if any_os {
            DeviceClass::Host
        } else {
            DeviceClass::Unknown
        }
    }
}

/// An address queued for scanning in a later iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub address: Ipv4Addr,
    pub origin_module: String,
    pub discovered_iteration: u32,
    pub scanned: bool,
}

impl SeedEntry {
    pub fn new(address: Ipv4Addr, origin_module: impl Into<String>, iteration: u32) -> Self {
        SeedEntry {
            address,
            origin_module: origin_module.into(),
            discovered_iteration: iteration,
            scanned: false,
        }
    }
}
