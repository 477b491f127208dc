//! Deterministic simulated network.
//!
//! A topology is a tree of subnets joined by routers, with one scanner
//! attachment point. All queries are pure functions of the topology and
//! their arguments, which makes the simulation usable both as a hermetic
//! scan target and as ground truth for the gateway estimators.

mod generate;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::{ArpEntry, Hop, Protocol, SnmpData, TracePath};
use crate::net::Cidr;

pub use generate::{generate, GeneratorParams};

#[derive(Debug, thiserror::Error)]
pub enum TopologyError {
    #[error("topology parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Invariant { path: String, message: String },
    #[error("cannot read topology file: {0}")]
    Io(#[from] std::io::Error),
}

fn invariant(path: impl Into<String>, message: impl Into<String>) -> TopologyError {
    TopologyError::Invariant {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("{0} is unreachable")]
    Unreachable(Ipv4Addr),
    #[error("{0} is not a declared host")]
    UnknownHost(Ipv4Addr),
}

/// A port as written in topology files: `22/tcp` or `8443/tcp/https-alt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimPort {
    pub port: u16,
    pub protocol: Protocol,
    pub service: Option<String>,
}

impl SimPort {
    pub fn tcp(port: u16) -> Self {
        SimPort { port, protocol: Protocol::Tcp, service: None }
    }

    pub fn udp(port: u16) -> Self {
        SimPort { port, protocol: Protocol::Udp, service: None }
    }

    pub fn service_name(&self) -> Option<String> {
        self.service
            .clone()
            .or_else(|| well_known_service(self.port, self.protocol).map(str::to_string))
    }
}

/// Service names for the ports the simulated scanner probes by default.
pub fn well_known_service(port: u16, protocol: Protocol) -> Option<&'static str> {
    Some(match (port, protocol) {
        (21, Protocol::Tcp) => "ftp",
        (22, Protocol::Tcp) => "ssh",
        (23, Protocol::Tcp) => "telnet",
        (25, Protocol::Tcp) => "smtp",
        (53, _) => "domain",
        (80, Protocol::Tcp) => "http",
        (110, Protocol::Tcp) => "pop3",
        (135, Protocol::Tcp) => "msrpc",
        (139, Protocol::Tcp) => "netbios-ssn",
        (143, Protocol::Tcp) => "imap",
        (161, Protocol::Udp) => "snmp",
        (443, Protocol::Tcp) => "https",
        (445, Protocol::Tcp) => "microsoft-ds",
        (3306, Protocol::Tcp) => "mysql",
        (3389, Protocol::Tcp) => "ms-wbt-server",
        (8080, Protocol::Tcp) => "http-proxy",
        _ => return None,
    })
}

impl fmt::Display for SimPort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.port, self.protocol)?;
        if let Some(s) = &self.service {
            write!(f, "/{s}")?;
        }
        Ok(())
    }
}

impl FromStr for SimPort {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.splitn(3, '/');
        let port = parts
            .next()
            .and_then(|p| p.parse::<u16>().ok())
            .filter(|p| *p > 0)
            .ok_or_else(|| format!("bad port in `{s}`"))?;
        let protocol = parts
            .next()
            .ok_or_else(|| format!("missing protocol in `{s}`"))?
            .parse()?;
        let service = parts.next().map(str::to_string);
        Ok(SimPort { port, protocol, service })
    }
}

impl Serialize for SimPort {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SimPort {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_router_os() -> String {
    "Cisco IOS 15.2".to_string()
}

fn default_host_class() -> String {
    "general purpose".to_string()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRouter {
    pub name: String,
    pub interfaces: Vec<Ipv4Addr>,
    #[serde(default = "default_router_os")]
    pub os_label: String,
    #[serde(default)]
    pub snmp_community: Option<String>,
    #[serde(default)]
    pub system_description: Option<String>,
    #[serde(default)]
    pub open_ports: Vec<SimPort>,
    #[serde(default)]
    pub arp_table: Vec<ArpEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSubnet {
    pub cidr: Cidr,
    /// Router interface acting as the subnet's default gateway.
    pub gateway: Ipv4Addr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimHost {
    pub address: Ipv4Addr,
    pub os_label: String,
    #[serde(default = "default_host_class")]
    pub os_class: String,
    #[serde(default)]
    pub open_ports: Vec<SimPort>,
    #[serde(default = "yes")]
    pub responds_to_ping: bool,
    #[serde(default)]
    pub hostname: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleProtocol {
    Any,
    Tcp,
    Udp,
    Icmp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    Allow,
    Deny,
}

/// Firewall rule between the scanner and a destination. First match wins;
/// traffic matching no rule is allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRule {
    pub src: Cidr,
    pub dst: Cidr,
    #[serde(default = "any_protocol")]
    pub protocol: RuleProtocol,
    #[serde(default)]
    pub port: Option<u16>,
    pub action: RuleAction,
}

fn any_protocol() -> RuleProtocol {
    RuleProtocol::Any
}

impl SimRule {
    fn matches(&self, src: Ipv4Addr, dst: Ipv4Addr, protocol: RuleProtocol, port: Option<u16>) -> bool {
        self.src.contains(src)
            && self.dst.contains(dst)
            && (self.protocol == RuleProtocol::Any || self.protocol == protocol)
            && (self.port.is_none() || self.port == port)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScannerAttachment {
    pub subnet: Cidr,
    /// Defaults to the address just below the subnet's broadcast address.
    #[serde(default)]
    pub address: Option<Ipv4Addr>,
}

/// The on-disk topology document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDoc {
    #[serde(default)]
    pub name: String,
    pub scanner: ScannerAttachment,
    pub routers: Vec<SimRouter>,
    pub subnets: Vec<SimSubnet>,
    #[serde(default)]
    pub hosts: Vec<SimHost>,
    #[serde(default)]
    pub acls: Vec<SimRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Device {
    Host(usize),
    Router(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Vertex {
    Subnet(usize),
    Router(usize),
}

/// Result of probing one port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeResult {
    Open,
    Closed,
    Filtered,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SnmpResponse {
    Data(SnmpData),
    Refused,
}

/// A validated topology plus lookup indexes.
#[derive(Debug, Clone)]
pub struct SimTopology {
    doc: TopologyDoc,
    devices: BTreeMap<Ipv4Addr, Device>,
    scanner_subnet: usize,
    scanner_address: Ipv4Addr,
    /// For each subnet, the router one step closer to the scanner.
    subnet_parent: Vec<Option<usize>>,
    /// For each router, the subnet one step closer to the scanner.
    router_parent: Vec<Option<usize>>,
}

impl SimTopology {
    /// Parses and validates a topology document.
    pub fn from_json(s: &str) -> Result<Self, TopologyError> {
        let doc: TopologyDoc =
            serde_json::from_str(s).map_err(|e| TopologyError::Parse(e.to_string()))?;
        Self::from_doc(doc)
    }

    pub fn load(path: &Path) -> Result<Self, TopologyError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("topology serializes")
    }

    pub fn doc(&self) -> &TopologyDoc {
        &self.doc
    }

    pub fn name(&self) -> &str {
        &self.doc.name
    }

    pub fn routers(&self) -> &[SimRouter] {
        &self.doc.routers
    }

    pub fn subnets(&self) -> &[SimSubnet] {
        &self.doc.subnets
    }

    pub fn hosts(&self) -> &[SimHost] {
        &self.doc.hosts
    }

    pub fn scanner_address(&self) -> Ipv4Addr {
        self.scanner_address
    }

    /// DGW(X): the gateway of the subnet the scanner is attached to.
    pub fn scanner_gateway(&self) -> Ipv4Addr {
        self.doc.subnets[self.scanner_subnet].gateway
    }

    pub fn from_doc(doc: TopologyDoc) -> Result<Self, TopologyError> {
        let subnets = &doc.subnets;
        for (i, s) in subnets.iter().enumerate() {
            for (j, t) in subnets.iter().enumerate().skip(i + 1) {
                if s.cidr.overlaps(&t.cidr) {
                    return Err(invariant(
                        format!("subnets[{j}].cidr"),
                        format!("{} overlaps subnets[{i}] {}", t.cidr, s.cidr),
                    ));
                }
            }
        }
        let subnet_of = |addr: Ipv4Addr| subnets.iter().position(|s| s.cidr.contains(addr));

        let mut devices = BTreeMap::new();
        let mut edges: Vec<(usize, usize)> = Vec::new(); // (router, subnet)
        for (r, router) in doc.routers.iter().enumerate() {
            if router.interfaces.is_empty() {
                return Err(invariant(format!("routers[{r}].interfaces"), "router has no interfaces"));
            }
            for (k, iface) in router.interfaces.iter().enumerate() {
                let path = format!("routers[{r}].interfaces[{k}]");
                let s = subnet_of(*iface)
                    .ok_or_else(|| invariant(&path, format!("{iface} lies in no declared subnet")))?;
                if edges.contains(&(r, s)) {
                    return Err(invariant(&path, "router has two interfaces in one subnet"));
                }
                if devices.insert(*iface, Device::Router(r)).is_some() {
                    return Err(invariant(&path, format!("address {iface} used twice")));
                }
                edges.push((r, s));
            }
        }
        for (h, host) in doc.hosts.iter().enumerate() {
            let path = format!("hosts[{h}].address");
            if subnet_of(host.address).is_none() {
                return Err(invariant(
                    &path,
                    format!("host {} lies outside every declared subnet", host.address),
                ));
            }
            if devices.insert(host.address, Device::Host(h)).is_some() {
                return Err(invariant(&path, format!("address {} used twice", host.address)));
            }
        }
        for (s, subnet) in subnets.iter().enumerate() {
            let path = format!("subnets[{s}].gateway");
            if !subnet.cidr.contains(subnet.gateway) {
                return Err(invariant(&path, format!("{} is outside {}", subnet.gateway, subnet.cidr)));
            }
            if !matches!(devices.get(&subnet.gateway), Some(Device::Router(_))) {
                return Err(invariant(&path, format!("{} is not a router interface", subnet.gateway)));
            }
        }

        let scanner_subnet = subnets
            .iter()
            .position(|s| s.cidr == doc.scanner.subnet)
            .ok_or_else(|| invariant("scanner.subnet", format!("{} is not declared", doc.scanner.subnet)))?;
        let scanner_address = doc.scanner.address.unwrap_or_else(|| {
            Ipv4Addr::from(u32::from(subnets[scanner_subnet].cidr.broadcast()).saturating_sub(1))
        });
        if !doc.scanner.subnet.contains(scanner_address) {
            return Err(invariant("scanner.address", "scanner address outside its subnet"));
        }
        if devices.contains_key(&scanner_address) {
            return Err(invariant("scanner.address", format!("{scanner_address} is already in use")));
        }

        // Routers and subnets must form a tree; orient it from the scanner.
        let n_routers = doc.routers.len();
        let n_vertices = n_routers + subnets.len();
        if edges.len() + 1 != n_vertices {
            return Err(invariant(
                "routers",
                format!(
                    "router/subnet graph is not a tree ({} links for {} vertices)",
                    edges.len(),
                    n_vertices
                ),
            ));
        }
        let mut subnet_parent = vec![None; subnets.len()];
        let mut router_parent = vec![None; n_routers];
        let mut seen_subnet = vec![false; subnets.len()];
        let mut seen_router = vec![false; n_routers];
        let mut queue = VecDeque::from([Vertex::Subnet(scanner_subnet)]);
        seen_subnet[scanner_subnet] = true;
        while let Some(v) = queue.pop_front() {
            match v {
                Vertex::Subnet(s) => {
                    for &(r, _) in edges.iter().filter(|(_, es)| *es == s) {
                        if !seen_router[r] {
                            seen_router[r] = true;
                            router_parent[r] = Some(s);
                            queue.push_back(Vertex::Router(r));
                        }
                    }
                }
                Vertex::Router(r) => {
                    for &(_, s) in edges.iter().filter(|(er, _)| *er == r) {
                        if !seen_subnet[s] {
                            seen_subnet[s] = true;
                            subnet_parent[s] = Some(r);
                            queue.push_back(Vertex::Subnet(s));
                        }
                    }
                }
            }
        }
        if let Some(s) = seen_subnet.iter().position(|x| !x) {
            return Err(invariant(format!("subnets[{s}]"), "subnet is not connected to the scanner"));
        }
        if let Some(r) = seen_router.iter().position(|x| !x) {
            return Err(invariant(format!("routers[{r}]"), "router is not connected to the scanner"));
        }
        // A subnet's gateway must be the router that leads towards the scanner.
        for (s, subnet) in subnets.iter().enumerate() {
            if let (Some(parent), Some(Device::Router(gw))) = (subnet_parent[s], devices.get(&subnet.gateway)) {
                if parent != *gw {
                    return Err(invariant(
                        format!("subnets[{s}].gateway"),
                        format!(
                            "gateway {} belongs to `{}`, but the subnet is reached through `{}`",
                            subnet.gateway, doc.routers[*gw].name, doc.routers[parent].name
                        ),
                    ));
                }
            }
        }

        Ok(SimTopology {
            doc,
            devices,
            scanner_subnet,
            scanner_address,
            subnet_parent,
            router_parent,
        })
    }

    fn subnet_index(&self, addr: Ipv4Addr) -> Option<usize> {
        self.doc.subnets.iter().position(|s| s.cidr.contains(addr))
    }

    fn router_iface_in(&self, router: usize, subnet: usize) -> Ipv4Addr {
        let cidr = self.doc.subnets[subnet].cidr;
        *self.doc.routers[router]
            .interfaces
            .iter()
            .find(|a| cidr.contains(**a))
            .expect("router adjacent to subnet has an interface in it")
    }

    fn acl_allows(&self, dst: Ipv4Addr, protocol: RuleProtocol, port: Option<u16>) -> bool {
        self.doc
            .acls
            .iter()
            .find(|r| r.matches(self.scanner_address, dst, protocol, port))
            .map_or(true, |r| r.action == RuleAction::Allow)
    }

    pub fn host(&self, addr: Ipv4Addr) -> Option<&SimHost> {
        match self.devices.get(&addr) {
            Some(Device::Host(h)) => Some(&self.doc.hosts[*h]),
            _ => None,
        }
    }

    pub fn router(&self, addr: Ipv4Addr) -> Option<&SimRouter> {
        match self.devices.get(&addr) {
            Some(Device::Router(r)) => Some(&self.doc.routers[*r]),
            _ => None,
        }
    }

    /// Every host address and router interface inside `range`, in address order.
    pub fn devices_in(&self, range: &Cidr) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.devices
            .range(range.network()..=range.broadcast())
            .map(|(a, _)| *a)
    }

    /// Whether `addr` answers host discovery (ICMP echo) from the scanner.
    pub fn responds(&self, addr: Ipv4Addr) -> bool {
        let alive = match self.devices.get(&addr) {
            Some(Device::Host(h)) => self.doc.hosts[*h].responds_to_ping,
            Some(Device::Router(_)) => true,
            None => false,
        };
        alive && self.acl_allows(addr, RuleProtocol::Icmp, None)
    }

    fn open_ports_of(&self, addr: Ipv4Addr) -> Vec<SimPort> {
        match self.devices.get(&addr) {
            Some(Device::Host(h)) => self.doc.hosts[*h].open_ports.clone(),
            Some(Device::Router(r)) => {
                let router = &self.doc.routers[*r];
                let mut ports = router.open_ports.clone();
                if router.snmp_community.is_some()
                    && !ports.iter().any(|p| p.port == 161 && p.protocol == Protocol::Udp)
                {
                    ports.push(SimPort::udp(161));
                }
                ports
            }
            None => Vec::new(),
        }
    }

    /// Service name the device would announce on an open port.
    pub fn service_on(&self, addr: Ipv4Addr, port: u16, protocol: Protocol) -> Option<String> {
        self.open_ports_of(addr)
            .into_iter()
            .find(|p| p.port == port && p.protocol == protocol)
            .and_then(|p| p.service_name())
    }

    /// Ports the device declares open, in declaration order.
    pub fn declared_ports(&self, addr: Ipv4Addr) -> Vec<SimPort> {
        self.open_ports_of(addr)
    }

    pub fn probe(&self, to: Ipv4Addr, protocol: Protocol, port: u16) -> ProbeResult {
        if !self.devices.contains_key(&to) {
            return ProbeResult::Unreachable;
        }
        let rule_proto = match protocol {
            Protocol::Tcp => RuleProtocol::Tcp,
            Protocol::Udp => RuleProtocol::Udp,
        };
        if !self.acl_allows(to, rule_proto, Some(port)) {
            return ProbeResult::Filtered;
        }
        let open = self
            .open_ports_of(to)
            .iter()
            .any(|p| p.port == port && p.protocol == protocol);
        if open {
            ProbeResult::Open
        } else {
            ProbeResult::Closed
        }
    }

    /// Hop list from the scanner to `to`. Each router on the way reports the
    /// interface it forwards out of; the final hop is the target itself.
    pub fn trace(&self, to: Ipv4Addr) -> Result<TracePath, SimError> {
        let device = *self.devices.get(&to).ok_or(SimError::Unreachable(to))?;
        // Walk from the target's anchor up to the scanner subnet.
        let mut routers_on_path: Vec<(usize, usize)> = Vec::new(); // (router, egress subnet)
        let mut subnet = match device {
            Device::Host(_) => self.subnet_index(to).ok_or(SimError::Unreachable(to))?,
            Device::Router(r) => self.router_parent[r].expect("every router has a parent subnet"),
        };
        while let Some(r) = self.subnet_parent[subnet] {
            routers_on_path.push((r, subnet));
            subnet = self.router_parent[r].expect("every router has a parent subnet");
        }
        routers_on_path.reverse();

        let mut hops = Vec::with_capacity(routers_on_path.len() + 1);
        for (i, (r, egress)) in routers_on_path.iter().enumerate() {
            let iface = self.router_iface_in(*r, *egress);
            let address = self
                .acl_allows(iface, RuleProtocol::Icmp, None)
                .then_some(iface);
            hops.push(Hop {
                position: i as u32 + 1,
                address,
                rtt_ms: Some((i + 1) as f64),
            });
        }
        let n = hops.len() as u32 + 1;
        hops.push(Hop {
            position: n,
            address: Some(to),
            rtt_ms: Some(f64::from(n)),
        });
        Ok(TracePath::new(hops).expect("positions are sequential"))
    }

    /// The default gateway the host is configured with.
    pub fn ground_truth_gateway(&self, host: Ipv4Addr) -> Result<Ipv4Addr, SimError> {
        match self.devices.get(&host) {
            Some(Device::Host(_)) => {
                let s = self.subnet_index(host).ok_or(SimError::UnknownHost(host))?;
                Ok(self.doc.subnets[s].gateway)
            }
            _ => Err(SimError::UnknownHost(host)),
        }
    }

    pub fn snmp_query(&self, router: Ipv4Addr, community: &str) -> SnmpResponse {
        let Some(Device::Router(r)) = self.devices.get(&router) else {
            return SnmpResponse::Refused;
        };
        if !self.acl_allows(router, RuleProtocol::Udp, Some(161)) {
            return SnmpResponse::Refused;
        }
        let r = &self.doc.routers[*r];
        match &r.snmp_community {
            Some(c) if c == community => SnmpResponse::Data(SnmpData {
                system_description: Some(
                    r.system_description
                        .clone()
                        .unwrap_or_else(|| format!("{} ({})", r.os_label, r.name)),
                ),
                neighbors: r.arp_table.clone(),
            }),
            _ => SnmpResponse::Refused,
        }
    }

    /// OS label and device class the simulated fingerprinting reports.
    pub fn os_of(&self, addr: Ipv4Addr) -> Option<(String, String)> {
        match self.devices.get(&addr)? {
            Device::Host(h) => {
                let host = &self.doc.hosts[*h];
                Some((host.os_label.clone(), host.os_class.clone()))
            }
            Device::Router(r) => Some((self.doc.routers[*r].os_label.clone(), "router".to_string())),
        }
    }

    pub fn hostname_of(&self, addr: Ipv4Addr) -> Option<&str> {
        self.host(addr).and_then(|h| h.hostname.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SMALL: &str = r#"{
      "name": "small",
      "scanner": {"subnet": "10.0.0.0/24"},
      "routers": [
        {"name": "r1", "interfaces": ["10.0.0.1", "10.1.0.1"], "snmp_community": "public",
         "arp_table": [{"address": "10.1.0.7", "mac": "02:00:00:00:01:07"}]},
        {"name": "r2", "interfaces": ["10.1.0.2", "10.2.0.1"]}
      ],
      "subnets": [
        {"cidr": "10.0.0.0/24", "gateway": "10.0.0.1"},
        {"cidr": "10.1.0.0/24", "gateway": "10.1.0.1"},
        {"cidr": "10.2.0.0/24", "gateway": "10.2.0.1"}
      ],
      "hosts": [
        {"address": "10.0.0.9", "os_label": "Linux 5.4", "open_ports": ["22/tcp"]},
        {"address": "10.1.0.7", "os_label": "Linux 5.4", "open_ports": ["80/tcp"]},
        {"address": "10.2.0.7", "os_label": "Windows 10", "open_ports": ["445/tcp", "23/tcp"]},
        {"address": "10.2.0.8", "os_label": "Windows 10", "responds_to_ping": false}
      ],
      "acls": [
        {"src": "0.0.0.0/0", "dst": "10.2.0.0/24", "protocol": "tcp", "port": 23, "action": "deny"}
      ]
    }"#;

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn small() -> SimTopology {
        SimTopology::from_json(SMALL).unwrap()
    }

    #[test]
    fn empty_document_is_parse_error() {
        assert!(matches!(SimTopology::from_json(""), Err(TopologyError::Parse(_))));
    }

    #[test]
    fn host_outside_subnets_rejected() {
        let doc = SMALL.replace("\"10.2.0.8\"", "\"10.9.0.8\"");
        let err = SimTopology::from_json(&doc).unwrap_err();
        match err {
            TopologyError::Invariant { path, .. } => assert_eq!(path, "hosts[3].address"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn cycle_is_not_a_tree() {
        // r2 gets a second leg into the scanner subnet.
        let doc = SMALL.replace("\"10.1.0.2\", \"10.2.0.1\"", "\"10.1.0.2\", \"10.2.0.1\", \"10.0.0.2\"");
        assert!(matches!(
            SimTopology::from_json(&doc),
            Err(TopologyError::Invariant { .. })
        ));
    }

    #[test]
    fn gateway_must_face_scanner() {
        let doc = SMALL.replace(
            r#"{"cidr": "10.1.0.0/24", "gateway": "10.1.0.1"}"#,
            r#"{"cidr": "10.1.0.0/24", "gateway": "10.1.0.2"}"#,
        );
        assert!(SimTopology::from_json(&doc).is_err());
    }

    #[test]
    fn probe_states() {
        let t = small();
        assert_eq!(t.probe(ip("10.1.0.7"), Protocol::Tcp, 80), ProbeResult::Open);
        assert_eq!(t.probe(ip("10.1.0.7"), Protocol::Tcp, 81), ProbeResult::Closed);
        assert_eq!(t.probe(ip("10.2.0.7"), Protocol::Tcp, 23), ProbeResult::Filtered);
        assert_eq!(t.probe(ip("10.7.0.1"), Protocol::Tcp, 80), ProbeResult::Unreachable);
        assert_eq!(t.probe(ip("10.1.0.1"), Protocol::Udp, 161), ProbeResult::Open);
    }

    #[test]
    fn trace_paths() {
        let t = small();
        let same = t.trace(ip("10.0.0.9")).unwrap();
        assert_eq!(same.addresses().collect::<Vec<_>>(), vec![ip("10.0.0.9")]);
        let deep = t.trace(ip("10.2.0.7")).unwrap();
        assert_eq!(
            deep.addresses().collect::<Vec<_>>(),
            vec![ip("10.1.0.1"), ip("10.2.0.1"), ip("10.2.0.7")]
        );
        assert_eq!(deep.hops[2].rtt_ms, Some(3.0));
        // router targets: r2's uplink is reached through r1
        let r2 = t.trace(ip("10.1.0.2")).unwrap();
        assert_eq!(r2.addresses().collect::<Vec<_>>(), vec![ip("10.1.0.1"), ip("10.1.0.2")]);
        assert!(matches!(t.trace(ip("10.5.0.1")), Err(SimError::Unreachable(_))));
    }

    #[test]
    fn acl_hides_middle_hop() {
        let doc = SMALL.replace(
            r#""acls": ["#,
            r#""acls": [{"src": "0.0.0.0/0", "dst": "10.1.0.1", "protocol": "icmp", "action": "deny"},"#,
        );
        let t = SimTopology::from_json(&doc).unwrap();
        let tr = t.trace(ip("10.2.0.7")).unwrap();
        assert!(!tr.complete);
        assert_eq!(tr.hops[0].address, None);
        assert_eq!(tr.hops[1].address, Some(ip("10.2.0.1")));
    }

    #[test]
    fn ground_truth() {
        let t = small();
        assert_eq!(t.ground_truth_gateway(ip("10.2.0.7")).unwrap(), ip("10.2.0.1"));
        assert_eq!(t.ground_truth_gateway(ip("10.0.0.9")).unwrap(), t.scanner_gateway());
        assert!(t.ground_truth_gateway(ip("10.2.0.99")).is_err());
    }

    #[test]
    fn snmp_community_check() {
        let t = small();
        match t.snmp_query(ip("10.1.0.1"), "public") {
            SnmpResponse::Data(d) => assert_eq!(d.neighbors.len(), 1),
            SnmpResponse::Refused => panic!("expected data"),
        }
        assert_eq!(t.snmp_query(ip("10.1.0.1"), "private"), SnmpResponse::Refused);
        assert_eq!(t.snmp_query(ip("10.2.0.1"), "public"), SnmpResponse::Refused);
    }

    #[test]
    fn discovery_respects_ping() {
        let t = small();
        assert!(t.responds(ip("10.2.0.7")));
        assert!(!t.responds(ip("10.2.0.8")));
        let all: Vec<_> = t.devices_in(&"10.2.0.0/24".parse().unwrap()).collect();
        assert_eq!(all, vec![ip("10.2.0.1"), ip("10.2.0.7"), ip("10.2.0.8")]);
    }

    #[test]
    fn queries_are_repeatable() {
        let t = small();
        for addr in ["10.0.0.9", "10.1.0.7", "10.2.0.7", "10.1.0.2"] {
            assert_eq!(t.trace(ip(addr)), t.trace(ip(addr)));
            assert_eq!(t.probe(ip(addr), Protocol::Tcp, 22), t.probe(ip(addr), Protocol::Tcp, 22));
        }
    }
}
