//! SNMP walker: system description plus the ARP table of every device that
//! showed 161/udp open.
//!
//! Both modes produce the same text document, a sequence of device blocks:
//!
//! ```text
//! # device 10.1.0.1 community public
//! SNMPv2-MIB::sysDescr.0 = STRING: Cisco IOS 15.2 (r1)
//! IP-MIB::ipNetToMediaPhysAddress.2.10.1.0.20 = STRING: 2:0:a:1:0:14
//! # device 10.2.0.1 refused
//! ```
//!
//! Lines after a header are snmpwalk's own output, so real-mode blocks are
//! the tool's stdout verbatim.

use std::fmt::Write as _;
use std::net::Ipv4Addr;
use std::time::Instant;

use chrono::Utc;
use serde_json::json;

use super::{
    fan_out, new_seeds, process, AdapterDescriptor, AdapterError, Backend, OptionSpec, OptionType,
    RawResult, ScanContext, ScannerAdapter,
};
use crate::model::{
    ArpEntry, Dataset, HostStatus, ModuleInvocation, ModuleKind, Observation, Protocol, SeedEntry,
    SnmpData,
};
use crate::net::{Cidr, TargetSpec};
use crate::simnet::{SimTopology, SnmpResponse};

pub const SNMPWALK_ID: &str = "snmpwalk";

const ARP_OID: &str = "IP-MIB::ipNetToMediaPhysAddress.";
const DESCR_OID: &str = "SNMPv2-MIB::sysDescr.0";

/// One block of the walk document.
#[derive(Debug, Clone, PartialEq)]
pub struct SnmpDevice {
    pub address: Ipv4Addr,
    /// Community that worked; `None` when every community was refused.
    pub community: Option<String>,
    pub data: SnmpData,
    /// Interface index per neighbour, parallel to `data.neighbors`.
    pub if_index: Vec<u32>,
}

pub fn write_snmp_document(devices: &[SnmpDevice]) -> String {
    let mut out = String::new();
    for d in devices {
        match &d.community {
            None => {
                let _ = writeln!(out, "# device {} refused", d.address);
            }
            Some(c) => {
                let _ = writeln!(out, "# device {} community {c}", d.address);
                if let Some(descr) = &d.data.system_description {
                    let _ = writeln!(out, "{DESCR_OID} = STRING: {descr}");
                }
                for (i, n) in d.data.neighbors.iter().enumerate() {
                    let idx = d.if_index.get(i).copied().unwrap_or(1);
                    let _ = writeln!(out, "{ARP_OID}{idx}.{} = STRING: {}", n.address, n.mac);
                }
            }
        }
    }
    out
}

fn bad(line_no: usize, message: impl Into<String>) -> AdapterError {
    AdapterError::Normalize {
        element: format!("line {line_no}"),
        message: message.into(),
    }
}

/// `2:0:a:1:0:14` and `02 00 0A 01 00 14` both become `02:00:0a:01:00:14`.
fn normalize_mac(value: &str) -> Option<String> {
    let value = value.trim();
    let parts: Vec<&str> = if value.contains(':') {
        value.split(':').collect()
    } else {
        value.split_whitespace().collect()
    };
    if parts.len() != 6 {
        return None;
    }
    let bytes: Option<Vec<u8>> = parts.iter().map(|p| u8::from_str_radix(p, 16).ok()).collect();
    Some(
        bytes?
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<Vec<_>>()
            .join(":"),
    )
}

fn value_of(line: &str) -> Option<&str> {
    let (_, rhs) = line.split_once(" = ")?;
    let (_, v) = rhs.split_once(": ").unwrap_or(("", rhs));
    Some(v.trim_matches('"'))
}

struct Block {
    address: Ipv4Addr,
    refused: bool,
    data: SnmpData,
}

/// One observation per device block of an SNMP walk document.
pub fn normalize_snmp(raw: &RawResult) -> Result<Vec<Observation>, AdapterError> {
    let text = raw.output_str()?;
    let mut blocks: Vec<Block> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix("# device ") {
            let mut words = header.split_whitespace();
            let address: Ipv4Addr = words
                .next()
                .and_then(|w| w.parse().ok())
                .ok_or_else(|| bad(line_no, "device header without address"))?;
            let refused = match words.next() {
                Some("refused") => true,
                Some("community") => false,
                _ => return Err(bad(line_no, "expected `refused` or `community <name>`")),
            };
            blocks.push(Block { address, refused, data: SnmpData::default() });
            continue;
        }
        let block = blocks
            .last_mut()
            .ok_or_else(|| bad(line_no, "output before the first device header"))?;
        if block.refused {
            return Err(bad(line_no, "output inside a refused block"));
        }
        if line.starts_with(DESCR_OID) {
            block.data.system_description = value_of(line).map(str::to_string);
        } else if let Some(rest) = line.strip_prefix(ARP_OID) {
            let (index, _) = rest.split_once(" = ").ok_or_else(|| bad(line_no, "ARP line without value"))?;
            let octets: Vec<&str> = index.split('.').collect();
            if octets.len() < 5 {
                return Err(bad(line_no, "ARP index must be <ifindex>.<a>.<b>.<c>.<d>"));
            }
            let address: Ipv4Addr = octets[octets.len() - 4..]
                .join(".")
                .parse()
                .map_err(|_| bad(line_no, "bad address in ARP index"))?;
            let mac = value_of(line)
                .and_then(normalize_mac)
                .ok_or_else(|| bad(line_no, "bad MAC address"))?;
            block.data.neighbors.push(ArpEntry { address, mac });
        }
        // other objects are ignored
    }
    Ok(blocks
        .into_iter()
        .map(|b| {
            if b.refused {
                let mut obs = raw.observation(b.address, HostStatus::Unknown);
                obs.note = Some("snmp refused: no community accepted".to_string());
                obs
            } else {
                let mut obs = raw.observation(b.address, HostStatus::Up);
                obs.snmp = Some(b.data);
                obs
            }
        })
        .collect())
}

pub struct SnmpWalkAdapter {
    backend: Backend,
}

impl SnmpWalkAdapter {
    pub fn new(backend: Backend) -> Self {
        SnmpWalkAdapter { backend }
    }
}

fn communities(inv: &ModuleInvocation) -> Vec<String> {
    inv.options
        .get("communities")
        .and_then(|v| v.as_array())
        .map(|a| a.iter().filter_map(|c| c.as_str().map(str::to_string)).collect())
        .unwrap_or_else(|| vec!["public".to_string()])
}

fn simulate_device(topo: &SimTopology, address: Ipv4Addr, communities: &[String]) -> SnmpDevice {
    for c in communities {
        if let SnmpResponse::Data(data) = topo.snmp_query(address, c) {
            let if_index = match topo.router(address) {
                Some(r) => data
                    .neighbors
                    .iter()
                    .map(|n| {
                        r.interfaces
                            .iter()
                            .position(|i| i.octets()[..3] == n.address.octets()[..3])
                            .map_or(1, |p| p as u32 + 1)
                    })
                    .collect(),
                None => Vec::new(),
            };
            return SnmpDevice { address, community: Some(c.clone()), data, if_index };
        }
    }
    SnmpDevice { address, community: None, data: SnmpData::default(), if_index: Vec::new() }
}

fn walk_external(
    tool: &std::path::Path,
    address: Ipv4Addr,
    communities: &[String],
    timeout: std::time::Duration,
) -> Result<String, AdapterError> {
    for c in communities {
        let mut block = format!("# device {address} community {c}\n");
        let mut ok = true;
        for oid in ["SNMPv2-MIB::sysDescr", "IP-MIB::ipNetToMediaPhysAddress"] {
            let args: Vec<String> = ["-v2c", "-c", c, "-t", "2", "-r", "1"]
                .iter()
                .map(|s| s.to_string())
                .chain([address.to_string(), oid.to_string()])
                .collect();
            let out = process::run_tool(tool, &args, timeout)?;
            if out.status != 0 {
                ok = false;
                break;
            }
            block.push_str(&String::from_utf8_lossy(&out.stdout));
        }
        if ok {
            return Ok(block);
        }
    }
    Ok(format!("# device {address} refused\n"))
}

fn addresses_of(targets: &TargetSpec) -> Vec<Ipv4Addr> {
    targets
        .entries()
        .iter()
        .flat_map(|c: &Cidr| {
            let start = u32::from(c.network());
            (0..c.size()).map(move |i| Ipv4Addr::from(start + i as u32))
        })
        .collect()
}

impl ScannerAdapter for SnmpWalkAdapter {
    fn descriptor(&self) -> AdapterDescriptor {
        AdapterDescriptor {
            module_id: SNMPWALK_ID.to_string(),
            kind: ModuleKind::Scanner,
            supported_options: vec![
                OptionSpec::new("communities", OptionType::StringList, json!(["public"])),
                OptionSpec::new("concurrency", OptionType::Number, json!(super::DEFAULT_CONCURRENCY)),
                OptionSpec::new("timeout_s", OptionType::Number, json!(3600)),
            ],
            mode: self.backend.mode(),
        }
    }

    /// Only known nodes inside `targets` with 161/udp open.
    fn select_targets(&self, _inv: &ModuleInvocation, targets: &TargetSpec, known: &Dataset) -> TargetSpec {
        known
            .nodes
            .values()
            .filter(|n| targets.contains(n.address()))
            .filter(|n| n.latest_by_tool().values().any(|o| o.has_open_port(161, Protocol::Udp)))
            .map(|n| Cidr::host(n.address()))
            .collect()
    }

    fn run(&self, inv: &ModuleInvocation, targets: &TargetSpec, ctx: &ScanContext) -> Result<RawResult, AdapterError> {
        let started_at = Utc::now();
        let clock = Instant::now();
        let communities = communities(inv);
        let cap = inv
            .options
            .get("concurrency")
            .and_then(|v| v.as_u64())
            .map_or(ctx.concurrency, |c| c as usize);
        let addrs = addresses_of(targets);
        let output = match &self.backend {
            Backend::Simulated(topo) => {
                let devices = fan_out(&addrs, cap, |a| simulate_device(topo, *a, &communities));
                write_snmp_document(&devices)
            }
            Backend::External(tools) => {
                let timeout = inv
                    .options
                    .get("timeout_s")
                    .and_then(|v| v.as_u64())
                    .map_or(tools.timeout, std::time::Duration::from_secs);
                let blocks = fan_out(&addrs, cap, |a| walk_external(&tools.snmpwalk, *a, &communities, timeout));
                blocks.into_iter().collect::<Result<Vec<_>, _>>()?.concat()
            }
        };
        Ok(RawResult {
            module_id: SNMPWALK_ID.to_string(),
            label: ctx.label.clone(),
            tool_options: inv.options_string(),
            iteration: ctx.iteration,
            started_at,
            exit_status: 0,
            output: output.into_bytes(),
            duration_s: clock.elapsed().as_secs_f64(),
        })
    }

    fn normalize(&self, raw: &RawResult) -> Result<Vec<Observation>, AdapterError> {
        normalize_snmp(raw)
    }

    fn extract_seeds(&self, observations: &[Observation], known: &Dataset, origin: &str, iteration: u32) -> Vec<SeedEntry> {
        let neighbours = observations
            .iter()
            .filter_map(|o| o.snmp.as_ref())
            .flat_map(|s| s.neighbors.iter().map(|n| n.address));
        new_seeds(neighbours, known, origin, iteration)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, Utc};

    fn raw(text: &str) -> RawResult {
        RawResult {
            module_id: SNMPWALK_ID.into(),
            label: "snmpwalk".into(),
            tool_options: String::new(),
            iteration: 2,
            started_at: DateTime::<Utc>::UNIX_EPOCH,
            exit_status: 0,
            output: text.as_bytes().to_vec(),
            duration_s: 0.0,
        }
    }

    #[test]
    fn parses_neighbours() {
        let text = "# device 10.1.0.1 community public\n\
            SNMPv2-MIB::sysDescr.0 = STRING: Cisco IOS\n\
            IP-MIB::ipNetToMediaPhysAddress.2.10.1.0.20 = STRING: 2:0:a:1:0:14\n\
            IP-MIB::ipNetToMediaPhysAddress.2.10.1.0.21 = Hex-STRING: 02 00 0A 01 00 15\n\
            IP-MIB::ipNetToMediaPhysAddress.1.10.0.0.7 = STRING: 2:0:a:0:0:7\n\
            SNMPv2-MIB::sysUpTime.0 = Timeticks: (100) 0:00:01.00\n";
        let obs = normalize_snmp(&raw(text)).unwrap();
        assert_eq!(obs.len(), 1);
        let snmp = obs[0].snmp.as_ref().unwrap();
        assert_eq!(snmp.neighbors.len(), 3);
        assert_eq!(snmp.neighbors[1].mac, "02:00:0a:01:00:15");
        assert_eq!(snmp.system_description.as_deref(), Some("Cisco IOS"));
    }

    #[test]
    fn refusal_and_empty_walk() {
        let obs = normalize_snmp(&raw("# device 10.1.0.1 refused\n# device 10.2.0.1 community public\n")).unwrap();
        assert!(obs[0].snmp.is_none());
        assert!(obs[0].note.as_deref().unwrap().contains("refused"));
        assert_eq!(obs[1].snmp.as_ref().unwrap().neighbors.len(), 0);
    }

    #[test]
    fn malformed_lines() {
        assert!(normalize_snmp(&raw("IP-MIB::ipNetToMediaPhysAddress.1.10.0.0.7 = STRING: 2:0:a:0:0:7\n")).is_err());
        assert!(normalize_snmp(&raw("# device 10.1.0.1 community public\nIP-MIB::ipNetToMediaPhysAddress.1.10.0.0.7 = STRING: zz\n")).is_err());
        assert!(normalize_snmp(&raw("# device nowhere community public\n")).is_err());
    }

    #[test]
    fn writer_round_trips() {
        let dev = SnmpDevice {
            address: "10.1.0.1".parse().unwrap(),
            community: Some("public".into()),
            data: SnmpData {
                system_description: Some("r".into()),
                neighbors: vec![ArpEntry { address: "10.1.0.9".parse().unwrap(), mac: "02:00:0a:01:00:09".into() }],
            },
            if_index: vec![1],
        };
        let obs = normalize_snmp(&raw(&write_snmp_document(&[dev.clone()]))).unwrap();
        assert_eq!(obs[0].snmp.as_ref(), Some(&dev.data));
    }
}
