//! Port scanner adapter built around the nmap XML output format.
//!
//! Real mode runs nmap with XML output to a temp file; simulated mode writes
//! the same kind of document from simnet probes, so both paths go through
//! [`normalize_portscan`].

use std::fmt::Write as _;
use std::net::Ipv4Addr;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde_json::json;

use super::{
    fan_out, new_seeds, process, AdapterDescriptor, AdapterError, Backend, OptionSpec, OptionType,
    RawResult, ScanContext, ScannerAdapter,
};
use crate::model::{
    Dataset, Hop, HostStatus, ModuleInvocation, ModuleKind, Observation, OsGuess, PortFinding,
    PortState, Protocol, SeedEntry, TracePath,
};
use crate::net::TargetSpec;
use crate::simnet::{ProbeResult, SimTopology};

pub const NMAP_ID: &str = "nmap";

/// TCP ports probed by the simulated scan unless `ports` adds more.
pub const SIM_TOP_PORTS: &[u16] = &[21, 22, 23, 25, 53, 80, 110, 135, 139, 143, 443, 445, 3389, 8080];

const SIM_OS_ACCURACY: u8 = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Port scan only.
    Basic,
    /// Port scan plus traceroute and OS detection.
    Full,
    /// UDP scan of the SNMP port.
    Udp161,
}

impl Profile {
    fn from_invocation(inv: &ModuleInvocation) -> Result<Self, AdapterError> {
        match inv.option_str("profile").unwrap_or("basic") {
            "basic" => Ok(Profile::Basic),
            "full" => Ok(Profile::Full),
            "udp161" => Ok(Profile::Udp161),
            other => Err(AdapterError::InvalidOption {
                module: NMAP_ID.to_string(),
                option: "profile".to_string(),
                message: format!("unknown profile `{other}` (basic, full, udp161)"),
            }),
        }
    }
}

fn extra_ports(inv: &ModuleInvocation) -> Vec<u16> {
    inv.options
        .get("ports")
        .and_then(|v| v.as_array())
        .map(|a| a.iter().filter_map(|p| p.as_u64()).filter_map(|p| u16::try_from(p).ok()).collect())
        .unwrap_or_default()
}

fn concurrency(inv: &ModuleInvocation, ctx: &ScanContext) -> usize {
    inv.options
        .get("concurrency")
        .and_then(|v| v.as_u64())
        .map(|c| c as usize)
        .unwrap_or(ctx.concurrency)
}

pub struct PortScanAdapter {
    backend: Backend,
}

impl PortScanAdapter {
    pub fn new(backend: Backend) -> Self {
        PortScanAdapter { backend }
    }
}

impl ScannerAdapter for PortScanAdapter {
    fn descriptor(&self) -> AdapterDescriptor {
        AdapterDescriptor {
            module_id: NMAP_ID.to_string(),
            kind: ModuleKind::Scanner,
            supported_options: vec![
                OptionSpec::new("profile", OptionType::String, json!("basic")),
                OptionSpec::new("ports", OptionType::NumberList, json!([])),
                OptionSpec::new("concurrency", OptionType::Number, json!(super::DEFAULT_CONCURRENCY)),
                OptionSpec::new("timeout_s", OptionType::Number, json!(3600)),
            ],
            mode: self.backend.mode(),
        }
    }

    fn run(&self, inv: &ModuleInvocation, targets: &TargetSpec, ctx: &ScanContext) -> Result<RawResult, AdapterError> {
        let profile = Profile::from_invocation(inv)?;
        let started_at = Utc::now();
        let clock = Instant::now();
        let (exit_status, output) = if targets.is_empty() {
            (0, write_nmap_xml(&[], "", started_at).into_bytes())
        } else {
            match &self.backend {
                Backend::Simulated(topo) => {
                    let obs = simulate(topo, profile, &extra_ports(inv), targets, concurrency(inv, ctx));
                    (0, write_nmap_xml(&obs, &sim_args(profile, targets), started_at).into_bytes())
                }
                Backend::External(tools) => {
                    let timeout = inv
                        .options
                        .get("timeout_s")
                        .and_then(|v| v.as_u64())
                        .map(std::time::Duration::from_secs)
                        .unwrap_or(tools.timeout);
                    run_external(&tools.nmap, profile, &extra_ports(inv), targets, timeout)?
                }
            }
        };
        Ok(RawResult {
            module_id: NMAP_ID.to_string(),
            label: ctx.label.clone(),
            tool_options: inv.options_string(),
            iteration: ctx.iteration,
            started_at,
            exit_status,
            output,
            duration_s: clock.elapsed().as_secs_f64(),
        })
    }

    fn normalize(&self, raw: &RawResult) -> Result<Vec<Observation>, AdapterError> {
        normalize_portscan(raw)
    }

    fn extract_seeds(&self, observations: &[Observation], known: &Dataset, origin: &str, iteration: u32) -> Vec<SeedEntry> {
        let hops = observations
            .iter()
            .filter(|o| o.status == HostStatus::Up)
            .filter_map(|o| o.trace.as_ref())
            .flat_map(|t| t.addresses().collect::<Vec<_>>());
        new_seeds(hops, known, origin, iteration)
    }
}

fn profile_args(profile: Profile, ports: &[u16]) -> Vec<String> {
    let mut args = Vec::new();
    match profile {
        Profile::Basic => {}
        Profile::Full => args.extend(["--traceroute".to_string(), "-O".to_string()]),
        Profile::Udp161 => args.extend(["-sU".to_string(), "-p".to_string(), "161".to_string()]),
    }
    if !ports.is_empty() && profile != Profile::Udp161 {
        let list: Vec<String> = ports.iter().map(u16::to_string).collect();
        args.push("-p".to_string());
        args.push(list.join(","));
    }
    args
}

fn sim_args(profile: Profile, targets: &TargetSpec) -> String {
    let mut args = vec!["nmap".to_string(), "-oX".to_string(), "-".to_string(), "-n".to_string()];
    args.extend(profile_args(profile, &[]));
    args.extend(targets.entries().iter().map(ToString::to_string));
    args.join(" ")
}

fn run_external(
    nmap: &std::path::Path,
    profile: Profile,
    ports: &[u16],
    targets: &TargetSpec,
    timeout: std::time::Duration,
) -> Result<(i32, Vec<u8>), AdapterError> {
    let out_file = tempfile::NamedTempFile::new()?;
    let mut args = vec!["-oX".to_string(), out_file.path().display().to_string(), "-n".to_string()];
    args.extend(profile_args(profile, ports));
    args.extend(targets.entries().iter().map(ToString::to_string));
    let result = process::run_tool(nmap, &args, timeout)?;
    let output = std::fs::read(out_file.path()).unwrap_or_default();
    if result.status != 0 && output.is_empty() {
        return Err(AdapterError::ToolFailed {
            tool: nmap.display().to_string(),
            status: result.status,
            stderr: result.stderr,
        });
    }
    Ok((result.status, output))
}

/// What a scan of `targets` would report on the simulated network.
fn simulate(topo: &SimTopology, profile: Profile, extra: &[u16], targets: &TargetSpec, cap: usize) -> Vec<Observation> {
    let mut addrs: Vec<Ipv4Addr> = targets
        .entries()
        .iter()
        .flat_map(|c| topo.devices_in(c).collect::<Vec<_>>())
        .filter(|a| topo.responds(*a))
        .collect();
    addrs.sort();
    addrs.dedup();

    let mut tcp: Vec<u16> = SIM_TOP_PORTS.to_vec();
    tcp.extend_from_slice(extra);
    tcp.sort();
    tcp.dedup();
    let probes: Vec<(u16, Protocol)> = match profile {
        Profile::Udp161 => vec![(161, Protocol::Udp)],
        _ => tcp.into_iter().map(|p| (p, Protocol::Tcp)).collect(),
    };

    let epoch = DateTime::<Utc>::UNIX_EPOCH;
    fan_out(&addrs, cap, |addr| {
        let mut obs = Observation::new("", 0, epoch, *addr, HostStatus::Up);
        if let Some(h) = topo.hostname_of(*addr) {
            obs.hostnames.push(h.to_string());
        }
        for (port, protocol) in &probes {
            let state = match topo.probe(*addr, *protocol, *port) {
                ProbeResult::Open => PortState::Open,
                ProbeResult::Filtered => PortState::Filtered,
                ProbeResult::Closed | ProbeResult::Unreachable => continue,
            };
            obs.ports.push(PortFinding {
                port: *port,
                protocol: *protocol,
                state,
                service_name: topo.service_on(*addr, *port, *protocol),
            });
        }
        if profile == Profile::Full {
            if let Some((name, class)) = topo.os_of(*addr) {
                obs.os_guesses.push(OsGuess { name, class, accuracy: SIM_OS_ACCURACY });
            }
            obs.trace = topo.trace(*addr).ok();
        }
        obs
    })
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn status_str(s: HostStatus) -> &'static str {
    match s {
        HostStatus::Up => "up",
        HostStatus::Down => "down",
        HostStatus::Unknown => "unknown",
    }
}

fn state_str(s: PortState) -> &'static str {
    match s {
        PortState::Open => "open",
        PortState::Closed => "closed",
        PortState::Filtered => "filtered",
    }
}

/// Serializes observations as an nmap XML document. Only the elements that
/// [`normalize_portscan`] reads are written.
pub fn write_nmap_xml(observations: &[Observation], args: &str, started: DateTime<Utc>) -> String {
    let mut x = String::new();
    x.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        x,
        "<nmaprun scanner=\"nmap\" args=\"{}\" start=\"{}\" xmloutputversion=\"1.05\">",
        escape(args),
        started.timestamp()
    );
    for o in observations {
        x.push_str("<host>\n");
        let _ = writeln!(x, "<status state=\"{}\"/>", status_str(o.status));
        let _ = writeln!(x, "<address addr=\"{}\" addrtype=\"ipv4\"/>", o.target);
        if !o.hostnames.is_empty() {
            x.push_str("<hostnames>\n");
            for h in &o.hostnames {
                let _ = writeln!(x, "<hostname name=\"{}\" type=\"PTR\"/>", escape(h));
            }
            x.push_str("</hostnames>\n");
        }
        if !o.ports.is_empty() {
            x.push_str("<ports>\n");
            for p in &o.ports {
                let _ = write!(
                    x,
                    "<port protocol=\"{}\" portid=\"{}\"><state state=\"{}\"/>",
                    p.protocol,
                    p.port,
                    state_str(p.state)
                );
                if let Some(s) = &p.service_name {
                    let _ = write!(x, "<service name=\"{}\"/>", escape(s));
                }
                x.push_str("</port>\n");
            }
            x.push_str("</ports>\n");
        }
        if !o.os_guesses.is_empty() {
            x.push_str("<os>\n");
            for g in &o.os_guesses {
                let _ = writeln!(
                    x,
                    "<osmatch name=\"{}\" accuracy=\"{}\"><osclass type=\"{}\" accuracy=\"{}\"/></osmatch>",
                    escape(&g.name),
                    g.accuracy,
                    escape(&g.class),
                    g.accuracy
                );
            }
            x.push_str("</os>\n");
        }
        if let Some(t) = &o.trace {
            x.push_str("<trace>\n");
            for h in &t.hops {
                let Some(addr) = h.address else { continue };
                let _ = write!(x, "<hop ttl=\"{}\" ipaddr=\"{}\"", h.position, addr);
                if let Some(rtt) = h.rtt_ms {
                    let _ = write!(x, " rtt=\"{rtt}\"");
                }
                x.push_str("/>\n");
            }
            x.push_str("</trace>\n");
        }
        x.push_str("</host>\n");
    }
    let up = observations.iter().filter(|o| o.status == HostStatus::Up).count();
    let _ = writeln!(
        x,
        "<runstats><hosts up=\"{up}\" down=\"{}\" total=\"{}\"/></runstats>",
        observations.len() - up,
        observations.len()
    );
    x.push_str("</nmaprun>\n");
    x
}

fn bad(element: &str, message: impl Into<String>) -> AdapterError {
    AdapterError::Normalize { element: element.to_string(), message: message.into() }
}

fn attr<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Result<&'a str, AdapterError> {
    node.attribute(name)
        .ok_or_else(|| bad(node.tag_name().name(), format!("missing attribute `{name}`")))
}

fn parse_attr<T: std::str::FromStr>(node: roxmltree::Node<'_, '_>, name: &str) -> Result<T, AdapterError> {
    let v = attr(node, name)?;
    v.parse()
        .map_err(|_| bad(node.tag_name().name(), format!("bad value `{v}` for `{name}`")))
}

fn children<'a, 'i>(node: roxmltree::Node<'a, 'i>, tag: &'static str) -> impl Iterator<Item = roxmltree::Node<'a, 'i>> {
    node.children().filter(move |c| c.is_element() && c.tag_name().name() == tag)
}

/// Name of the innermost element still open at byte `pos`; used to point
/// at the offending element when the document does not parse.
fn open_element_at(text: &str, pos: usize) -> String {
    let mut stack: Vec<&str> = Vec::new();
    let bytes = &text[..pos.min(text.len())];
    let mut rest = bytes;
    while let Some(i) = rest.find('<') {
        rest = &rest[i + 1..];
        let end = rest.find('>').unwrap_or(rest.len());
        let tag = &rest[..end];
        if tag.starts_with('?') || tag.starts_with('!') {
            continue;
        }
        if let Some(closing) = tag.strip_prefix('/') {
            let name = closing.trim();
            if let Some(p) = stack.iter().rposition(|n| *n == name) {
                stack.truncate(p);
            }
        } else {
            let name = tag.split(|c: char| c.is_whitespace() || c == '/').next().unwrap_or("");
            if !tag.ends_with('/') && !name.is_empty() {
                stack.push(name);
            } else if end == rest.len() {
                // tag cut off mid-way
                return name.to_string();
            }
        }
    }
    stack.last().map_or_else(|| "document".to_string(), |s| s.to_string())
}

fn byte_offset(text: &str, pos: roxmltree::TextPos) -> usize {
    let mut offset = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        if i + 1 == pos.row as usize {
            let col: usize = line.chars().take(pos.col as usize - 1).map(char::len_utf8).sum();
            return offset + col;
        }
        offset += line.len();
    }
    text.len()
}

fn parse_port_state(node: roxmltree::Node<'_, '_>) -> Result<PortState, AdapterError> {
    let s = attr(node, "state")?;
    Ok(match s {
        "open" => PortState::Open,
        "closed" | "unfiltered" => PortState::Closed,
        "filtered" | "open|filtered" | "closed|filtered" => PortState::Filtered,
        other => return Err(bad("state", format!("unknown port state `{other}`"))),
    })
}

fn parse_host(raw: &RawResult, host: roxmltree::Node<'_, '_>) -> Result<Observation, AdapterError> {
    let status = match children(host, "status").next() {
        Some(s) => match attr(s, "state")? {
            "up" => HostStatus::Up,
            "down" => HostStatus::Down,
            _ => HostStatus::Unknown,
        },
        None => HostStatus::Unknown,
    };
    let address = children(host, "address")
        .find(|a| a.attribute("addrtype").unwrap_or("ipv4") == "ipv4")
        .ok_or_else(|| bad("host", "no ipv4 <address>"))?;
    let target: Ipv4Addr = parse_attr(address, "addr")?;
    let mut obs = raw.observation(target, status);

    for hn in children(host, "hostnames").flat_map(|h| children(h, "hostname")) {
        obs.hostnames.push(attr(hn, "name")?.to_string());
    }
    for port in children(host, "ports").flat_map(|p| children(p, "port")) {
        let protocol: Protocol = parse_attr(port, "protocol")?;
        let portid: u16 = parse_attr(port, "portid")?;
        let state_node = children(port, "state").next().ok_or_else(|| bad("port", "no <state>"))?;
        let service_name = children(port, "service")
            .next()
            .and_then(|s| s.attribute("name"))
            .map(str::to_string);
        obs.ports.push(PortFinding { port: portid, protocol, state: parse_port_state(state_node)?, service_name });
    }
    for m in children(host, "os").flat_map(|o| children(o, "osmatch")) {
        let name = attr(m, "name")?.to_string();
        let accuracy: u8 = parse_attr(m, "accuracy")?;
        let class = children(m, "osclass")
            .next()
            .and_then(|c| c.attribute("type"))
            .unwrap_or_default()
            .to_string();
        obs.os_guesses.push(OsGuess { name, class, accuracy });
    }
    if let Some(trace) = children(host, "trace").next() {
        let mut by_ttl = std::collections::BTreeMap::new();
        for hop in children(trace, "hop") {
            let ttl: u32 = parse_attr(hop, "ttl")?;
            if ttl == 0 {
                return Err(bad("hop", "ttl must be at least 1"));
            }
            let address: Ipv4Addr = parse_attr(hop, "ipaddr")?;
            let rtt_ms = match hop.attribute("rtt") {
                None | Some("--") => None,
                Some(_) => Some(parse_attr::<f64>(hop, "rtt")?),
            };
            by_ttl.insert(ttl, (address, rtt_ms));
        }
        if let Some(&max) = by_ttl.keys().next_back() {
            // nmap leaves out silent hops; they come back as gaps
            let hops = (1..=max)
                .map(|ttl| match by_ttl.get(&ttl) {
                    Some((a, rtt)) => Hop { position: ttl, address: Some(*a), rtt_ms: *rtt },
                    None => Hop { position: ttl, address: None, rtt_ms: None },
                })
                .collect();
            obs.trace = Some(TracePath::new(hops).map_err(|e| bad("trace", e.to_string()))?);
        }
    }
    obs.validate().map_err(|e| bad("host", e.to_string()))?;
    Ok(obs)
}

/// One observation per `<host>` element, stamped with the provenance of `raw`.
pub fn normalize_portscan(raw: &RawResult) -> Result<Vec<Observation>, AdapterError> {
    let text = raw.output_str()?;
    // nmap writes `<!DOCTYPE nmaprun>` ahead of the root
    let opts = roxmltree::ParsingOptions { allow_dtd: true, ..roxmltree::ParsingOptions::default() };
    let doc = roxmltree::Document::parse_with_options(text, opts).map_err(|e| {
        // an unclosed root is reported at 1:1; the useful spot is the end
        let pos = match e {
            roxmltree::Error::UnclosedRootNode => text.len(),
            _ => byte_offset(text, e.pos()),
        };
        let element = open_element_at(text, pos);
        bad(&element, e.to_string())
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "nmaprun" {
        return Err(bad(root.tag_name().name(), "expected <nmaprun> as document root"));
    }
    children(root, "host").map(|h| parse_host(raw, h)).collect()
}
