use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    RuleAction, RuleProtocol, ScannerAttachment, SimHost, SimPort, SimRouter, SimRule, SimSubnet,
    SimTopology, TopologyDoc,
};
use crate::model::ArpEntry;
use crate::net::Cidr;

/// Size bounds for [`generate`].
#[derive(Debug, Clone)]
pub struct GeneratorParams {
    pub subnets: (usize, usize),
    pub hosts: (usize, usize),
    /// Probability that a router interface drops ICMP, hiding it in traces.
    pub hidden_hop_rate: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            subnets: (3, 30),
            hosts: (5, 200),
            hidden_hop_rate: 0.0,
        }
    }
}

const HOST_OS: &[(&str, &str)] = &[
    ("Linux 5.4", "general purpose"),
    ("Linux 4.15", "general purpose"),
    ("Microsoft Windows 10", "general purpose"),
    ("Microsoft Windows Server 2016", "general purpose"),
    ("FreeBSD 12.1", "general purpose"),
    ("HP LaserJet printer", "printer"),
];

const HOST_PORTS: &[u16] = &[22, 80, 135, 139, 443, 445, 3389, 8080];

fn subnet_cidr(i: usize) -> Cidr {
    Cidr::new(Ipv4Addr::new(10, (i / 250) as u8 + 1, (i % 250) as u8, 0), 24).expect("valid /24")
}

fn addr_in(cidr: &Cidr, host: u8) -> Ipv4Addr {
    let o = cidr.network().octets();
    Ipv4Addr::new(o[0], o[1], o[2], host)
}

fn mac_for(addr: Ipv4Addr) -> String {
    let o = addr.octets();
    format!("02:00:{:02x}:{:02x}:{:02x}:{:02x}", o[0], o[1], o[2], o[3])
}

/// Builds a random, valid tree topology. The same seed always yields the
/// same topology.
pub fn generate(seed: u64, params: &GeneratorParams) -> SimTopology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_subnets = rng.random_range(params.subnets.0..=params.subnets.1).max(1);
    let n_hosts = rng.random_range(params.hosts.0..=params.hosts.1);

    let cidrs: Vec<Cidr> = (0..n_subnets).map(subnet_cidr).collect();
    // next free low octet per subnet for router uplinks
    let mut next_uplink = vec![2u8; n_subnets];
    let mut routers: Vec<SimRouter> = vec![SimRouter {
        name: "r0".to_string(),
        interfaces: vec![addr_in(&cidrs[0], 1)],
        os_label: super::default_router_os(),
        snmp_community: None,
        system_description: None,
        open_ports: vec![SimPort::tcp(22)],
        arp_table: Vec::new(),
    }];
    let mut subnets = vec![SimSubnet {
        cidr: cidrs[0],
        gateway: addr_in(&cidrs[0], 1),
    }];

    for (i, cidr) in cidrs.iter().enumerate().skip(1) {
        let gateway = addr_in(cidr, 1);
        let reuse = rng.random_bool(0.4);
        if reuse {
            let r = rng.random_range(0..routers.len());
            routers[r].interfaces.push(gateway);
        } else {
            let mut parent = rng.random_range(0..i);
            while next_uplink[parent] >= 19 {
                parent = (parent + 1) % i;
            }
            let uplink = addr_in(&cidrs[parent], next_uplink[parent]);
            next_uplink[parent] += 1;
            let idx = routers.len();
            routers.push(SimRouter {
                name: format!("r{idx}"),
                interfaces: vec![uplink, gateway],
                os_label: super::default_router_os(),
                snmp_community: None,
                system_description: None,
                open_ports: vec![SimPort::tcp(22)],
                arp_table: Vec::new(),
            });
        }
        subnets.push(SimSubnet { cidr: *cidr, gateway });
    }

    let mut next_host = vec![20u8; n_subnets];
    let mut hosts = Vec::with_capacity(n_hosts);
    for _ in 0..n_hosts {
        let mut s = rng.random_range(0..n_subnets);
        while next_host[s] >= 250 {
            s = (s + 1) % n_subnets;
        }
        let address = addr_in(&cidrs[s], next_host[s]);
        next_host[s] += 1;
        let (os, class) = HOST_OS[rng.random_range(0..HOST_OS.len())];
        let mut open_ports = Vec::new();
        for p in HOST_PORTS {
            if rng.random_bool(0.25) {
                open_ports.push(SimPort::tcp(*p));
            }
        }
        hosts.push(SimHost {
            address,
            os_label: os.to_string(),
            os_class: class.to_string(),
            open_ports,
            responds_to_ping: rng.random_bool(0.92),
            hostname: None,
        });
    }

    // ARP tables list every other device on a router's attached subnets.
    let mut by_subnet: BTreeMap<usize, Vec<Ipv4Addr>> = BTreeMap::new();
    for h in &hosts {
        let s = cidrs.iter().position(|c| c.contains(h.address)).expect("host in subnet");
        by_subnet.entry(s).or_default().push(h.address);
    }
    for r in &routers {
        for iface in &r.interfaces {
            let s = cidrs.iter().position(|c| c.contains(*iface)).expect("iface in subnet");
            by_subnet.entry(s).or_default().push(*iface);
        }
    }
    let mut acls = Vec::new();
    for router in routers.iter_mut() {
        let community = match rng.random_range(0..10) {
            0..=5 => Some("public".to_string()),
            6..=7 => Some("private".to_string()),
            _ => None,
        };
        router.snmp_community = community;
        let mut arp = Vec::new();
        for iface in &router.interfaces {
            let s = cidrs.iter().position(|c| c.contains(*iface)).expect("iface in subnet");
            for a in &by_subnet[&s] {
                if !router.interfaces.contains(a) {
                    arp.push(ArpEntry { address: *a, mac: mac_for(*a) });
                }
            }
        }
        arp.sort();
        router.arp_table = arp;
        if params.hidden_hop_rate > 0.0 {
            for iface in &router.interfaces {
                if rng.random_bool(params.hidden_hop_rate) {
                    acls.push(SimRule {
                        src: Cidr::new(Ipv4Addr::UNSPECIFIED, 0).expect("valid"),
                        dst: Cidr::host(*iface),
                        protocol: RuleProtocol::Icmp,
                        port: None,
                        action: RuleAction::Deny,
                    });
                }
            }
        }
    }

    let doc = TopologyDoc {
        name: format!("generated-{seed}"),
        scanner: ScannerAttachment {
            subnet: cidrs[0],
            address: Some(addr_in(&cidrs[0], 253)),
        },
        routers,
        subnets,
        hosts,
        acls,
    };
    SimTopology::from_doc(doc).expect("generator produces valid topologies")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let p = GeneratorParams::default();
        for seed in 0..40 {
            let a = generate(seed, &p);
            let b = generate(seed, &p);
            assert_eq!(a.doc(), b.doc(), "seed {seed}");
            assert!((3..=30).contains(&a.subnets().len()));
            assert!((5..=200).contains(&a.hosts().len()));
            // document round-trips through JSON and re-validates
            let again = SimTopology::from_json(&a.to_json()).unwrap();
            assert_eq!(again.doc(), a.doc());
        }
    }

    #[test]
    fn hidden_hops_make_incomplete_traces() {
        let p = GeneratorParams { hidden_hop_rate: 0.5, ..GeneratorParams::default() };
        let incomplete = (0..20)
            .map(|s| generate(s, &p))
            .flat_map(|t| {
                t.hosts()
                    .iter()
                    .map(|h| t.trace(h.address).unwrap().complete)
                    .collect::<Vec<_>>()
            })
            .filter(|c| !c)
            .count();
        assert!(incomplete > 0);
    }
}
