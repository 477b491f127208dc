//! IPv4 ranges and target specifications.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetError {
    #[error("invalid IPv4 address `{0}`")]
    InvalidAddress(String),
    #[error("invalid prefix length in `{0}` (expected 0-32)")]
    InvalidPrefix(String),
}

/// An IPv4 network in CIDR notation. Host bits are always zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cidr {
    network: Ipv4Addr,
    prefix: u8,
}

impl Cidr {
    pub fn new(addr: Ipv4Addr, prefix: u8) -> Result<Self, NetError> {
        if prefix > 32 {
            return Err(NetError::InvalidPrefix(format!("{addr}/{prefix}")));
        }
        let network = Ipv4Addr::from(u32::from(addr) & mask(prefix));
        Ok(Cidr { network, prefix })
    }

    pub fn host(addr: Ipv4Addr) -> Self {
        Cidr { network: addr, prefix: 32 }
    }

    pub fn network(&self) -> Ipv4Addr {
        self.network
    }

    pub fn prefix(&self) -> u8 {
        self.prefix
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        u32::from(addr) & mask(self.prefix) == u32::from(self.network)
    }

    /// True when every address of `other` lies in `self`.
    pub fn covers(&self, other: &Cidr) -> bool {
        self.prefix <= other.prefix && self.contains(other.network)
    }

    pub fn overlaps(&self, other: &Cidr) -> bool {
        self.covers(other) || other.covers(self)
    }

    pub fn broadcast(&self) -> Ipv4Addr {
        Ipv4Addr::from(u32::from(self.network) | !mask(self.prefix))
    }

    pub fn is_single_host(&self) -> bool {
        self.prefix == 32
    }

    /// Number of addresses in the range.
    pub fn size(&self) -> u64 {
        1u64 << (32 - u32::from(self.prefix))
    }
}

fn mask(prefix: u8) -> u32 {
    if prefix == 0 {
        0
    } else {
        u32::MAX << (32 - u32::from(prefix))
    }
}

impl fmt::Display for Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.prefix == 32 {
            write!(f, "{}", self.network)
        } else {
            write!(f, "{}/{}", self.network, self.prefix)
        }
    }
}

impl FromStr for Cidr {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (addr, prefix) = match s.split_once('/') {
            Some((a, p)) => {
                let p: u8 = p
                    .parse()
                    .map_err(|_| NetError::InvalidPrefix(s.to_string()))?;
                (a, p)
            }
            None => (s, 32),
        };
        let addr: Ipv4Addr = addr
            .parse()
            .map_err(|_| NetError::InvalidAddress(s.to_string()))?;
        Cidr::new(addr, prefix)
    }
}

impl Serialize for Cidr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cidr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An allowlist of IPv4 addresses and ranges.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetSpec {
    entries: Vec<Cidr>,
}

impl TargetSpec {
    /// Builds a spec, dropping duplicate entries while keeping first-seen order.
    pub fn new(entries: impl IntoIterator<Item = Cidr>) -> Self {
        let mut out: Vec<Cidr> = Vec::new();
        for e in entries {
            if !out.contains(&e) {
                out.push(e);
            }
        }
        TargetSpec { entries: out }
    }

    /// Parses a comma or whitespace separated list such as `10.0.0.0/24, 192.0.2.7`.
    pub fn parse(s: &str) -> Result<Self, NetError> {
        let entries = s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .map(Cidr::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TargetSpec::new(entries))
    }

    pub fn entries(&self) -> &[Cidr] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        self.entries.iter().any(|e| e.contains(addr))
    }

    pub fn covers(&self, range: &Cidr) -> bool {
        self.entries.iter().any(|e| e.covers(range))
    }

    pub fn push(&mut self, entry: Cidr) {
        if !self.entries.contains(&entry) {
            self.entries.push(entry);
        }
    }

    pub fn extend(&mut self, other: &TargetSpec) {
        for e in &other.entries {
            self.push(*e);
        }
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.entries.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromIterator<Cidr> for TargetSpec {
    fn from_iter<I: IntoIterator<Item = Cidr>>(iter: I) -> Self {
        TargetSpec::new(iter)
    }
}
