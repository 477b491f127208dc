//! Topology tree, leaf aggregation, layout, compare graph and export.
//!
//! Every node hangs below its resolved gateway. The root is the network
//! entry point, or the scanner's default gateway when no entry point is
//! known. Nodes that cannot be placed are collected under a synthetic
//! `unplaced` vertex below the root.

mod compare;
mod export;
mod layout;

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::model::{Dataset, DeviceClass, EstimateMethod, NodeId};

pub use compare::{build_compare_graph, Annotation, CompareEdge, CompareGraph};
pub use export::{export_compare, export_tree, ExportFormat};
pub use layout::{glyph_radius, layout, LaidOutGraph, PlacedEdge, PlacedVertex};

pub const UNPLACED_ID: &str = "unplaced";
pub const SYNTHETIC_ROOT_ID: &str = "root";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopologyError {
    #[error("invalid aggregation `{0}` (os, threshold:N with N >= 2)")]
    InvalidAggregation(String),
    #[error("unsupported export format `{0}` (dot, json, svg)")]
    UnsupportedFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    Router,
    Host,
    Unknown,
    /// A gateway address that is not itself a scanned node.
    Gateway,
    Unplaced,
    Bubble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub id: String,
    pub kind: VertexKind,
    pub address: Option<Ipv4Addr>,
    pub label: String,
    /// Name of the top OS guess.
    pub os: Option<String>,
    /// How the edge to the parent was derived.
    pub gateway_method: Option<EstimateMethod>,
    pub confidence: Option<f64>,
}

impl Vertex {
    fn synthetic(id: &str, kind: VertexKind, address: Option<Ipv4Addr>, label: &str) -> Self {
        Vertex {
            id: id.to_string(),
            kind,
            address,
            label: label.to_string(),
            os: None,
            gateway_method: None,
            confidence: None,
        }
    }

    pub fn is_aggregatable(&self) -> bool {
        matches!(self.kind, VertexKind::Host | VertexKind::Unknown)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BubbleCriterion {
    OsClass,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bubble {
    pub id: String,
    pub parent: String,
    pub criterion: BubbleCriterion,
    pub members: Vec<String>,
    pub label: String,
}

/// How leaves get grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Group leaves by OS; leftovers collapse when at least `fallback` remain.
    OsClass { fallback: Option<usize> },
    /// Collapse all leaves under a parent when there are at least `t`.
    Threshold(usize),
}

pub const DEFAULT_FALLBACK_THRESHOLD: usize = 10;

impl Default for Aggregation {
    fn default() -> Self {
        Aggregation::OsClass { fallback: Some(DEFAULT_FALLBACK_THRESHOLD) }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TopologyError::InvalidAggregation(s.to_string());
        if s == "os" || s == "os_class" {
            return Ok(Aggregation::default());
        }
        let t: usize = s.strip_prefix("threshold:").ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if t < 2 {
            return Err(bad());
        }
        Ok(Aggregation::Threshold(t))
    }
}

/// A rooted tree; every vertex but the root has exactly one parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyTree {
    pub root: String,
    pub vertices: BTreeMap<String, Vertex>,
    /// Child id to parent id.
    pub parent: BTreeMap<String, String>,
    #[serde(default)]
    pub bubbles: BTreeMap<String, Bubble>,
}

fn order_key(v: &Vertex) -> (u8, u32, &str) {
    match (v.kind, v.address) {
        (VertexKind::Unplaced, _) => (3, 0, &v.id),
        (VertexKind::Bubble, _) => (2, 0, &v.id),
        (_, Some(a)) => (0, u32::from(a), &v.id),
        (_, None) => (1, 0, &v.id),
    }
}

impl TopologyTree {
    /// Children of `id` in address order, bubbles after nodes, unplaced last.
    pub fn children(&self, id: &str) -> Vec<&str> {
        let mut out: Vec<&Vertex> = self
            .parent
            .iter()
            .filter(|(_, p)| p.as_str() == id)
            .map(|(c, _)| &self.vertices[c])
            .collect();
        out.sort_by(|a, b| order_key(a).cmp(&order_key(b)));
        out.into_iter().map(|v| v.id.as_str()).collect()
    }

    pub fn children_map(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut m: BTreeMap<&str, Vec<&Vertex>> = BTreeMap::new();
        for (c, p) in &self.parent {
            m.entry(p.as_str()).or_default().push(&self.vertices[c]);
        }
        m.into_iter()
            .map(|(p, mut cs)| {
                cs.sort_by(|a, b| order_key(a).cmp(&order_key(b)));
                (p, cs.into_iter().map(|v| v.id.as_str()).collect())
            })
            .collect()
    }

    pub fn is_leaf(&self, id: &str) -> bool {
        !self.parent.values().any(|p| p == id)
    }

    /// Edge count on the path from `id` to the root.
    pub fn depth_of(&self, id: &str) -> usize {
        let mut d = 0;
        let mut cur = id;
        while let Some(p) = self.parent.get(cur) {
            d += 1;
            cur = p;
        }
        d
    }

    pub fn depth(&self) -> usize {
        self.vertices.keys().map(|v| self.depth_of(v)).max().unwrap_or(0)
    }

    /// Non-router leaves: the vertices aggregation may fold.
    pub fn aggregatable_leaves(&self) -> Vec<&str> {
        let children = self.children_map();
        self.vertices
            .values()
            .filter(|v| v.is_aggregatable() && v.id != self.root && !children.contains_key(v.id.as_str()))
            .map(|v| v.id.as_str())
            .collect()
    }

    /// Single root, one parent per other vertex, everything reaches the root.
    pub fn validate(&self) -> Result<(), String> {
        if !self.vertices.contains_key(&self.root) {
            return Err(format!("root {} is not a vertex", self.root));
        }
        if self.parent.contains_key(&self.root) {
            return Err("root has a parent".into());
        }
        for (c, p) in &self.parent {
            if !self.vertices.contains_key(c) || !self.vertices.contains_key(p) {
                return Err(format!("edge {c} -> {p} names an unknown vertex"));
            }
        }
        for id in self.vertices.keys() {
            if id == &self.root {
                continue;
            }
            let mut seen = BTreeSet::new();
            let mut cur = id.as_str();
            while cur != self.root {
                if !seen.insert(cur) {
                    return Err(format!("cycle through {cur}"));
                }
                cur = self.parent.get(cur).ok_or_else(|| format!("{cur} does not reach the root"))?;
            }
        }
        Ok(())
    }
}

fn node_vertex(ds: &Dataset, id: NodeId) -> Vertex {
    let node = &ds.nodes[&id];
    let kind = match node.device_class {
        DeviceClass::Router => VertexKind::Router,
        DeviceClass::Host => VertexKind::Host,
        DeviceClass::Unknown => VertexKind::Unknown,
    };
    let os = node
        .latest_by_tool()
        .values()
        .filter_map(|o| o.best_os())
        .max_by(|a, b| a.accuracy.cmp(&b.accuracy).then_with(|| b.name.cmp(&a.name)))
        .map(|g| g.name.clone());
    let label = node.hostnames.iter().next().cloned().unwrap_or_else(|| id.to_string());
    Vertex {
        id: id.to_string(),
        kind,
        address: Some(id.address()),
        label,
        os,
        gateway_method: node.gateway.as_ref().map(|g| g.method),
        confidence: node.gateway.as_ref().map(|g| g.confidence),
    }
}

/// Builds the tree from resolved gateways. Cycles are broken by cutting the
/// edge with the lowest confidence (ties: highest child address); the cut
/// node moves to the unplaced group.
pub fn build_tree(ds: &Dataset) -> TopologyTree {
    let root_addr = ds.meta.network_entry_point.or(ds.meta.scanner_gateway);
    let mut vertices = BTreeMap::new();
    let root = match root_addr {
        Some(a) if ds.contains_address(a) => {
            let mut v = node_vertex(ds, NodeId::new(a));
            v.gateway_method = None;
            v.confidence = None;
            v
        }
        Some(a) => Vertex::synthetic(&a.to_string(), VertexKind::Gateway, Some(a), &a.to_string()),
        None => Vertex::synthetic(SYNTHETIC_ROOT_ID, VertexKind::Gateway, None, "scanner gateway"),
    };
    let root_id = root.id.clone();
    vertices.insert(root_id.clone(), root);

    let mut tentative: BTreeMap<String, (String, f64)> = BTreeMap::new();
    let mut unplaced: BTreeSet<String> = BTreeSet::new();
    for (id, node) in &ds.nodes {
        let key = id.to_string();
        if key == root_id {
            continue;
        }
        vertices.insert(key.clone(), node_vertex(ds, *id));
        match &node.gateway {
            Some(g)
                if g.gateway_address != id.address()
                    && (ds.contains_address(g.gateway_address) || Some(g.gateway_address) == root_addr) =>
            {
                tentative.insert(key, (g.gateway_address.to_string(), g.confidence));
            }
            _ => {
                unplaced.insert(key);
            }
        }
    }

    // each vertex has at most one outgoing edge, so cycles are disjoint
    let mut state: BTreeMap<&str, u8> = BTreeMap::new(); // 1 = on stack, 2 = done
    let mut cuts = Vec::new();
    for start in tentative.keys() {
        if state.contains_key(start.as_str()) {
            continue;
        }
        let mut path: Vec<&str> = Vec::new();
        let mut cur = start.as_str();
        loop {
            match state.get(cur) {
                Some(1) => {
                    let pos = path.iter().position(|p| *p == cur).expect("on stack");
                    let cycle = &path[pos..];
                    let cut = cycle
                        .iter()
                        .min_by(|a, b| {
                            let ca = tentative[**a].1;
                            let cb = tentative[**b].1;
                            ca.total_cmp(&cb).then_with(|| {
                                let aa: Ipv4Addr = a.parse().expect("node id");
                                let bb: Ipv4Addr = b.parse().expect("node id");
                                bb.cmp(&aa)
                            })
                        })
                        .expect("non-empty cycle");
                    cuts.push(cut.to_string());
                    break;
                }
                Some(_) => break,
                None => {}
            }
            state.insert(cur, 1);
            path.push(cur);
            match tentative.get(cur) {
                Some((p, _)) if p != &root_id => cur = p.as_str(),
                _ => break,
            }
        }
        for p in path {
            state.insert(p, 2);
        }
    }
    for c in cuts {
        tentative.remove(&c);
        unplaced.insert(c);
    }

    let mut parent: BTreeMap<String, String> = tentative.into_iter().map(|(c, (p, _))| (c, p)).collect();
    if !unplaced.is_empty() {
        vertices.insert(
            UNPLACED_ID.to_string(),
            Vertex::synthetic(UNPLACED_ID, VertexKind::Unplaced, None, "unplaced"),
        );
        parent.insert(UNPLACED_ID.to_string(), root_id.clone());
        for u in unplaced {
            parent.insert(u, UNPLACED_ID.to_string());
        }
    }
    TopologyTree { root: root_id, vertices, parent, bubbles: BTreeMap::new() }
}

fn bubble_key(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

/// Folds leaf hosts into bubbles. Routers and inner vertices stay visible.
pub fn aggregate_leaves(tree: &TopologyTree, how: Aggregation) -> Result<TopologyTree, TopologyError> {
    if let Aggregation::Threshold(t) = how {
        if t < 2 {
            return Err(TopologyError::InvalidAggregation(format!("threshold:{t}")));
        }
    }
    if let Aggregation::OsClass { fallback: Some(t) } = how {
        if t < 2 {
            return Err(TopologyError::InvalidAggregation(format!("fallback threshold {t}")));
        }
    }
    let leaves: BTreeSet<&str> = tree.aggregatable_leaves().into_iter().collect();
    let mut out = tree.clone();
    for (parent, children) in tree.children_map() {
        let group: Vec<&str> = children.into_iter().filter(|c| leaves.contains(c)).collect();
        let mut bubbles: Vec<(String, String, BubbleCriterion, Vec<&str>)> = Vec::new();
        match how {
            Aggregation::Threshold(t) => {
                if group.len() >= t {
                    bubbles.push(("hosts".into(), format!("hosts ({})", group.len()), BubbleCriterion::Threshold, group));
                }
            }
            Aggregation::OsClass { fallback } => {
                let mut by_os: BTreeMap<String, Vec<&str>> = BTreeMap::new();
                for id in &group {
                    let os = tree.vertices[*id].os.clone().unwrap_or_else(|| "unknown".to_string());
                    by_os.entry(os).or_default().push(id);
                }
                let mut rest = Vec::new();
                for (os, members) in by_os {
                    if members.len() >= 2 {
                        let label = format!("{os} ({})", members.len());
                        bubbles.push((format!("os-{}", bubble_key(&os)), label, BubbleCriterion::OsClass, members));
                    } else {
                        rest.extend(members);
                    }
                }
                if let Some(t) = fallback {
                    if rest.len() >= t {
                        rest.sort_by_key(|id| order_key(&tree.vertices[*id]));
                        bubbles.push(("other".into(), format!("hosts ({})", rest.len()), BubbleCriterion::Threshold, rest));
                    }
                }
            }
        }
        for (key, label, criterion, members) in bubbles {
            let id = format!("bubble:{parent}:{key}");
            for m in &members {
                out.vertices.remove(*m);
                out.parent.remove(*m);
            }
            out.vertices.insert(id.clone(), Vertex::synthetic(&id, VertexKind::Bubble, None, &label));
            out.parent.insert(id.clone(), parent.to_string());
            out.bubbles.insert(
                id.clone(),
                Bubble {
                    id,
                    parent: parent.to_string(),
                    criterion,
                    members: members.iter().map(|m| m.to_string()).collect(),
                    label,
                },
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GatewayEstimate, HostStatus, Observation, OsGuess};
    use chrono::{DateTime, Utc};

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn add(ds: &mut Dataset, addr: &str, class: &str, os: &str, gw: Option<(&str, f64)>) {
        let a = ip(addr);
        let mut obs = Observation::new("nmap", 1, DateTime::<Utc>::UNIX_EPOCH, a, HostStatus::Up);
        obs.os_guesses.push(OsGuess { name: os.into(), class: class.into(), accuracy: 90 });
        ds.record_observation(a, obs).unwrap();
        if let Some((g, c)) = gw {
            ds.node_mut(NodeId::new(a)).unwrap().gateway = Some(GatewayEstimate {
                node_id: NodeId::new(a),
                gateway_address: ip(g),
                method: EstimateMethod::Trace,
                confidence: c,
                iteration: 1,
            });
        }
    }

    #[test]
    fn unresolved_nodes_go_to_unplaced() {
        let mut ds = Dataset::new();
        ds.meta.scanner_gateway = Some(ip("10.0.0.1"));
        add(&mut ds, "10.0.0.5", "general purpose", "Linux", None);
        add(&mut ds, "10.0.0.6", "general purpose", "Linux", None);
        let t = build_tree(&ds);
        t.validate().unwrap();
        assert_eq!(t.root, "10.0.0.1");
        assert_eq!(t.vertices["10.0.0.1"].kind, VertexKind::Gateway);
        assert_eq!(t.children("10.0.0.1"), vec![UNPLACED_ID]);
        assert_eq!(t.children(UNPLACED_ID).len(), 2);
    }

    #[test]
    fn mutual_gateways_cut_weaker_edge() {
        let mut ds = Dataset::new();
        ds.meta.scanner_gateway = Some(ip("10.0.0.1"));
        add(&mut ds, "10.0.0.2", "router", "IOS", Some(("10.0.0.3", 0.9)));
        add(&mut ds, "10.0.0.3", "router", "IOS", Some(("10.0.0.2", 0.4)));
        let t = build_tree(&ds);
        t.validate().unwrap();
        assert_eq!(t.parent["10.0.0.3"], UNPLACED_ID);
        assert_eq!(t.parent["10.0.0.2"], "10.0.0.3");
    }

    #[test]
    fn root_edge_dropped_and_depth() {
        let mut ds = Dataset::new();
        ds.meta.scanner_gateway = Some(ip("10.0.0.1"));
        ds.meta.network_entry_point = Some(ip("10.1.0.1"));
        add(&mut ds, "10.1.0.1", "router", "IOS", Some(("10.0.0.1", 0.9)));
        add(&mut ds, "10.2.0.1", "router", "IOS", Some(("10.1.0.1", 0.9)));
        add(&mut ds, "10.2.0.9", "general purpose", "Linux", Some(("10.2.0.1", 0.9)));
        let t = build_tree(&ds);
        t.validate().unwrap();
        assert_eq!(t.root, "10.1.0.1");
        assert_eq!(t.depth(), 2);
        assert!(!t.vertices.contains_key(UNPLACED_ID));
    }

    #[test]
    fn aggregation_by_os_and_threshold() {
        let mut ds = Dataset::new();
        ds.meta.network_entry_point = Some(ip("10.1.0.1"));
        ds.meta.scanner_gateway = Some(ip("10.0.0.1"));
        add(&mut ds, "10.1.0.1", "router", "IOS", None);
        for i in 0..30 {
            add(&mut ds, &format!("10.1.0.{}", 20 + i), "general purpose", "Linux 4.15", Some(("10.1.0.1", 0.9)));
        }
        for i in 0..10 {
            add(&mut ds, &format!("10.1.0.{}", 60 + i), "general purpose", "Microsoft Windows 10", Some(("10.1.0.1", 0.9)));
        }
        add(&mut ds, "10.1.0.99", "general purpose", "FreeBSD", Some(("10.1.0.1", 0.9)));
        add(&mut ds, "10.1.0.2", "router", "IOS", Some(("10.1.0.1", 0.9)));
        let t = build_tree(&ds);
        let a = aggregate_leaves(&t, Aggregation::default()).unwrap();
        a.validate().unwrap();
        assert_eq!(a.bubbles.len(), 2);
        let linux = &a.bubbles["bubble:10.1.0.1:os-linux-4-15"];
        assert_eq!(linux.members.len(), 30);
        assert_eq!(linux.label, "Linux 4.15 (30)");
        // the lone FreeBSD host stays, and so does the router leaf
        assert!(a.vertices.contains_key("10.1.0.99"));
        assert!(a.vertices.contains_key("10.1.0.2"));

        let th = aggregate_leaves(&t, Aggregation::Threshold(5)).unwrap();
        assert_eq!(th.bubbles.len(), 1);
        assert_eq!(th.bubbles.values().next().unwrap().members.len(), 41);
        assert!(aggregate_leaves(&t, Aggregation::Threshold(1)).is_err());
        assert!("threshold:1".parse::<Aggregation>().is_err());
        assert_eq!("threshold:4".parse::<Aggregation>().unwrap(), Aggregation::Threshold(4));
    }
}
