//! Random topology trees for layout and aggregation checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use netmap_core::topology::{Bubble, BubbleCriterion, LaidOutGraph, TopologyTree, Vertex, VertexKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Below this size a single new sibling necessarily swings its neighbours
/// across a large share of the drawing.
pub const MIN_VERTICES: usize = 20;

pub fn vertex(id: &str, kind: VertexKind, address: Option<Ipv4Addr>) -> Vertex {
    Vertex {
        id: id.into(),
        kind,
        address,
        label: id.into(),
        os: None,
        gateway_method: None,
        confidence: None,
    }
}

pub fn fresh_address(rng: &mut ChaCha8Rng, used: &mut BTreeSet<Ipv4Addr>) -> Ipv4Addr {
    loop {
        let a = Ipv4Addr::new(10, rng.random(), rng.random(), rng.random_range(1..255));
        if used.insert(a) {
            return a;
        }
    }
}

/// Random recursive tree: vertex i attaches below one of 0..i. Some leaves
/// become bubbles.
pub fn random_tree(seed: u64, min_vertices: usize, max_vertices: usize) -> TopologyTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(min_vertices..=max_vertices);
    let mut used = BTreeSet::new();
    let mut ids = Vec::new();
    let mut parent = BTreeMap::new();
    for i in 0..n {
        let id = fresh_address(&mut rng, &mut used).to_string();
        if i > 0 {
            // bias towards recent vertices for depth
            let lo = if rng.random_bool(0.5) { i.saturating_sub(8) } else { 0 };
            let p: &String = &ids[rng.random_range(lo..i)];
            parent.insert(id.clone(), p.clone());
        }
        ids.push(id);
    }
    let inner: BTreeSet<&String> = parent.values().collect();
    let mut vertices = BTreeMap::new();
    let mut bubbles = BTreeMap::new();
    let mut renamed = BTreeMap::new();
    for id in &ids {
        let addr: Ipv4Addr = id.parse().unwrap();
        if inner.contains(id) || id == &ids[0] {
            vertices.insert(id.clone(), vertex(id, VertexKind::Router, Some(addr)));
        } else if rng.random_bool(0.15) {
            let p = parent[id].clone();
            let bid = format!("bubble:{p}:{id}");
            let members: Vec<String> = (0..rng.random_range(2..60)).map(|k| format!("{id}#{k}")).collect();
            bubbles.insert(
                bid.clone(),
                Bubble { id: bid.clone(), parent: p, criterion: BubbleCriterion::Threshold, members, label: bid.clone() },
            );
            vertices.insert(bid.clone(), vertex(&bid, VertexKind::Bubble, None));
            renamed.insert(id.clone(), bid);
        } else {
            vertices.insert(id.clone(), vertex(id, VertexKind::Host, Some(addr)));
        }
    }
    let parent = parent
        .into_iter()
        .map(|(c, p)| (renamed.get(&c).cloned().unwrap_or(c), p))
        .collect();
    let t = TopologyTree { root: ids[0].clone(), vertices, parent, bubbles };
    t.validate().unwrap();
    t
}

pub fn insert_leaf(tree: &TopologyTree, seed: u64) -> (TopologyTree, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut used: BTreeSet<Ipv4Addr> = tree.vertices.values().filter_map(|v| v.address).collect();
    let hosts: Vec<&String> =
        tree.vertices.values().filter(|v| v.kind != VertexKind::Bubble).map(|v| &v.id).collect();
    let p = hosts[rng.random_range(0..hosts.len())].clone();
    let addr = fresh_address(&mut rng, &mut used);
    let mut t = tree.clone();
    t.vertices.insert(addr.to_string(), vertex(&addr.to_string(), VertexKind::Host, Some(addr)));
    t.parent.insert(addr.to_string(), p);
    (t, addr.to_string())
}

pub fn max_displacement(a: &LaidOutGraph, b: &LaidOutGraph) -> f64 {
    a.vertices
        .iter()
        .map(|v| {
            let w = b.vertex(&v.id).expect("vertex kept");
            ((v.x - w.x).powi(2) + (v.y - w.y).powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Gives most hosts an OS name and drops pre-made bubbles.
pub fn with_os(mut t: TopologyTree, seed: u64) -> TopologyTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = ["Linux 4.15", "Microsoft Windows 10", "FreeBSD 13", "Cisco IOS 15"];
    for v in t.vertices.values_mut() {
        if v.kind == VertexKind::Host && rng.random_bool(0.9) {
            v.os = Some(names[rng.random_range(0..names.len())].to_string());
        }
    }
    t.vertices.retain(|_, v| v.kind != VertexKind::Bubble);
    let vs = t.vertices.clone();
    t.parent.retain(|c, _| vs.contains_key(c));
    t.bubbles.clear();
    t
}
