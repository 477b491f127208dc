use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{TopologyTree, Vertex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annotation {
    Unchanged,
    Added,
    Removed,
    GatewayChanged,
}

impl Annotation {
    pub fn as_str(self) -> &'static str {
        match self {
            Annotation::Unchanged => "unchanged",
            Annotation::Added => "added",
            Annotation::Removed => "removed",
            Annotation::GatewayChanged => "gateway-changed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareVertex {
    #[serde(flatten)]
    pub vertex: Vertex,
    pub annotation: Annotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEdge {
    pub child: String,
    pub parent: String,
    pub annotation: Annotation,
}

/// Union of two trees. A moved node keeps both edges: the old one marked
/// removed, the new one added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareGraph {
    pub root: String,
    pub vertices: BTreeMap<String, CompareVertex>,
    pub edges: Vec<CompareEdge>,
    /// Spanning tree of the union used for placement.
    pub layout_parent: BTreeMap<String, String>,
}

impl CompareGraph {
    pub fn union_tree(&self) -> TopologyTree {
        TopologyTree {
            root: self.root.clone(),
            vertices: self.vertices.iter().map(|(k, v)| (k.clone(), v.vertex.clone())).collect(),
            parent: self.layout_parent.clone(),
            bubbles: BTreeMap::new(),
        }
    }

    pub fn count(&self, a: Annotation) -> usize {
        self.vertices.values().filter(|v| v.annotation == a).count()
    }
}

pub fn build_compare_graph(before: &TopologyTree, after: &TopologyTree) -> CompareGraph {
    let mut vertices = BTreeMap::new();
    for (id, v) in &after.vertices {
        let annotation = match (before.vertices.contains_key(id), before.parent.get(id), after.parent.get(id)) {
            (false, _, _) => Annotation::Added,
            (true, old, new) if old != new && old.is_some() && new.is_some() => Annotation::GatewayChanged,
            _ => Annotation::Unchanged,
        };
        vertices.insert(id.clone(), CompareVertex { vertex: v.clone(), annotation });
    }
    for (id, v) in &before.vertices {
        if !after.vertices.contains_key(id) {
            vertices.insert(id.clone(), CompareVertex { vertex: v.clone(), annotation: Annotation::Removed });
        }
    }

    let old: BTreeSet<(&String, &String)> = before.parent.iter().collect();
    let new: BTreeSet<(&String, &String)> = after.parent.iter().collect();
    let edges = old
        .union(&new)
        .map(|&(c, p)| CompareEdge {
            child: c.clone(),
            parent: p.clone(),
            annotation: match (old.contains(&(c, p)), new.contains(&(c, p))) {
                (true, true) => Annotation::Unchanged,
                (true, false) => Annotation::Removed,
                _ => Annotation::Added,
            },
        })
        .collect();

    // removed vertices hang where they used to, visited top-down so their
    // old parent is already placed
    let mut layout_parent = after.parent.clone();
    let children = before.children_map();
    let mut queue = VecDeque::from([before.root.as_str()]);
    while let Some(id) = queue.pop_front() {
        if !after.vertices.contains_key(id) {
            let p = before.parent.get(id).cloned().unwrap_or_else(|| after.root.clone());
            layout_parent.insert(id.to_string(), p);
        }
        queue.extend(children.get(id).into_iter().flatten());
    }
    CompareGraph { root: after.root.clone(), vertices, edges, layout_parent }
}
