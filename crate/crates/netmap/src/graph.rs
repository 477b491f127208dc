//! Graph documents served to the UI and written by `export`.

use netmap_core::store::{DatasetDiff, StoreError, VersionMeta, VersionStore};
use netmap_core::topology::{
    aggregate_leaves, build_compare_graph, build_tree, layout, Aggregation, CompareGraph, LaidOutGraph, TopologyError,
    TopologyTree,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// One version as a tree, optionally aggregated, with coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub version: VersionMeta,
    /// `os`, `threshold:N`, or `None` for the plain tree.
    pub aggregation: Option<String>,
    pub tree: TopologyTree,
    pub layout: LaidOutGraph,
}

/// Two versions merged into one annotated graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffDocument {
    pub from: VersionMeta,
    pub to: VersionMeta,
    pub summary: DatasetDiff,
    pub graph: CompareGraph,
    pub layout: LaidOutGraph,
}

pub fn parse_aggregation(s: Option<&str>) -> Result<Option<Aggregation>, TopologyError> {
    match s {
        None | Some("") | Some("none") => Ok(None),
        Some(s) => s.parse().map(Some),
    }
}

pub fn version_tree(store: &VersionStore, version: &str, how: Option<Aggregation>) -> Result<TopologyTree, GraphError> {
    let seq = store.resolve(version)?;
    let tree = build_tree(&store.checkout_dataset(seq)?);
    Ok(match how {
        Some(how) => aggregate_leaves(&tree, how)?,
        None => tree,
    })
}

pub fn graph_document(store: &VersionStore, version: &str, aggregate: Option<&str>) -> Result<GraphDocument, GraphError> {
    let how = parse_aggregation(aggregate)?;
    let seq = store.resolve(version)?;
    let tree = version_tree(store, &seq.to_string(), how)?;
    Ok(GraphDocument {
        version: store.version(seq)?.clone(),
        aggregation: aggregate.filter(|a| !a.is_empty() && *a != "none").map(str::to_string),
        layout: layout(&tree),
        tree,
    })
}

pub fn compare_graph(store: &VersionStore, from: &str, to: &str) -> Result<CompareGraph, GraphError> {
    let before = version_tree(store, from, None)?;
    let after = version_tree(store, to, None)?;
    Ok(build_compare_graph(&before, &after))
}

pub fn diff_document(store: &VersionStore, from: &str, to: &str) -> Result<DiffDocument, GraphError> {
    let a = store.resolve(from)?;
    let b = store.resolve(to)?;
    let graph = compare_graph(store, &a.to_string(), &b.to_string())?;
    Ok(DiffDocument {
        from: store.version(a)?.clone(),
        to: store.version(b)?.clone(),
        summary: store.diff(a, b)?,
        layout: layout(&graph.union_tree()),
        graph,
    })
}

/// Human summary of a dataset diff; `no changes` when empty.
pub fn diff_summary(d: &DatasetDiff) -> String {
    if d.is_empty() {
        return "no changes\n".to_string();
    }
    let mut out = String::new();
    for id in &d.added {
        out.push_str(&format!("+ {id}\n"));
    }
    for id in &d.removed {
        out.push_str(&format!("- {id}\n"));
    }
    for c in &d.changed {
        out.push_str(&format!("~ {} ({})\n", c.node_id, c.fields.join(", ")));
    }
    for g in &d.gateway_changes {
        let show = |e: &Option<netmap_core::model::GatewayEstimate>| {
            e.as_ref().map_or("none".to_string(), |e| format!("{} [{:?}]", e.gateway_address, e.method).to_lowercase())
        };
        out.push_str(&format!("gateway {}: {} -> {}\n", g.node_id, show(&g.before), show(&g.after)));
    }
    if d.seeds_changed {
        out.push_str("seeds changed\n");
    }
    if d.meta_changed {
        out.push_str("metadata changed\n");
    }
    out.push_str(&format!(
        "{} added, {} removed, {} changed, {} gateway changes\n",
        d.added.len(),
        d.removed.len(),
        d.changed.len(),
        d.gateway_changes.len()
    ));
    out
}
