use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{Dataset, GatewayEstimate, NodeId};

/// Per-node field changes, gateway excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeChange {
    pub node_id: NodeId,
    pub fields: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayChange {
    pub node_id: NodeId,
    pub before: Option<GatewayEstimate>,
    pub after: Option<GatewayEstimate>,
    /// The gateway address itself moved, not just method or confidence.
    pub address_changed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetDiff {
    pub added: Vec<NodeId>,
    pub removed: Vec<NodeId>,
    pub changed: Vec<NodeChange>,
    pub gateway_changes: Vec<GatewayChange>,
    pub seeds_changed: bool,
    pub meta_changed: bool,
}

impl DatasetDiff {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty()
            && self.removed.is_empty()
            && self.changed.is_empty()
            && self.gateway_changes.is_empty()
            && !self.seeds_changed
            && !self.meta_changed
    }
}

fn fields(v: Value) -> serde_json::Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => serde_json::Map::new(),
    }
}

/// Node-level comparison of two datasets.
pub fn diff_datasets(from: &Dataset, to: &Dataset) -> DatasetDiff {
    let mut d = DatasetDiff::default();
    for (id, node) in &to.nodes {
        let Some(old) = from.nodes.get(id) else {
            d.added.push(*id);
            continue;
        };
        let mut a = fields(serde_json::to_value(old).expect("node serializes"));
        let mut b = fields(serde_json::to_value(node).expect("node serializes"));
        a.remove("gateway");
        b.remove("gateway");
        let mut changed: Vec<String> = a
            .iter()
            .filter(|(k, v)| b.get(*k) != Some(*v))
            .map(|(k, _)| k.clone())
            .collect();
        changed.extend(b.keys().filter(|k| !a.contains_key(*k)).cloned());
        changed.sort();
        if !changed.is_empty() {
            d.changed.push(NodeChange { node_id: *id, fields: changed });
        }
        if old.gateway != node.gateway {
            d.gateway_changes.push(GatewayChange {
                node_id: *id,
                before: old.gateway.clone(),
                after: node.gateway.clone(),
                address_changed: old.gateway.as_ref().map(|g| g.gateway_address)
                    != node.gateway.as_ref().map(|g| g.gateway_address),
            });
        }
    }
    d.removed = from.nodes.keys().filter(|id| !to.nodes.contains_key(id)).copied().collect();
    d.seeds_changed = from.seeds != to.seeds;
    d.meta_changed = from.meta != to.meta;
    d
}
