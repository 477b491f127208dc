//! Bubble-tree layout.
//!
//! Each subtree is laid out in its own frame, then summarised by an
//! enclosing circle. A parent hands its children wedges proportional to
//! their leaf counts and pushes each child circle out until it fits its
//! wedge. Children are visited in address order, so the result depends on
//! the tree alone.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{TopologyTree, VertexKind};

const GAP: f64 = 4.0;
/// Angle kept free around the edge towards the parent.
const PARENT_CLEARANCE: f64 = PI / 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedVertex {
    pub id: String,
    pub kind: VertexKind,
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedEdge {
    pub child: String,
    pub parent: String,
    /// Polyline from the parent to the child.
    pub points: Vec<[f64; 2]>,
}

impl PlacedEdge {
    pub fn bends(&self) -> usize {
        self.points.len().saturating_sub(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaidOutGraph {
    pub vertices: Vec<PlacedVertex>,
    pub edges: Vec<PlacedEdge>,
    /// `[min_x, min_y, max_x, max_y]` over glyph extents.
    pub bbox: [f64; 4],
}

impl LaidOutGraph {
    pub fn vertex(&self, id: &str) -> Option<&PlacedVertex> {
        self.vertices
            .binary_search_by(|v| v.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.vertices[i])
    }

    pub fn diagonal(&self) -> f64 {
        let [x0, y0, x1, y1] = self.bbox;
        ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
    }

    /// Pairs of glyphs whose circles intersect.
    pub fn overlaps(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                let d = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
                if d + 1e-6 < a.radius + b.radius {
                    out.push((a.id.clone(), b.id.clone()));
                }
            }
        }
        out
    }

    pub fn max_bends(&self) -> usize {
        self.edges.iter().map(PlacedEdge::bends).max().unwrap_or(0)
    }
}

pub fn glyph_radius(tree: &TopologyTree, id: &str) -> f64 {
    match tree.vertices[id].kind {
        VertexKind::Router | VertexKind::Gateway => 10.0,
        VertexKind::Unplaced => 8.0,
        VertexKind::Host | VertexKind::Unknown => 6.0,
        VertexKind::Bubble => {
            let n = tree.bubbles.get(id).map_or(1, |b| b.members.len());
            6.0 + 3.0 * (n as f64).sqrt()
        }
    }
}

type P = (f64, f64);

struct Sub {
    /// Positions relative to the subtree root.
    points: Vec<(String, P)>,
    center: P,
    radius: f64,
    leaves: usize,
}

/// Circle around the bounding box centre of `circles`.
fn enclose(circles: &[(P, f64)]) -> (P, f64) {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &((x, y), r) in circles {
        x0 = x0.min(x - r);
        y0 = y0.min(y - r);
        x1 = x1.max(x + r);
        y1 = y1.max(y + r);
    }
    let c = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let r = circles.iter().map(|&(p, r)| ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt() + r).fold(0.0, f64::max);
    (c, r)
}

fn rotate((x, y): P, a: f64) -> P {
    let (s, c) = a.sin_cos();
    (x * c - y * s, x * s + y * c)
}

fn place(tree: &TopologyTree, children: &BTreeMap<&str, Vec<&str>>, id: &str, is_root: bool) -> Sub {
    let r = glyph_radius(tree, id);
    let kids = children.get(id).cloned().unwrap_or_default();
    if kids.is_empty() {
        return Sub { points: vec![(id.to_string(), (0.0, 0.0))], center: (0.0, 0.0), radius: r, leaves: 1 };
    }
    let subs: Vec<Sub> = kids.iter().map(|k| place(tree, children, k, false)).collect();
    let total: usize = subs.iter().map(|s| s.leaves).sum();
    let span = if is_root { 2.0 * PI } else { 2.0 * PI - 2.0 * PARENT_CLEARANCE };
    // the parent sits at angle pi, children fan out around angle 0
    let mut angle = -span / 2.0;

    let mut points = vec![(id.to_string(), (0.0, 0.0))];
    let mut circles = vec![((0.0, 0.0), r)];
    for sub in &subs {
        let theta = span * sub.leaves as f64 / total as f64;
        let phi = angle + theta / 2.0;
        angle += theta;
        let mut d = r + sub.radius + GAP;
        if theta < PI {
            d = d.max((sub.radius + GAP / 2.0) / (theta / 2.0).sin());
        }
        let at = (d * phi.cos(), d * phi.sin());
        for (vid, q) in &sub.points {
            let (x, y) = rotate((q.0 - sub.center.0, q.1 - sub.center.1), phi);
            points.push((vid.clone(), (at.0 + x, at.1 + y)));
        }
        circles.push((at, sub.radius));
    }
    let (center, radius) = enclose(&circles);
    Sub { points, center, radius, leaves: total }
}

fn round3(v: f64) -> f64 {
    let r = (v * 1000.0).round() / 1000.0;
    if r == 0.0 { 0.0 } else { r }
}

/// Lays out the tree with the root at the origin.
pub fn layout(tree: &TopologyTree) -> LaidOutGraph {
    let children = tree.children_map();
    let sub = place(tree, &children, &tree.root, true);
    let mut vertices: Vec<PlacedVertex> = sub
        .points
        .into_iter()
        .map(|(id, (x, y))| PlacedVertex {
            kind: tree.vertices[&id].kind,
            label: tree.vertices[&id].label.clone(),
            radius: glyph_radius(tree, &id),
            x: round3(x),
            y: round3(y),
            id,
        })
        .collect();
    vertices.sort_by(|a, b| a.id.cmp(&b.id));
    let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for v in &vertices {
        bbox[0] = bbox[0].min(v.x - v.radius);
        bbox[1] = bbox[1].min(v.y - v.radius);
        bbox[2] = bbox[2].max(v.x + v.radius);
        bbox[3] = bbox[3].max(v.y + v.radius);
    }
    let mut g = LaidOutGraph { vertices, edges: Vec::new(), bbox };
    g.edges = tree
        .parent
        .iter()
        .map(|(c, p)| {
            let a = g.vertex(p).expect("parent placed");
            let b = g.vertex(c).expect("child placed");
            PlacedEdge { child: c.clone(), parent: p.clone(), points: vec![[a.x, a.y], [b.x, b.y]] }
        })
        .collect();
    g
}
