use std::fmt::Write as _;

use super::compare::{Annotation, CompareGraph};
use super::layout::{layout, LaidOutGraph};
use super::{TopologyError, TopologyTree, VertexKind};

pub const ADDED_COLOR: &str = "#2ca02c";
pub const REMOVED_COLOR: &str = "#d62728";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
    Svg,
}

impl std::str::FromStr for ExportFormat {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dot" => Ok(ExportFormat::Dot),
            "json" | "canonical-json" => Ok(ExportFormat::Json),
            "svg" => Ok(ExportFormat::Svg),
            other => Err(TopologyError::UnsupportedFormat(other.to_string())),
        }
    }
}

struct RenderVertex<'a> {
    id: &'a str,
    label: &'a str,
    kind: VertexKind,
    annotation: Option<Annotation>,
}

struct RenderEdge<'a> {
    child: &'a str,
    parent: &'a str,
    annotation: Option<Annotation>,
}

fn kind_class(k: VertexKind) -> &'static str {
    match k {
        VertexKind::Router => "router",
        VertexKind::Host => "host",
        VertexKind::Unknown => "unknown",
        VertexKind::Gateway => "gateway",
        VertexKind::Unplaced => "unplaced",
        VertexKind::Bubble => "bubble",
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn render_dot(vs: &[RenderVertex], es: &[RenderEdge]) -> String {
    let mut out = String::from("digraph topology {\n  rankdir=BT;\n");
    for v in vs {
        let shape = match v.kind {
            VertexKind::Router | VertexKind::Gateway => "box",
            VertexKind::Bubble => "doublecircle",
            VertexKind::Unplaced => "note",
            _ => "ellipse",
        };
        let mut attrs = format!("label=\"{}\", shape={shape}, class=\"{}\"", dot_escape(v.label), kind_class(v.kind));
        match v.annotation {
            Some(Annotation::Added) => write!(attrs, ", color=\"{ADDED_COLOR}\", penwidth=3").unwrap(),
            Some(Annotation::Removed) => write!(attrs, ", color=\"{REMOVED_COLOR}\", style=dashed").unwrap(),
            Some(Annotation::GatewayChanged) => attrs.push_str(", color=\"#ff7f0e\""),
            _ => {}
        }
        writeln!(out, "  \"{}\" [{attrs}];", dot_escape(v.id)).unwrap();
    }
    for e in es {
        let attrs = match e.annotation {
            Some(Annotation::Added) => format!(" [color=\"{ADDED_COLOR}\", penwidth=3]"),
            Some(Annotation::Removed) => format!(" [color=\"{REMOVED_COLOR}\", style=dashed]"),
            _ => String::new(),
        };
        writeln!(out, "  \"{}\" -> \"{}\"{attrs};", dot_escape(e.child), dot_escape(e.parent)).unwrap();
    }
    out.push_str("}\n");
    out
}

const SVG_STYLE: &str = "\
.edge{stroke:#888;stroke-width:1.5;fill:none}
.edge.added{stroke:#2ca02c;stroke-width:3}
.edge.removed{stroke:#d62728;stroke-width:1.5;stroke-dasharray:6 4}
.vertex circle{fill:#fff;stroke:#333;stroke-width:1}
.vertex.router circle,.vertex.gateway circle{fill:#dbe9f6}
.vertex.bubble circle{fill:#f3f3f3}
.vertex.added circle{stroke:#2ca02c;stroke-width:3}
.vertex.removed circle{stroke:#d62728;stroke-dasharray:4 3}
.vertex.gateway-changed circle{stroke:#ff7f0e;stroke-width:2}
.vertex text{font:9px sans-serif;text-anchor:middle}
";

fn render_svg(vs: &[RenderVertex], es: &[RenderEdge], g: &LaidOutGraph) -> String {
    let m = 20.0;
    let [x0, y0, x1, y1] = g.bbox;
    let mut out = String::new();
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{:.3} {:.3} {:.3} {:.3}\">",
        x0 - m,
        y0 - m,
        x1 - x0 + 2.0 * m,
        y1 - y0 + 2.0 * m
    )
    .unwrap();
    writeln!(out, "<style>\n{SVG_STYLE}</style>").unwrap();
    out.push_str("<g class=\"edges\">\n");
    for e in es {
        let (Some(a), Some(b)) = (g.vertex(e.parent), g.vertex(e.child)) else { continue };
        let (class, extra) = match e.annotation {
            Some(Annotation::Added) => ("edge added", format!(" stroke=\"{ADDED_COLOR}\" stroke-width=\"3\"")),
            Some(Annotation::Removed) => {
                ("edge removed", format!(" stroke=\"{REMOVED_COLOR}\" stroke-dasharray=\"6 4\""))
            }
            _ => ("edge", String::new()),
        };
        writeln!(
            out,
            "<line class=\"{class}\" data-child=\"{}\" data-parent=\"{}\" x1=\"{:.3}\" y1=\"{:.3}\" x2=\"{:.3}\" y2=\"{:.3}\"{extra}/>",
            xml_escape(e.child),
            xml_escape(e.parent),
            a.x,
            a.y,
            b.x,
            b.y
        )
        .unwrap();
    }
    out.push_str("</g>\n<g class=\"vertices\">\n");
    for v in vs {
        let Some(p) = g.vertex(v.id) else { continue };
        let mut class = format!("vertex {}", kind_class(v.kind));
        if let Some(a) = v.annotation {
            class.push(' ');
            class.push_str(a.as_str());
        }
        writeln!(
            out,
            "<g class=\"{class}\" data-id=\"{}\"><circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"{:.3}\"/><text x=\"{:.3}\" y=\"{:.3}\">{}</text></g>",
            xml_escape(v.id),
            p.x,
            p.y,
            p.radius,
            p.x,
            p.y + p.radius + 10.0,
            xml_escape(v.label)
        )
        .unwrap();
    }
    out.push_str("</g>\n</svg>\n");
    out
}

fn canonical<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("graph serializes");
    s.push('\n');
    s
}

pub fn export_tree(tree: &TopologyTree, format: ExportFormat) -> String {
    let vs: Vec<RenderVertex> = tree
        .vertices
        .values()
        .map(|v| RenderVertex { id: &v.id, label: &v.label, kind: v.kind, annotation: None })
        .collect();
    let es: Vec<RenderEdge> =
        tree.parent.iter().map(|(c, p)| RenderEdge { child: c, parent: p, annotation: None }).collect();
    match format {
        ExportFormat::Dot => render_dot(&vs, &es),
        ExportFormat::Json => canonical(tree),
        ExportFormat::Svg => render_svg(&vs, &es, &layout(tree)),
    }
}

pub fn export_compare(graph: &CompareGraph, format: ExportFormat) -> String {
    let vs: Vec<RenderVertex> = graph
        .vertices
        .values()
        .map(|v| RenderVertex {
            id: &v.vertex.id,
            label: &v.vertex.label,
            kind: v.vertex.kind,
            annotation: Some(v.annotation),
        })
        .collect();
    let es: Vec<RenderEdge> = graph
        .edges
        .iter()
        .map(|e| RenderEdge { child: &e.child, parent: &e.parent, annotation: Some(e.annotation) })
        .collect();
    match format {
        ExportFormat::Dot => render_dot(&vs, &es),
        ExportFormat::Json => canonical(graph),
        ExportFormat::Svg => render_svg(&vs, &es, &layout(&graph.union_tree())),
    }
}
