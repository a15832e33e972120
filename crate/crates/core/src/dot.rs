//! DOT rendering of concept graphs.
//!
//! Output is deterministic: nodes are grouped into one cluster per hierarchy
//! level and everything is emitted in id order, so exporting the same graph
//! twice yields byte-identical text.

use crate::graph::{ConceptGraph, Level};
use crate::ids::EdgeId;
use crate::scalar::Scalar;
use std::fmt::Write;

/// Render `graph` as DOT. With `annotated`, every edge carries its strength
/// as a two-decimal label; edges without a strength make the export fail.
pub fn export_dot<S: Scalar>(
    graph: &ConceptGraph<S>,
    annotated: bool,
) -> Result<String, DotExportError> {
    if annotated {
        let bare: Vec<EdgeId> = graph
            .edges()
            .iter()
            .filter(|e| e.strength.is_none())
            .map(|e| e.id.clone())
            .collect();
        if !bare.is_empty() {
            return Err(DotExportError::MissingStrengths { edges: bare });
        }
    }

    let mut out = String::new();
    out.push_str("graph concept_graph {\n");
    for level in Level::all() {
        let nodes: Vec<_> = graph.nodes_at_level(level).collect();
        if nodes.is_empty() {
            continue;
        }
        let _ = writeln!(out, "  subgraph cluster_{} {{", level.name().to_lowercase());
        let _ = writeln!(out, "    label=\"{}\";", level.name());
        for node in nodes {
            let _ = writeln!(
                out,
                "    \"{}\" [label=\"{}\"];",
                escape(node.id.as_str()),
                escape(&node.label)
            );
        }
        out.push_str("  }\n");
    }
    for edge in graph.edges() {
        let (a, b) = (&edge.endpoints.0, &edge.endpoints.1);
        match (&edge.strength, annotated) {
            (Some(strength), true) => {
                let value = strength.to_f64().unwrap_or(f64::NAN);
                let _ = writeln!(
                    out,
                    "  \"{}\" -- \"{}\" [label=\"{:.2}\"];",
                    escape(a.as_str()),
                    escape(b.as_str()),
                    value
                );
            }
            _ => {
                let _ = writeln!(
                    out,
                    "  \"{}\" -- \"{}\";",
                    escape(a.as_str()),
                    escape(b.as_str())
                );
            }
        }
    }
    out.push_str("}\n");
    Ok(out)
}

fn escape(raw: &str) -> String {
    raw.replace('\\', "\\\\").replace('"', "\\\"")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DotExportError {
    #[error("strength annotation requested but edges carry no strength: {}", format_ids(.edges))]
    MissingStrengths { edges: Vec<EdgeId> },
}

fn format_ids(ids: &[EdgeId]) -> String {
    ids.iter()
        .map(|e| e.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}
