//! Graphviz export.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::domain::NodeId;
use crate::error::{Error, Result};
use crate::network::{Link, Topology};

/// Renders `t` as an undirected DOT graph. Edges along `highlight` are drawn red,
/// failed nodes and links dashed.
pub fn export_dot(t: &Topology, highlight: Option<&[NodeId]>) -> Result<String> {
    let mut marked = BTreeSet::new();
    if let Some(path) = highlight {
        if let Some(&n) = path.iter().find(|&&n| !t.contains(n)) {
            return Err(Error::UnknownNode(n));
        }
        for w in path.windows(2) {
            if !t.has_edge(w[0], w[1]) {
                return Err(Error::InvalidPath(format!(
                    "{} and {} are not adjacent",
                    w[0], w[1]
                )));
            }
            marked.insert(Link::new(w[0], w[1]));
        }
    }
    let on_path: BTreeSet<NodeId> = highlight.unwrap_or(&[]).iter().copied().collect();

    let mut out = String::from("graph network {\n");
    for n in t.nodes() {
        let mut attrs = Vec::new();
        if on_path.contains(&n) {
            attrs.push("color=red");
        }
        if !t.is_up(n) {
            attrs.push("style=dashed");
        }
        if attrs.is_empty() {
            let _ = writeln!(out, "  {n};");
        } else {
            let _ = writeln!(out, "  {n} [{}];", attrs.join(", "));
        }
    }
    for link in t.edges() {
        let (a, b) = link.ends();
        let mut attrs = Vec::new();
        if marked.contains(&link) {
            attrs.push("color=red");
            attrs.push("penwidth=2");
        }
        if !t.is_live(a, b) {
            attrs.push("style=dashed");
        }
        if attrs.is_empty() {
            let _ = writeln!(out, "  {a} -- {b};");
        } else {
            let _ = writeln!(out, "  {a} -- {b} [{}];", attrs.join(", "));
        }
    }
    out.push_str("}\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Topology {
        Topology::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    fn edge_lines(dot: &str) -> Vec<&str> {
        dot.lines().filter(|l| l.contains("--")).collect()
    }

    #[test]
    fn triangle_lists_everything() {
        let dot = export_dot(&triangle(), None).unwrap();
        assert!(dot.starts_with("graph network {"));
        assert_eq!(edge_lines(&dot).len(), 3);
        let node_lines = dot
            .lines()
            .filter(|l| l.trim_end().ends_with(';') && !l.contains("--"))
            .count();
        assert_eq!(node_lines, 3);
        assert!(!dot.contains("red"));
    }

    #[test]
    fn highlight_marks_path_edges_only() {
        let dot = export_dot(&triangle(), Some(&[NodeId(0), NodeId(1), NodeId(2)])).unwrap();
        let red: Vec<_> = edge_lines(&dot)
            .into_iter()
            .filter(|l| l.contains("color=red"))
            .collect();
        assert_eq!(
            red,
            [
                "  0 -- 1 [color=red, penwidth=2];",
                "  1 -- 2 [color=red, penwidth=2];"
            ]
        );
    }

    #[test]
    fn rejects_non_adjacent_highlight() {
        let t = Topology::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert!(matches!(
            export_dot(&t, Some(&[NodeId(0), NodeId(2)])),
            Err(Error::InvalidPath(_))
        ));
        assert_eq!(
            export_dot(&t, Some(&[NodeId(0), NodeId(7)])),
            Err(Error::UnknownNode(NodeId(7)))
        );
    }

    #[test]
    fn failures_are_dashed() {
        let mut t = triangle();
        t.fail_link(NodeId(0), NodeId(1)).unwrap();
        t.fail_node(NodeId(2)).unwrap();
        let dot = export_dot(&t, None).unwrap();
        assert!(dot.contains("  0 -- 1 [style=dashed];"));
        assert!(dot.contains("  2 [style=dashed];"));
        assert!(dot.contains("  1 -- 2 [style=dashed];"));
    }
}
