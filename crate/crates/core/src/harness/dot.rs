//! Graphviz rendering of a model graph.

use std::fmt::Write;

use crate::graph::ModelGraph;

/// DOT text with inputs as circles, networks as triangles and outputs as
/// squares. Edges are labelled with their subset width; edges replaced by
/// noise at inference are dotted.
pub fn export_dot(graph: &ModelGraph) -> String {
    let mut s = String::from("digraph model {\n  rankdir=LR;\n");
    for i in &graph.inputs {
        let _ = writeln!(
            s,
            "  \"{}\" [shape=circle, label=\"{}\\n{} {}\"];",
            i.id, i.id, i.spec.dtype, i.spec.width
        );
    }
    for n in &graph.networks {
        let _ = writeln!(
            s,
            "  \"{}\" [shape=triangle, label=\"{}\\n{} {}\"];",
            n.id,
            n.id,
            n.ntype.short_name(),
            n.out_spec.width
        );
    }
    for o in &graph.outputs {
        let _ = writeln!(
            s,
            "  \"{}\" [shape=square, label=\"{}\\n{} {}\"];",
            o.id, o.id, o.spec.dtype, o.spec.width
        );
    }
    for c in &graph.connections {
        let style = if graph.deleted_at_inference.contains(&c.id) {
            ", style=dotted"
        } else {
            ""
        };
        let _ = writeln!(
            s,
            "  \"{}\" -> \"{}\" [label=\"{}\"{}];",
            c.source,
            c.target,
            c.width(),
            style
        );
    }
    s.push_str("}\n");
    s
}
