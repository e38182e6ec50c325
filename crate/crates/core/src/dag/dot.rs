use std::fmt::Write;

use super::{NodeState, OperatorDag};

/// Graphviz rendering: one box per live node labelled with name, kind and
/// state; interactions are drawn as filled ellipses.
pub fn to_dot(dag: &OperatorDag) -> String {
    let mut out = String::from("digraph operators {\n  rankdir=TB;\n");
    for n in dag.live_nodes() {
        let shape = if n.is_interaction {
            "ellipse, style=filled, fillcolor=palegreen"
        } else {
            "box"
        };
        let state = match n.state {
            NodeState::Pending => "pending",
            NodeState::Running => "running",
            NodeState::Preempted => "preempted",
            NodeState::Executed => "executed",
        };
        let _ = writeln!(
            out,
            "  n{} [label=\"{}\\n{}\\n{}{}\", shape={}];",
            n.id.0,
            n.name,
            n.kind,
            state,
            if n.is_interaction { "\\ninteraction" } else { "" },
            shape
        );
    }
    for n in dag.live_nodes() {
        for d in &n.deps {
            let _ = writeln!(out, "  n{} -> n{};", d.0, n.id.0);
        }
    }
    for (name, id) in dag.bindings() {
        let _ = writeln!(
            out,
            "  \"var:{name}\" [shape=note, style=filled, fillcolor=lightyellow];\n  \"var:{name}\" -> n{} [style=dashed];",
            dag.resolve(*id).0
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{OpArg, OpKind};

    #[test]
    fn renders_nodes_and_edges() {
        let mut dag = OperatorDag::new();
        let r = dag.add_node(OpKind::ReadCsv, vec![OpArg::Str("a".into())], vec![]);
        let h = dag.add_node(OpKind::Head, vec![OpArg::Num(5.0)], vec![r]);
        dag.bind("data", r);
        let dot = to_dot(&dag);
        assert!(dot.contains("n0 -> n1;"));
        assert!(dot.contains("head_0\\nhead\\npending\\ninteraction"));
        assert!(dot.contains("\"var:data\" -> n0"));
        assert_eq!(h.0, 1);
    }
}
