//! Static view of a trace: the DAG its cells lower to, without executing.

use std::collections::BTreeMap;
use std::fmt;

use super::{SimError, Trace};
use crate::dag::{critical_path, eliminate_common_subexpressions, NodeId, OperatorDag};
use crate::dsl::{lower_to_dag, parse_cell};

#[derive(Debug, Clone)]
pub struct Analysis {
    pub dag: OperatorDag,
    /// Absorbed node to survivor, over all cells.
    pub merges: BTreeMap<NodeId, NodeId>,
    /// Each interaction (after merging) with its critical path.
    pub critical_paths: Vec<(NodeId, Vec<NodeId>)>,
}

/// Lowers every cell in order, running CSE after each one as the session
/// would. A cell that fails to parse is an error, located by event.
pub fn analyze(trace: &Trace) -> Result<Analysis, SimError> {
    let mut dag = OperatorDag::new();
    let mut merges = BTreeMap::new();
    for (i, ev) in trace.events.iter().enumerate() {
        let located = |e: crate::dsl::DslError| SimError::Trace {
            line: i + 2,
            message: e.to_string(),
        };
        let statements = parse_cell(&ev.cell).map_err(located)?;
        lower_to_dag(&statements, &mut dag).map_err(located)?;
        merges.extend(eliminate_common_subexpressions(&mut dag));
    }
    let mut seen = Vec::new();
    for id in dag.interactions() {
        if !seen.contains(&id) {
            seen.push(id);
        }
    }
    let critical_paths = seen
        .into_iter()
        .map(|id| (id, critical_path(&dag, id).expect("interaction exists")))
        .collect();
    Ok(Analysis {
        dag,
        merges,
        critical_paths,
    })
}

impl Analysis {
    fn name(&self, id: NodeId) -> &str {
        self.dag.node(id).map(|n| n.name.as_str()).unwrap_or("?")
    }
}

impl fmt::Display for Analysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nodes:")?;
        for n in self.dag.live_nodes() {
            let deps: Vec<&str> = n.deps.iter().map(|d| self.name(*d)).collect();
            writeln!(
                f,
                "  {:<4} {:<34} {:<28} deps=[{}]{}",
                n.id.to_string(),
                n.name,
                n.kind.to_string(),
                deps.join(", "),
                if n.is_interaction { " interaction" } else { "" }
            )?;
        }
        writeln!(f, "merges:")?;
        if self.merges.is_empty() {
            writeln!(f, "  none")?;
        }
        for (from, to) in &self.merges {
            writeln!(f, "  {} -> {}", self.name(*from), self.name(*to))?;
        }
        writeln!(f, "critical paths:")?;
        for (id, path) in &self.critical_paths {
            let names: Vec<&str> = path.iter().map(|p| self.name(*p)).collect();
            writeln!(f, "  {}: {}", self.name(*id), names.join(" -> "))?;
        }
        Ok(())
    }
}
