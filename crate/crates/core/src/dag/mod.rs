//! Operator DAG: SSA-named operator nodes, variable bindings, and the
//! program analyses the scheduler relies on.

mod cse;
mod dot;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{OpArg, OpKind};
use crate::time::VDuration;

pub use cse::eliminate_common_subexpressions;
pub use dot::to_dot;

/// Dense node identifier; creation order is a topological order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeState {
    Pending,
    Running,
    Preempted,
    Executed,
}

impl NodeState {
    /// Legal transitions. `Executed -> Pending` happens when a cached result is
    /// evicted; `Running -> Pending` when background work is abandoned.
    pub fn can_transition(self, to: NodeState) -> bool {
        use NodeState::*;
        matches!(
            (self, to),
            (Pending, Running)
                | (Running, Preempted)
                | (Running, Executed)
                | (Running, Pending)
                | (Preempted, Running)
                | (Executed, Pending)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {node} cannot move from {from:?} to {to:?}")]
    IllegalTransition {
        node: NodeId,
        from: NodeState,
        to: NodeState,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorNode {
    pub id: NodeId,
    pub name: String,
    pub kind: OpKind,
    pub args: Vec<OpArg>,
    pub deps: Vec<NodeId>,
    pub canonical_code: String,
    pub state: NodeState,
    pub is_interaction: bool,
    pub observed_cost: Option<VDuration>,
    /// Output row count from the last execution.
    pub observed_rows: Option<usize>,
    /// Set once the node has produced a result at least once.
    pub ever_executed: bool,
    /// Last execution error, if the operator failed.
    pub failed: Option<String>,
    /// Set when CSE folded this node into another one.
    pub merged_into: Option<NodeId>,
}

impl OperatorNode {
    pub fn is_live(&self) -> bool {
        self.merged_into.is_none()
    }

    /// Head / tail row count.
    pub fn k(&self) -> Option<usize> {
        match self.kind {
            OpKind::Head | OpKind::Tail => self.args.first()?.as_num().map(|v| v as usize),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct OperatorDag {
    nodes: Vec<OperatorNode>,
    bindings: BTreeMap<String, NodeId>,
    interactions: Vec<NodeId>,
    counters: BTreeMap<OpKind, usize>,
}

impl OperatorDag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a node named `kind_N` (N is a per-kind counter).
    ///
    /// Panics if a dependency does not exist; lowering validates references
    /// before calling this.
    pub fn add_node(&mut self, kind: OpKind, args: Vec<OpArg>, deps: Vec<NodeId>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        for d in &deps {
            assert!(d.index() < self.nodes.len(), "dependency {d} does not exist");
        }
        let deps: Vec<NodeId> = deps.into_iter().map(|d| self.resolve(d)).collect();
        let counter = self.counters.entry(kind).or_insert(0);
        let name = format!("{}_{}", kind.name(), counter);
        *counter += 1;
        let canonical_code = canonical_code(
            kind,
            &args,
            deps.iter().map(|d| self.nodes[d.index()].canonical_code.as_str()),
        );
        let is_interaction = kind.is_interaction();
        self.nodes.push(OperatorNode {
            id,
            name,
            kind,
            args,
            deps,
            canonical_code,
            state: NodeState::Pending,
            is_interaction,
            observed_cost: None,
            observed_rows: None,
            ever_executed: false,
            failed: None,
            merged_into: None,
        });
        if is_interaction {
            self.interactions.push(id);
        }
        id
    }

    pub fn node(&self, id: NodeId) -> Result<&OperatorNode, DagError> {
        self.nodes.get(id.index()).ok_or(DagError::UnknownNode(id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut OperatorNode, DagError> {
        self.nodes.get_mut(id.index()).ok_or(DagError::UnknownNode(id))
    }

    /// Every node ever created, including ones absorbed by CSE.
    pub fn all_nodes(&self) -> impl Iterator<Item = &OperatorNode> {
        self.nodes.iter()
    }

    /// Nodes not absorbed by CSE, in id order.
    pub fn live_nodes(&self) -> impl Iterator<Item = &OperatorNode> {
        self.nodes.iter().filter(|n| n.is_live())
    }

    pub fn live_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.live_nodes().map(|n| n.id)
    }

    /// Follows CSE merges to the surviving node.
    pub fn resolve(&self, mut id: NodeId) -> NodeId {
        while let Some(next) = self.nodes.get(id.index()).and_then(|n| n.merged_into) {
            id = next;
        }
        id
    }

    pub fn find_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn bind(&mut self, name: impl Into<String>, id: NodeId) {
        self.bindings.insert(name.into(), id);
    }

    pub fn binding(&self, name: &str) -> Option<NodeId> {
        self.bindings.get(name).map(|id| self.resolve(*id))
    }

    pub fn bindings(&self) -> &BTreeMap<String, NodeId> {
        &self.bindings
    }

    /// Interaction nodes in creation order (resolved through merges).
    pub fn interactions(&self) -> Vec<NodeId> {
        self.interactions.iter().map(|id| self.resolve(*id)).collect()
    }

    pub fn set_state(&mut self, id: NodeId, to: NodeState) -> Result<(), DagError> {
        let node = self.node_mut(id)?;
        if node.state == to {
            return Ok(());
        }
        if !node.state.can_transition(to) {
            return Err(DagError::IllegalTransition {
                node: id,
                from: node.state,
                to,
            });
        }
        node.state = to;
        if to == NodeState::Executed {
            node.ever_executed = true;
            node.failed = None;
        }
        Ok(())
    }

    pub fn is_executed(&self, id: NodeId) -> bool {
        self.nodes
            .get(id.index())
            .is_some_and(|n| n.state == NodeState::Executed)
    }

    /// Direct consumers of `id` among live nodes.
    pub fn children(&self, id: NodeId) -> Vec<NodeId> {
        self.live_nodes()
            .filter(|n| n.deps.contains(&id))
            .map(|n| n.id)
            .collect()
    }

    /// All live nodes reachable forward from `id`, excluding `id`.
    pub fn successors(&self, id: NodeId) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        // ids are topological: one forward sweep suffices
        for n in self.live_nodes().filter(|n| n.id > id) {
            if n.deps.iter().any(|d| *d == id || out.contains(d)) {
                out.insert(n.id);
            }
        }
        out
    }

    /// All nodes reachable backwards from `id`, excluding `id`.
    pub fn ancestors(&self, id: NodeId) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            for d in &self.nodes[n.index()].deps {
                if out.insert(*d) {
                    stack.push(*d);
                }
            }
        }
        out
    }

    /// Rewrites bindings and interaction log entries after merges.
    fn rewrite_references(&mut self) {
        let resolved: Vec<(String, NodeId)> = self
            .bindings
            .iter()
            .map(|(k, v)| (k.clone(), self.resolve(*v)))
            .collect();
        self.bindings = resolved.into_iter().collect();
        self.interactions = self.interactions.iter().map(|i| self.resolve(*i)).collect();
    }
}

/// Pure function of the operator, its literal arguments and the canonical
/// codes of its inputs.
pub fn canonical_code<'a>(kind: OpKind, args: &[OpArg], dep_codes: impl Iterator<Item = &'a str>) -> String {
    let mut s = String::from(kind.name());
    if !args.is_empty() {
        s.push('[');
        for (i, a) in args.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&a.to_string());
        }
        s.push(']');
    }
    s.push('(');
    for (i, c) in dep_codes.enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(c);
    }
    s.push(')');
    s
}

/// Ancestor closure of `node` (including it), ordered so that every node
/// follows all of its dependencies.
pub fn critical_path(dag: &OperatorDag, node: NodeId) -> Result<Vec<NodeId>, DagError> {
    dag.node(node)?;
    let node = dag.resolve(node);
    let mut set = dag.ancestors(node);
    set.insert(node);
    Ok(set.into_iter().collect())
}

/// Pending nodes whose dependencies have all executed.
pub fn source_operators(dag: &OperatorDag) -> BTreeSet<NodeId> {
    dag.live_nodes()
        .filter(|n| n.state == NodeState::Pending)
        .filter(|n| n.deps.iter().all(|d| dag.is_executed(*d)))
        .map(|n| n.id)
        .collect()
}

/// Breadth-first levels from the roots: a node's level is one more than its
/// deepest dependency.
pub(crate) fn levels(dag: &OperatorDag) -> BTreeMap<NodeId, usize> {
    let mut level = BTreeMap::new();
    for n in dag.live_nodes() {
        let l = n
            .deps
            .iter()
            .map(|d| level.get(d).copied().unwrap_or(0) + 1)
            .max()
            .unwrap_or(0);
        level.insert(n.id, l);
    }
    level
}
