//! Partial results for head / tail / columns over row-wise pipelines.
//!
//! The interaction's input is computed range by range in the row space of a
//! single base table, growing a prefix (suffix for tail) until K rows exist.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use super::ops::eval_operator;
use super::partition::{partition_class, PartitionClass, PartitionPlan};
use super::table::{DataTable, Value};
use crate::dag::{NodeId, OperatorDag};
use crate::dsl::OpKind;

/// Static shape of an operator's result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Table,
    Column,
    Scalar,
}

pub fn static_shape(dag: &OperatorDag, id: NodeId) -> Shape {
    let n = dag.node(id).expect("node exists");
    let input = |i: usize| static_shape(dag, n.deps[i]);
    match n.kind {
        OpKind::ReadCsv
        | OpKind::ValueCounts
        | OpKind::GroupbyMean
        | OpKind::DropColumnsBelowThreshold
        | OpKind::Assign => Shape::Table,
        OpKind::SelectColumn | OpKind::Columns => Shape::Column,
        OpKind::Literal => Shape::Scalar,
        OpKind::Mean | OpKind::Sum => match input(0) {
            Shape::Table => Shape::Column,
            _ => Shape::Scalar,
        },
        OpKind::Filter | OpKind::Fillna | OpKind::Head | OpKind::Tail | OpKind::SortValues => input(0),
    }
}

/// Row lineage: nodes with equal lineage have row-aligned results.
/// `read_csv`, filters and every non-row-wise operator start a new lineage.
fn lineage(dag: &OperatorDag, id: NodeId, memo: &mut BTreeMap<NodeId, NodeId>) -> NodeId {
    if let Some(l) = memo.get(&id) {
        return *l;
    }
    let n = dag.node(id).expect("node exists");
    let l = match n.kind {
        OpKind::SelectColumn | OpKind::Fillna | OpKind::Assign => lineage(dag, n.deps[0], memo),
        _ => id,
    };
    memo.insert(id, l);
    l
}

/// What the fast path needs to run.
#[derive(Debug, Clone, PartialEq)]
pub struct FastPathPlan {
    pub interaction: NodeId,
    /// Unavailable row-wise nodes evaluated per range, dependencies first.
    pub spine: Vec<NodeId>,
    /// Available row-aligned inputs, sliced per range.
    pub leaves: Vec<NodeId>,
    /// Unavailable `read_csv` nodes fed from their raw source, sliced per range.
    pub sources: Vec<NodeId>,
    /// Scalar inputs (fill values, broadcast assignments) needed in full.
    pub side_inputs: Vec<NodeId>,
}

/// Returns `None` when the fast path does not apply: the interaction is not
/// head/tail/columns over an unavailable table or column, a blocking or
/// aggregating operator would have to run, or row-aligned inputs come from
/// different lineages.
pub fn plan_fast_path(
    dag: &OperatorDag,
    interaction: NodeId,
    available: &dyn Fn(NodeId) -> bool,
) -> Option<FastPathPlan> {
    let node = dag.node(interaction).ok()?;
    if !matches!(node.kind, OpKind::Head | OpKind::Tail | OpKind::Columns) {
        return None;
    }
    let top = node.deps[0];
    if available(top) {
        return None;
    }
    if node.kind == OpKind::Columns && static_shape(dag, top) != Shape::Table {
        return None;
    }
    let mut memo = BTreeMap::new();
    let mut spine = BTreeSet::new();
    let mut leaves = BTreeSet::new();
    let mut sources = BTreeSet::new();
    let mut side = BTreeSet::new();
    let mut base_lineage = BTreeSet::new();
    let mut stack = vec![top];
    while let Some(id) = stack.pop() {
        if spine.contains(&id) || leaves.contains(&id) || sources.contains(&id) {
            continue;
        }
        if available(id) {
            leaves.insert(id);
            base_lineage.insert(lineage(dag, id, &mut memo));
            continue;
        }
        let n = dag.node(id).ok()?;
        if n.kind == OpKind::ReadCsv {
            sources.insert(id);
            base_lineage.insert(id);
            continue;
        }
        if partition_class(n.kind) != PartitionClass::RowWise {
            return None;
        }
        let aligned: Vec<NodeId> = match n.kind {
            OpKind::SelectColumn => vec![n.deps[0]],
            OpKind::Filter => vec![n.deps[0], n.deps[1]],
            OpKind::Fillna | OpKind::Assign => {
                if static_shape(dag, n.deps[1]) == Shape::Scalar {
                    side.insert(n.deps[1]);
                    vec![n.deps[0]]
                } else if n.kind == OpKind::Assign {
                    vec![n.deps[0], n.deps[1]]
                } else {
                    return None;
                }
            }
            _ => return None,
        };
        let l = lineage(dag, aligned[0], &mut memo);
        if aligned.iter().any(|a| lineage(dag, *a, &mut memo) != l) {
            return None;
        }
        spine.insert(id);
        stack.extend(aligned);
    }
    if base_lineage.len() != 1 {
        return None;
    }
    Some(FastPathPlan {
        interaction,
        spine: spine.into_iter().collect(),
        leaves: leaves.into_iter().collect(),
        sources: sources.into_iter().collect(),
        side_inputs: side.into_iter().collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastPathResult {
    pub value: Value,
    /// Input rows each spine node (and the interaction) processed.
    pub rows_touched: BTreeMap<NodeId, usize>,
    pub ranges_used: usize,
    /// Rows of the base table.
    pub base_rows: usize,
    /// Complete results of the spine, present only when every range ran.
    pub full_outputs: Option<BTreeMap<NodeId, Value>>,
}

/// Runs a plan. `values` holds every leaf and side input; `raw` the source
/// table of every unavailable `read_csv`. Returns `None` on any error or
/// inconsistency; callers then evaluate normally, which reports the error.
pub fn run_fast_path(
    dag: &OperatorDag,
    plan: &FastPathPlan,
    values: &BTreeMap<NodeId, Value>,
    raw: &BTreeMap<NodeId, DataTable>,
    make_plan: impl Fn(usize) -> PartitionPlan,
) -> Option<FastPathResult> {
    let inter = dag.node(plan.interaction).ok()?;
    let top = inter.deps[0];
    let mut base_rows = None;
    for id in &plan.leaves {
        let r = values.get(id)?.row_count();
        if *base_rows.get_or_insert(r) != r {
            return None;
        }
    }
    for id in &plan.sources {
        let r = raw.get(id)?.row_count();
        if *base_rows.get_or_insert(r) != r {
            return None;
        }
    }
    let base_rows = base_rows?;
    let k = match inter.kind {
        OpKind::Columns => 0,
        _ => inter.k()?,
    };
    let partition = make_plan(base_rows);
    if !partition.covers(base_rows) {
        return None;
    }
    let mut ranges: Vec<Range<usize>> = partition.ranges;
    if ranges.is_empty() {
        ranges.push(0..0);
    }
    if inter.kind == OpKind::Tail {
        ranges.reverse();
    }

    let mut touched: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut chunks: BTreeMap<NodeId, Vec<Value>> = BTreeMap::new();
    let mut out_rows = 0;
    let mut used = 0;
    for range in &ranges {
        let mut memo: BTreeMap<NodeId, Value> = BTreeMap::new();
        for id in &plan.leaves {
            memo.insert(*id, values[id].slice_rows(range.clone()));
        }
        for id in &plan.sources {
            let n = dag.node(*id).ok()?;
            let slice = Value::Table(raw[id].slice(range.clone()));
            *touched.entry(*id).or_default() += range.len();
            memo.insert(*id, eval_operator(n.kind, &n.args, &[slice]).ok()?);
        }
        for id in &plan.spine {
            let n = dag.node(*id).ok()?;
            let inputs: Vec<Value> = n
                .deps
                .iter()
                .map(|d| memo.get(d).or_else(|| values.get(d)).cloned())
                .collect::<Option<_>>()?;
            *touched.entry(*id).or_default() += inputs[0].row_count();
            let v = eval_operator(n.kind, &n.args, &inputs).ok()?;
            memo.insert(*id, v);
        }
        for (id, v) in &memo {
            if plan.spine.contains(id) || plan.sources.contains(id) {
                chunks.entry(*id).or_default().push(v.clone());
            }
        }
        used += 1;
        out_rows += memo.get(&top)?.row_count();
        if inter.kind == OpKind::Columns || (k > 0 && out_rows >= k) {
            break;
        }
    }
    let exhausted = used == ranges.len();
    let assemble = |mut parts: Vec<Value>| {
        if inter.kind == OpKind::Tail {
            parts.reverse();
        }
        Value::concat_rows(&parts).ok()
    };
    let top_value = assemble(chunks.get(&top)?.clone())?;
    *touched.entry(plan.interaction).or_default() += top_value.row_count();
    let value = eval_operator(inter.kind, &inter.args, &[top_value]).ok()?;
    let full_outputs = if exhausted {
        let mut full = BTreeMap::new();
        for (id, parts) in chunks {
            full.insert(id, assemble(parts)?);
        }
        Some(full)
    } else {
        None
    };
    Some(FastPathResult {
        value,
        rows_touched: touched,
        ranges_used: used,
        base_rows,
        full_outputs,
    })
}
