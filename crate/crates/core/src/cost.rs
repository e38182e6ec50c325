//! Virtual-time cost model: per-operator estimates, delivery cost and
//! cache-aware recomputation cost.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dag::{DagError, NodeId, OperatorDag};
use crate::dsl::{OpArg, OpKind};
use crate::engine::Catalog;
use crate::time::VDuration;

/// Row counts of data sources, for estimating `read_csv` before it runs.
pub trait RowStats {
    fn source_rows(&self, path: &str) -> Option<usize>;
}

impl RowStats for Catalog {
    fn source_rows(&self, path: &str) -> Option<usize> {
        self.row_count(path)
    }
}

impl RowStats for BTreeMap<String, usize> {
    fn source_rows(&self, path: &str) -> Option<usize> {
        self.get(path).copied()
    }
}

/// No source statistics; unknown sources count as empty.
pub struct NoStats;

impl RowStats for NoStats {
    fn source_rows(&self, _: &str) -> Option<usize> {
        None
    }
}

/// Linear cost model: fixed overhead plus a per-row coefficient applied to
/// the operator's input rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Virtual microseconds per input row.
    pub per_row_us: BTreeMap<OpKind, f64>,
    /// Fixed cost per operator execution.
    pub overhead: BTreeMap<OpKind, VDuration>,
    /// Prefer a node's observed cost over the formula once it has run.
    pub calibrated: bool,
    /// Assumed fraction of rows a filter keeps before it has run.
    pub filter_selectivity: f64,
}

pub const DEFAULT_OVERHEAD: VDuration = VDuration::from_millis(1);

impl Default for CostModel {
    fn default() -> Self {
        let per_row_us = OpKind::ALL
            .into_iter()
            .map(|k| {
                let c = match k {
                    OpKind::ReadCsv => 18.5,
                    OpKind::Mean | OpKind::Sum => 1.0,
                    OpKind::Fillna => 2.0,
                    OpKind::Filter | OpKind::SelectColumn => 0.5,
                    OpKind::ValueCounts => 3.0,
                    OpKind::SortValues => 5.0,
                    OpKind::GroupbyMean => 4.0,
                    OpKind::DropColumnsBelowThreshold => 2.0,
                    OpKind::Assign => 0.5,
                    OpKind::Head | OpKind::Tail | OpKind::Columns | OpKind::Literal => 0.0,
                };
                (k, c)
            })
            .collect();
        CostModel {
            per_row_us,
            overhead: OpKind::ALL.into_iter().map(|k| (k, DEFAULT_OVERHEAD)).collect(),
            calibrated: true,
            filter_selectivity: 0.5,
        }
    }
}

impl CostModel {
    pub fn coefficient(&self, kind: OpKind) -> f64 {
        self.per_row_us.get(&kind).copied().unwrap_or(0.0).max(0.0)
    }

    pub fn overhead(&self, kind: OpKind) -> VDuration {
        self.overhead.get(&kind).copied().unwrap_or(DEFAULT_OVERHEAD)
    }

    /// Every coefficient and overhead multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> CostModel {
        let mut m = self.clone();
        for c in m.per_row_us.values_mut() {
            *c *= factor;
        }
        for o in m.overhead.values_mut() {
            *o = VDuration::from_secs_f64(o.as_secs_f64() * factor);
        }
        m
    }

    fn row_part(&self, kind: OpKind, rows: usize) -> u64 {
        (self.coefficient(kind) * rows as f64).round() as u64
    }

    /// Cost of running `kind` over `rows` input rows in one go.
    pub fn cost_for_rows(&self, kind: OpKind, rows: usize) -> VDuration {
        self.overhead(kind) + VDuration::from_micros(self.row_part(kind, rows))
    }

    /// Cost of one range of a partitioned run. Rounding is cumulative and
    /// the overhead falls on the range starting at row 0, so the ranges of a
    /// plan sum to `cost_for_rows` of the whole input.
    pub fn range_cost(&self, kind: OpKind, range: &Range<usize>) -> VDuration {
        let rows = VDuration::from_micros(self.row_part(kind, range.end) - self.row_part(kind, range.start));
        if range.start == 0 {
            self.overhead(kind) + rows
        } else {
            rows
        }
    }

    /// Estimated output rows of a node.
    pub fn estimated_rows(&self, dag: &OperatorDag, id: NodeId, stats: &dyn RowStats) -> f64 {
        let Ok(n) = dag.node(id) else { return 0.0 };
        if let Some(r) = n.observed_rows {
            return r as f64;
        }
        let input = || self.estimated_input_rows(dag, id, stats);
        match n.kind {
            OpKind::ReadCsv => input(),
            OpKind::Filter => input() * self.filter_selectivity,
            OpKind::Mean | OpKind::Sum | OpKind::Columns | OpKind::Literal => 1.0,
            OpKind::Head | OpKind::Tail => input().min(n.k().unwrap_or(0) as f64),
            OpKind::SelectColumn
            | OpKind::Fillna
            | OpKind::Assign
            | OpKind::SortValues
            | OpKind::ValueCounts
            | OpKind::GroupbyMean
            | OpKind::DropColumnsBelowThreshold => input(),
        }
    }

    /// Rows the operator reads: its source for `read_csv`, otherwise its
    /// first input's output.
    pub fn estimated_input_rows(&self, dag: &OperatorDag, id: NodeId, stats: &dyn RowStats) -> f64 {
        let Ok(n) = dag.node(id) else { return 0.0 };
        match (n.kind, n.deps.first()) {
            (OpKind::ReadCsv, _) => match n.args.first() {
                Some(OpArg::Str(path)) => stats.source_rows(path).unwrap_or(0) as f64,
                _ => 0.0,
            },
            (_, Some(d)) => self.estimated_rows(dag, *d, stats),
            (_, None) => 1.0,
        }
    }

    /// Fixed overhead plus coefficient times estimated input rows, or the
    /// observed cost when calibrated.
    pub fn estimate_cost(&self, node: NodeId, dag: &OperatorDag, stats: &dyn RowStats) -> Result<VDuration, DagError> {
        let n = dag.node(node)?;
        if self.calibrated {
            if let Some(c) = n.observed_cost {
                return Ok(c);
            }
        }
        let rows = self.estimated_input_rows(dag, node, stats).max(0.0);
        Ok(self.overhead(n.kind) + VDuration::from_micros((self.coefficient(n.kind) * rows).round() as u64))
    }

    /// Cost to produce `node` now: zero if available, else its own estimate
    /// plus that of every unavailable ancestor it must run through (each
    /// counted once).
    pub fn delivery_cost(
        &self,
        node: NodeId,
        dag: &OperatorDag,
        available: &dyn Fn(NodeId) -> bool,
        stats: &dyn RowStats,
    ) -> Result<VDuration, DagError> {
        dag.node(node)?;
        let mut total = VDuration::ZERO;
        for id in unavailable_closure(dag, node, available) {
            total += self.estimate_cost(id, dag, stats)?;
        }
        Ok(total)
    }

    /// Delivery cost of a cached entry as if it alone were evicted.
    pub fn recompute_cost(
        &self,
        entry: NodeId,
        dag: &OperatorDag,
        cached: &dyn Fn(NodeId) -> bool,
        stats: &dyn RowStats,
    ) -> Result<VDuration, DagError> {
        self.delivery_cost(entry, dag, &|id| id != entry && cached(id), stats)
    }
}

/// `node` and the ancestors reachable from it through unavailable nodes;
/// empty if `node` itself is available.
pub fn unavailable_closure(dag: &OperatorDag, node: NodeId, available: &dyn Fn(NodeId) -> bool) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    if available(node) {
        return out;
    }
    let mut stack = vec![node];
    out.insert(node);
    while let Some(n) = stack.pop() {
        for d in &dag.node(n).expect("dependency exists").deps {
            if !available(*d) && out.insert(*d) {
                stack.push(*d);
            }
        }
    }
    out
}
