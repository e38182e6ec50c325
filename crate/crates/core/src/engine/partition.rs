//! Row-range partitioning, cooperative preemption and resume.

use std::ops::Range;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::Serialize;

use super::ops::{
    as_column, as_table, drop_sparse, eval_operator, finish_column_agg, finish_table_agg, numeric_columns,
    table_accumulators, ColumnAcc, Counts,
};
use super::table::{ColumnVector, Value};
use super::EngineError;
use crate::behavior::ThinkTimeModel;
use crate::dag::NodeId;
use crate::dsl::{OpArg, OpKind};

/// Number of base chunks the middle of a table is cut into.
pub const MIDDLE_CHUNKS: usize = 8;
/// A chunk is halved when its start offset lies within this fraction of a
/// think-time quartile.
pub const QUANTILE_BAND: f64 = 0.1;

/// How an operator's work splits across row ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionClass {
    /// Output rows of a range depend only on input rows of that range.
    RowWise,
    /// Per-range partial states merge into the full result.
    Mergeable,
    /// Must see the whole input at once.
    Single,
}

pub fn partition_class(kind: OpKind) -> PartitionClass {
    match kind {
        OpKind::ReadCsv | OpKind::SelectColumn | OpKind::Filter | OpKind::Fillna | OpKind::Assign => {
            PartitionClass::RowWise
        }
        OpKind::Mean | OpKind::Sum | OpKind::ValueCounts | OpKind::DropColumnsBelowThreshold => {
            PartitionClass::Mergeable
        }
        OpKind::SortValues | OpKind::GroupbyMean | OpKind::Head | OpKind::Tail | OpKind::Columns | OpKind::Literal => {
            PartitionClass::Single
        }
    }
}

/// Ordered, disjoint half-open row ranges covering `[0, rows)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionPlan {
    pub ranges: Vec<Range<usize>>,
    pub k: usize,
}

impl PartitionPlan {
    /// One range over everything (none for an empty input).
    pub fn single(rows: usize) -> Self {
        PartitionPlan {
            ranges: if rows == 0 {
                vec![]
            } else {
                std::iter::once(0..rows).collect()
            },
            k: rows.max(1),
        }
    }

    /// Chunks of at most `size` rows.
    pub fn uniform(rows: usize, size: usize) -> Self {
        let size = size.max(1);
        PartitionPlan {
            ranges: (0..rows).step_by(size).map(|s| s..(s + size).min(rows)).collect(),
            k: size,
        }
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn row_count(&self) -> usize {
        self.ranges.last().map(|r| r.end).unwrap_or(0)
    }

    /// True if the ranges tile `[0, rows)` without gaps or overlaps.
    pub fn covers(&self, rows: usize) -> bool {
        let mut next = 0;
        for r in &self.ranges {
            if r.start != next || r.end <= r.start {
                return false;
            }
            next = r.end;
        }
        next == rows
    }
}

/// Top-K and bottom-K ranges around a middle cut into `MIDDLE_CHUNKS` base
/// chunks; a chunk whose predicted start time (prorated by rows) falls within
/// `QUANTILE_BAND` of a think-time quartile is halved.
pub fn make_partition_plan(row_count: usize, k: usize, est_exec_secs: f64, think: &ThinkTimeModel) -> PartitionPlan {
    plan_with_quantiles(row_count, k, est_exec_secs, &think.quartiles())
}

pub fn plan_with_quantiles(row_count: usize, k: usize, est_exec_secs: f64, quantiles: &[f64]) -> PartitionPlan {
    let k = k.max(1);
    let mut ranges = Vec::new();
    if row_count == 0 {
        return PartitionPlan { ranges, k };
    }
    let top = k.min(row_count);
    let bottom = k.min(row_count - top);
    let mid_end = row_count - bottom;
    ranges.push(0..top);
    let middle = mid_end - top;
    if middle > 0 {
        let chunk = middle.div_ceil(MIDDLE_CHUNKS);
        let mut start = top;
        while start < mid_end {
            let end = (start + chunk).min(mid_end);
            let offset = est_exec_secs * start as f64 / row_count as f64;
            let near = quantiles
                .iter()
                .any(|q| *q > 0.0 && (offset - q).abs() <= QUANTILE_BAND * q);
            if near && end - start >= 2 {
                let mid = start + (end - start).div_ceil(2);
                ranges.push(start..mid);
                ranges.push(mid..end);
            } else {
                ranges.push(start..end);
            }
            start = end;
        }
    }
    if bottom > 0 {
        ranges.push(mid_end..row_count);
    }
    PartitionPlan { ranges, k }
}

#[derive(Debug, Clone, PartialEq)]
enum Partial {
    Empty,
    Chunks(Vec<Value>),
    TableAgg(Vec<ColumnAcc>),
    ColumnAgg(ColumnAcc),
    Counts(Counts),
    NonNull(Vec<usize>),
    Whole(Value),
}

/// Output of one range, not yet committed.
#[derive(Debug, Clone)]
pub struct RangeOutput {
    index: usize,
    partial: Partial,
}

/// An operator's partitioned execution in progress.
#[derive(Debug, Clone)]
pub struct PartitionRun {
    node: NodeId,
    kind: OpKind,
    args: Vec<OpArg>,
    inputs: Vec<Value>,
    plan: PartitionPlan,
    class: PartitionClass,
    completed: usize,
    partial: Partial,
}

impl PartitionRun {
    /// Plans that do not fit the operator (blocking kinds, inputs whose rows
    /// do not line up) collapse to a single range.
    pub fn new(node: NodeId, kind: OpKind, args: Vec<OpArg>, inputs: Vec<Value>, plan: PartitionPlan) -> Self {
        let rows = partition_rows(kind, &inputs);
        let mut class = partition_class(kind);
        let aligned = inputs
            .iter()
            .all(|v| matches!(v, Value::Scalar(_)) || v.row_count() == rows);
        if class == PartitionClass::RowWise && !aligned {
            class = PartitionClass::Single;
        }
        let plan = if class == PartitionClass::Single || !plan.covers(rows) {
            PartitionPlan::single(rows)
        } else {
            plan
        };
        PartitionRun {
            node,
            kind,
            args,
            inputs,
            plan,
            class,
            completed: 0,
            partial: Partial::Empty,
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.plan
    }

    pub fn completed(&self) -> usize {
        self.completed
    }

    pub fn rows(&self) -> usize {
        partition_rows(self.kind, &self.inputs)
    }

    pub fn is_complete(&self) -> bool {
        self.completed == self.plan.len()
    }

    pub fn next_range(&self) -> Option<Range<usize>> {
        self.plan.ranges.get(self.completed).cloned()
    }

    /// Runs the next range without committing it.
    pub fn run_next(&self) -> Result<RangeOutput, EngineError> {
        let range = self
            .next_range()
            .ok_or_else(|| EngineError::Internal("no range left".into()))?;
        self.run_range(range.clone())
            .map(|partial| RangeOutput {
                index: self.completed,
                partial,
            })
            .map_err(|e| EngineError::InRange {
                start: range.start,
                end: range.end,
                source: Box::new(e.root().clone()),
            })
    }

    pub fn commit(&mut self, out: RangeOutput) {
        assert_eq!(out.index, self.completed, "range committed out of order");
        let merged = match (std::mem::replace(&mut self.partial, Partial::Empty), out.partial) {
            (Partial::Empty, p) => p,
            (Partial::Chunks(mut a), Partial::Chunks(b)) => {
                a.extend(b);
                Partial::Chunks(a)
            }
            (Partial::TableAgg(mut a), Partial::TableAgg(b)) => {
                a.iter_mut().zip(&b).for_each(|(x, y)| x.merge(y));
                Partial::TableAgg(a)
            }
            (Partial::ColumnAgg(mut a), Partial::ColumnAgg(b)) => {
                a.merge(&b);
                Partial::ColumnAgg(a)
            }
            (Partial::Counts(mut a), Partial::Counts(b)) => {
                a.merge(&b);
                Partial::Counts(a)
            }
            (Partial::NonNull(mut a), Partial::NonNull(b)) => {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                Partial::NonNull(a)
            }
            (a, b) => unreachable!("partial states of one run disagree: {a:?} vs {b:?}"),
        };
        self.partial = merged;
        self.completed += 1;
    }

    /// Runs and commits the next range.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let out = self.run_next()?;
        self.commit(out);
        Ok(())
    }

    /// Merges the partial states into the operator's result.
    pub fn finish(self) -> Result<Value, EngineError> {
        if !self.is_complete() {
            return Err(EngineError::Internal(format!(
                "finish after {} of {} ranges",
                self.completed,
                self.plan.len()
            )));
        }
        if self.plan.is_empty() {
            return eval_operator(self.kind, &self.args, &self.inputs);
        }
        let op = self.kind.name();
        match self.partial {
            Partial::Whole(v) => Ok(v),
            Partial::Chunks(chunks) => Value::concat_rows(&chunks),
            Partial::TableAgg(accs) => Ok(finish_table_agg(self.kind, &accs)),
            Partial::ColumnAgg(acc) => {
                let name = &as_column(op, &self.inputs[0])?.name;
                finish_column_agg(op, self.kind == OpKind::Mean, name, &acc)
            }
            Partial::Counts(c) => Ok(c.finish()),
            Partial::NonNull(counts) => {
                let t = as_table(op, &self.inputs[0])?;
                let frac = self.args.first().and_then(OpArg::as_num).unwrap_or(0.0);
                Ok(Value::Table(drop_sparse(t, &counts, frac)))
            }
            Partial::Empty => Err(EngineError::Internal("no partial state".into())),
        }
    }

    fn run_range(&self, range: Range<usize>) -> Result<Partial, EngineError> {
        match self.class {
            PartitionClass::Single => eval_operator(self.kind, &self.args, &self.inputs).map(Partial::Whole),
            PartitionClass::RowWise => {
                let sliced: Vec<Value> = self.inputs.iter().map(|v| v.slice_rows(range.clone())).collect();
                eval_operator(self.kind, &self.args, &sliced).map(|v| Partial::Chunks(vec![v]))
            }
            PartitionClass::Mergeable => self.aggregate_range(range),
        }
    }

    fn aggregate_range(&self, range: Range<usize>) -> Result<Partial, EngineError> {
        let input = &self.inputs[0];
        // type errors come from the reference implementation so that the
        // message is the same as an unpartitioned run
        let reference_error = || match eval_operator(self.kind, &self.args, &[input.slice_rows(range.clone())]) {
            Err(e) => e,
            Ok(_) => EngineError::Internal(format!("{} accepted {}", self.kind, input.kind_name())),
        };
        match (self.kind, input) {
            (OpKind::Mean | OpKind::Sum, Value::Table(t)) => {
                let mut accs = table_accumulators(t);
                for (acc, col) in accs.iter_mut().zip(numeric_columns(t)) {
                    acc.add_column(col, range.clone());
                }
                Ok(Partial::TableAgg(accs))
            }
            (OpKind::Mean | OpKind::Sum, Value::Column(s)) if s.data.is_numeric() => {
                let mut acc = ColumnAcc::default();
                acc.add_column(&s.data, range);
                Ok(Partial::ColumnAgg(acc))
            }
            (OpKind::ValueCounts, Value::Column(s)) => {
                let mut c = Counts::for_column(&s.data);
                c.add(&s.data, range);
                Ok(Partial::Counts(c))
            }
            (OpKind::DropColumnsBelowThreshold, Value::Table(t)) => Ok(Partial::NonNull(
                t.columns().map(|(_, c)| count_valid(c, range.clone())).collect(),
            )),
            _ => Err(reference_error()),
        }
    }
}

fn count_valid(c: &ColumnVector, range: Range<usize>) -> usize {
    range.filter(|i| c.is_valid(*i)).count()
}

/// Rows along which an operator's work is partitioned.
pub fn partition_rows(kind: OpKind, inputs: &[Value]) -> usize {
    match (kind, inputs.first()) {
        (_, Some(v)) => v.row_count(),
        (_, None) => 1,
    }
}

/// Resumable state of a preempted run. Holds at least one unfinished range.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    run: PartitionRun,
}

impl Checkpoint {
    pub fn node(&self) -> NodeId {
        self.run.node
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.run.plan
    }

    pub fn completed(&self) -> usize {
        self.run.completed
    }

    pub fn into_run(self) -> PartitionRun {
        self.run
    }
}

impl From<PartitionRun> for Checkpoint {
    fn from(run: PartitionRun) -> Self {
        debug_assert!(!run.is_complete());
        Checkpoint { run }
    }
}

#[derive(Debug, Clone)]
pub enum PartitionOutcome {
    Completed(Value),
    Preempted(Checkpoint),
}

/// Processes the plan in order, checking `preempt` before every range. A range
/// during which the flag was raised is discarded.
pub fn execute_partitioned(
    node: NodeId,
    kind: OpKind,
    args: Vec<OpArg>,
    inputs: Vec<Value>,
    plan: PartitionPlan,
    preempt: &AtomicBool,
) -> Result<PartitionOutcome, EngineError> {
    drive(PartitionRun::new(node, kind, args, inputs, plan), preempt, |_, _| {})
}

/// Like [`execute_partitioned`], calling `on_range(index, range)` as each
/// range starts.
pub fn execute_partitioned_observed(
    run: PartitionRun,
    preempt: &AtomicBool,
    on_range: impl FnMut(usize, &Range<usize>),
) -> Result<PartitionOutcome, EngineError> {
    drive(run, preempt, on_range)
}

pub fn resume(checkpoint: Checkpoint, preempt: &AtomicBool) -> Result<PartitionOutcome, EngineError> {
    drive(checkpoint.run, preempt, |_, _| {})
}

fn drive(
    mut run: PartitionRun,
    preempt: &AtomicBool,
    mut on_range: impl FnMut(usize, &Range<usize>),
) -> Result<PartitionOutcome, EngineError> {
    while let Some(range) = run.next_range() {
        if preempt.load(Ordering::Acquire) {
            return Ok(PartitionOutcome::Preempted(run.into()));
        }
        on_range(run.completed, &range);
        let out = run.run_next()?;
        if preempt.load(Ordering::Acquire) {
            return Ok(PartitionOutcome::Preempted(run.into()));
        }
        run.commit(out);
    }
    run.finish().map(PartitionOutcome::Completed)
}
