//! A session under opportunistic evaluation, in virtual time.
//!
//! Cells are lowered into the DAG and deduplicated. Interactions run their
//! critical path synchronously (through the fast path when it applies);
//! think time goes to background work, one preemptible range at a time.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::policy::{maybe_speculate, Speculation, UtilityContext};
use crate::behavior::{InteractionProbability, ThinkTimeModel};
use crate::cache::{CacheError, CacheStore, Eviction};
use crate::cost::{unavailable_closure, CostModel};
use crate::dag::{
    critical_path, eliminate_common_subexpressions, source_operators, DagError, NodeId, NodeState, OperatorDag,
};
use crate::dsl::{lower_to_dag, parse_cell, DslError, OpArg, OpKind, DEFAULT_K};
use crate::engine::{
    eval_operator, make_partition_plan, partition_rows, plan_fast_path, run_fast_path, Catalog, EngineError,
    PartitionRun, Value,
};
use crate::time::{VDuration, VirtualClock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedConfig {
    /// Rows in the top and bottom ranges of a partition plan.
    pub partition_k: usize,
    /// Utility counts all successors instead of only children.
    pub transitive_successors: bool,
    pub speculate: bool,
    pub fast_path: bool,
    /// Fixed cost of showing an interaction's output.
    pub interaction_overhead: VDuration,
}

impl Default for SchedConfig {
    fn default() -> Self {
        SchedConfig {
            partition_k: DEFAULT_K,
            transitive_successors: true,
            speculate: true,
            fast_path: true,
            interaction_overhead: VDuration::from_millis(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Dag(#[from] DagError),
}

impl SessionError {
    /// Errors after which the session cannot go on.
    pub fn is_fatal(&self) -> bool {
        !matches!(self, SessionError::Dsl(_))
    }
}

/// Running totals. Per-event figures are differences of snapshots.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Metrics {
    pub sync_wait_us: VDuration,
    pub background_work_us: VDuration,
    pub wasted_work_us: VDuration,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub evictions: u64,
    pub preemptions: u64,
    /// Interactions that returned an operator error.
    pub errors: u64,
    pub fast_paths: u64,
}

impl Metrics {
    pub fn delta(&self, before: &Metrics) -> Metrics {
        Metrics {
            sync_wait_us: self.sync_wait_us - before.sync_wait_us,
            background_work_us: self.background_work_us - before.background_work_us,
            wasted_work_us: self.wasted_work_us - before.wasted_work_us,
            cache_hits: self.cache_hits - before.cache_hits,
            cache_misses: self.cache_misses - before.cache_misses,
            evictions: self.evictions - before.evictions,
            preemptions: self.preemptions - before.preemptions,
            errors: self.errors - before.errors,
            fast_paths: self.fast_paths - before.fast_paths,
        }
    }

    pub fn add(&mut self, other: &Metrics) {
        self.sync_wait_us += other.sync_wait_us;
        self.background_work_us += other.background_work_us;
        self.wasted_work_us += other.wasted_work_us;
        self.cache_hits += other.cache_hits;
        self.cache_misses += other.cache_misses;
        self.evictions += other.evictions;
        self.preemptions += other.preemptions;
        self.errors += other.errors;
        self.fast_paths += other.fast_paths;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GcEvent {
    pub at_us: VDuration,
    pub inserted: NodeId,
    pub evicted: Vec<Eviction>,
}

/// Result of one interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionOutcome {
    pub node: NodeId,
    pub kind: OpKind,
    pub code: String,
    pub result: Result<Value, String>,
    /// Arrival to output.
    pub latency: VDuration,
    pub fast_path: bool,
    /// Canonical codes of the critical-path nodes that were not available
    /// when the interaction arrived.
    pub pending_codes: Vec<String>,
}

/// Background run in progress or parked.
#[derive(Debug, Clone)]
struct Background {
    run: PartitionRun,
    /// Time already spent on the in-flight range.
    in_flight: VDuration,
}

pub struct Session {
    pub dag: OperatorDag,
    pub cache: CacheStore,
    pub catalog: Catalog,
    pub cost: CostModel,
    pub think: ThinkTimeModel,
    pub prob: Box<dyn InteractionProbability>,
    pub config: SchedConfig,
    clock: VirtualClock,
    metrics: Metrics,
    gc_events: Vec<GcEvent>,
    background: Option<Background>,
    speculative: Vec<NodeId>,
    max_range_cost: VDuration,
}

impl Session {
    pub fn new(
        config: SchedConfig,
        cost: CostModel,
        cache: CacheStore,
        catalog: Catalog,
        think: ThinkTimeModel,
        prob: Box<dyn InteractionProbability>,
    ) -> Self {
        Session {
            dag: OperatorDag::new(),
            cache,
            catalog,
            cost,
            think,
            prob,
            config,
            clock: VirtualClock::new(),
            metrics: Metrics::default(),
            gc_events: Vec::new(),
            background: None,
            speculative: Vec::new(),
            max_range_cost: VDuration::ZERO,
        }
    }

    pub fn now(&self) -> VDuration {
        self.clock.now()
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn gc_events(&self) -> &[GcEvent] {
        &self.gc_events
    }

    /// Largest single range executed in the background so far.
    pub fn max_range_cost(&self) -> VDuration {
        self.max_range_cost
    }

    /// Node of the background run currently held, if any.
    pub fn background_node(&self) -> Option<NodeId> {
        self.background.as_ref().map(|b| b.run.node())
    }

    pub fn available(&self, id: NodeId) -> bool {
        self.dag.is_executed(id)
    }

    /// Lowers a cell and returns its interactions in order (resolved through
    /// CSE). A DSL error leaves the session unchanged.
    pub fn submit_cell(&mut self, source: &str) -> Result<Vec<NodeId>, SessionError> {
        let statements = parse_cell(source)?;
        let added = lower_to_dag(&statements, &mut self.dag)?;
        for id in &added {
            let n = self.dag.node(*id)?;
            if n.kind == OpKind::ReadCsv {
                if let Some(OpArg::Str(path)) = n.args.first() {
                    // loading is free; only the operator is charged
                    let path = path.clone();
                    if let Err(e) = self.catalog.resolve(&path) {
                        log::debug!("cannot preload {path}: {e}");
                    }
                }
            }
        }
        eliminate_common_subexpressions(&mut self.dag);
        let mut interactions = Vec::new();
        for id in &added {
            let n = self.dag.node(*id)?;
            if n.kind.is_interaction() {
                interactions.push(self.dag.resolve(*id));
            }
        }
        if self.config.speculate {
            self.queue_speculation(&added);
        }
        Ok(interactions)
    }

    fn queue_speculation(&mut self, added: &[NodeId]) {
        let filters: BTreeSet<NodeId> = added
            .iter()
            .map(|id| self.dag.resolve(*id))
            .filter(|id| self.dag.node(*id).is_ok_and(|n| n.kind == OpKind::Filter))
            .collect();
        for f in filters {
            let decision = {
                let dag = &self.dag;
                let avail = |id| dag.is_executed(id);
                let ctx = self.utility_context(&avail);
                maybe_speculate(f, &ctx, &self.think)
            };
            if let Ok(Speculation::Materialize) = decision {
                let input = self.dag.node(f).expect("filter exists").deps[0];
                if !self.speculative.contains(&input) {
                    log::debug!("speculating on input {input} of filter {f}");
                    self.speculative.push(input);
                }
            }
        }
    }

    fn utility_context<'a>(&'a self, avail: &'a dyn Fn(NodeId) -> bool) -> UtilityContext<'a> {
        UtilityContext {
            dag: &self.dag,
            cost: &self.cost,
            stats: &self.catalog,
            available: avail,
            prob: self.prob.as_ref(),
            transitive: self.config.transitive_successors,
        }
    }

    /// Sources background work may start: not failed and not evicted.
    pub fn eligible_sources(&self) -> BTreeSet<NodeId> {
        source_operators(&self.dag)
            .into_iter()
            .filter(|id| {
                let n = self.dag.node(*id).expect("source exists");
                n.failed.is_none() && !n.ever_executed
            })
            .collect()
    }

    /// Next node to start in the background: speculative targets first,
    /// then the highest-utility eligible source.
    pub fn choose_background(&mut self) -> Option<NodeId> {
        let eligible = self.eligible_sources();
        if eligible.is_empty() {
            return None;
        }
        let dag = &self.dag;
        let avail = |id| dag.is_executed(id);
        while let Some(&target) = self.speculative.first() {
            let closure = unavailable_closure(&self.dag, target, &avail);
            let candidates: Vec<NodeId> = closure.intersection(&eligible).copied().collect();
            if candidates.is_empty() {
                self.speculative.remove(0);
                continue;
            }
            let ctx = self.utility_context(&avail);
            return ctx.pick_among(candidates);
        }
        self.utility_context(&avail).pick_among(eligible)
    }

    /// Hands out the parked run, or starts a new one. The node is `Running`
    /// afterwards.
    pub fn take_background_job(&mut self) -> Option<PartitionRun> {
        if let Some(bg) = self.background.take() {
            let node = bg.run.node();
            self.dag
                .set_state(node, NodeState::Running)
                .expect("parked run resumes");
            return Some(bg.run);
        }
        let node = self.choose_background()?;
        let run = self.start_run(node)?;
        self.dag.set_state(node, NodeState::Running).expect("source starts");
        Some(run)
    }

    fn start_run(&mut self, node: NodeId) -> Option<PartitionRun> {
        let n = self.dag.node(node).ok()?.clone();
        let inputs = match self.gather_inputs(node) {
            Ok(v) => v,
            Err(msg) => {
                self.fail(node, msg);
                return None;
            }
        };
        let rows = partition_rows(n.kind, &inputs);
        let est = self
            .cost
            .estimate_cost(node, &self.dag, &self.catalog)
            .unwrap_or(VDuration::ZERO);
        let plan = make_partition_plan(rows, self.config.partition_k, est.as_secs_f64(), &self.think);
        Some(PartitionRun::new(node, n.kind, n.args, inputs, plan))
    }

    /// Input values of a node whose dependencies are available, counting
    /// each read as a reuse. `read_csv` gets its raw table.
    fn gather_inputs(&mut self, node: NodeId) -> Result<Vec<Value>, String> {
        let n = self.dag.node(node).map_err(|e| e.to_string())?;
        if n.kind == OpKind::ReadCsv {
            let path = n.args.first().and_then(OpArg::as_str).unwrap_or_default().to_string();
            return self
                .catalog
                .resolve(&path)
                .map(|t| vec![Value::Table(t)])
                .map_err(|e| e.root().to_string());
        }
        let deps = n.deps.clone();
        let mut inputs = Vec::with_capacity(deps.len());
        for d in deps {
            if let Some(msg) = &self.dag.node(d).map_err(|e| e.to_string())?.failed {
                return Err(msg.clone());
            }
            inputs.push(self.cache.reuse(d).map_err(|e| e.to_string())?);
        }
        Ok(inputs)
    }

    /// Puts a preempted run back; it resumes before anything new starts.
    pub fn park(&mut self, run: PartitionRun) {
        let node = run.node();
        self.dag
            .set_state(node, NodeState::Preempted)
            .expect("running node parks");
        self.background = Some(Background {
            run,
            in_flight: VDuration::ZERO,
        });
    }

    fn fail(&mut self, node: NodeId, msg: String) {
        if let Ok(n) = self.dag.node_mut(node) {
            if matches!(n.state, NodeState::Running | NodeState::Preempted) {
                n.state = NodeState::Pending;
            }
            n.failed = Some(msg);
        }
    }

    /// Records a finished run from background work.
    pub fn complete_background(
        &mut self,
        node: NodeId,
        rows: usize,
        result: Result<Value, EngineError>,
    ) -> Result<(), SessionError> {
        let kind = self.dag.node(node)?.kind;
        match result {
            Ok(v) => {
                let full = self.cost.cost_for_rows(kind, rows);
                self.complete_node(node, v, full, &BTreeSet::new())
            }
            Err(e) => {
                self.fail(node, e.root().to_string());
                Ok(())
            }
        }
    }

    /// Caches a result and marks the node executed. Evicted entries go back
    /// to `Pending`.
    fn complete_node(
        &mut self,
        node: NodeId,
        value: Value,
        cost: VDuration,
        pinned: &BTreeSet<NodeId>,
    ) -> Result<(), SessionError> {
        if self.background.as_ref().is_some_and(|b| b.run.node() == node) {
            self.background = None;
        }
        {
            let n = self.dag.node_mut(node)?;
            n.observed_cost = Some(cost);
            n.observed_rows = Some(value.row_count());
        }
        let evicted = self
            .cache
            .insert_with_gc(node, value, &self.dag, &self.cost, &self.catalog, pinned)?;
        let state = self.dag.node(node)?.state;
        if matches!(state, NodeState::Pending | NodeState::Preempted) {
            self.dag.set_state(node, NodeState::Running)?;
        }
        self.dag.set_state(node, NodeState::Executed)?;
        if !evicted.is_empty() {
            for e in &evicted {
                self.dag.set_state(e.node, NodeState::Pending)?;
                log::debug!("evicted {} (score {})", e.node, e.score);
            }
            self.metrics.evictions += evicted.len() as u64;
            self.gc_events.push(GcEvent {
                at_us: self.clock.now(),
                inserted: node,
                evicted,
            });
        }
        Ok(())
    }

    fn charge_sync(&mut self, d: VDuration) {
        self.clock.advance(d);
        self.metrics.sync_wait_us += d;
    }

    /// Spends `duration` of think time on background work. A range that
    /// does not fit continues in the next window unless an interaction
    /// preempts it first.
    pub fn run_think_time(&mut self, duration: VDuration) -> Result<(), SessionError> {
        let end = self.clock.now() + duration;
        while self.clock.now() < end {
            if self.background.is_none() {
                let Some(run) = self.take_background_job() else { break };
                self.background = Some(Background {
                    run,
                    in_flight: VDuration::ZERO,
                });
            }
            let bg = self.background.as_mut().expect("background run present");
            let node = bg.run.node();
            if self.dag.node(node)?.state == NodeState::Preempted {
                self.dag.set_state(node, NodeState::Running)?;
            }
            let kind = bg.run.kind();
            let range_cost = match bg.run.next_range() {
                Some(r) => self.cost.range_cost(kind, &r),
                None => self.cost.cost_for_rows(kind, 0),
            };
            self.max_range_cost = self.max_range_cost.max(range_cost);
            let left = range_cost.saturating_sub(bg.in_flight);
            let window = end - self.clock.now();
            if left > window {
                bg.in_flight += window;
                self.metrics.background_work_us += window;
                self.clock.advance(window);
                break;
            }
            self.clock.advance(left);
            self.metrics.background_work_us += left;
            bg.in_flight = VDuration::ZERO;
            if !bg.run.is_complete() {
                if let Err(e) = bg.run.step() {
                    self.background = None;
                    self.fail(node, e.root().to_string());
                    continue;
                }
            }
            if bg.run.is_complete() {
                let bg = self.background.take().expect("background run present");
                let rows = bg.run.rows();
                self.complete_background(node, rows, bg.run.finish())?;
            }
        }
        self.clock.advance_to(end);
        Ok(())
    }

    /// Stops the in-flight range. Its elapsed time is wasted.
    fn preempt_background(&mut self) {
        let Some(bg) = self.background.as_mut() else { return };
        let node = bg.run.node();
        if self.dag.node(node).is_ok_and(|n| n.state == NodeState::Running) {
            self.metrics.preemptions += 1;
            self.metrics.wasted_work_us += bg.in_flight;
            bg.in_flight = VDuration::ZERO;
            self.dag
                .set_state(node, NodeState::Preempted)
                .expect("running node preempts");
        }
    }

    /// Runs one interaction to completion.
    pub fn run_interaction(&mut self, node: NodeId) -> Result<InteractionOutcome, SessionError> {
        let node = self.dag.resolve(node);
        self.preempt_background();
        let arrival = self.clock.now();
        let path = critical_path(&self.dag, node)?;
        let pinned: BTreeSet<NodeId> = path.iter().copied().collect();
        let mut pending_codes = Vec::new();
        for id in &path {
            if self.available(*id) {
                self.metrics.cache_hits += 1;
            } else {
                self.metrics.cache_misses += 1;
                pending_codes.push(self.dag.node(*id)?.canonical_code.clone());
            }
        }
        let mut fast = false;
        let result = if self.available(node) {
            Ok(self.cache.reuse(node)?)
        } else {
            match self.try_fast_path(node, &pinned)? {
                Some(v) => {
                    fast = true;
                    Ok(v)
                }
                None => self.materialize(node, &pinned)?,
            }
        };
        if result.is_err() {
            self.metrics.errors += 1;
        }
        let overhead = self.config.interaction_overhead;
        self.charge_sync(overhead);
        let n = self.dag.node(node)?;
        Ok(InteractionOutcome {
            node,
            kind: n.kind,
            code: n.canonical_code.clone(),
            result,
            latency: self.clock.now() - arrival,
            fast_path: fast,
            pending_codes,
        })
    }

    /// Evaluates every unavailable node `target` depends on, in dependency
    /// order, then reads `target`. Operator errors come back as `Ok(Err)`.
    fn materialize(
        &mut self,
        target: NodeId,
        pinned: &BTreeSet<NodeId>,
    ) -> Result<Result<Value, String>, SessionError> {
        let dag = &self.dag;
        let todo = unavailable_closure(dag, target, &|id| dag.is_executed(id));
        if let Some(msg) = todo.iter().find_map(|id| self.dag.node(*id).ok()?.failed.clone()) {
            return Ok(Err(msg));
        }
        for id in todo {
            if let Err(msg) = self.execute_sync(id, pinned)? {
                return Ok(Err(msg));
            }
        }
        Ok(Ok(self.cache.reuse(target)?))
    }

    fn execute_sync(&mut self, id: NodeId, pinned: &BTreeSet<NodeId>) -> Result<Result<(), String>, SessionError> {
        let kind = self.dag.node(id)?.kind;
        if self.background.as_ref().is_some_and(|b| b.run.node() == id) {
            let mut bg = self.background.take().expect("checked above");
            self.dag.set_state(id, NodeState::Running)?;
            while let Some(r) = bg.run.next_range() {
                let c = self.cost.range_cost(kind, &r);
                self.charge_sync(c);
                if let Err(e) = bg.run.step() {
                    let msg = e.root().to_string();
                    self.fail(id, msg.clone());
                    return Ok(Err(msg));
                }
            }
            if bg.run.plan().is_empty() {
                self.charge_sync(self.cost.cost_for_rows(kind, 0));
            }
            let rows = bg.run.rows();
            return Ok(match bg.run.finish() {
                Ok(v) => {
                    let full = self.cost.cost_for_rows(kind, rows);
                    self.complete_node(id, v, full, pinned)?;
                    Ok(())
                }
                Err(e) => {
                    let msg = e.root().to_string();
                    self.fail(id, msg.clone());
                    Err(msg)
                }
            });
        }
        let inputs = match self.gather_inputs(id) {
            Ok(v) => v,
            Err(msg) => {
                self.charge_sync(self.cost.cost_for_rows(kind, 0));
                self.fail(id, msg.clone());
                return Ok(Err(msg));
            }
        };
        let c = self.cost.cost_for_rows(kind, partition_rows(kind, &inputs));
        self.charge_sync(c);
        let args = self.dag.node(id)?.args.clone();
        Ok(match eval_operator(kind, &args, &inputs) {
            Ok(v) => {
                self.complete_node(id, v, c, pinned)?;
                Ok(())
            }
            Err(e) => {
                let msg = e.root().to_string();
                self.fail(id, msg.clone());
                Err(msg)
            }
        })
    }

    /// Answers head / tail / columns from a prefix (or suffix) of the
    /// ranges. `None` means the normal path must run.
    fn try_fast_path(&mut self, node: NodeId, pinned: &BTreeSet<NodeId>) -> Result<Option<Value>, SessionError> {
        if !self.config.fast_path {
            return Ok(None);
        }
        let plan = {
            let dag = &self.dag;
            match plan_fast_path(dag, node, &|id| dag.is_executed(id)) {
                Some(p) => p,
                None => return Ok(None),
            }
        };
        let closure_failed = {
            let dag = &self.dag;
            unavailable_closure(dag, node, &|id| dag.is_executed(id))
                .into_iter()
                .any(|id| dag.node(id).is_ok_and(|n| n.failed.is_some()))
        };
        if closure_failed {
            return Ok(None);
        }
        let mut values = BTreeMap::new();
        for s in &plan.side_inputs {
            match self.materialize(*s, pinned)? {
                Ok(v) => {
                    values.insert(*s, v);
                }
                Err(_) => return Ok(None),
            }
        }
        for l in &plan.leaves {
            values.insert(*l, self.cache.reuse(*l)?);
        }
        let mut raw = BTreeMap::new();
        for s in &plan.sources {
            let path = self
                .dag
                .node(*s)?
                .args
                .first()
                .and_then(OpArg::as_str)
                .unwrap_or_default()
                .to_string();
            match self.catalog.resolve(&path) {
                Ok(t) => {
                    raw.insert(*s, t);
                }
                Err(_) => return Ok(None),
            }
        }
        let k = self.config.partition_k;
        let think = &self.think;
        let cost = &self.cost;
        let dag = &self.dag;
        let base_est = plan
            .sources
            .iter()
            .chain(&plan.spine)
            .filter_map(|id| cost.estimate_cost(*id, dag, &self.catalog).ok())
            .sum::<VDuration>()
            .as_secs_f64();
        let Some(result) = run_fast_path(dag, &plan, &values, &raw, |rows| {
            make_partition_plan(rows, k, base_est, think)
        }) else {
            return Ok(None);
        };
        let mut charged = VDuration::ZERO;
        for (id, rows) in &result.rows_touched {
            charged += self.cost.cost_for_rows(self.dag.node(*id)?.kind, *rows);
        }
        self.charge_sync(charged);
        self.metrics.fast_paths += 1;
        if let Some(full) = result.full_outputs {
            for (id, v) in full {
                let rows = result.rows_touched.get(&id).copied().unwrap_or(0);
                let c = self.cost.cost_for_rows(self.dag.node(id)?.kind, rows);
                self.complete_node(id, v, c, pinned)?;
            }
        }
        let rows = result.rows_touched.get(&node).copied().unwrap_or(0);
        let c = self.cost.cost_for_rows(self.dag.node(node)?.kind, rows);
        self.complete_node(node, result.value.clone(), c, pinned)?;
        Ok(Some(result.value))
    }

    /// Feeds an observed think time to the behaviour model.
    pub fn observe_think(&mut self, gap: VDuration) {
        if let Err(e) = self.think.observe(gap.as_secs_f64()) {
            log::warn!("ignoring think time: {e}");
        }
    }

    /// Drops a parked run; the node goes back to `Pending`.
    pub fn abandon_background(&mut self) {
        if let Some(bg) = self.background.take() {
            let node = bg.run.node();
            if let Ok(n) = self.dag.node_mut(node) {
                n.state = NodeState::Pending;
            }
        }
    }

    /// One-line state summary of a node.
    pub fn describe(&self, id: NodeId) -> Option<String> {
        let n = self.dag.node(id).ok()?;
        Some(format!(
            "{} {} {:?}{}",
            n.id,
            n.name,
            n.state,
            n.failed.as_ref().map(|m| format!(" failed: {m}")).unwrap_or_default()
        ))
    }
}
