//! Baseline: every statement runs in full when its cell is submitted.

use std::collections::BTreeMap;

use crate::cost::CostModel;
use crate::dag::{NodeId, OperatorDag};
use crate::dsl::{lower_to_dag, parse_cell, DslError, OpArg, OpKind};
use crate::engine::{eval_operator, partition_rows, Catalog, Value};
use crate::sched::{InteractionOutcome, Metrics};
use crate::time::{VDuration, VirtualClock};

pub struct EagerSession {
    pub dag: OperatorDag,
    pub catalog: Catalog,
    pub cost: CostModel,
    interaction_overhead: VDuration,
    clock: VirtualClock,
    metrics: Metrics,
    results: BTreeMap<NodeId, Result<Value, String>>,
    cost_by_code: BTreeMap<String, VDuration>,
}

impl EagerSession {
    pub fn new(catalog: Catalog, cost: CostModel, interaction_overhead: VDuration) -> Self {
        EagerSession {
            dag: OperatorDag::new(),
            catalog,
            cost,
            interaction_overhead,
            clock: VirtualClock::new(),
            metrics: Metrics::default(),
            results: BTreeMap::new(),
            cost_by_code: BTreeMap::new(),
        }
    }

    pub fn now(&self) -> VDuration {
        self.clock.now()
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    /// Cost of the last full evaluation of each canonical code.
    pub fn cost_by_code(&self) -> &BTreeMap<String, VDuration> {
        &self.cost_by_code
    }

    pub fn idle(&mut self, d: VDuration) {
        self.clock.advance(d);
    }

    /// Runs every statement of the cell; returns its interactions in order.
    pub fn run_cell(&mut self, source: &str) -> Result<Vec<InteractionOutcome>, DslError> {
        let statements = parse_cell(source)?;
        let added = lower_to_dag(&statements, &mut self.dag)?;
        let mut arrival = self.clock.now();
        let mut out = Vec::new();
        for id in added {
            let n = self.dag.node(id).expect("lowered node").clone();
            let result = self.execute(id);
            if n.kind.is_interaction() {
                if result.is_err() {
                    self.metrics.errors += 1;
                }
                self.charge(self.interaction_overhead);
                out.push(InteractionOutcome {
                    node: id,
                    kind: n.kind,
                    code: n.canonical_code.clone(),
                    result,
                    latency: self.clock.now() - arrival,
                    fast_path: false,
                    pending_codes: Vec::new(),
                });
                arrival = self.clock.now();
            }
        }
        Ok(out)
    }

    fn charge(&mut self, d: VDuration) {
        self.clock.advance(d);
        self.metrics.sync_wait_us += d;
    }

    fn execute(&mut self, id: NodeId) -> Result<Value, String> {
        let n = self.dag.node(id).expect("lowered node").clone();
        let mut inputs = Vec::with_capacity(n.deps.len());
        if n.kind == OpKind::ReadCsv {
            let path = n.args.first().and_then(OpArg::as_str).unwrap_or_default();
            match self.catalog.resolve(path) {
                Ok(t) => inputs.push(Value::Table(t)),
                Err(e) => {
                    let c = self.cost.cost_for_rows(n.kind, 0);
                    self.charge(c);
                    let r = Err(e.root().to_string());
                    self.results.insert(id, r.clone());
                    return r;
                }
            }
        }
        for d in &n.deps {
            match &self.results[d] {
                Ok(v) => inputs.push(v.clone()),
                Err(m) => {
                    let r = Err(m.clone());
                    self.results.insert(id, r.clone());
                    return r;
                }
            }
        }
        let c = self.cost.cost_for_rows(n.kind, partition_rows(n.kind, &inputs));
        self.charge(c);
        self.metrics.cache_misses += 1;
        self.cost_by_code.insert(n.canonical_code.clone(), c);
        let r = eval_operator(n.kind, &n.args, &inputs).map_err(|e| e.root().to_string());
        self.results.insert(id, r.clone());
        r
    }
}
