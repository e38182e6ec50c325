//! Random DAGs, cache states and brute-force oracles shared by the
//! integration suites.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use opportune::dag::{NodeId, NodeState, OperatorDag};
use opportune::dsl::{OpArg, OpKind};
use opportune::engine::{ColumnVector, Series, Value};
use opportune::time::VDuration;
use std::sync::atomic::{AtomicBool, Ordering};

use opportune::behavior::ThinkTimeModel;
use opportune::engine::{
    execute_partitioned_observed, make_partition_plan, PartitionOutcome, PartitionPlan, PartitionRun,
};
use rand::Rng;

/// A DAG whose nodes all carry an observed cost, with a random subset
/// executed.
pub struct RandomDag {
    pub dag: OperatorDag,
    pub cost_us: Vec<u64>,
    pub executed: Vec<bool>,
    /// Interaction probabilities as multiples of 1/1024.
    pub p_1024: Vec<u32>,
}

pub fn random_dag<R: Rng>(rng: &mut R, max_nodes: usize) -> RandomDag {
    let n = rng.random_range(1..=max_nodes);
    let mut dag = OperatorDag::new();
    let mut cost_us = Vec::new();
    for i in 0..n {
        let id = if i == 0 || rng.random_bool(0.2) {
            dag.add_node(OpKind::ReadCsv, vec![OpArg::Str(format!("t{i}.csv"))], vec![])
        } else if rng.random_bool(0.5) {
            let d = NodeId(rng.random_range(0..i as u32));
            dag.add_node(OpKind::SelectColumn, vec![OpArg::Str(format!("c{i}"))], vec![d])
        } else {
            let a = NodeId(rng.random_range(0..i as u32));
            let b = NodeId(rng.random_range(0..i as u32));
            dag.add_node(OpKind::Assign, vec![OpArg::Str(format!("c{i}"))], vec![a, b])
        };
        let c = rng.random_range(1..=2_000_000u64);
        dag.node_mut(id).unwrap().observed_cost = Some(VDuration::from_micros(c));
        cost_us.push(c);
    }
    let executed: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    for (i, e) in executed.iter().enumerate() {
        if *e {
            let node = dag.node_mut(NodeId(i as u32)).unwrap();
            node.state = NodeState::Executed;
            node.ever_executed = true;
        }
    }
    let p_1024 = (0..n).map(|_| rng.random_range(0..=1024)).collect();
    RandomDag {
        dag,
        cost_us,
        executed,
        p_1024,
    }
}

/// Edges as (dependency, dependent) pairs, read straight off the nodes.
pub fn edges(dag: &OperatorDag) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for n in dag.all_nodes() {
        for d in &n.deps {
            out.push((d.index(), n.id.index()));
        }
    }
    out
}

/// Sum of the costs of `node` and every node with a path to it made only of
/// unavailable nodes. Fixed-point iteration over the edge list.
pub fn oracle_delivery(dag: &OperatorDag, cost_us: &[u64], available: &[bool], node: usize) -> u64 {
    if available[node] {
        return 0;
    }
    let es = edges(dag);
    let mut set = vec![false; cost_us.len()];
    set[node] = true;
    loop {
        let mut changed = false;
        for (a, b) in &es {
            if set[*b] && !available[*a] && !set[*a] {
                set[*a] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    set.iter().zip(cost_us).filter(|(s, _)| **s).map(|(_, c)| *c).sum()
}

/// All nodes reachable from `node` along dependency edges, plus `node`.
pub fn descendants(dag: &OperatorDag, node: usize) -> Vec<usize> {
    let es = edges(dag);
    let n = dag.len();
    let mut set = vec![false; n];
    set[node] = true;
    loop {
        let mut changed = false;
        for (a, b) in &es {
            if set[*a] && !set[*b] {
                set[*b] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..n).filter(|i| set[*i]).collect()
}

/// Exhaustive argmax of utility in exact integer arithmetic (cost in µs
/// times p in 1/1024 units); ties go to the smallest id.
pub fn oracle_pick(r: &RandomDag) -> Option<usize> {
    let n = r.cost_us.len();
    let sources: Vec<usize> = (0..n)
        .filter(|i| !r.executed[*i])
        .filter(|i| {
            r.dag
                .node(NodeId(*i as u32))
                .unwrap()
                .deps
                .iter()
                .all(|d| r.executed[d.index()])
        })
        .collect();
    let mut best: Option<(u128, usize)> = None;
    for s in sources {
        let u: u128 = descendants(&r.dag, s)
            .into_iter()
            .map(|j| oracle_delivery(&r.dag, &r.cost_us, &r.executed, j) as u128 * r.p_1024[j] as u128)
            .sum();
        if best.is_none_or(|(bu, _)| u > bu) {
            best = Some((u, s));
        }
    }
    best.map(|(_, s)| s)
}

/// A float column with `rows` values, for cache entries of varied size.
pub fn column_value(rows: usize) -> Value {
    Value::Column(Series::new(
        "v",
        ColumnVector::from_floats((0..rows).map(|i| Some(i as f64))),
    ))
}

/// Simulated cache entry for the eviction oracle.
#[derive(Debug, Clone, Copy)]
pub struct ShadowEntry {
    pub size: u64,
    pub last_reuse: u64,
}

/// Eviction sequence an insertion should cause, re-ranking after each
/// eviction by exact comparison of `p * m / k` (`k = 0` ranks highest).
/// Returns the evicted ids and leaves `entries` in the post-GC state.
pub fn oracle_evictions(
    dag: &OperatorDag,
    cost_us: &[u64],
    entries: &mut BTreeMap<usize, ShadowEntry>,
    counter: u64,
    inserted: usize,
    budget: u64,
    threshold: f64,
) -> Vec<usize> {
    let n = cost_us.len();
    let mut out = Vec::new();
    loop {
        let used: u64 = entries.values().map(|e| e.size).sum();
        if used as f64 <= threshold * budget as f64 {
            break;
        }
        // (id, numerator m, denominator (T + 1 - t) * k); k = 0 means infinite
        let mut ranked: Vec<(usize, u128, u128)> = Vec::new();
        for (id, e) in entries.iter() {
            if *id == inserted {
                continue;
            }
            let mut avail: Vec<bool> = (0..n).map(|i| entries.contains_key(&i)).collect();
            avail[*id] = false;
            let k = oracle_delivery(dag, cost_us, &avail, *id) as u128;
            ranked.push((*id, e.size as u128, (counter + 1 - e.last_reuse) as u128 * k));
        }
        if ranked.is_empty() {
            break;
        }
        ranked.sort_by(|a, b| {
            let ord = match (a.2 == 0, b.2 == 0) {
                (true, true) => std::cmp::Ordering::Equal,
                (true, false) => std::cmp::Ordering::Greater,
                (false, true) => std::cmp::Ordering::Less,
                (false, false) => (a.1 * b.2).cmp(&(b.1 * a.2)),
            };
            ord.then(a.0.cmp(&b.0))
        });
        let victim = ranked[0].0;
        entries.remove(&victim);
        out.push(victim);
    }
    out
}

pub fn ids(v: &[usize]) -> BTreeSet<NodeId> {
    v.iter().map(|i| NodeId(*i as u32)).collect()
}

/// Parses and lowers a cell into a fresh DAG (no CSE).
pub fn lower(src: &str) -> OperatorDag {
    let statements = opportune::dsl::parse_cell(src).expect("cell parses");
    let mut dag = OperatorDag::new();
    opportune::dsl::lower_to_dag(&statements, &mut dag).expect("cell lowers");
    dag
}

/// Evaluates every node in id order, whole-input, with `read_csv` bound to
/// `table`. Errors are reduced to their root message.
pub fn eval_all(dag: &OperatorDag, table: &opportune::engine::DataTable) -> Vec<Result<Value, String>> {
    let mut out: Vec<Result<Value, String>> = Vec::new();
    for n in dag.all_nodes() {
        let r = if n.kind == OpKind::ReadCsv {
            Ok(Value::Table(table.clone()))
        } else {
            let mut inputs = Vec::new();
            let mut err = None;
            for d in &n.deps {
                match &out[d.index()] {
                    Ok(v) => inputs.push(v.clone()),
                    Err(e) => {
                        err = Some(e.clone());
                        break;
                    }
                }
            }
            match err {
                Some(e) => Err(e),
                None => opportune::engine::eval_operator(n.kind, &n.args, &inputs).map_err(|e| e.root().to_string()),
            }
        };
        out.push(r);
    }
    out
}

/// Equality that also treats identically printed values (NaN) as equal.
pub fn same_value(a: &Value, b: &Value) -> bool {
    a == b || format!("{a:?}") == format!("{b:?}")
}

pub const PARTITION_CELLS: &[&str] = &[
    "t[t['c{i}'] {op} {v}]",
    "t.fillna(0)",
    "t['c{i}'].fillna(1.5)",
    "t.mean()",
    "t['c{i}'].mean()",
    "t['c{i}'].sum()",
    "t['k'].value_counts()",
    "t['c{i}'].value_counts()",
    "t.sort_values('c{i}')",
    "t.groupby_mean('k')",
    "t.drop_columns_below_threshold({f})",
    "t.assign('z', t['c{i}'])",
    "t.head({n})",
    "t.tail({n})",
    "t.columns",
    "t['c{i}']",
];

pub fn fill_template<R: Rng>(rng: &mut R, template: &str) -> String {
    let ops = ["<", "<=", ">", ">=", "==", "!="];
    template
        .replace("{i}", &rng.random_range(0..5).to_string())
        .replace("{op}", ops[rng.random_range(0..ops.len())])
        .replace("{v}", &(rng.random_range(-400..400) as f64 / 4.0).to_string())
        .replace("{f}", ["0.2", "0.5", "0.9"][rng.random_range(0..3)])
        .replace("{n}", &rng.random_range(1..20).to_string())
}

pub fn random_plan<R: Rng>(rng: &mut R, rows: usize) -> PartitionPlan {
    if rows == 0 {
        return PartitionPlan::single(0);
    }
    if rng.random_bool(0.3) {
        let quartiles = ThinkTimeModel::with_default_prior();
        return make_partition_plan(rows, rng.random_range(1..10), rng.random_range(0.0..20.0), &quartiles);
    }
    let cuts = rng.random_range(0..12.min(rows));
    let mut points: BTreeSet<usize> = (0..cuts).map(|_| rng.random_range(1..rows.max(2))).collect();
    points.retain(|p| *p < rows);
    let mut ranges = Vec::new();
    let mut start = 0;
    for p in points.into_iter().chain([rows]) {
        ranges.push(start..p);
        start = p;
    }
    PartitionPlan { ranges, k: 1 }
}

pub fn random_uri<R: Rng>(rng: &mut R, max_rows: usize) -> String {
    format!(
        "synthetic:random?rows={}&seed={}&name=t.csv",
        rng.random_range(0..=max_rows),
        rng.random::<u32>()
    )
}

/// Runs a plan, preempting at random ranges until it completes. Checks that
/// each preemption discards at most the range in flight.
pub fn run_with_preemptions<R: Rng>(rng: &mut R, mut run: PartitionRun) -> Result<(Value, usize), String> {
    let mut preemptions = 0;
    loop {
        let left = run.plan().len() - run.completed();
        let at = if rng.random_bool(0.6) {
            Some(run.completed() + rng.random_range(0..left.max(1)))
        } else {
            None
        };
        let flag = AtomicBool::new(false);
        let mut started = None;
        let out = execute_partitioned_observed(run, &flag, |i, _| {
            if Some(i) == at {
                started = Some(i);
                flag.store(true, Ordering::Release);
            }
        })
        .map_err(|e| e.root().to_string())?;
        match out {
            PartitionOutcome::Completed(v) => return Ok((v, preemptions)),
            PartitionOutcome::Preempted(cp) => {
                preemptions += 1;
                if Some(cp.completed()) != started {
                    return Err(format!(
                        "preempted during range {started:?} but checkpoint holds {}",
                        cp.completed()
                    ));
                }
                run = cp.into_run();
            }
        }
    }
}
