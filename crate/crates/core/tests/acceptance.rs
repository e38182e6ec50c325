//! Acceptance gate: one check per criterion, each printing a PASS/FAIL line.
//! Runs without the libtest harness so the lines always show.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use opportune::behavior::{NodeProbabilities, ThinkTimeModel};
use opportune::cache::{CacheError, CacheStore};
use opportune::cost::{CostModel, NoStats};
use opportune::dag::{critical_path, NodeId, OperatorDag};
use opportune::dsl::OpKind;
use opportune::engine::{partition_rows, Catalog, PartitionRun, SyntheticSpec, Value};
use opportune::sched::UtilityContext;
use opportune::sim::{analyze, compare_modes, generate_random_trace, new_session, GenOptions, SimConfig, Trace};
use opportune::time::VDuration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn load_trace(name: &str) -> Trace {
    let path = fixture(name);
    let mut t = Trace::parse(&std::fs::read_to_string(&path).expect("fixture exists")).expect("fixture parses");
    t.resolve_data_paths(path.parent().unwrap());
    t
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let e = start.elapsed();
    if e > limit {
        Err(format!(
            "took {:.2} s, limit {:.0} s",
            e.as_secs_f64(),
            limit.as_secs_f64()
        ))
    } else {
        Ok(())
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn name_of(dag: &OperatorDag, id: NodeId) -> String {
    dag.node(id).map(|n| n.name.clone()).unwrap_or_default()
}

fn fill_means() -> Check {
    let start = Instant::now();
    let a = analyze(&load_trace("fill_means.jsonl")).map_err(|e| e.to_string())?;
    let merges: BTreeSet<(String, String)> = a
        .merges
        .iter()
        .map(|(f, t)| (name_of(&a.dag, *f), name_of(&a.dag, *t)))
        .collect();
    let want: BTreeSet<(String, String)> = [("mean_2", "mean_0"), ("mean_3", "mean_1")]
        .into_iter()
        .map(|(f, t)| (f.to_string(), t.to_string()))
        .collect();
    ensure(merges == want, || format!("merges {merges:?}"))?;
    let vc = a.dag.find_by_name("value_counts_0").ok_or("no value_counts_0")?;
    let path: Vec<String> = critical_path(&a.dag, vc)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|id| name_of(&a.dag, id))
        .collect();
    let select_b = a
        .dag
        .live_nodes()
        .find(|n| n.kind == OpKind::SelectColumn && n.args.first().and_then(|x| x.as_str()) == Some("B"))
        .map(|n| n.name.clone())
        .ok_or("no select of B")?;
    ensure(
        !path.contains(&select_b) && !path.contains(&"fillna_1".to_string()),
        || format!("critical path {path:?}"),
    )?;
    within(start, Duration::from_secs(1))?;
    Ok(format!("merges {want:?}; path {}", path.join(" -> ")))
}

fn case_study() -> Check {
    let start = Instant::now();
    let think = ThinkTimeModel::with_default_prior();
    let c = compare_modes(&load_trace("case_study.jsonl"), &SimConfig::default(), &think).map_err(|e| e.to_string())?;
    let first = c
        .opportunistic
        .interactions
        .iter()
        .find(|r| matches!(r.kind, OpKind::Head | OpKind::Columns))
        .ok_or("no head/columns interaction")?;
    ensure(first.latency_us <= VDuration::from_millis(500), || {
        format!("first {} latency {} ms", first.kind, first.latency_us.as_millis_f64())
    })?;
    let eager_first = c.eager.interactions.first().ok_or("eager showed nothing")?;
    ensure(
        eager_first.wait_since_last_output_us >= VDuration::from_secs_f64(18.0),
        || {
            format!(
                "eager first wait {} ms",
                eager_first.wait_since_last_output_us.as_millis_f64()
            )
        },
    )?;
    let red = c.sync_wait_reduction();
    ensure(red >= 0.8, || format!("sync wait reduction {:.1}%", red * 100.0))?;
    within(start, Duration::from_secs(5))?;
    Ok(format!(
        "first {} {} ms, eager first wait {:.2} s, sync wait {:.2} s vs {:.2} s ({:.1}% less)",
        first.kind,
        first.latency_us.as_millis_f64(),
        eager_first.wait_since_last_output_us.as_secs_f64(),
        c.opportunistic.totals.sync_wait_us.as_secs_f64(),
        c.eager.totals.sync_wait_us.as_secs_f64(),
        red * 100.0
    ))
}

const DAG_SEED: u64 = 0x5eed;

fn probabilities(r: &RandomDag) -> NodeProbabilities {
    let mut p = NodeProbabilities::new(1.0);
    for (i, k) in r.p_1024.iter().enumerate() {
        p.set(NodeId(i as u32), *k as f64 / 1024.0);
    }
    p
}

fn scheduler_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(DAG_SEED);
    let cost = CostModel::default();
    let mut with_choice = 0;
    for case in 0..1000 {
        let r = random_dag(&mut rng, 10);
        let prob = probabilities(&r);
        let avail = |id: NodeId| r.executed[id.index()];
        let ctx = UtilityContext {
            dag: &r.dag,
            cost: &cost,
            stats: &NoStats,
            available: &avail,
            prob: &prob,
            transitive: true,
        };
        let got = ctx.pick_next().map(|id| id.index());
        let want = oracle_pick(&r);
        ensure(got == want, || format!("case {case}: picked {got:?}, oracle {want:?}"))?;
        with_choice += usize::from(want.is_some());
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("1000 DAGs agree ({with_choice} with at least one source)"))
}

fn delivery_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(DAG_SEED);
    let cost = CostModel::default();
    let mut checked = 0;
    for case in 0..1000 {
        let r = random_dag(&mut rng, 10);
        let avail = |id: NodeId| r.executed[id.index()];
        for i in 0..r.cost_us.len() {
            let got = cost
                .delivery_cost(NodeId(i as u32), &r.dag, &avail, &NoStats)
                .map_err(|e| e.to_string())?;
            let want = oracle_delivery(&r.dag, &r.cost_us, &r.executed, i);
            ensure(got.as_micros() == want, || {
                format!("case {case} node {i}: {} µs, oracle {want} µs", got.as_micros())
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} nodes over 1000 DAGs agree"))
}

fn eviction_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xcac4e);
    let cost = CostModel::default();
    let (mut fired, mut evicted) = (0, 0);
    for case in 0..500 {
        let r = random_dag(&mut rng, 10);
        let n = r.cost_us.len();
        let budget = rng.random_range(2_000..40_000u64);
        let threshold = 0.8;
        let mut cache = CacheStore::new(budget, threshold);
        let mut shadow: BTreeMap<usize, ShadowEntry> = BTreeMap::new();
        let mut counter = 0u64;
        for step in 0..30 {
            let cached: Vec<usize> = shadow.keys().copied().collect();
            if !cached.is_empty() && rng.random_bool(0.3) {
                let id = cached[rng.random_range(0..cached.len())];
                cache.touch(NodeId(id as u32)).map_err(|e| e.to_string())?;
                counter += 1;
                shadow.get_mut(&id).unwrap().last_reuse = counter;
                continue;
            }
            let id = rng.random_range(0..n);
            let value = column_value(rng.random_range(1..1_500));
            let size = value.estimated_bytes();
            let res = cache.insert_with_gc(NodeId(id as u32), value, &r.dag, &cost, &NoStats, &BTreeSet::new());
            if size > budget {
                ensure(matches!(res, Err(CacheError::UncacheableResult { .. })), || {
                    format!("case {case} step {step}: oversized insert gave {res:?}")
                })?;
                continue;
            }
            let got: Vec<usize> = res
                .map_err(|e| format!("case {case} step {step}: {e}"))?
                .iter()
                .map(|e| e.node.index())
                .collect();
            shadow.insert(
                id,
                ShadowEntry {
                    size,
                    last_reuse: counter,
                },
            );
            let before: u64 = shadow.values().map(|e| e.size).sum();
            let others = shadow.len() > 1;
            let want = oracle_evictions(&r.dag, &r.cost_us, &mut shadow, counter, id, budget, threshold);
            ensure(got == want, || {
                format!("case {case} step {step}: evicted {got:?}, oracle {want:?}")
            })?;
            ensure(cache.used_bytes() <= budget, || {
                format!(
                    "case {case} step {step}: {} bytes over budget {budget}",
                    cache.used_bytes()
                )
            })?;
            let should_fire = before as f64 > threshold * budget as f64 && others;
            ensure(should_fire == !got.is_empty(), || {
                format!("case {case} step {step}: usage {before} of {budget}, evicted {got:?}")
            })?;
            ensure(cache.counter() == counter, || format!("case {case}: counter drifted"))?;
            fired += usize::from(!got.is_empty());
            evicted += got.len();
        }
    }
    Ok(format!("500 states agree; GC fired {fired} times, {evicted} evictions"))
}

fn preemption_bound() -> Check {
    let think = ThinkTimeModel::with_default_prior();
    let opts = GenOptions {
        rows: 50_000,
        think_scale: 0.05,
        ..GenOptions::default()
    };
    let config = SimConfig::default();
    let slack = VDuration::from_millis(10);
    let (mut preemptions, mut checked) = (0, 0);
    for seed in 0..200 {
        let trace = generate_random_trace(seed, &opts, &think);
        let c = compare_modes(&trace, &config, &think).map_err(|e| format!("seed {seed}: {e}"))?;
        let o = &c.opportunistic;
        let max_range = o.max_range_cost_us;
        for (i, r) in o.interactions.iter().enumerate() {
            let remaining: VDuration = r
                .pending_codes
                .iter()
                .map(|code| c.eager.cost_by_code.get(code).copied().unwrap_or(VDuration::ZERO))
                .sum();
            let bound = remaining + max_range + slack;
            ensure(r.latency_us <= bound, || {
                format!(
                    "seed {seed} interaction {i}: latency {} ms > bound {} ms",
                    r.latency_us.as_millis_f64(),
                    bound.as_millis_f64()
                )
            })?;
            checked += 1;
        }
        let wasted = o.totals.wasted_work_us;
        ensure(
            wasted.as_micros() <= o.totals.preemptions * max_range.as_micros(),
            || {
                format!(
                    "seed {seed}: wasted {} ms with {} preemptions of at most {} ms",
                    wasted.as_millis_f64(),
                    o.totals.preemptions,
                    max_range.as_millis_f64()
                )
            },
        )?;
        preemptions += o.totals.preemptions;
    }
    ensure(preemptions > 0, || "no trace was preempted".into())?;
    Ok(format!(
        "{checked} interactions within bound; {preemptions} preemptions"
    ))
}

fn transparency() -> Check {
    let start = Instant::now();
    let think = ThinkTimeModel::with_default_prior();
    let config = SimConfig::default();
    let mut interactions = 0;
    for seed in 1000..1100 {
        let trace = generate_random_trace(seed, &GenOptions::default(), &think);
        let c = compare_modes(&trace, &config, &think).map_err(|e| format!("seed {seed}: {e}"))?;
        for (i, (o, e)) in c
            .opportunistic
            .interactions
            .iter()
            .zip(&c.eager.interactions)
            .enumerate()
        {
            ensure(o.latency_us <= e.latency_us, || {
                format!(
                    "seed {seed} interaction {i}: {} ms opportunistic vs {} ms eager",
                    o.latency_us.as_millis_f64(),
                    e.latency_us.as_millis_f64()
                )
            })?;
        }
        interactions += c.opportunistic.interactions.len();
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!("100 sessions, {interactions} interactions, no mismatches"))
}

fn partitions_and_fast_path() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfa57);
    let (mut runs, mut preemptions) = (0, 0);
    for case in 0..300 {
        let uri = random_uri(&mut rng, 10_000);
        let table = SyntheticSpec::parse(&uri).map_err(|e| e.to_string())?.generate();
        let template = PARTITION_CELLS[rng.random_range(0..PARTITION_CELLS.len())];
        let cell = format!("t = read_csv('t.csv')\n{}", fill_template(&mut rng, template));
        let dag = lower(&cell);
        let values = eval_all(&dag, &table);
        let target = dag.all_nodes().last().unwrap();
        let inputs: Result<Vec<Value>, String> = target.deps.iter().map(|d| values[d.index()].clone()).collect();
        let Ok(inputs) = inputs else { continue };
        let rows = partition_rows(target.kind, &inputs);
        let plan = random_plan(&mut rng, rows);
        ensure(plan.covers(rows), || {
            format!("case {case}: plan does not tile {rows} rows")
        })?;
        let run = PartitionRun::new(target.id, target.kind, target.args.clone(), inputs, plan);
        let got = run_with_preemptions(&mut rng, run).map_err(|e| format!("case {case} `{cell}`: {e}"));
        match (&values[target.id.index()], got) {
            (Ok(want), Ok((v, p))) => {
                ensure(same_value(want, &v), || {
                    format!("case {case} `{cell}`: partitioned result differs")
                })?;
                preemptions += p;
            }
            (Err(w), Err(g)) => ensure(g.ends_with(w.as_str()), || format!("case {case}: errors {w} vs {g}"))?,
            (w, g) => return Err(format!("case {case} `{cell}`: whole {w:?} vs partitioned {g:?}")),
        }
        runs += 1;
    }

    let mut fast = BTreeMap::<&str, usize>::new();
    for case in 0..150 {
        let uri = random_uri(&mut rng, 10_000);
        let mut expr = "t".to_string();
        let low_selectivity = rng.random_bool(0.5);
        if low_selectivity {
            expr = format!("{expr}[{expr}['c4'] > 95]");
        }
        for _ in 0..rng.random_range(0..3) {
            expr = match rng.random_range(0..3) {
                0 => fill_template(&mut rng, &format!("{expr}[{expr}['c{{i}}'] {{op}} {{v}}]")),
                1 => format!("{expr}.fillna(0)"),
                _ => fill_template(&mut rng, &format!("{expr}.assign('z', {expr}['c{{i}}'])")),
            };
        }
        if rng.random_bool(0.3) {
            expr = fill_template(&mut rng, &format!("{expr}['c{{i}}']"));
        }
        let (end, n) = if rng.random_bool(0.5) {
            ("head", "head")
        } else {
            ("tail", "tail")
        };
        let k = rng.random_range(1..12);
        let cell = format!("{expr}.{end}({k})");

        let mut catalog = Catalog::new();
        catalog.register_uri(&uri).map_err(|e| e.to_string())?;
        let table = catalog.resolve("t.csv").map_err(|e| e.to_string())?;
        let mut s = new_session(&SimConfig::default(), catalog, ThinkTimeModel::with_default_prior());
        s.submit_cell("t = read_csv('t.csv')").map_err(|e| e.to_string())?;
        let ids = s.submit_cell(&cell).map_err(|e| e.to_string())?;
        let o = s.run_interaction(ids[0]).map_err(|e| e.to_string())?;

        let dag = lower(&format!("t = read_csv('t.csv')\n{cell}"));
        let want = eval_all(&dag, &table).pop().unwrap();
        match (&want, &o.result) {
            (Ok(w), Ok(g)) => ensure(same_value(w, g), || {
                format!("case {case} `{cell}`: fast path result differs")
            })?,
            (Err(_), Err(_)) => {}
            (w, g) => return Err(format!("case {case} `{cell}`: whole {w:?} vs session {g:?}")),
        }
        if o.fast_path {
            *fast.entry(n).or_default() += 1;
            if low_selectivity {
                *fast.entry("low-selectivity").or_default() += 1;
            }
        }
    }
    for kind in ["head", "tail", "low-selectivity"] {
        ensure(fast.get(kind).copied().unwrap_or(0) > 0, || {
            format!("fast path never used for {kind}")
        })?;
    }
    Ok(format!(
        "{runs} partitioned runs exact ({preemptions} preemptions); fast path exact ({fast:?})"
    ))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_opportune"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let path = |p: &str| d.join(p).display().to_string();
    for name in ["a.jsonl", "b.jsonl"] {
        cli(&[
            "gen-trace",
            "--seed",
            "77",
            "--rows",
            "5000",
            "--think-scale",
            "0.2",
            "--out",
            &path(name),
        ])?;
    }
    let read = |p: &str| std::fs::read(d.join(p)).map_err(|e| e.to_string());
    ensure(read("a.jsonl")? == read("b.jsonl")?, || {
        "gen-trace output differs".into()
    })?;
    for out in ["r1", "r2"] {
        cli(&["run", "--trace", &path("a.jsonl"), "--compare", "--out", &path(out)])?;
    }
    for f in ["report.json", "report.csv"] {
        ensure(read(&format!("r1/{f}"))? == read(&format!("r2/{f}"))?, || {
            format!("{f} differs between runs")
        })?;
    }

    let think = ThinkTimeModel::with_default_prior();
    let trace = load_trace("case_study.jsonl");
    let a = compare_modes(&trace, &SimConfig::default(), &think).map_err(|e| e.to_string())?;
    let b = compare_modes(&trace, &SimConfig::default(), &think).map_err(|e| e.to_string())?;
    ensure(
        a.opportunistic.to_json() == b.opportunistic.to_json() && a.eager.to_json() == b.eager.to_json(),
        || "case study reports differ".into(),
    )?;
    Ok("trace, report.json and report.csv byte-identical across runs".into())
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("shared-mean merge", fill_means),
        ("case study", case_study),
        ("scheduler oracle", scheduler_oracle),
        ("delivery-cost oracle", delivery_oracle),
        ("eviction oracle", eviction_oracle),
        ("preemption bound", preemption_bound),
        ("transparency", transparency),
        ("partition/resume and fast path", partitions_and_fast_path),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let r = check();
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("criterion {} {name}: PASS ({secs:.2} s) {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({secs:.2} s) {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
