//! Replays traces in virtual time under opportunistic evaluation or the
//! eager baseline, and compares the two.

mod analyze;
mod eager;
mod generate;
mod trace;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analyze::{analyze, Analysis};
pub use eager::EagerSession;
pub use generate::{generate_random_trace, GenOptions};
pub use trace::{Trace, TraceEvent, TraceHeader};

use crate::behavior::{ThinkTimeModel, Uniform};
use crate::cache::{CacheStore, DEFAULT_GC_THRESHOLD};
use crate::cost::CostModel;
use crate::dag::NodeId;
use crate::dsl::OpKind;
use crate::engine::{Catalog, EngineError, Value};
use crate::sched::{GcEvent, InteractionOutcome, Metrics, SchedConfig, Session, SessionError};
use crate::time::VDuration;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error("loading data: {0}")]
    Data(#[from] EngineError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("interaction {index} ({code}) differs: opportunistic {opportunistic}, eager {eager}")]
    ResultMismatch {
        index: usize,
        code: String,
        opportunistic: String,
        eager: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Opportunistic,
    Eager,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Opportunistic => "opportunistic",
            Mode::Eager => "eager",
        })
    }
}

pub const DEFAULT_BUDGET: u64 = 1 << 30;

/// Everything a run needs besides the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub budget_bytes: u64,
    pub gc_threshold: f64,
    /// Evict the highest score first instead of the lowest.
    pub evict_highest: bool,
    pub scheduler: SchedConfig,
    pub cost: CostModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            budget_bytes: DEFAULT_BUDGET,
            gc_threshold: DEFAULT_GC_THRESHOLD,
            evict_highest: false,
            scheduler: SchedConfig::default(),
            cost: CostModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub index: usize,
    pub think_us: VDuration,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub interactions: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionRecord {
    pub event: usize,
    pub node: NodeId,
    pub kind: OpKind,
    pub code: String,
    /// From the interaction's turn (cell submission or the previous output
    /// of the same cell) to its output.
    pub latency_us: VDuration,
    pub wait_since_last_output_us: VDuration,
    pub cumulative_wait_us: VDuration,
    pub fast_path: bool,
    pub output: String,
    #[serde(skip)]
    pub pending_codes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub mode: Mode,
    pub seed: u64,
    pub events: Vec<EventRecord>,
    pub interactions: Vec<InteractionRecord>,
    pub totals: Metrics,
    pub gc: Vec<GcEvent>,
    pub max_range_cost_us: VDuration,
    pub end_time_us: VDuration,
    /// Full evaluation cost per canonical code (eager runs only).
    #[serde(skip)]
    pub cost_by_code: BTreeMap<String, VDuration>,
    #[serde(skip)]
    pub results: Vec<Result<Value, String>>,
}

impl Report {
    fn new(mode: Mode, seed: u64) -> Self {
        Report {
            mode,
            seed,
            events: vec![],
            interactions: vec![],
            totals: Metrics::default(),
            gc: vec![],
            max_range_cost_us: VDuration::ZERO,
            end_time_us: VDuration::ZERO,
            cost_by_code: BTreeMap::new(),
            results: vec![],
        }
    }

    fn record(&mut self, event: usize, o: InteractionOutcome, cumulative: VDuration) {
        let last = self
            .interactions
            .last()
            .map(|r| r.cumulative_wait_us)
            .unwrap_or(VDuration::ZERO);
        self.interactions.push(InteractionRecord {
            event,
            node: o.node,
            kind: o.kind,
            code: o.code,
            latency_us: o.latency,
            wait_since_last_output_us: cumulative - last,
            cumulative_wait_us: cumulative,
            fast_path: o.fast_path,
            output: match &o.result {
                Ok(v) => v.summary(),
                Err(e) => format!("error: {e}"),
            },
            pending_codes: o.pending_codes,
        });
        self.results.push(o.result);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per event.
    pub fn write_events_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "index",
            "think_us",
            "sync_wait_us",
            "background_work_us",
            "wasted_work_us",
            "cache_hits",
            "cache_misses",
            "evictions",
            "preemptions",
            "errors",
            "fast_paths",
            "interactions",
            "error",
        ])
        .map_err(csv_err)?;
        for e in &self.events {
            let m = &e.metrics;
            out.write_record([
                e.index.to_string(),
                e.think_us.as_micros().to_string(),
                m.sync_wait_us.as_micros().to_string(),
                m.background_work_us.as_micros().to_string(),
                m.wasted_work_us.as_micros().to_string(),
                m.cache_hits.to_string(),
                m.cache_misses.to_string(),
                m.evictions.to_string(),
                m.preemptions.to_string(),
                m.errors.to_string(),
                m.fast_paths.to_string(),
                e.interactions.to_string(),
                e.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// One row per interaction.
    pub fn write_interactions_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "event",
            "node",
            "kind",
            "code",
            "latency_us",
            "wait_since_last_output_us",
            "cumulative_wait_us",
            "fast_path",
            "output",
        ])
        .map_err(csv_err)?;
        for r in &self.interactions {
            out.write_record([
                r.event.to_string(),
                r.node.0.to_string(),
                r.kind.to_string(),
                r.code.clone(),
                r.latency_us.as_micros().to_string(),
                r.wait_since_last_output_us.as_micros().to_string(),
                r.cumulative_wait_us.as_micros().to_string(),
                r.fast_path.to_string(),
                r.output.clone(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> SimError {
    SimError::Io(std::io::Error::other(e.to_string()))
}

/// Registers the trace's data sources.
pub fn load_catalog(trace: &Trace) -> Result<Catalog, SimError> {
    let mut c = Catalog::new();
    for uri in &trace.header.data {
        c.register_uri(uri)?;
    }
    Ok(c)
}

/// A session configured from `config`, uniform interaction probability.
pub fn new_session(config: &SimConfig, catalog: Catalog, think: ThinkTimeModel) -> Session {
    let cache = CacheStore::new(config.budget_bytes, config.gc_threshold).with_evict_highest(config.evict_highest);
    Session::new(
        config.scheduler.clone(),
        config.cost.clone(),
        cache,
        catalog,
        think,
        Box::new(Uniform),
    )
}

pub fn run_trace(trace: &Trace, mode: Mode, config: &SimConfig, think: &ThinkTimeModel) -> Result<Report, SimError> {
    let catalog = load_catalog(trace)?;
    let thinks = trace.think_times(think);
    match mode {
        Mode::Opportunistic => run_opportunistic(trace, &thinks, config, catalog, think.clone()),
        Mode::Eager => run_eager(trace, &thinks, config, catalog),
    }
}

fn run_opportunistic(
    trace: &Trace,
    thinks: &[VDuration],
    config: &SimConfig,
    catalog: Catalog,
    think: ThinkTimeModel,
) -> Result<Report, SimError> {
    let mut s = new_session(config, catalog, think);
    let mut report = Report::new(Mode::Opportunistic, trace.header.seed);
    for (i, (ev, gap)) in trace.events.iter().zip(thinks).enumerate() {
        let before = *s.metrics();
        s.run_think_time(*gap)?;
        s.observe_think(*gap);
        let mut shown = 0;
        let error = match s.submit_cell(&ev.cell) {
            Ok(ids) => {
                for id in ids {
                    let o = s.run_interaction(id)?;
                    report.record(i, o, s.metrics().sync_wait_us);
                    shown += 1;
                }
                None
            }
            Err(e) if !e.is_fatal() => Some(e.to_string()),
            Err(e) => return Err(e.into()),
        };
        report.events.push(EventRecord {
            index: i,
            think_us: *gap,
            metrics: s.metrics().delta(&before),
            interactions: shown,
            error,
        });
    }
    report.totals = *s.metrics();
    report.gc = s.gc_events().to_vec();
    report.max_range_cost_us = s.max_range_cost();
    report.end_time_us = s.now();
    Ok(report)
}

fn run_eager(trace: &Trace, thinks: &[VDuration], config: &SimConfig, catalog: Catalog) -> Result<Report, SimError> {
    let mut s = EagerSession::new(catalog, config.cost.clone(), config.scheduler.interaction_overhead);
    let mut report = Report::new(Mode::Eager, trace.header.seed);
    for (i, (ev, gap)) in trace.events.iter().zip(thinks).enumerate() {
        let before = *s.metrics();
        s.idle(*gap);
        let mut shown = 0;
        let error = match s.run_cell(&ev.cell) {
            Ok(outcomes) => {
                // all time inside a cell is sync wait, so latencies add up
                let mut at = before.sync_wait_us;
                for o in outcomes {
                    at += o.latency;
                    report.record(i, o, at);
                    shown += 1;
                }
                None
            }
            Err(e) => Some(e.to_string()),
        };
        report.events.push(EventRecord {
            index: i,
            think_us: *gap,
            metrics: s.metrics().delta(&before),
            interactions: shown,
            error,
        });
    }
    report.totals = *s.metrics();
    report.cost_by_code = s.cost_by_code().clone();
    report.end_time_us = s.now();
    Ok(report)
}

/// Both modes on the same trace.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub opportunistic: Report,
    pub eager: Report,
}

impl Comparison {
    /// Fraction of the eager total sync wait that opportunistic saved.
    pub fn sync_wait_reduction(&self) -> f64 {
        let e = self.eager.totals.sync_wait_us.as_secs_f64();
        if e == 0.0 {
            return 0.0;
        }
        1.0 - self.opportunistic.totals.sync_wait_us.as_secs_f64() / e
    }

    /// Interactions (by index) where opportunistic waited longer in total.
    pub fn latency_regressions(&self) -> Vec<usize> {
        self.opportunistic
            .interactions
            .iter()
            .zip(&self.eager.interactions)
            .enumerate()
            .filter(|(_, (o, e))| o.cumulative_wait_us > e.cumulative_wait_us)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Runs both modes and checks every interaction produced the same result.
pub fn compare_modes(trace: &Trace, config: &SimConfig, think: &ThinkTimeModel) -> Result<Comparison, SimError> {
    let opportunistic = run_trace(trace, Mode::Opportunistic, config, think)?;
    let eager = run_trace(trace, Mode::Eager, config, think)?;
    let n = opportunistic.results.len().max(eager.results.len());
    for i in 0..n {
        let o = opportunistic.results.get(i);
        let e = eager.results.get(i);
        let same_code =
            opportunistic.interactions.get(i).map(|r| &r.code) == eager.interactions.get(i).map(|r| &r.code);
        if o != e || !same_code {
            let show = |r: Option<&Result<Value, String>>| match r {
                None => "nothing".to_string(),
                Some(Ok(v)) => v.summary(),
                Some(Err(m)) => format!("error: {m}"),
            };
            return Err(SimError::ResultMismatch {
                index: i,
                code: eager
                    .interactions
                    .get(i)
                    .or(opportunistic.interactions.get(i))
                    .map(|r| r.code.clone())
                    .unwrap_or_default(),
                opportunistic: show(o),
                eager: show(e),
            });
        }
    }
    Ok(Comparison { opportunistic, eager })
}
