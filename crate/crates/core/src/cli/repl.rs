//! Line-oriented interactive session. Each input line is a cell; lines
//! starting with `:` are meta-commands.

use std::io::{BufRead, Write};
use std::sync::mpsc::{channel, RecvTimeoutError};
use std::time::Duration;

use clap::ValueEnum;
use serde::Deserialize;

use super::{CliError, Settings, EXIT_BUDGET, EXIT_INTERNAL};
use crate::cache::{score, CacheError};
use crate::engine::Catalog;
use crate::sched::wall::WallSession;
use crate::sched::{InteractionOutcome, Session, SessionError};
use crate::sim::new_session;
use crate::time::VDuration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    Virtual,
    Wall,
}

const HELP: &str = ":dag  :cache  :metrics  :think SECS  :quit";

fn fatal(e: SessionError) -> CliError {
    let code = match e {
        SessionError::Cache(CacheError::BudgetExhausted { .. } | CacheError::UncacheableResult { .. }) => EXIT_BUDGET,
        _ => EXIT_INTERNAL,
    };
    CliError {
        code,
        message: e.to_string(),
    }
}

fn print_outcome(out: &mut dyn Write, o: &InteractionOutcome, latency: String) -> std::io::Result<()> {
    match &o.result {
        Ok(v) => writeln!(out, "{v}")?,
        Err(e) => writeln!(out, "error: {e}")?,
    }
    writeln!(
        out,
        "[{} {latency}{}]",
        o.kind,
        if o.fast_path { ", fast path" } else { "" }
    )
}

fn print_dag(out: &mut dyn Write, s: &Session) -> std::io::Result<()> {
    for n in s.dag.live_nodes() {
        let deps: Vec<String> = n.deps.iter().map(|d| d.to_string()).collect();
        writeln!(
            out,
            "{} {:<32} {:<10} deps=[{}]{}",
            n.id,
            n.name,
            format!("{:?}", n.state),
            deps.join(","),
            n.failed.as_ref().map(|m| format!(" failed: {m}")).unwrap_or_default()
        )?;
    }
    Ok(())
}

fn print_cache(out: &mut dyn Write, s: &mut Session) -> std::io::Result<()> {
    s.cache.refresh_recompute_costs(&s.dag, &s.cost, &s.catalog);
    writeln!(
        out,
        "{:<6} {:<32} {:>12} {:>6} {:>12} {:>14}",
        "node", "name", "m_bytes", "t", "k_us", "O"
    )?;
    for e in s.cache.entries() {
        let p = s.cache.reuse_probability(e.node).unwrap_or(0.0);
        let k = e.recompute.unwrap_or(VDuration::ZERO);
        let name = s.dag.node(e.node).map(|n| n.name.clone()).unwrap_or_default();
        writeln!(
            out,
            "{:<6} {:<32} {:>12} {:>6} {:>12} {:>14.1}",
            e.node.to_string(),
            name,
            e.size,
            e.last_reuse,
            k.as_micros(),
            score(p, e.size, k)
        )?;
    }
    writeln!(out, "used {} of {} bytes", s.cache.used_bytes(), s.cache.budget())
}

fn print_metrics(out: &mut dyn Write, s: &Session) -> std::io::Result<()> {
    let m = s.metrics();
    let text = serde_json::to_string_pretty(m).expect("metrics serialize");
    writeln!(out, "{text}")?;
    writeln!(out, "virtual time {} ms", s.now().as_millis_f64())?;
    if let Some(b) = s.background_node() {
        writeln!(out, "background: {b} in progress")?;
    }
    Ok(())
}

enum Backend {
    Virtual(Box<Session>),
    Wall(Box<WallSession>),
}

impl Backend {
    fn session(&mut self) -> &mut Session {
        match self {
            Backend::Virtual(s) => s,
            Backend::Wall(w) => &mut w.session,
        }
    }
}

/// Runs the REPL until `:quit` or end of input.
pub fn run_repl(
    settings: Settings,
    clock: Clock,
    think: Option<f64>,
    input: Box<dyn BufRead + Send>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut catalog = Catalog::new();
    for d in &settings.data {
        catalog.register_uri(d).map_err(|e| CliError::usage(e.to_string()))?;
    }
    let gap = VDuration::from_secs_f64(think.unwrap_or_else(|| settings.think.predict()).max(0.0));
    let session = new_session(&settings.sim, catalog, settings.think.clone());
    let mut backend = match clock {
        Clock::Virtual => Backend::Virtual(Box::new(session)),
        Clock::Wall => Backend::Wall(Box::new(WallSession::new(session))),
    };

    let (tx, rx) = channel::<Option<String>>();
    std::thread::spawn(move || {
        for line in input.lines() {
            match line {
                Ok(l) => {
                    if tx.send(Some(l)).is_err() {
                        return;
                    }
                }
                Err(_) => break,
            }
        }
        let _ = tx.send(None);
    });

    let mut first = true;
    loop {
        let line = match &mut backend {
            Backend::Wall(w) => loop {
                match rx.recv_timeout(Duration::from_millis(10)) {
                    Ok(l) => break l,
                    Err(RecvTimeoutError::Timeout) => {
                        w.poll().map_err(fatal)?;
                    }
                    Err(RecvTimeoutError::Disconnected) => break None,
                }
            },
            Backend::Virtual(_) => rx.recv().ok().flatten(),
        };
        let Some(line) = line else { break };
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(meta) = line.strip_prefix(':') {
            let mut parts = meta.split_whitespace();
            match parts.next().unwrap_or("") {
                "quit" | "q" => break,
                "dag" => print_dag(out, backend.session())?,
                "cache" => print_cache(out, backend.session())?,
                "metrics" => print_metrics(out, backend.session())?,
                "think" => {
                    let secs: f64 = match parts.next().map(str::parse) {
                        Some(Ok(v)) if v >= 0.0 => v,
                        _ => {
                            writeln!(out, "usage: :think SECS")?;
                            continue;
                        }
                    };
                    match &mut backend {
                        Backend::Virtual(s) => {
                            s.run_think_time(VDuration::from_secs_f64(secs)).map_err(fatal)?;
                        }
                        Backend::Wall(w) => w.settle(Duration::from_secs_f64(secs)).map_err(fatal)?,
                    }
                }
                "help" => writeln!(out, "{HELP}")?,
                other => writeln!(out, "unknown command :{other} ({HELP})")?,
            }
            continue;
        }
        match &mut backend {
            Backend::Virtual(s) => {
                if !first {
                    s.run_think_time(gap).map_err(fatal)?;
                    s.observe_think(gap);
                }
                match s.submit_cell(line) {
                    Ok(ids) => {
                        for id in ids {
                            let o = s.run_interaction(id).map_err(fatal)?;
                            let lat = format!("{} virtual ms", o.latency.as_millis_f64());
                            print_outcome(out, &o, lat)?;
                        }
                    }
                    Err(e) if !e.is_fatal() => writeln!(out, "error: {e}")?,
                    Err(e) => return Err(fatal(e)),
                }
            }
            Backend::Wall(w) => match w.run_cell(line) {
                Ok(outcomes) => {
                    for (o, d) in outcomes {
                        let lat = format!("{:.1} ms", d.as_secs_f64() * 1000.0);
                        print_outcome(out, &o, lat)?;
                    }
                }
                Err(e) if !e.is_fatal() => writeln!(out, "error: {e}")?,
                Err(e) => return Err(fatal(e)),
            },
        }
        first = false;
        out.flush()?;
    }
    out.flush()?;
    Ok(())
}
