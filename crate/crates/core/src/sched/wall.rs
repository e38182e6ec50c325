//! Wall-clock mode: background runs execute on a worker thread and are
//! preempted through a shared flag when the user submits a cell.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::{InteractionOutcome, Session, SessionError};
use crate::dag::NodeId;
use crate::engine::{execute_partitioned_observed, EngineError, PartitionOutcome, PartitionRun};

struct Report {
    node: NodeId,
    rows: usize,
    outcome: Result<PartitionOutcome, EngineError>,
}

pub struct WallSession {
    pub session: Session,
    jobs: Option<Sender<PartitionRun>>,
    reports: Receiver<Report>,
    preempt: Arc<AtomicBool>,
    busy: Option<NodeId>,
    handle: Option<JoinHandle<()>>,
}

impl WallSession {
    pub fn new(session: Session) -> Self {
        let (job_tx, job_rx) = channel::<PartitionRun>();
        let (rep_tx, rep_rx) = channel();
        let preempt = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&preempt);
        let handle = std::thread::spawn(move || {
            for run in job_rx {
                let node = run.node();
                let rows = run.rows();
                let outcome = execute_partitioned_observed(run, &flag, |i, r| {
                    log::trace!("{node}: range {i} {r:?}");
                });
                if rep_tx.send(Report { node, rows, outcome }).is_err() {
                    break;
                }
            }
        });
        WallSession {
            session,
            jobs: Some(job_tx),
            reports: rep_rx,
            preempt,
            busy: None,
            handle: Some(handle),
        }
    }

    /// Node the worker is running, if any.
    pub fn busy(&self) -> Option<NodeId> {
        self.busy
    }

    /// Starts the next background job if the worker is idle.
    pub fn kick(&mut self) {
        if self.busy.is_some() {
            return;
        }
        if let Some(run) = self.session.take_background_job() {
            self.busy = Some(run.node());
            if let Some(tx) = &self.jobs {
                if tx.send(run).is_err() {
                    self.busy = None;
                }
            }
        }
    }

    /// Collects a finished job without blocking and starts the next one.
    pub fn poll(&mut self) -> Result<bool, SessionError> {
        match self.reports.try_recv() {
            Ok(r) => {
                self.handle_report(r)?;
                self.kick();
                Ok(true)
            }
            Err(TryRecvError::Empty) => Ok(false),
            Err(TryRecvError::Disconnected) => {
                self.busy = None;
                Ok(false)
            }
        }
    }

    fn handle_report(&mut self, r: Report) -> Result<(), SessionError> {
        self.busy = None;
        match r.outcome {
            Ok(PartitionOutcome::Completed(v)) => self.session.complete_background(r.node, r.rows, Ok(v)),
            Ok(PartitionOutcome::Preempted(cp)) => {
                self.session.park(cp.into_run());
                Ok(())
            }
            Err(e) => self.session.complete_background(r.node, r.rows, Err(e)),
        }
    }

    /// Raises the preemption flag and waits for the worker to hand back
    /// its job.
    fn stop_worker(&mut self) -> Result<(), SessionError> {
        if self.busy.is_none() {
            return Ok(());
        }
        self.preempt.store(true, Ordering::Release);
        let r = self.reports.recv();
        self.preempt.store(false, Ordering::Release);
        match r {
            Ok(r) => self.handle_report(r),
            Err(_) => {
                self.busy = None;
                Ok(())
            }
        }
    }

    /// Submits a cell, answers its interactions and restarts background
    /// work. Each outcome comes with its wall-clock latency.
    pub fn run_cell(&mut self, source: &str) -> Result<Vec<(InteractionOutcome, Duration)>, SessionError> {
        let start = Instant::now();
        self.stop_worker()?;
        let result = self.session.submit_cell(source).and_then(|ids| {
            let mut out = Vec::new();
            for id in ids {
                let o = self.session.run_interaction(id)?;
                out.push((o, start.elapsed()));
            }
            Ok(out)
        });
        self.kick();
        result
    }

    /// Blocks until background work runs out or `limit` passes.
    pub fn settle(&mut self, limit: Duration) -> Result<(), SessionError> {
        let deadline = Instant::now() + limit;
        self.kick();
        while self.busy.is_some() && Instant::now() < deadline {
            if !self.poll()? {
                std::thread::sleep(Duration::from_millis(2));
            }
        }
        Ok(())
    }
}

impl Drop for WallSession {
    fn drop(&mut self) {
        self.preempt.store(true, Ordering::Release);
        self.jobs.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
