//! Inspection cycles and the live background engine.
//!
//! One writer owns the workbook ([`Session`]); a single worker thread
//! inspects immutable snapshots and publishes reports through a one-slot
//! [`Mailbox`]. The debounce logic lives in the clock-free [`Scheduler`]
//! so it can be driven deterministically in tests.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::calc::recalculate;
use crate::findings::*;
use crate::grid::{FrozenWorkbook, Workbook};
use crate::inspect::{inspect, sort_findings, StaticRuleConfig};
use crate::scenario::run_scenarios;
use crate::validation::evaluate_rules;

pub const DEFAULT_DEBOUNCE: Duration = Duration::from_millis(300);

/// The rule configuration in effect for `wb`: its own if it carries one,
/// otherwise `fallback`.
pub fn effective_config<'a>(wb: &'a Workbook, fallback: &'a StaticRuleConfig) -> &'a StaticRuleConfig {
    wb.guardian().rule_config.as_ref().unwrap_or(fallback)
}

/// Every scenario, enabled static rule and validation rule, in report
/// order. Pure over the workbook.
pub fn run_all(wb: &Workbook, config: &StaticRuleConfig) -> Vec<Finding> {
    let mut out = run_scenarios(wb);
    out.extend(inspect(wb, config));
    if !wb.guardian().validation_rules.is_empty() {
        let state = recalculate(wb, &BTreeMap::new());
        out.extend(evaluate_rules(wb, &state, &wb.guardian().validation_rules));
    }
    sort_findings(wb, &mut out);
    out
}

/// One inspection cycle: all findings, minus flagged ones, diffed against
/// the previous report. A panic inside a rule becomes an engine finding.
pub fn run_cycle(wb: &Workbook, config: &StaticRuleConfig, previous: Option<&InspectionReport>) -> InspectionReport {
    cycle_with(wb, previous, || run_all(wb, config))
}

/// [`run_cycle`] over a custom selection of rules.
pub fn cycle_with(
    wb: &Workbook,
    previous: Option<&InspectionReport>,
    compute: impl FnOnce() -> Vec<Finding>,
) -> InspectionReport {
    let raw = match catch_unwind(AssertUnwindSafe(compute)) {
        Ok(findings) => findings,
        Err(panic) => {
            let what = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown failure".into());
            let anchor = wb
                .sheets()
                .first()
                .map(|s| crate::address::CellAddress::new(s.name(), 1, 1))
                .unwrap_or_else(|| crate::address::CellAddress::new("Sheet1", 1, 1));
            vec![Finding::new(
                RULE_ENGINE,
                Severity::FaultIndicator,
                vec![FindingLocation::at(anchor)],
                format!("inspection failed: {what}"),
                vec![],
                wb.generation(),
            )]
        }
    };
    let (findings, suppressed_count) = apply_flags(raw, &wb.guardian().flags, wb.generation());
    let diff = diff_reports(previous, &findings);
    InspectionReport { generation: wb.generation(), findings, suppressed_count, diff }
}

/// Trailing-debounce scheduling decisions, with time passed in explicitly.
#[derive(Debug, Clone)]
pub struct Scheduler {
    debounce: Duration,
    pending: Option<(u64, Duration)>,
    in_flight: Option<u64>,
    last_started: Option<u64>,
    last_published: Option<u64>,
}

impl Scheduler {
    pub fn new(debounce: Duration) -> Self {
        Self { debounce, pending: None, in_flight: None, last_started: None, last_published: None }
    }

    /// An edit produced `generation` at time `now`; restarts the quiet
    /// window.
    pub fn on_edit(&mut self, generation: u64, now: Duration) {
        let gen = self.pending.map_or(generation, |(g, _)| g.max(generation));
        self.pending = Some((gen, now + self.debounce));
    }

    /// Returns the generation to inspect now, if any. Never starts a
    /// second cycle while one is in flight.
    pub fn poll(&mut self, now: Duration) -> Option<u64> {
        if self.in_flight.is_some() {
            return None;
        }
        let (gen, due) = self.pending?;
        if now < due {
            return None;
        }
        self.pending = None;
        if self.last_started.is_some_and(|g| g >= gen) {
            return None;
        }
        self.in_flight = Some(gen);
        self.last_started = Some(gen);
        Some(gen)
    }

    /// A cycle finished; returns whether its report should be published.
    pub fn on_complete(&mut self, generation: u64) -> bool {
        if self.in_flight == Some(generation) {
            self.in_flight = None;
        }
        let fresh = self.last_published.is_none_or(|g| generation > g);
        if fresh {
            self.last_published = Some(generation);
        }
        fresh
    }

    /// When [`Scheduler::poll`] should next be called.
    pub fn next_due(&self) -> Option<Duration> {
        if self.in_flight.is_some() {
            return None;
        }
        self.pending.map(|(_, due)| due)
    }

    pub fn in_flight(&self) -> Option<u64> {
        self.in_flight
    }

    pub fn last_published(&self) -> Option<u64> {
        self.last_published
    }
}

/// Single-slot report store. Publication is monotonic in generation.
#[derive(Debug, Default)]
pub struct Mailbox {
    slot: Mutex<Option<Arc<InspectionReport>>>,
    changed: Condvar,
}

impl Mailbox {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `report` unless one with an equal or newer generation is
    /// already there. Returns whether it was stored.
    pub fn publish(&self, report: InspectionReport) -> bool {
        let mut slot = self.slot.lock().expect("mailbox poisoned");
        if slot.as_ref().is_some_and(|r| r.generation >= report.generation) {
            return false;
        }
        *slot = Some(Arc::new(report));
        self.changed.notify_all();
        true
    }

    pub fn latest(&self) -> Option<Arc<InspectionReport>> {
        self.slot.lock().expect("mailbox poisoned").clone()
    }

    /// Waits up to `timeout` for a report newer than `after` (any report
    /// when `after` is `None`).
    pub fn wait_newer(&self, after: Option<u64>, timeout: Duration) -> Option<Arc<InspectionReport>> {
        let newer =
            |r: &Option<Arc<InspectionReport>>| r.as_ref().is_some_and(|r| after.is_none_or(|a| r.generation > a));
        let slot = self.slot.lock().expect("mailbox poisoned");
        let (slot, _) = self.changed.wait_timeout_while(slot, timeout, |s| !newer(s)).expect("mailbox poisoned");
        if newer(&slot) {
            slot.clone()
        } else {
            None
        }
    }
}

enum Msg {
    Edit(FrozenWorkbook),
    Shutdown,
}

/// Background worker running inspection cycles on the latest snapshot
/// after each quiet period.
pub struct LiveEngine {
    tx: mpsc::Sender<Msg>,
    mailbox: Arc<Mailbox>,
    handle: Option<JoinHandle<()>>,
}

impl LiveEngine {
    pub fn start(debounce: Duration, fallback: StaticRuleConfig) -> Self {
        let (tx, rx) = mpsc::channel::<Msg>();
        let mailbox = Arc::new(Mailbox::new());
        let out = Arc::clone(&mailbox);
        let handle = std::thread::Builder::new()
            .name("sguard-inspector".into())
            .spawn(move || {
                let epoch = Instant::now();
                let mut scheduler = Scheduler::new(debounce);
                let mut latest: Option<FrozenWorkbook> = None;
                let mut previous: Option<InspectionReport> = None;
                loop {
                    let now = epoch.elapsed();
                    let msg = match scheduler.next_due() {
                        Some(due) if due <= now => Err(RecvTimeoutError::Timeout),
                        Some(due) => rx.recv_timeout(due - now),
                        None => rx.recv().map_err(|_| RecvTimeoutError::Disconnected),
                    };
                    match msg {
                        Ok(Msg::Edit(snapshot)) => {
                            scheduler.on_edit(snapshot.generation(), epoch.elapsed());
                            latest = Some(snapshot);
                        }
                        Ok(Msg::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
                        Err(RecvTimeoutError::Timeout) => {}
                    }
                    if let (Some(gen), Some(snapshot)) = (scheduler.poll(epoch.elapsed()), latest.clone()) {
                        debug_assert_eq!(gen, snapshot.generation());
                        let config = effective_config(&snapshot, &fallback);
                        let report = run_cycle(&snapshot, config, previous.as_ref());
                        if scheduler.on_complete(gen) {
                            previous = Some(report.clone());
                            out.publish(report);
                        }
                    }
                }
            })
            .expect("spawn inspector thread");
        Self { tx, mailbox, handle: Some(handle) }
    }

    /// Hands a new snapshot to the worker.
    pub fn notify(&self, snapshot: FrozenWorkbook) {
        let _ = self.tx.send(Msg::Edit(snapshot));
    }

    pub fn mailbox(&self) -> &Arc<Mailbox> {
        &self.mailbox
    }
}

impl Drop for LiveEngine {
    fn drop(&mut self) {
        let _ = self.tx.send(Msg::Shutdown);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// The single writer for one document. Snapshots share storage with the
/// live workbook until the next edit copies it.
pub struct Session {
    wb: Arc<Workbook>,
    engine: Option<LiveEngine>,
}

impl Session {
    pub fn new(wb: Workbook) -> Self {
        Self { wb: Arc::new(wb), engine: None }
    }

    /// Starts background inspection and schedules a first cycle.
    pub fn with_engine(wb: Workbook, debounce: Duration, fallback: StaticRuleConfig) -> Self {
        let engine = LiveEngine::start(debounce, fallback);
        let session = Self { wb: Arc::new(wb), engine: Some(engine) };
        session.notify();
        session
    }

    pub fn workbook(&self) -> &Workbook {
        &self.wb
    }

    pub fn generation(&self) -> u64 {
        self.wb.generation()
    }

    pub fn snapshot(&self) -> FrozenWorkbook {
        FrozenWorkbook::from_arc(Arc::clone(&self.wb))
    }

    pub fn mailbox(&self) -> Option<&Arc<Mailbox>> {
        self.engine.as_ref().map(LiveEngine::mailbox)
    }

    /// Applies `f` to the workbook. Every generation change triggers an
    /// inspection.
    pub fn edit<T, E>(&mut self, f: impl FnOnce(&mut Workbook) -> Result<T, E>) -> Result<T, E> {
        let before = self.wb.generation();
        let result = f(Arc::make_mut(&mut self.wb));
        if self.wb.generation() != before {
            self.notify();
        }
        result
    }

    fn notify(&self) {
        if let Some(engine) = &self.engine {
            engine.notify(self.snapshot());
        }
    }
}
