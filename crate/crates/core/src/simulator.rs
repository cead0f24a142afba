//! Deterministic single-threaded event loop for the coordinator-and-sites
//! model. Each arrival is delivered to its site and every message it
//! triggers (signals, polls, probes, broadcasts) runs to quiescence before
//! the next arrival.

use std::any::Any;
use std::fmt;

use crate::config::{Mode, TrackerConfig, TrackerKind};
use crate::error::{Error, Result};
use crate::ledger::{ArrivalEvent, CostLedger};
use crate::oracle::ExactOracle;

/// A deterministic tracker driven one arrival at a time.
pub trait Tracker: Send {
    fn kind(&self) -> TrackerKind;

    fn config(&self) -> &TrackerConfig;

    fn mode(&self) -> Mode;

    /// Deliver `ev` to its site and execute every triggered episode,
    /// recording its cost.
    fn observe(&mut self, ev: &ArrivalEvent, ledger: &mut CostLedger) -> Result<()>;

    /// Current round (0 during warm-up).
    fn round(&self) -> u64;

    /// Compare the coordinator's answer with the oracle.
    fn check_output(&self, oracle: &ExactOracle, seq: u64, out: &mut Vec<Violation>);

    /// Check protocol invariants at quiescence. `last` is the arrival that
    /// was just processed.
    fn check_invariants(&self, _oracle: &ExactOracle, _last: &ArrivalEvent, _out: &mut Vec<Violation>) {}

    /// Per-site triggering thresholds, for trackers that expose them.
    fn threshold_probe(&self) -> Option<&dyn ThresholdProbe> {
        None
    }

    /// For downcasting to the concrete tracker in checkpoint hooks.
    fn as_any(&self) -> &dyn Any;
}

/// White-box view used by the lower-bound adversary.
pub trait ThresholdProbe {
    /// For each site, how many more copies of `item` it absorbs before it
    /// initiates communication.
    fn remaining_to_trigger(&self, item: u64) -> Vec<u64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationKind {
    /// A mandatory heavy hitter was not reported.
    MissingHeavyHitter,
    /// A forbidden item was reported.
    ForbiddenHeavyHitter,
    /// Tracked quantile outside `φ|A| ± ε|A|`.
    QuantileRank,
    /// Rank estimate off by more than `ε|A|`.
    RankEstimate,
    /// Heavy hitters derived from the quantile tree break the 2ε contract.
    DerivedHeavyHitter,
    /// `C.m` outside its bounds.
    TotalCountBound,
    /// `C.m_x` outside its bounds.
    ItemCountBound,
    /// A site counter is at or above its trigger threshold at quiescence.
    Quiescence,
    /// Interval content outside `[εm/8, εm/2]`.
    IntervalSize,
    /// Interval count at the coordinator is not an underestimate within slack.
    IntervalCount,
    /// Drift counters not underestimates within `εm/8`.
    DriftCount,
    /// Partial sum `s_u` outside `[|A∩I_u| − θm, |A∩I_u|]`.
    PartialSum,
    /// Balance condition `s_u/4 ≤ s_v ≤ 3s_u/4` broken between episodes.
    Balance,
    /// Tree deeper than `h`.
    Depth,
    /// Leaf holding more than `εm/2` items.
    LeafSize,
}

impl ViolationKind {
    /// Whether the kind concerns the coordinator's answer rather than an
    /// internal invariant.
    pub fn is_output(self) -> bool {
        matches!(
            self,
            ViolationKind::MissingHeavyHitter
                | ViolationKind::ForbiddenHeavyHitter
                | ViolationKind::QuantileRank
                | ViolationKind::RankEstimate
                | ViolationKind::DerivedHeavyHitter
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub seq: u64,
    pub kind: ViolationKind,
    pub magnitude: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seq {}: {:?} ({})", self.seq, self.kind, self.magnitude)
    }
}

/// Every violation found at every checkpoint of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
    pub checkpoints: u64,
}

impl ViolationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

/// When to compare the tracker against the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointPolicy {
    pub every: u64,
    /// Also run the invariant suite at every processed event.
    pub invariants: bool,
}

impl CheckpointPolicy {
    pub fn every(every: u64) -> Self {
        CheckpointPolicy { every: every.max(1), invariants: false }
    }

    /// Every event up to 10^5 arrivals, then every ⌈n/10^5⌉.
    pub fn default_for(n: u64) -> Self {
        Self::every(n.div_ceil(100_000).max(1))
    }

    pub fn with_invariants(mut self) -> Self {
        self.invariants = true;
        self
    }
}

/// Hook called at each checkpoint with the run state after the event.
pub type CheckpointHook<'a> = dyn FnMut(&SimulationRun, &ArrivalEvent) + 'a;

pub struct SimulationRun {
    tracker: Box<dyn Tracker>,
    oracle: ExactOracle,
    ledger: CostLedger,
    policy: CheckpointPolicy,
    report: ViolationReport,
    last_seq: Option<u64>,
    steps: u64,
    scratch: Vec<Violation>,
}

impl SimulationRun {
    pub fn new(tracker: Box<dyn Tracker>, policy: CheckpointPolicy) -> Self {
        let cfg = *tracker.config();
        SimulationRun {
            tracker,
            oracle: ExactOracle::new(cfg.u),
            ledger: CostLedger::new(cfg.k),
            policy,
            report: ViolationReport::default(),
            last_seq: None,
            steps: 0,
            scratch: Vec::new(),
        }
    }

    pub fn tracker(&self) -> &dyn Tracker {
        self.tracker.as_ref()
    }

    pub fn oracle(&self) -> &ExactOracle {
        &self.oracle
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn report(&self) -> &ViolationReport {
        &self.report
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Processes one arrival. Returns whether a checkpoint fired.
    pub fn step(&mut self, ev: &ArrivalEvent) -> Result<bool> {
        if let Some(prev) = self.last_seq {
            if ev.seq <= prev {
                return Err(Error::OutOfOrder { previous: prev, got: ev.seq });
            }
        }
        let cfg = self.tracker.config();
        if ev.site >= cfg.k {
            return Err(Error::BadSite { site: ev.site, k: cfg.k });
        }
        self.oracle.insert(ev.key())?;
        self.tracker.observe(ev, &mut self.ledger)?;
        self.last_seq = Some(ev.seq);
        self.steps += 1;

        if self.policy.invariants {
            self.tracker.check_invariants(&self.oracle, ev, &mut self.scratch);
        }
        let fire = self.steps.is_multiple_of(self.policy.every);
        if fire {
            self.report.checkpoints += 1;
            self.tracker.check_output(&self.oracle, ev.seq, &mut self.scratch);
        }
        self.report.violations.append(&mut self.scratch);
        Ok(fire)
    }

    /// Steps every event, calling `hook` after each checkpoint.
    pub fn run_with<I>(&mut self, events: I, hook: &mut CheckpointHook<'_>) -> Result<()>
    where
        I: IntoIterator<Item = ArrivalEvent>,
    {
        for ev in events {
            if self.step(&ev)? {
                hook(self, &ev);
            }
        }
        Ok(())
    }

    /// Runs every event and closes the final round in the ledger.
    pub fn run_to_completion<I>(mut self, events: I) -> Result<(CostLedger, ViolationReport)>
    where
        I: IntoIterator<Item = ArrivalEvent>,
    {
        for ev in events {
            self.step(&ev)?;
        }
        Ok(self.finish())
    }

    pub fn finish(mut self) -> (CostLedger, ViolationReport) {
        self.close_round();
        (self.ledger, self.report)
    }

    /// Snapshots the in-progress round so per-round deltas cover the run.
    pub fn close_round(&mut self) {
        let r = self.tracker.round();
        if self.ledger.last_round().is_none_or(|last| r > last) {
            let _ = self.ledger.snapshot_round(r);
        }
    }
}
