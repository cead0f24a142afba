//! Heavy-hitter tracking.
//!
//! Each site counts arrivals since its last report, in total and per item.
//! A counter reaching `max(1, ⌈ε·S_j.m/(3k)⌉)` is reported to the
//! coordinator and reset. After `k` total-count reports the coordinator
//! polls every site for its exact local total, broadcasts the new `m`, and a
//! new round begins. Per-item counters survive the broadcast.
//!
//! In sketch mode each site keeps a Space-Saving summary of capacity
//! `⌈32/ε⌉` instead of exact local counts, and the protocol runs at `3ε/4`.

use std::collections::{BTreeSet, HashMap};

use crate::config::{ceil_threshold, Frac, Mode, TrackerConfig, TrackerKind};
use crate::error::{Error, Result};
use crate::ledger::{ArrivalEvent, CostLedger, Message, MessageKind};
use crate::oracle::ExactOracle;
use crate::simulator::{ThresholdProbe, Tracker, Violation, ViolationKind};
use crate::sketches::SpaceSaving;

/// Site-to-coordinator signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Signal {
    pub kind: MessageKind,
    pub item: Option<u64>,
    pub value: u64,
}

impl Signal {
    pub fn all(value: u64) -> Self {
        Signal { kind: MessageKind::AllSignal, item: None, value }
    }

    pub fn item(item: u64, value: u64) -> Self {
        Signal { kind: MessageKind::ItemSignal, item: Some(item), value }
    }
}

#[derive(Debug, Clone)]
enum LocalCounts {
    Exact(HashMap<u64, u64>),
    Sketch { summary: SpaceSaving<u64>, reported: HashMap<u64, u64> },
}

#[derive(Debug, Clone)]
pub struct HhSite {
    k: u64,
    eps: Frac,
    /// Exact number of arrivals at this site.
    pub local_total: u64,
    /// `S_j.m`, the site's view of the global count.
    pub estimate: u64,
    /// `S_j.Δ(m)`
    pub pending_total: u64,
    /// `S_j.Δ(m_x)`; only nonzero entries are stored.
    pending_items: HashMap<u64, u64>,
    local: LocalCounts,
}

impl HhSite {
    pub fn new(k: usize, eps: Frac, mode: Mode, sketch_capacity: usize) -> Self {
        let local = match mode {
            Mode::Exact => LocalCounts::Exact(HashMap::new()),
            Mode::Sketch => {
                LocalCounts::Sketch { summary: SpaceSaving::new(sketch_capacity), reported: HashMap::new() }
            }
        };
        HhSite { k: k as u64, eps, local_total: 0, estimate: 0, pending_total: 0, pending_items: HashMap::new(), local }
    }

    /// `max(1, ⌈ε·S_j.m/(3k)⌉)`
    pub fn threshold(&self) -> u64 {
        ceil_threshold(self.eps, self.estimate, 3 * self.k)
    }

    pub fn pending_item(&self, x: u64) -> u64 {
        match &self.local {
            LocalCounts::Exact(_) => self.pending_items.get(&x).copied().unwrap_or(0),
            LocalCounts::Sketch { summary, reported } => {
                summary.lower_bound(&x).saturating_sub(reported.get(&x).copied().unwrap_or(0))
            }
        }
    }

    /// Exact local count (exact mode) or the sketch's lower bound.
    pub fn local_count(&self, x: u64) -> u64 {
        match &self.local {
            LocalCounts::Exact(c) => c.get(&x).copied().unwrap_or(0),
            LocalCounts::Sketch { summary, .. } => summary.lower_bound(&x),
        }
    }

    /// Counts an arrival without running the protocol (warm-up).
    fn absorb(&mut self, x: u64) {
        self.local_total += 1;
        match &mut self.local {
            LocalCounts::Exact(c) => *c.entry(x).or_default() += 1,
            LocalCounts::Sketch { summary, reported } => {
                summary.insert(x);
                // warm-up arrivals reach the coordinator verbatim
                *reported.entry(x).or_default() += 1;
            }
        }
    }

    /// One arrival of `x`; returns the signals it triggers.
    pub fn receive(&mut self, x: u64) -> Vec<Signal> {
        let thr = self.threshold();
        let mut out = Vec::new();
        self.local_total += 1;
        self.pending_total += 1;
        if self.pending_total >= thr {
            out.push(Signal::all(thr));
            self.pending_total = 0;
        }
        match &mut self.local {
            LocalCounts::Exact(c) => {
                *c.entry(x).or_default() += 1;
                let p = self.pending_items.entry(x).or_default();
                *p += 1;
                if *p >= thr {
                    out.push(Signal::item(x, thr));
                    self.pending_items.remove(&x);
                }
            }
            LocalCounts::Sketch { summary, reported } => {
                summary.insert(x);
                let lower = summary.lower_bound(&x);
                let rep = reported.entry(x).or_default();
                while lower >= *rep + thr {
                    out.push(Signal::item(x, thr));
                    *rep += thr;
                }
            }
        }
        out
    }

    /// Copies of `x` this site absorbs before it sends anything.
    pub fn remaining_to_trigger(&self, x: u64) -> u64 {
        let thr = self.threshold();
        let total = thr - self.pending_total;
        let item = thr.saturating_sub(self.pending_item(x)).max(1);
        total.min(item)
    }
}

/// Coordinator state: `C.m`, `C.m_x` and the all-signal counter.
#[derive(Debug, Clone, Default)]
pub struct HhCoordinator {
    /// `C.m`
    pub total: u64,
    counts: HashMap<u64, u64>,
    by_count: BTreeSet<(u64, u64)>,
    /// All-signals received since the last broadcast.
    pub all_signals: usize,
}

/// What the coordinator must do after absorbing a signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinatorAction {
    None,
    Resync,
}

impl HhCoordinator {
    pub fn count(&self, x: u64) -> u64 {
        self.counts.get(&x).copied().unwrap_or(0)
    }

    fn add_item(&mut self, x: u64, v: u64) {
        let c = self.counts.entry(x).or_default();
        if *c > 0 {
            self.by_count.remove(&(*c, x));
        }
        *c += v;
        self.by_count.insert((*c, x));
    }

    /// Applies one site message. `k` all-signals request a resync.
    pub fn receive(&mut self, msg: Signal, k: usize) -> Result<CoordinatorAction> {
        match (msg.kind, msg.item) {
            (MessageKind::AllSignal, _) => {
                self.total += msg.value;
                self.all_signals += 1;
                Ok(if self.all_signals >= k { CoordinatorAction::Resync } else { CoordinatorAction::None })
            }
            (MessageKind::ItemSignal, Some(x)) => {
                self.add_item(x, msg.value);
                Ok(CoordinatorAction::None)
            }
            (kind, _) => Err(Error::UnexpectedMessage(kind)),
        }
    }

    /// `C.m_x / C.m ≥ φ − ε/2`, in exact arithmetic.
    pub fn classify(&self, x: u64, phi: Frac, eps: Frac) -> bool {
        classify(self.count(x), self.total, phi, eps)
    }

    /// Every item currently declared heavy, ascending.
    pub fn report(&self, phi: Frac, eps: Frac) -> Vec<u64> {
        let mut out: Vec<u64> = self
            .by_count
            .iter()
            .rev()
            .take_while(|&&(c, _)| classify(c, self.total, phi, eps))
            .map(|&(_, x)| x)
            .collect();
        out.sort_unstable();
        out
    }
}

/// The classification rule `count / total ≥ φ − ε/2`.
///
/// With `C.m_x` and `C.m` within `εm/3` below the truth, the ratio lies
/// strictly inside `(m_x/m − ε/3, m_x/m + ε/2)`, so this cut admits every
/// item with `m_x ≥ φm` and rejects every item with `m_x < (φ−ε)m`.
pub fn classify(count: u64, total: u64, phi: Frac, eps: Frac) -> bool {
    if total == 0 || count == 0 {
        return false;
    }
    let cut = phi - eps / 2;
    (count as i128) * (*cut.denom() as i128) >= (*cut.numer() as i128) * (total as i128)
}

#[derive(Debug, Clone)]
pub struct HhTracker {
    cfg: TrackerConfig,
    mode: Mode,
    protocol_eps: Frac,
    warmup_left: u64,
    sites: Vec<HhSite>,
    coord: HhCoordinator,
    round: u64,
    resyncs: u64,
}

impl HhTracker {
    pub fn new(cfg: TrackerConfig, mode: Mode) -> Result<Self> {
        cfg.validate_hh()?;
        let protocol_eps = match mode {
            Mode::Exact => cfg.eps,
            Mode::Sketch => cfg.eps * Frac::new(3, 4),
        };
        let capacity = crate::config::ceil_frac(cfg.eps.recip(), 32, 1) as usize;
        let sites = (0..cfg.k).map(|_| HhSite::new(cfg.k, protocol_eps, mode, capacity)).collect();
        let mut t = HhTracker {
            cfg,
            mode,
            protocol_eps,
            warmup_left: cfg.warmup_len(),
            sites,
            coord: HhCoordinator::default(),
            round: 0,
            resyncs: 0,
        };
        if t.warmup_left == 0 {
            t.round = 1;
        }
        Ok(t)
    }

    pub fn coordinator(&self) -> &HhCoordinator {
        &self.coord
    }

    pub fn sites(&self) -> &[HhSite] {
        &self.sites
    }

    pub fn protocol_eps(&self) -> Frac {
        self.protocol_eps
    }

    pub fn resyncs(&self) -> u64 {
        self.resyncs
    }

    pub fn report(&self) -> Vec<u64> {
        self.coord.report(self.cfg.phi, self.cfg.eps)
    }

    fn true_total(&self) -> u64 {
        self.sites.iter().map(|s| s.local_total).sum()
    }

    fn start_protocol(&mut self, ledger: &mut CostLedger) -> Result<()> {
        let m = self.true_total();
        self.coord.total = m;
        ledger.record(Message::broadcast(MessageKind::BroadcastState, 1));
        for s in &mut self.sites {
            s.estimate = m;
            s.pending_total = 0;
        }
        ledger.snapshot_round(0)?;
        self.round = 1;
        Ok(())
    }

    fn resync(&mut self, ledger: &mut CostLedger) -> Result<()> {
        ledger.poll(1);
        let m = self.true_total();
        self.coord.total = m;
        self.coord.all_signals = 0;
        ledger.record(Message::broadcast(MessageKind::BroadcastState, 1));
        for s in &mut self.sites {
            s.estimate = m;
            s.pending_total = 0;
        }
        ledger.snapshot_round(self.round)?;
        self.round += 1;
        self.resyncs += 1;
        Ok(())
    }

    /// Allowed shortfall of `C.m_x` below `m_x`, as a fraction of `m`.
    fn item_slack(&self) -> Frac {
        let base = self.protocol_eps / 3;
        match self.mode {
            Mode::Exact => base,
            Mode::Sketch => base + self.cfg.eps / 32,
        }
    }
}

fn frac_le(lhs: u64, frac: Frac, m: u64) -> bool {
    (lhs as i128) * (*frac.denom() as i128) <= (*frac.numer() as i128) * (m as i128)
}

impl Tracker for HhTracker {
    fn as_any(&self) -> &dyn std::any::Any {
        self
    }

    fn kind(&self) -> TrackerKind {
        TrackerKind::HeavyHitters
    }

    fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    fn mode(&self) -> Mode {
        self.mode
    }

    fn round(&self) -> u64 {
        self.round
    }

    fn observe(&mut self, ev: &ArrivalEvent, ledger: &mut CostLedger) -> Result<()> {
        let x = ev.item;
        if self.warmup_left > 0 {
            self.sites[ev.site].absorb(x);
            ledger.record(Message::up(MessageKind::Forward, 2));
            self.coord.total += 1;
            self.coord.add_item(x, 1);
            self.warmup_left -= 1;
            if self.warmup_left == 0 {
                self.start_protocol(ledger)?;
            }
            return Ok(());
        }
        let signals = self.sites[ev.site].receive(x);
        for sig in signals {
            ledger.record(Message::up(sig.kind, 2));
            if self.coord.receive(sig, self.cfg.k)? == CoordinatorAction::Resync {
                self.resync(ledger)?;
            }
        }
        Ok(())
    }

    fn check_output(&self, oracle: &ExactOracle, seq: u64, out: &mut Vec<Violation>) {
        if oracle.is_empty() {
            return;
        }
        let (phi, eps) = (self.cfg.phi, self.cfg.eps);
        for (x, c) in oracle.at_least(phi) {
            if !self.coord.classify(x, phi, eps) {
                let m = oracle.len() as f64;
                out.push(Violation { seq, kind: ViolationKind::MissingHeavyHitter, magnitude: c as f64 / m });
            }
        }
        for x in self.report() {
            if oracle.is_forbidden(x, phi, eps) {
                let m = oracle.len() as f64;
                out.push(Violation {
                    seq,
                    kind: ViolationKind::ForbiddenHeavyHitter,
                    magnitude: oracle.count(x) as f64 / m,
                });
            }
        }
    }

    fn check_invariants(&self, oracle: &ExactOracle, last: &ArrivalEvent, out: &mut Vec<Violation>) {
        let m = oracle.len();
        let seq = last.seq;
        let cm = self.coord.total;
        if cm > m || !frac_le(m - cm, self.protocol_eps / 3, m) {
            out.push(Violation { seq, kind: ViolationKind::TotalCountBound, magnitude: m as f64 - cm as f64 });
        }
        let x = last.item;
        let (mx, cmx) = (oracle.count(x), self.coord.count(x));
        if cmx > mx || !frac_le(mx - cmx, self.item_slack(), m) {
            out.push(Violation { seq, kind: ViolationKind::ItemCountBound, magnitude: mx as f64 - cmx as f64 });
        }
        if self.warmup_left == 0 {
            let site = &self.sites[last.site];
            let thr = site.threshold();
            if self.sites.iter().any(|s| s.pending_total >= s.threshold()) || site.pending_item(x) >= thr {
                out.push(Violation { seq, kind: ViolationKind::Quiescence, magnitude: thr as f64 });
            }
            if self.mode == Mode::Exact && site.local_count(x) < site.pending_item(x) {
                out.push(Violation { seq, kind: ViolationKind::Quiescence, magnitude: 0.0 });
            }
        }
    }

    fn threshold_probe(&self) -> Option<&dyn ThresholdProbe> {
        Some(self)
    }
}

impl ThresholdProbe for HhTracker {
    fn remaining_to_trigger(&self, item: u64) -> Vec<u64> {
        self.sites.iter().map(|s| s.remaining_to_trigger(item)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_frac;

    fn f(s: &str) -> Frac {
        parse_frac(s).unwrap()
    }

    #[test]
    fn site_threshold_arithmetic() {
        let mut s = HhSite::new(2, f("0.3"), Mode::Exact, 0);
        s.estimate = 100;
        assert_eq!(s.threshold(), 5);
        for x in [1, 2, 3, 4] {
            assert!(s.receive(x).is_empty());
        }
        assert_eq!(s.receive(9), vec![Signal::all(5)]);
    }

    #[test]
    fn both_counters_cross_together() {
        let mut s = HhSite::new(2, f("0.3"), Mode::Exact, 0);
        s.estimate = 100;
        for _ in 0..4 {
            assert!(s.receive(7).is_empty());
        }
        assert_eq!(s.receive(7), vec![Signal::all(5), Signal::item(7, 5)]);
        assert_eq!(s.pending_total, 0);
        assert_eq!(s.pending_item(7), 0);
    }

    #[test]
    fn single_arrival_is_silent() {
        let mut s = HhSite::new(2, f("0.3"), Mode::Exact, 0);
        s.estimate = 100;
        assert!(s.receive(1).is_empty());
        assert_eq!(s.remaining_to_trigger(1), 4);
        assert_eq!(s.remaining_to_trigger(2), 4);
    }

    #[test]
    fn coordinator_rules() {
        let mut c = HhCoordinator { total: 100, ..Default::default() };
        assert_eq!(c.receive(Signal::all(5), 3).unwrap(), CoordinatorAction::None);
        assert_eq!(c.total, 105);
        c.add_item(4, 10);
        c.receive(Signal::item(4, 5), 3).unwrap();
        assert_eq!(c.count(4), 15);
        let bad = Signal { kind: MessageKind::ProbeReply, item: None, value: 1 };
        assert!(matches!(c.receive(bad, 3), Err(Error::UnexpectedMessage(_))));
        let item_without_id = Signal { kind: MessageKind::ItemSignal, item: None, value: 1 };
        assert!(c.receive(item_without_id, 3).is_err());
    }

    #[test]
    fn kth_signal_resynchronizes() {
        let cfg = TrackerConfig::parse(2, "0.3", "0.5", 10).unwrap();
        let mut t = HhTracker::new(cfg, Mode::Exact).unwrap();
        let mut ledger = CostLedger::new(2);
        let mut seq = 0;
        let mut feed = |t: &mut HhTracker, ledger: &mut CostLedger, site: usize| {
            seq += 1;
            t.observe(&ArrivalEvent::new(seq, site, 1), ledger).unwrap();
        };
        // warm-up: ⌈2/0.3⌉ = 7 arrivals
        for i in 0..7 {
            feed(&mut t, &mut ledger, i % 2);
        }
        assert_eq!(t.round(), 1);
        assert_eq!(t.coordinator().total, 7);
        while t.resyncs() == 0 {
            feed(&mut t, &mut ledger, 0);
            feed(&mut t, &mut ledger, 1);
        }
        let m = t.true_total();
        assert_eq!(t.coordinator().total, m);
        assert!(t.sites().iter().all(|s| s.estimate == m && s.pending_total == 0));
        assert_eq!(ledger.messages(MessageKind::AllSignal), 2);
    }

    #[test]
    fn classification_rule() {
        let c = |count, total| classify(count, total, f("0.1"), f("0.1"));
        assert!(c(200, 1000));
        assert!(!c(0, 1000));
        // boundary φ − ε/2 = 0.15 with φ = 0.2, ε = 0.1 is inclusive
        assert!(classify(150, 1000, f("0.2"), f("0.1")));
        assert!(!classify(149, 1000, f("0.2"), f("0.1")));
    }

    #[test]
    fn report_lists_only_heavy() {
        let mut c = HhCoordinator { total: 100, ..Default::default() };
        c.add_item(1, 40);
        c.add_item(2, 5);
        c.add_item(3, 20);
        assert_eq!(c.report(f("0.2"), f("0.1")), vec![1, 3]);
        let empty = HhCoordinator { total: 100, ..Default::default() };
        assert!(empty.report(f("0.2"), f("0.1")).is_empty());
    }

    #[test]
    fn sketch_site_reports_lower_bound_increments() {
        let mut s = HhSite::new(2, f("0.3"), Mode::Sketch, 4);
        s.estimate = 100;
        let mut item_signals = 0;
        for i in 0..50u64 {
            let x = if i % 2 == 0 { 1 } else { 10 + i };
            item_signals +=
                s.receive(x).iter().filter(|g| g.kind == MessageKind::ItemSignal && g.item == Some(1)).count();
        }
        assert_eq!(item_signals, 5);
        assert!(s.local_count(1) <= 25);
    }
}
