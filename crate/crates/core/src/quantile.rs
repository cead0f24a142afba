//! Single-quantile tracking.
//!
//! A round starts at size `m`. The coordinator cuts the key space into
//! intervals of roughly `3εm/16` items and keeps a tracked key `M`. Sites
//! report, in batches of `⌈εm/(8k)⌉`, arrivals per interval and arrivals
//! left or right of `M`. A crowded interval is split in two, a large weighted
//! drift moves `M` by probing separators, and a doubling of `|A|` starts a
//! new round.

use crate::config::{ceil_threshold, floor_frac, ge_frac, le_frac, Frac, Mode, TrackerConfig, TrackerKind};
use crate::error::{Error, Result};
use crate::ledger::{ArrivalEvent, CostLedger, Key, Message, MessageKind};
use crate::oracle::ExactOracle;
use crate::simulator::{Tracker, Violation, ViolationKind};
use crate::site::{merge_separators, new_local, LocalSummary};

const LEFT: usize = 0;
const RIGHT: usize = 1;

struct QSite {
    local: Box<dyn LocalSummary>,
    drift: [u64; 2],
    pending: Vec<u64>,
}

/// Per-round protocol activity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RoundActivity {
    pub relocations: u64,
    pub splits: u64,
    pub probes: u64,
}

pub struct QuantileTracker {
    cfg: TrackerConfig,
    mode: Mode,
    eps: Frac,
    warmup_left: u64,
    warm: Vec<Key>,
    sites: Vec<QSite>,
    round: u64,
    /// `m`, the size at round start.
    m: u64,
    seps: Vec<Key>,
    counts: Vec<u64>,
    median: Option<Key>,
    delta: [u64; 2],
    /// Exact `|A|`, `L` and `R` at the last relocation or round start.
    base: [u64; 3],
    activity: Vec<RoundActivity>,
    events: u64,
    /// Event count and interval range of the last structural change.
    fresh: Option<(u64, usize, usize)>,
}

impl QuantileTracker {
    pub fn new(cfg: TrackerConfig, mode: Mode) -> Result<Self> {
        cfg.validate()?;
        let eps = match mode {
            Mode::Exact => cfg.eps,
            Mode::Sketch => cfg.eps * Frac::new(3, 4),
        };
        let sketch_eps = cfg.eps_f64() / 32.0;
        let sites = (0..cfg.k)
            .map(|_| QSite { local: new_local(mode, cfg.u, sketch_eps), drift: [0; 2], pending: vec![0] })
            .collect();
        Ok(QuantileTracker {
            cfg,
            mode,
            eps,
            warmup_left: cfg.warmup_len(),
            warm: Vec::new(),
            sites,
            round: 0,
            m: 0,
            seps: Vec::new(),
            counts: vec![0],
            median: None,
            delta: [0; 2],
            base: [0; 3],
            activity: vec![RoundActivity::default()],
            events: 0,
            fresh: None,
        })
    }

    /// The tracked φ-quantile.
    pub fn quantile(&self) -> Option<u64> {
        self.tracked_key().map(|k| k.value)
    }

    fn tracked_key(&self) -> Option<Key> {
        if self.warmup_left > 0 || self.median.is_none() {
            if self.warm.is_empty() {
                return None;
            }
            let n = self.warm.len() as u64;
            let r = floor_frac(self.cfg.phi, n, 1).min(n - 1);
            return Some(self.warm[r as usize]);
        }
        self.median
    }

    pub fn separators(&self) -> &[Key] {
        &self.seps
    }

    pub fn interval_counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn round_start_size(&self) -> u64 {
        self.m
    }

    /// Activity per round, indexed by round number.
    pub fn activity(&self) -> &[RoundActivity] {
        &self.activity
    }

    /// The batch size of drift and interval updates.
    pub fn threshold(&self) -> u64 {
        ceil_threshold(self.eps, self.m, 8 * self.cfg.k as u64)
    }

    fn interval_of(&self, key: Key) -> usize {
        self.seps.partition_point(|s| *s <= key)
    }

    fn bounds(&self, i: usize) -> (Option<Key>, Option<Key>) {
        let lo = if i == 0 { None } else { Some(self.seps[i - 1]) };
        (lo, self.seps.get(i).copied())
    }

    fn total(&self) -> u64 {
        self.sites.iter().map(|s| s.local.len()).sum()
    }

    fn global_rank(&self, key: Key) -> u64 {
        self.sites.iter().map(|s| s.local.rank(key)).sum()
    }

    /// `|b·r − a·N|` where `φ = a/b`: the scaled distance of rank `r` from
    /// the target rank `φN`.
    fn target_gap(&self, r: u64, n: u64) -> i128 {
        let (a, b) = (*self.cfg.phi.numer() as i128, *self.cfg.phi.denom() as i128);
        (b * r as i128 - a * n as i128).abs()
    }

    /// Whether a scaled gap is within `ε·m·scale/4`.
    fn gap_within(&self, gap: i128, quarters: i128) -> bool {
        let b = *self.cfg.phi.denom() as i128;
        le_frac(4 * gap, self.eps, quarters * self.m as i128 * b)
    }

    fn activity_mut(&mut self) -> &mut RoundActivity {
        let r = self.round as usize;
        if self.activity.len() <= r {
            self.activity.resize(r + 1, RoundActivity::default());
        }
        &mut self.activity[r]
    }

    fn build_round(&mut self, ledger: &mut CostLedger) {
        ledger.record(Message::broadcast(MessageKind::PollRequest, 1));
        let mut per_site = Vec::with_capacity(self.sites.len());
        let mut w = 0u64;
        for s in &self.sites {
            let a = s.local.len();
            let spacing = floor_frac(self.eps, a, 32).max(1);
            let seps = s.local.separators(None, None, spacing);
            ledger.record(Message::up(MessageKind::PollReply, 3 * seps.len() as u64 + 1));
            per_site.push(seps);
            w += a;
        }
        let merged = merge_separators(&per_site);
        let q = floor_frac(self.eps.recip(), 16, 3).max(1);
        let mut cuts: Vec<Key> = Vec::new();
        let mut target = 1u64;
        for &(y, cum) in &merged {
            while target < q && cum as u128 * q as u128 >= target as u128 * w as u128 {
                if cuts.last() != Some(&y) {
                    cuts.push(y);
                }
                target += 1;
            }
        }
        if cuts.is_empty() {
            if let Some(&(y, _)) = merged.first() {
                cuts.push(y);
            }
        }
        ledger.record(Message::broadcast(MessageKind::BroadcastState, 2 * cuts.len() as u64));
        self.seps = cuts;
        let intervals = self.seps.len() + 1;
        self.counts = vec![0; intervals];
        for j in 0..self.sites.len() {
            let mut prev = 0;
            for i in 0..intervals {
                let r = match self.seps.get(i) {
                    Some(&y) => self.sites[j].local.rank(y),
                    None => self.sites[j].local.len(),
                };
                self.counts[i] += r.saturating_sub(prev);
                prev = r.max(prev);
            }
            ledger.record(Message::up(MessageKind::PollReply, intervals as u64));
            let s = &mut self.sites[j];
            s.pending = vec![0; intervals];
            s.drift = [0; 2];
        }
        self.m = w;
        // choose M among the separators by exact rank
        let mut rank = 0u64;
        let mut best: Option<(i128, Key, u64)> = None;
        for (i, &y) in self.seps.iter().enumerate() {
            rank += self.counts[i];
            let g = self.target_gap(rank, w);
            if best.is_none_or(|(bg, _, _)| g < bg) {
                best = Some((g, y, rank));
            }
        }
        ledger.record(Message::broadcast(MessageKind::BroadcastState, 2));
        match best {
            Some((_, y, r)) => {
                self.median = Some(y);
                self.base = [w, r, w - r];
            }
            None => {
                self.median = None;
                self.base = [w, 0, w];
            }
        }
        self.delta = [0; 2];
        self.fresh = Some((self.events, 0, intervals));
    }

    fn new_round(&mut self, ledger: &mut CostLedger) -> Result<()> {
        ledger.snapshot_round(self.round)?;
        self.round += 1;
        self.activity_mut();
        self.build_round(ledger);
        Ok(())
    }

    fn split(&mut self, i: usize, ledger: &mut CostLedger) {
        let k = self.cfg.k as u64;
        let (lo, hi) = self.bounds(i);
        let spacing = floor_frac(self.eps, self.m, 64 * k).max(1);
        ledger.record(Message::broadcast(MessageKind::PollRequest, 1));
        let mut per_site = Vec::with_capacity(self.sites.len());
        let mut w = 0u64;
        for s in &self.sites {
            let seps = s.local.separators(lo, hi, spacing);
            ledger.record(Message::up(MessageKind::PollReply, 3 * seps.len() as u64 + 1));
            per_site.push(seps);
            w += s.local.count_between(lo, hi);
        }
        let merged = merge_separators(&per_site);
        let Some(cut) = merged.iter().find_map(|&(y, cum)| (2 * cum >= w).then_some(y)) else {
            return;
        };
        ledger.record(Message::broadcast(MessageKind::BroadcastState, 2));
        let mut left = 0;
        for s in &mut self.sites {
            left += s.local.count_between(lo, Some(cut));
            ledger.record(Message::up(MessageKind::PollReply, 1));
            s.pending.splice(i..=i, [0, 0]);
        }
        self.seps.insert(i, cut);
        self.counts.splice(i..=i, [left, w - left]);
        self.fresh = Some((self.events, i, i + 2));
        self.activity_mut().splits += 1;
    }

    fn relocate(&mut self, ledger: &mut CostLedger) -> Result<()> {
        let Some(m_key) = self.median else {
            return Ok(());
        };
        ledger.poll(2);
        let n = self.total();
        let l = self.global_rank(m_key);
        let mut best = (self.target_gap(l, n), m_key, l);
        if !self.gap_within(best.0, 1) {
            let (a, b) = (*self.cfg.phi.numer() as i128, *self.cfg.phi.denom() as i128);
            let rightward = a * n as i128 > b * l as i128;
            let candidates: Vec<Key> = if rightward {
                self.seps.iter().copied().filter(|y| *y > m_key).collect()
            } else {
                self.seps.iter().rev().copied().filter(|y| *y < m_key).collect()
            };
            for y in candidates {
                ledger.probe(2, 1);
                self.activity_mut().probes += 1;
                let r = self.global_rank(y);
                let g = self.target_gap(r, n);
                if g < best.0 {
                    best = (g, y, r);
                }
                let overshot = if rightward { b * r as i128 >= a * n as i128 } else { b * r as i128 <= a * n as i128 };
                if self.gap_within(g, 1) || overshot {
                    break;
                }
            }
            if !self.gap_within(best.0, 2) {
                return Err(Error::Protocol(format!(
                    "no separator within reach of the target rank (round {}, |A| = {n})",
                    self.round
                )));
            }
        }
        let (_, key, r) = best;
        ledger.record(Message::broadcast(MessageKind::BroadcastState, 2));
        self.median = Some(key);
        self.delta = [0; 2];
        self.base = [n, r, n - r];
        for s in &mut self.sites {
            s.drift = [0; 2];
        }
        self.activity_mut().relocations += 1;
        Ok(())
    }

    /// `|(1−φ)·C.Δ(L) − φ·C.Δ(R)| ≥ εm/4`
    fn drift_triggered(&self) -> bool {
        let (a, b) = (*self.cfg.phi.numer() as i128, *self.cfg.phi.denom() as i128);
        let weighted = ((b - a) * self.delta[LEFT] as i128 - a * self.delta[RIGHT] as i128).abs();
        ge_frac(4 * weighted, self.eps, self.m as i128 * b)
    }

    fn end_warmup(&mut self, ledger: &mut CostLedger) -> Result<()> {
        ledger.snapshot_round(0)?;
        self.round = 1;
        self.activity_mut();
        self.build_round(ledger);
        Ok(())
    }

    fn check_intervals(
        &self,
        oracle: &ExactOracle,
        seq: u64,
        ids: std::ops::Range<usize>,
        cap_quarters: i128,
        out: &mut Vec<Violation>,
    ) {
        let k = self.cfg.k as i128;
        let m = self.m as i128;
        let thr = self.threshold() as i128;
        for i in ids {
            let (lo, hi) = self.bounds(i);
            let truth = oracle.count_between(lo, hi) as i128;
            // integer batching adds up to k items of slack either way
            let too_small = !ge_frac(8 * (truth + k), self.eps, m);
            let too_big = !le_frac(4 * (truth - k), self.eps, cap_quarters * m);
            if too_small || too_big {
                out.push(Violation { seq, kind: ViolationKind::IntervalSize, magnitude: truth as f64 });
            }
            let c = self.counts[i] as i128;
            if c > truth || truth - c > k * (thr - 1) {
                out.push(Violation { seq, kind: ViolationKind::IntervalCount, magnitude: (truth - c) as f64 });
            }
        }
    }
}

impl Tracker for QuantileTracker {
    fn as_any(&self) -> &dyn std::any::Any {
        self
    }

    fn kind(&self) -> TrackerKind {
        TrackerKind::Quantile
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
        let key = ev.key();
        self.events += 1;
        if self.warmup_left > 0 {
            self.sites[ev.site].local.insert(key);
            ledger.record(Message::up(MessageKind::Forward, 2));
            let pos = self.warm.partition_point(|w| *w < key);
            self.warm.insert(pos, key);
            self.warmup_left -= 1;
            if self.warmup_left == 0 {
                self.end_warmup(ledger)?;
            }
            return Ok(());
        }
        let thr = self.threshold();
        let i = self.interval_of(key);
        let side = match self.median {
            Some(m) if key < m => LEFT,
            _ => RIGHT,
        };
        let site = &mut self.sites[ev.site];
        site.local.insert(key);
        site.pending[i] += 1;
        let interval_update = site.pending[i] >= thr;
        if interval_update {
            site.pending[i] = 0;
        }
        site.drift[side] += 1;
        let drift_update = site.drift[side] >= thr;
        if drift_update {
            site.drift[side] = 0;
        }

        if interval_update {
            ledger.record(Message::up(MessageKind::IntervalUpdate, 2));
            self.counts[i] += thr;
            let c = self.counts[i];
            if c >= 2 && ge_frac(16 * c as i128, self.eps * 5, self.m as i128) {
                self.split(i, ledger);
            }
        }
        if drift_update {
            ledger.record(Message::up(MessageKind::DriftUpdate, 2));
            self.delta[side] += thr;
            let estimate = self.base[0] + self.delta[LEFT] + self.delta[RIGHT];
            if estimate >= 2 * self.m {
                self.new_round(ledger)?;
            } else if self.drift_triggered() {
                self.relocate(ledger)?;
            }
        }
        Ok(())
    }

    fn check_output(&self, oracle: &ExactOracle, seq: u64, out: &mut Vec<Violation>) {
        if oracle.is_empty() {
            return;
        }
        match self.quantile() {
            Some(x) if oracle.is_admissible_quantile(x, self.cfg.phi, self.cfg.eps) => {}
            Some(x) => out.push(Violation {
                seq,
                kind: ViolationKind::QuantileRank,
                magnitude: oracle.rank_error(oracle.rank_value(x), self.cfg.phi) / oracle.len() as f64,
            }),
            None => out.push(Violation { seq, kind: ViolationKind::QuantileRank, magnitude: f64::NAN }),
        }
    }

    fn check_invariants(&self, oracle: &ExactOracle, last: &ArrivalEvent, out: &mut Vec<Violation>) {
        let seq = last.seq;
        if self.warmup_left > 0 {
            return;
        }
        if let Some(key) = self.tracked_key() {
            let r = oracle.rank(key);
            if !oracle.rank_within(r, self.cfg.phi, self.cfg.eps) {
                out.push(Violation {
                    seq,
                    kind: ViolationKind::QuantileRank,
                    magnitude: oracle.rank_error(r, self.cfg.phi) / oracle.len() as f64,
                });
            }
        }
        if self.mode != Mode::Exact {
            return;
        }
        let i = self.interval_of(last.key());
        self.check_intervals(oracle, seq, i..i + 1, 2, out);
        if let Some((at, a, b)) = self.fresh {
            if at == self.events {
                self.check_intervals(oracle, seq, a..b, 1, out);
            }
        }
        if let Some(m_key) = self.median {
            let k = self.cfg.k as u64;
            let slack = k * (self.threshold() - 1);
            let left = oracle.rank(m_key);
            let right = oracle.len() - left;
            for (side, truth) in
                [(LEFT, left.saturating_sub(self.base[1])), (RIGHT, right.saturating_sub(self.base[2]))]
            {
                let c = self.delta[side];
                if c > truth || truth - c > slack {
                    out.push(Violation { seq, kind: ViolationKind::DriftCount, magnitude: truth as f64 - c as f64 });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tracker(k: usize, eps: &str, phi: &str) -> QuantileTracker {
        QuantileTracker::new(TrackerConfig::parse(k, eps, phi, 1000).unwrap(), Mode::Exact).unwrap()
    }

    #[test]
    fn batch_threshold_example() {
        let mut t = tracker(2, "0.1", "0.5");
        t.m = 1600;
        // ⌈0.1·1600/16⌉
        assert_eq!(t.threshold(), 10);
        t.m = 3;
        assert_eq!(t.threshold(), 1);
    }

    #[test]
    fn drift_trigger_arithmetic() {
        let mut t = tracker(2, "0.1", "0.5");
        t.m = 1000;
        t.delta = [60, 10];
        assert!(t.drift_triggered());
        t.delta = [59, 10];
        assert!(!t.drift_triggered());
        t.delta = [700, 700];
        assert!(!t.drift_triggered());
    }

    #[test]
    fn weighted_drift_for_skewed_phi() {
        let mut t = tracker(2, "0.1", "0.9");
        t.m = 1000;
        // target rank moves 0.9 per arrival: 0.1·ΔL − 0.9·ΔR
        t.delta = [250, 0];
        assert!(t.drift_triggered());
        t.delta = [0, 28];
        assert!(t.drift_triggered());
        t.delta = [90, 10];
        assert!(!t.drift_triggered());
    }

    #[test]
    fn identical_values_are_ordered_by_arrival() {
        let mut t = tracker(3, "0.1", "0.5");
        let mut ledger = CostLedger::new(3);
        for seq in 1..=5000 {
            t.observe(&ArrivalEvent::new(seq, seq as usize % 3, 42), &mut ledger).unwrap();
        }
        assert_eq!(t.quantile(), Some(42));
        assert!(t.separators().windows(2).all(|w| w[0] < w[1]));
        assert!(t.separators().iter().all(|s| s.value == 42));
    }

    #[test]
    fn round_start_intervals_cover_everything() {
        let mut t = tracker(2, "0.1", "0.5");
        let mut ledger = CostLedger::new(2);
        for seq in 1..=20 {
            t.observe(&ArrivalEvent::new(seq, 0, 1 + (seq * 37) % 1000), &mut ledger).unwrap();
        }
        assert_eq!(t.round(), 1);
        assert_eq!(t.round_start_size(), 20);
        assert_eq!(t.interval_counts().iter().sum::<u64>(), 20);
        assert_eq!(t.interval_counts().len(), t.separators().len() + 1);
    }
}
