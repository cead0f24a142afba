//! All-quantiles tracking with a binary tree over the key space.
//!
//! Every node `u` owns an interval `I_u` and a partial sum `s_u` that lags
//! `|A ∩ I_u|` by less than `θm`, where `θ = ε/(2h)` and
//! `h = ⌈log_{8/5}(2/ε)⌉`. Sites report each node's growth in batches of
//! `⌈θm/k⌉`. A node whose children drift outside `[s_u/4, 3s_u/4]` is rebuilt
//! from fresh separators, a crowded leaf is split, a path longer than `h` is
//! rebuilt at its lowest ancestor that fits, and a doubling of the root's sum
//! starts a new round.

use std::fmt::Write as _;

use crate::config::{ceil_threshold, floor_frac, ge_frac, le_frac, Frac, Mode, TrackerConfig, TrackerKind};
use crate::error::{Error, Result};
use crate::ledger::{ArrivalEvent, CostLedger, Key, Message, MessageKind};
use crate::oracle::ExactOracle;
use crate::simulator::{Tracker, Violation, ViolationKind};
use crate::site::{merge_separators, ExactLocal, LocalSummary};

/// `⌈log_{8/5}(2/ε)⌉`, computed exactly.
pub fn height_bound(eps: Frac) -> u32 {
    let (en, ed) = (*eps.numer() as u128, *eps.denom() as u128);
    let mut h = 0u32;
    let (mut eight, mut five) = (1u128, 1u128);
    // smallest h with (8/5)^h · ε ≥ 2
    while eight * en < 2 * five * ed {
        h += 1;
        eight *= 8;
        five *= 5;
    }
    h.max(1)
}

#[derive(Debug, Clone)]
struct Node {
    lo: Option<Key>,
    hi: Option<Key>,
    split: Option<Key>,
    children: Option<(usize, usize)>,
    s: u64,
    depth: u32,
}

/// One rebuild, for growth diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RebuildRecord {
    pub round: u64,
    pub lo: Option<Key>,
    pub hi: Option<Key>,
    pub depth: u32,
    /// Exact content of the rebuilt interval.
    pub content: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TreeActivity {
    pub updates: u64,
    pub rebuilds: u64,
    pub leaf_splits: u64,
    /// Rebuilds forced by depth alone; also counted in `rebuilds`.
    pub depth_rebuilds: u64,
}

pub struct AllQuantilesTracker {
    cfg: TrackerConfig,
    h: u32,
    /// `θ = ε/(2h)`
    theta: Frac,
    warmup_left: u64,
    warm: Vec<Key>,
    sites: Vec<ExactLocal>,
    pending: Vec<Vec<u64>>,
    nodes: Vec<Node>,
    free: Vec<usize>,
    root: Option<usize>,
    round: u64,
    m: u64,
    activity: Vec<TreeActivity>,
    rebuilds: Vec<RebuildRecord>,
    events: u64,
    structural_at: Option<u64>,
}

impl AllQuantilesTracker {
    pub fn new(cfg: TrackerConfig, mode: Mode) -> Result<Self> {
        cfg.validate()?;
        if mode != Mode::Exact {
            return Err(Error::Config("the all-quantiles tracker runs on exact local counts only".into()));
        }
        let h = height_bound(cfg.eps);
        Ok(AllQuantilesTracker {
            cfg,
            h,
            theta: cfg.eps / (2 * h as i64),
            warmup_left: cfg.warmup_len(),
            warm: Vec::new(),
            sites: (0..cfg.k).map(|_| ExactLocal::new(cfg.u)).collect(),
            pending: vec![Vec::new(); cfg.k],
            nodes: Vec::new(),
            free: Vec::new(),
            root: None,
            round: 0,
            m: 0,
            activity: vec![TreeActivity::default()],
            rebuilds: Vec::new(),
            events: 0,
            structural_at: None,
        })
    }

    pub fn height_bound(&self) -> u32 {
        self.h
    }

    pub fn theta(&self) -> Frac {
        self.theta
    }

    pub fn round_start_size(&self) -> u64 {
        self.m
    }

    /// `⌈θm/k⌉`
    pub fn threshold(&self) -> u64 {
        ceil_threshold(self.theta, self.m, self.cfg.k as u64)
    }

    pub fn activity(&self) -> &[TreeActivity] {
        &self.activity
    }

    pub fn rebuild_log(&self) -> &[RebuildRecord] {
        &self.rebuilds
    }

    /// Estimated `|A|`: the root's partial sum, exact during warm-up.
    pub fn size_estimate(&self) -> u64 {
        match self.root {
            Some(r) if self.warmup_left == 0 => self.nodes[r].s,
            _ => self.warm.len() as u64,
        }
    }

    fn alloc(&mut self, node: Node) -> usize {
        let id = match self.free.pop() {
            Some(id) => {
                self.nodes[id] = node;
                id
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        };
        for p in &mut self.pending {
            if p.len() <= id {
                p.resize(id + 1, 0);
            }
            p[id] = 0;
        }
        id
    }

    fn release_below(&mut self, u: usize) {
        let mut stack: Vec<usize> = self.nodes[u].children.into_iter().flat_map(|(a, b)| [a, b]).collect();
        while let Some(v) = stack.pop() {
            if let Some((a, b)) = self.nodes[v].children {
                stack.push(a);
                stack.push(b);
            }
            self.free.push(v);
        }
        self.nodes[u].children = None;
        self.nodes[u].split = None;
    }

    fn live_nodes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.root.into_iter().collect();
        while let Some(u) = stack.pop() {
            out.push(u);
            if let Some((a, b)) = self.nodes[u].children {
                stack.push(b);
                stack.push(a);
            }
        }
        out
    }

    /// Root-to-leaf node ids for `key`.
    fn path(&self, key: Key) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.h as usize + 4);
        let mut cur = self.root;
        while let Some(u) = cur {
            out.push(u);
            cur = match (self.nodes[u].children, self.nodes[u].split) {
                (Some((a, _)), Some(x)) if key < x => Some(a),
                (Some((_, b)), Some(_)) => Some(b),
                _ => None,
            };
        }
        out
    }

    pub fn depth(&self) -> u32 {
        self.live_nodes().into_iter().map(|u| self.nodes[u].depth).max().unwrap_or(0)
    }

    pub fn leaf_count(&self) -> usize {
        self.live_nodes().into_iter().filter(|&u| self.nodes[u].children.is_none()).count()
    }

    /// Sum of left-sibling partial sums along the path of `key`: an
    /// underestimate of the number of keys below it.
    pub fn rank_key(&self, key: Key) -> u64 {
        if self.warmup_left > 0 || self.root.is_none() {
            return self.warm.partition_point(|w| *w < key) as u64;
        }
        let mut sum = 0;
        let mut cur = self.root;
        while let Some(u) = cur {
            cur = match (self.nodes[u].children, self.nodes[u].split) {
                (Some((a, _)), Some(x)) if key < x => Some(a),
                (Some((a, b)), Some(_)) => {
                    sum += self.nodes[a].s;
                    Some(b)
                }
                _ => None,
            };
        }
        sum
    }

    /// Estimated number of items with value below `x`.
    pub fn rank(&self, x: u64) -> Result<u64> {
        if x == 0 || x > self.cfg.u.saturating_add(1) {
            return Err(Error::OutOfUniverse { item: x, universe: self.cfg.u });
        }
        Ok(self.rank_key(Key::floor(x)))
    }

    /// An approximate φ-quantile: the left separator of the leaf holding
    /// target rank `φ·N̂`.
    pub fn quantile(&self, phi: Frac) -> Option<u64> {
        if self.warmup_left > 0 || self.root.is_none() {
            if self.warm.is_empty() {
                return None;
            }
            let n = self.warm.len() as u64;
            let r = floor_frac(phi, n, 1).min(n - 1);
            return Some(self.warm[r as usize].value);
        }
        let root = self.root?;
        let mut target = floor_frac(phi, self.nodes[root].s, 1);
        let mut u = root;
        while let (Some((a, b)), Some(_)) = (self.nodes[u].children, self.nodes[u].split) {
            let left = self.nodes[a].s;
            if target < left {
                u = a;
            } else {
                target -= left;
                u = b;
            }
        }
        Some(self.nodes[u].lo.map_or(1, |k| k.value))
    }

    /// Items whose estimated frequency reaches `(φ−ε)·N̂`, drawn from the
    /// splitter values.
    pub fn heavy_hitters(&self, phi: Frac) -> Vec<u64> {
        let n_hat = self.size_estimate();
        let cut = phi - self.cfg.eps;
        let mut candidates: Vec<u64> = if self.warmup_left > 0 || self.root.is_none() {
            self.warm.iter().map(|k| k.value).collect()
        } else {
            self.live_nodes().into_iter().filter_map(|u| self.nodes[u].split.map(|k| k.value)).collect()
        };
        candidates.sort_unstable();
        candidates.dedup();
        candidates
            .into_iter()
            .filter(|&x| {
                let est = self.rank_key(Key::floor(x + 1)).saturating_sub(self.rank_key(Key::floor(x)));
                est > 0 && ge_frac(est as i128, cut, n_hat as i128)
            })
            .collect()
    }

    /// Preorder lines `depth lo hi splitter s_u`.
    pub fn dump(&self) -> String {
        let fmt_key = |k: Option<Key>, none: &str| k.map_or(none.to_string(), |k| format!("{}:{}", k.value, k.seq));
        let mut out = String::new();
        for u in self.live_nodes() {
            let n = &self.nodes[u];
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                n.depth,
                fmt_key(n.lo, "-inf"),
                fmt_key(n.hi, "+inf"),
                fmt_key(n.split, "-"),
                n.s
            );
        }
        out
    }

    fn activity_mut(&mut self) -> &mut TreeActivity {
        let r = self.round as usize;
        if self.activity.len() <= r {
            self.activity.resize(r + 1, TreeActivity::default());
        }
        &mut self.activity[r]
    }

    /// Largest estimated content a freshly built leaf may hold, `5εm/16`.
    fn leaf_target(&self, content: u64) -> bool {
        le_frac(16 * content as i128, self.cfg.eps * 5, self.m as i128)
    }

    /// Builds the subtree of `u` from separators collected at `spacing(j)`
    /// per site, then collects exact counts for every node created.
    fn build(&mut self, u: usize, ledger: &mut CostLedger, spacing: &dyn Fn(u64) -> u64) {
        let (lo, hi, depth) = (self.nodes[u].lo, self.nodes[u].hi, self.nodes[u].depth);
        ledger.record(Message::broadcast(MessageKind::PollRequest, 2));
        let mut per_site = Vec::with_capacity(self.sites.len());
        let mut w = 0;
        for s in &self.sites {
            let c = s.count_between(lo, hi);
            let seps = s.separators(lo, hi, spacing(s.len()));
            ledger.record(Message::up(MessageKind::PollReply, 3 * seps.len() as u64 + 1));
            per_site.push(seps);
            w += c;
        }
        let merged = merge_separators(&per_site);
        // estimated keys of the range strictly below merged[i]
        let below: Vec<u64> = merged.iter().map(|&(_, cum)| cum.saturating_sub(1).min(w)).collect();

        self.release_below(u);
        let mut created = vec![u];
        let mut stack = vec![(u, 0usize, merged.len(), 0u64, w, depth)];
        while let Some((node, a, b, from, to, d)) = stack.pop() {
            let content = to.saturating_sub(from);
            if self.leaf_target(content) || a >= b {
                continue;
            }
            let mid2 = from + to;
            let pick =
                (a..b).filter(|&i| below[i] > from && below[i] < to).min_by_key(|&i| (2 * below[i]).abs_diff(mid2));
            let Some(i) = pick else { continue };
            let x = merged[i].0;
            let (nlo, nhi) = (self.nodes[node].lo, self.nodes[node].hi);
            let left = self.alloc(Node { lo: nlo, hi: Some(x), split: None, children: None, s: 0, depth: d + 1 });
            let right = self.alloc(Node { lo: Some(x), hi: nhi, split: None, children: None, s: 0, depth: d + 1 });
            self.nodes[node].split = Some(x);
            self.nodes[node].children = Some((left, right));
            created.push(left);
            created.push(right);
            stack.push((left, a, i, from, below[i], d + 1));
            stack.push((right, i + 1, b, below[i], to, d + 1));
        }
        let splitters = created.iter().filter(|&&v| self.nodes[v].split.is_some()).count() as u64;
        ledger.record(Message::broadcast(MessageKind::BroadcastState, 2 * splitters.max(1)));
        for &v in &created {
            self.nodes[v].s = 0;
        }
        for j in 0..self.sites.len() {
            for &v in &created {
                let (vlo, vhi) = (self.nodes[v].lo, self.nodes[v].hi);
                self.nodes[v].s += self.sites[j].count_between(vlo, vhi);
                self.pending[j][v] = 0;
            }
            ledger.record(Message::up(MessageKind::PollReply, created.len() as u64));
        }
        self.structural_at = Some(self.events);
    }

    fn new_round(&mut self, ledger: &mut CostLedger, first: bool) -> Result<()> {
        if !first {
            ledger.snapshot_round(self.round)?;
            self.round += 1;
        }
        self.activity_mut();
        self.m = self.sites.iter().map(|s| s.len()).sum();
        self.nodes.clear();
        self.free.clear();
        for p in &mut self.pending {
            p.clear();
        }
        let root = self.alloc(Node { lo: None, hi: None, split: None, children: None, s: 0, depth: 0 });
        self.root = Some(root);
        let eps = self.cfg.eps;
        self.build(root, ledger, &|a| floor_frac(eps, a, 32).max(1));
        Ok(())
    }

    fn restricted_spacing(&self) -> u64 {
        floor_frac(self.cfg.eps, self.m, 32 * self.cfg.k as u64).max(1)
    }

    fn rebuild(&mut self, u: usize, ledger: &mut CostLedger) {
        let sp = self.restricted_spacing();
        self.build(u, ledger, &|_| sp);
        let n = &self.nodes[u];
        self.rebuilds.push(RebuildRecord { round: self.round, lo: n.lo, hi: n.hi, depth: n.depth, content: n.s });
        self.activity_mut().rebuilds += 1;
    }

    fn split_leaf(&mut self, v: usize, ledger: &mut CostLedger) {
        let sp = self.restricted_spacing();
        self.build(v, ledger, &|_| sp);
        self.activity_mut().leaf_splits += 1;
    }

    fn violates_balance(&self, u: usize) -> bool {
        let Some((a, b)) = self.nodes[u].children else {
            return false;
        };
        let su = self.nodes[u].s;
        [a, b].iter().any(|&v| {
            let sv = self.nodes[v].s;
            4 * sv < su || 4 * sv > 3 * su
        })
    }

    /// `s_v > (ε/2 − θ)·m`
    fn leaf_overfull(&self, v: usize) -> bool {
        let s = self.nodes[v].s;
        s >= 2 && !le_frac(2 * s as i128, self.cfg.eps - self.theta * 2, self.m as i128)
    }

    fn maintain(&mut self, key: Key, ledger: &mut CostLedger) {
        let mut rebuilt: Vec<usize> = Vec::new();
        let mut split_tried = false;
        loop {
            let path = self.path(key);
            if let Some(&u) = path.iter().find(|&&u| self.violates_balance(u)) {
                if rebuilt.contains(&u) {
                    return;
                }
                rebuilt.push(u);
                self.rebuild(u, ledger);
                continue;
            }
            let leaf = *path.last().expect("path is never empty");
            if !split_tried && self.leaf_overfull(leaf) {
                split_tried = true;
                self.split_leaf(leaf, ledger);
                continue;
            }
            if rebuilt.is_empty() && !split_tried {
                return;
            }
            let deep = self.deepest_path();
            if deep.len() as u32 <= self.h + 1 {
                return;
            }
            // rebuild the lowest ancestor whose fresh subtree fits under h
            let pick = deep
                .iter()
                .rev()
                .copied()
                .filter(|u| !rebuilt.contains(u))
                .find(|&u| self.nodes[u].depth + self.fresh_height(self.nodes[u].s) <= self.h)
                .or_else(|| deep.first().copied().filter(|r| !rebuilt.contains(r)));
            let Some(u) = pick else { return };
            rebuilt.push(u);
            self.rebuild(u, ledger);
            self.activity_mut().depth_rebuilds += 1;
        }
    }

    /// Levels a fresh build over `content` keys is expected to need.
    fn fresh_height(&self, content: u64) -> u32 {
        let cap = self.cfg.eps_f64() * 5.0 / 16.0 * self.m as f64;
        let mut c = content as f64;
        let mut t = 0;
        while c > cap {
            c *= 9.0 / 16.0;
            t += 1;
        }
        t
    }

    /// Node ids from the root to a deepest leaf.
    fn deepest_path(&self) -> Vec<usize> {
        let mut best: Vec<usize> = Vec::new();
        let mut stack: Vec<(usize, usize)> = self.root.into_iter().map(|r| (r, 0)).collect();
        let mut cur: Vec<usize> = Vec::new();
        while let Some((u, d)) = stack.pop() {
            cur.truncate(d);
            cur.push(u);
            match self.nodes[u].children {
                Some((a, b)) => {
                    stack.push((b, d + 1));
                    stack.push((a, d + 1));
                }
                None if cur.len() > best.len() => best = cur.clone(),
                None => {}
            }
        }
        best
    }

    fn check_node(&self, oracle: &ExactOracle, seq: u64, u: usize, out: &mut Vec<Violation>) {
        let n = &self.nodes[u];
        let truth = oracle.count_between(n.lo, n.hi);
        let slack = self.cfg.k as u64 * (self.threshold() - 1);
        if n.s > truth || truth - n.s > slack {
            out.push(Violation { seq, kind: ViolationKind::PartialSum, magnitude: truth as f64 - n.s as f64 });
        }
        if n.children.is_none() {
            // batching adds up to k items beyond εm/2
            let cap_ok = le_frac(2 * (truth as i128 - self.cfg.k as i128), self.cfg.eps, self.m as i128);
            if !cap_ok {
                out.push(Violation { seq, kind: ViolationKind::LeafSize, magnitude: truth as f64 });
            }
        }
    }
}

impl Tracker for AllQuantilesTracker {
    fn as_any(&self) -> &dyn std::any::Any {
        self
    }

    fn kind(&self) -> TrackerKind {
        TrackerKind::AllQuantiles
    }

    fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    fn mode(&self) -> Mode {
        Mode::Exact
    }

    fn round(&self) -> u64 {
        self.round
    }

    fn observe(&mut self, ev: &ArrivalEvent, ledger: &mut CostLedger) -> Result<()> {
        let key = ev.key();
        self.events += 1;
        self.sites[ev.site].insert(key);
        if self.warmup_left > 0 {
            ledger.record(Message::up(MessageKind::Forward, 2));
            let pos = self.warm.partition_point(|w| *w < key);
            self.warm.insert(pos, key);
            self.warmup_left -= 1;
            if self.warmup_left == 0 {
                ledger.snapshot_round(0)?;
                self.round = 1;
                self.new_round(ledger, true)?;
            }
            return Ok(());
        }
        let thr = self.threshold();
        let mut updates = 0;
        for u in self.path(key) {
            let p = &mut self.pending[ev.site][u];
            *p += 1;
            if *p >= thr {
                *p = 0;
                ledger.record(Message::up(MessageKind::IntervalUpdate, 2));
                self.nodes[u].s += thr;
                updates += 1;
            }
        }
        if updates == 0 {
            return Ok(());
        }
        self.activity_mut().updates += updates;
        let root = self.root.expect("initialized after warm-up");
        if self.nodes[root].s >= 2 * self.m {
            return self.new_round(ledger, false);
        }
        self.maintain(key, ledger);
        Ok(())
    }

    fn check_output(&self, oracle: &ExactOracle, seq: u64, out: &mut Vec<Violation>) {
        let n = oracle.len();
        if n == 0 {
            return;
        }
        let eps = self.cfg.eps;
        for i in 0..=20 {
            let phi = Frac::new(i, 20);
            match self.quantile(phi) {
                Some(x) if oracle.is_admissible_quantile(x, phi, eps) => {}
                Some(x) => out.push(Violation {
                    seq,
                    kind: ViolationKind::QuantileRank,
                    magnitude: oracle.rank_error(oracle.rank_value(x), phi) / n as f64,
                }),
                None => out.push(Violation { seq, kind: ViolationKind::QuantileRank, magnitude: f64::NAN }),
            }
        }
        let u = self.cfg.u;
        for i in 0..=16u64 {
            let x = 1 + (u as u128 * i as u128 / 16) as u64;
            let x = x.min(u);
            let est = self.rank_key(Key::floor(x));
            let truth = oracle.rank_value(x);
            if !le_frac(est.abs_diff(truth) as i128, eps, n as i128) {
                out.push(Violation { seq, kind: ViolationKind::RankEstimate, magnitude: est as f64 - truth as f64 });
            }
        }
        let phi = self.cfg.phi;
        if phi >= eps {
            let reported = self.heavy_hitters(phi);
            for (x, _) in oracle.at_least(phi) {
                if reported.binary_search(&x).is_err() {
                    out.push(Violation { seq, kind: ViolationKind::DerivedHeavyHitter, magnitude: x as f64 });
                }
            }
            for &x in &reported {
                if oracle.is_forbidden(x, phi, eps * 2) {
                    out.push(Violation { seq, kind: ViolationKind::DerivedHeavyHitter, magnitude: x as f64 });
                }
            }
        }
    }

    fn check_invariants(&self, oracle: &ExactOracle, last: &ArrivalEvent, out: &mut Vec<Violation>) {
        if self.warmup_left > 0 || self.root.is_none() {
            return;
        }
        let seq = last.seq;
        let full = self.structural_at == Some(self.events);
        let nodes = if full { self.live_nodes() } else { self.path(last.key()) };
        for &u in &nodes {
            self.check_node(oracle, seq, u, out);
            if self.violates_balance(u) {
                out.push(Violation { seq, kind: ViolationKind::Balance, magnitude: self.nodes[u].s as f64 });
            }
        }
        if full {
            let d = self.depth();
            if d > self.h {
                out.push(Violation { seq, kind: ViolationKind::Depth, magnitude: d as f64 });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_frac;

    #[test]
    fn height_and_threshold_example() {
        assert_eq!(height_bound(parse_frac("0.1").unwrap()), 7);
        assert_eq!(height_bound(parse_frac("0.02").unwrap()), 10);
        let cfg = TrackerConfig::parse(2, "0.1", "0.5", 100).unwrap();
        let mut t = AllQuantilesTracker::new(cfg, Mode::Exact).unwrap();
        t.m = 10_000;
        assert_eq!(t.threshold(), 36);
    }

    #[test]
    fn balance_bounds_are_inclusive() {
        let cfg = TrackerConfig::parse(2, "0.1", "0.5", 100).unwrap();
        let mut t = AllQuantilesTracker::new(cfg, Mode::Exact).unwrap();
        let mk = |s| Node { lo: None, hi: None, split: None, children: None, s, depth: 1 };
        let u = t.alloc(Node { split: Some(Key::new(5, 1)), children: Some((1, 2)), ..mk(100) });
        t.alloc(mk(80));
        t.alloc(mk(20));
        assert!(t.violates_balance(u));
        t.nodes[1].s = 75;
        t.nodes[2].s = 25;
        assert!(!t.violates_balance(u));
    }

    #[test]
    fn sketch_mode_is_rejected() {
        let cfg = TrackerConfig::parse(2, "0.1", "0.5", 100).unwrap();
        assert!(AllQuantilesTracker::new(cfg, Mode::Sketch).is_err());
    }
}
