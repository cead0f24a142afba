//! Lower-bound streams.
//!
//! The heavy-hitter construction alternates two groups of `l` items. At the
//! start of round `i` one group sits at frequency `φ·m_i` and the other at
//! `(φ−ε′)·m_i`, with `ε′ = 2ε`. The round feeds about `β·m_i` copies of each
//! item of the light group, which swaps the roles with `m_{i+1} =
//! φ/(φ−ε′)·m_i`. The median construction does the same with two values.

use std::collections::{BTreeSet, HashMap};

use crate::config::{ceil_frac, ge_frac, le_frac, Frac};
use crate::error::{Error, Result};
use crate::ledger::{ArrivalEvent, Key};
use crate::oracle::KeyIndex;
use crate::simulator::{CheckpointHook, SimulationRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HhLowerBoundPlan {
    pub phi: Frac,
    pub eps: Frac,
    /// `ε′ = 2ε`
    pub eps2: Frac,
    /// Items per group, `1/(2φ − ε′)`.
    pub l: u64,
    /// `ε′(2φ−ε′)/(φ−ε′)`
    pub beta: Frac,
    /// `φ/(φ−ε′)`
    pub growth: Frac,
    pub m0: u64,
}

/// One run of consecutive copies of a single item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub round: u64,
    /// `|A|` at the start of the round.
    pub round_start: u64,
    pub item: u64,
    pub copies: u64,
}

impl HhLowerBoundPlan {
    pub fn new(phi: Frac, eps: Frac, m0: u64) -> Result<Self> {
        let zero = Frac::from_integer(0);
        if eps <= zero || phi <= eps * 3 || phi >= Frac::from_integer(1) {
            return Err(Error::Config(format!("the construction needs 3ε < φ < 1 (φ = {phi}, ε = {eps})")));
        }
        let eps2 = eps * 2;
        let span = phi * 2 - eps2;
        let l = span.recip();
        if !l.is_integer() {
            return Err(Error::Config(format!(
                "1/(2φ − 2ε) = {l} is not an integer; admissible pairs satisfy φ = ε + 1/(2l) for integer l ≥ 1, \
                 e.g. φ = {} for l = 2",
                eps + Frac::new(1, 4)
            )));
        }
        if m0 == 0 {
            return Err(Error::Config("the prefix must be non-empty".into()));
        }
        Ok(HhLowerBoundPlan {
            phi,
            eps,
            eps2,
            l: l.to_integer() as u64,
            beta: eps2 * span / (phi - eps2),
            growth: phi / (phi - eps2),
            m0,
        })
    }

    /// Items of group `b`: `S_0 = 1..=l`, `S_1 = l+1..=2l`.
    pub fn group(&self, b: u64) -> std::ops::RangeInclusive<u64> {
        let start = 1 + (b % 2) * self.l;
        start..=start + self.l - 1
    }

    pub fn check_universe(&self, u: u64) -> Result<()> {
        if u < 2 * self.l {
            return Err(Error::Config(format!("hh-adv needs a universe of at least {}", 2 * self.l)));
        }
        Ok(())
    }

    /// The prefix of size about `m0`: group 0 at `φ·m0`, group 1 at
    /// `(φ−ε′)·m0`, interleaved.
    pub fn prefix(&self) -> Vec<u64> {
        let heavy = ceil_frac(self.phi, self.m0, 1);
        let light = ceil_frac(self.phi - self.eps2, self.m0, 1);
        let quota: Vec<(u64, u64)> =
            self.group(0).map(|x| (x, heavy)).chain(self.group(1).map(|x| (x, light))).collect();
        interleave(&quota)
    }

    /// Every round's blocks until the stream holds at least `n` items.
    pub fn schedule(&self, n: u64) -> Vec<Block> {
        let heavy = ceil_frac(self.phi, self.m0, 1);
        let light = ceil_frac(self.phi - self.eps2, self.m0, 1);
        let mut counts: Vec<u64> = (0..2 * self.l).map(|i| if i < self.l { heavy } else { light }).collect();
        let mut total = counts.iter().sum::<u64>();
        let mut out = Vec::new();
        let mut round = 0;
        // each light item needs x with (c + x) ≥ φ(|A| + l·x); rounding drift
        // makes this slightly more than ⌈β·|A|⌉ at times
        let slack = Frac::from_integer(1) - self.phi * self.l as i64;
        while total < n {
            let start = total;
            let group = self.group(round + 1);
            let lowest = group.clone().map(|x| counts[x as usize - 1]).min().expect("groups are non-empty");
            let need = self.phi * start as i64 - Frac::from_integer(lowest as i64);
            let copies = ceil_frac(need / slack, 1, 1).max(1);
            for item in group {
                counts[item as usize - 1] += copies;
                out.push(Block { round, round_start: start, item, copies });
                total += copies;
            }
            round += 1;
        }
        out
    }

    /// The first `n` items of the construction.
    pub fn items(&self, n: u64) -> Vec<u64> {
        let mut out = self.prefix();
        for b in self.schedule(n) {
            out.extend(std::iter::repeat_n(b.item, b.copies as usize));
        }
        out.truncate(n as usize);
        out
    }

    /// Blocks that finish within the first `n` items; each one lifts an item
    /// from `(φ−ε′)|A|` to `φ|A|`.
    pub fn analytic_changes(&self, n: u64) -> u64 {
        let mut total = self.prefix().len() as u64;
        let mut done = 0;
        for b in self.schedule(n) {
            total += b.copies;
            if total <= n {
                done += 1;
            }
        }
        done
    }
}

/// Round-robin over `(item, count)` quotas until all are met.
fn interleave(quota: &[(u64, u64)]) -> Vec<u64> {
    let mut left: Vec<(u64, u64)> = quota.to_vec();
    let mut out = Vec::with_capacity(quota.iter().map(|q| q.1 as usize).sum());
    while left.iter().any(|q| q.1 > 0) {
        for q in &mut left {
            if q.1 > 0 {
                out.push(q.0);
                q.1 -= 1;
            }
        }
    }
    out
}

/// Multiplier of the median construction, `4ε/(1/2 − 2ε)`.
pub fn median_step(eps: Frac) -> Frac {
    eps * 4 / (Frac::new(1, 2) - eps * 2)
}

/// The median flip-flop on values 1 and 2, starting from a prefix of `m0`
/// items where value 1 holds `(1/2 − 2ε)·m0`.
pub fn median_lb_items(eps: Frac, m0: u64, n: u64) -> Result<Vec<u64>> {
    if eps <= Frac::from_integer(0) || eps >= Frac::new(1, 8) {
        return Err(Error::Config(format!("the median construction needs 0 < ε < 1/8, got {eps}")));
    }
    let minority = ceil_frac(Frac::new(1, 2) - eps * 2, m0, 1);
    let mut out = interleave(&[(1, minority), (2, m0.saturating_sub(minority))]);
    let step = median_step(eps);
    let mut round = 0u64;
    while (out.len() as u64) < n {
        let copies = ceil_frac(step, out.len() as u64, 1).max(1);
        let b = 1 + round % 2;
        out.extend(std::iter::repeat_n(b, copies as usize));
        round += 1;
    }
    out.truncate(n as usize);
    Ok(out)
}

/// Rounds of the median construction completed within `n` items.
pub fn median_analytic_changes(eps: Frac, m0: u64, n: u64) -> u64 {
    let step = median_step(eps);
    let mut total = m0;
    let mut rounds = 0;
    loop {
        total += ceil_frac(step, total, 1).max(1);
        if total > n {
            return rounds;
        }
        rounds += 1;
    }
}

/// Times some item climbs from below `(φ−ε)|A|` to at least `φ|A|`,
/// measured after every arrival past the first `skip`.
pub fn count_hh_changes(items: &[u64], phi: Frac, eps: Frac, skip: usize) -> u64 {
    let mut counts: HashMap<u64, u64> = HashMap::new();
    let mut low: HashMap<u64, bool> = HashMap::new();
    let mut seen: BTreeSet<u64> = BTreeSet::new();
    let mut changes = 0;
    for (i, &x) in items.iter().enumerate() {
        *counts.entry(x).or_default() += 1;
        if seen.insert(x) {
            low.insert(x, true);
        }
        let n = i as i128 + 1;
        for &y in &seen {
            let c = counts[&y] as i128;
            let flag = low.get_mut(&y).expect("seen items have a flag");
            if !ge_frac(c, phi - eps, n) {
                *flag = true;
            } else if *flag && ge_frac(c, phi, n) {
                *flag = false;
                if i >= skip {
                    changes += 1;
                }
            }
        }
    }
    changes
}

/// Times the exact median value (rank `⌊|A|/2⌋`) changes after an arrival
/// past the first `skip`.
pub fn count_median_changes(items: &[u64], u: u64, skip: usize) -> Result<u64> {
    let mut idx = KeyIndex::new(u);
    let mut prev: Option<u64> = None;
    let mut changes = 0;
    for (i, &x) in items.iter().enumerate() {
        idx.insert(Key::new(x, i as u64 + 1))?;
        let med = idx.select(idx.len() / 2).map(|k| k.value);
        if i >= skip && prev.is_some() && med != prev {
            changes += 1;
        }
        prev = med;
    }
    Ok(changes)
}

/// One forced transition of the white-box attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionRecord {
    pub round: u64,
    pub item: u64,
    /// Sites pushed over their threshold.
    pub forced: usize,
    /// Messages recorded while the block was delivered.
    pub messages: u64,
    /// Whether the whole block fit before the stream ended.
    pub complete: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttackReport {
    pub transitions: Vec<TransitionRecord>,
    /// `(round, item)` pairs where no site was close enough to its trigger:
    /// the tracker cannot notice the change, so it is incorrect.
    pub missed: Vec<(u64, u64)>,
}

/// Drives `run` with the heavy-hitter construction, placing each block
/// against the tracker's own thresholds. Every round, up to `⌊k/2⌋` unused
/// sites with `n_j ≤ 2βm_i/k` receive `⌈2βm_i/k⌉` copies; the rest of the
/// block goes round-robin.
pub fn whitebox_attack(run: &mut SimulationRun, plan: &HhLowerBoundPlan, n: u64) -> Result<AttackReport> {
    whitebox_attack_with(run, plan, n, &mut |_, _| {})
}

/// [`whitebox_attack`], calling `hook` after every checkpoint.
pub fn whitebox_attack_with(
    run: &mut SimulationRun,
    plan: &HhLowerBoundPlan,
    n: u64,
    hook: &mut CheckpointHook<'_>,
) -> Result<AttackReport> {
    let k = run.tracker().config().k;
    let mut report = AttackReport::default();
    let mut seq = run.steps();
    let mut send = |run: &mut SimulationRun, site: usize, item: u64| -> Result<()> {
        seq += 1;
        let ev = ArrivalEvent::new(seq, site, item);
        if run.step(&ev)? {
            hook(run, &ev);
        }
        Ok(())
    };
    for (i, x) in plan.prefix().into_iter().enumerate() {
        if run.steps() >= n {
            return Ok(report);
        }
        send(run, i % k, x)?;
    }
    let mut rr = 0usize;
    for block in plan.schedule(n) {
        let budget_frac = plan.beta * 2 / k as i64;
        let per = ceil_frac(budget_frac, block.round_start, 1).max(1);
        let before = run.ledger().total_messages();
        let mut remaining = block.copies;
        let mut used = vec![false; k];
        let mut forced = 0;
        for _ in 0..k / 2 {
            if remaining == 0 || run.steps() >= n {
                break;
            }
            let probe = run
                .tracker()
                .threshold_probe()
                .ok_or_else(|| Error::Config("white-box placement needs a tracker exposing thresholds".into()))?;
            let thresholds = probe.remaining_to_trigger(block.item);
            let target =
                (0..k).find(|&j| !used[j] && le_frac(thresholds[j] as i128, budget_frac, block.round_start as i128));
            let Some(j) = target else {
                report.missed.push((block.round, block.item));
                break;
            };
            used[j] = true;
            let mark = run.ledger().total_messages();
            for _ in 0..per.min(remaining) {
                if run.steps() >= n {
                    break;
                }
                send(run, j, block.item)?;
                remaining -= 1;
            }
            if run.ledger().total_messages() > mark {
                forced += 1;
            }
        }
        while remaining > 0 && run.steps() < n {
            send(run, rr % k, block.item)?;
            rr += 1;
            remaining -= 1;
        }
        report.transitions.push(TransitionRecord {
            round: block.round,
            item: block.item,
            forced,
            messages: run.ledger().total_messages() - before,
            complete: remaining == 0,
        });
        if run.steps() >= n {
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_frac;

    fn f(s: &str) -> Frac {
        parse_frac(s).unwrap()
    }

    #[test]
    fn plan_constants() {
        let p = HhLowerBoundPlan::new(f("0.3"), f("0.05"), 1000).unwrap();
        assert_eq!(p.eps2, f("0.1"));
        assert_eq!(p.l, 2);
        assert_eq!(p.beta, f("0.25"));
        assert_eq!(p.growth, f("1.5"));
        assert_eq!(p.group(0), 1..=2);
        assert_eq!(p.group(1), 3..=4);
    }

    #[test]
    fn non_integer_group_size_is_rejected() {
        let e = HhLowerBoundPlan::new(f("0.31"), f("0.05"), 1000).unwrap_err();
        assert!(e.to_string().contains("not an integer"));
        assert!(HhLowerBoundPlan::new(f("0.1"), f("0.05"), 1000).is_err());
    }

    #[test]
    fn median_step_example() {
        assert_eq!(ceil_frac(median_step(f("0.05")), 1000, 1), 500);
        assert!(median_lb_items(f("0.2"), 100, 1000).is_err());
    }

    #[test]
    fn interleave_meets_quotas() {
        let v = interleave(&[(1, 3), (2, 1)]);
        assert_eq!(v, vec![1, 2, 1, 1]);
    }
}
