//! Exact ground truth over the full multiset of arrivals.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::Frac;
use crate::error::{Error, Result};
use crate::ledger::Key;

/// Fenwick tree over values `1..=u`.
#[derive(Debug, Clone)]
struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(u: u64) -> Self {
        Fenwick { tree: vec![0; u as usize + 1] }
    }

    fn add(&mut self, value: u64, delta: u64) {
        let mut i = value as usize;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over values `1..=value`.
    fn prefix(&self, value: u64) -> u64 {
        let mut i = (value as usize).min(self.tree.len() - 1);
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    /// Smallest value whose prefix sum exceeds `rank`.
    fn select(&self, mut rank: u64) -> u64 {
        let n = self.tree.len() - 1;
        let mut pos = 0usize;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= rank {
                pos = next;
                rank -= self.tree[next];
            }
            step >>= 1;
        }
        pos as u64 + 1
    }
}

/// Multiset of keys over a bounded universe with exact rank and ordered
/// iteration. Used by the oracle and by sites holding exact local state.
#[derive(Debug, Clone)]
pub struct KeyIndex {
    u: u64,
    fenwick: Fenwick,
    seqs: BTreeMap<u64, Vec<u64>>,
    len: u64,
}

impl KeyIndex {
    pub fn new(u: u64) -> Self {
        KeyIndex { u, fenwick: Fenwick::new(u), seqs: BTreeMap::new(), len: 0 }
    }

    pub fn universe(&self) -> u64 {
        self.u
    }

    pub fn insert(&mut self, key: Key) -> Result<()> {
        if key.value == 0 || key.value > self.u {
            return Err(Error::OutOfUniverse { item: key.value, universe: self.u });
        }
        let list = self.seqs.entry(key.value).or_default();
        match list.last() {
            Some(&last) if last > key.seq => {
                let pos = list.partition_point(|&s| s < key.seq);
                list.insert(pos, key.seq);
            }
            _ => list.push(key.seq),
        }
        self.fenwick.add(key.value, 1);
        self.len += 1;
        Ok(())
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count_value(&self, value: u64) -> u64 {
        self.seqs.get(&value).map_or(0, |v| v.len() as u64)
    }

    /// Number of stored items with value strictly below `value`.
    pub fn rank_value(&self, value: u64) -> u64 {
        if value <= 1 {
            return 0;
        }
        self.fenwick.prefix(value - 1)
    }

    /// Number of stored keys strictly below `key`.
    pub fn rank(&self, key: Key) -> u64 {
        let below = self.rank_value(key.value);
        let same = self.seqs.get(&key.value).map_or(0, |s| s.partition_point(|&x| x < key.seq) as u64);
        below + same
    }

    /// Rank with `None` meaning −∞ (for `lo`) or +∞ (for `hi`).
    pub fn rank_bound(&self, key: Option<Key>, upper: bool) -> u64 {
        match key {
            Some(k) => self.rank(k),
            None if upper => self.len,
            None => 0,
        }
    }

    /// Keys in `[lo, hi)`.
    pub fn count_between(&self, lo: Option<Key>, hi: Option<Key>) -> u64 {
        let a = self.rank_bound(lo, false);
        let b = self.rank_bound(hi, true);
        b.saturating_sub(a)
    }

    /// The key of rank `r` (zero-based), if any.
    pub fn select(&self, r: u64) -> Option<Key> {
        if r >= self.len {
            return None;
        }
        let value = self.fenwick.select(r);
        let below = self.rank_value(value);
        let seqs = &self.seqs[&value];
        Some(Key::new(value, seqs[(r - below) as usize]))
    }

    /// Keys in `[lo, hi)` in order.
    pub fn keys_between(&self, lo: Option<Key>, hi: Option<Key>) -> impl Iterator<Item = Key> + '_ {
        let lo_v = lo.map_or(0, |k| k.value);
        let hi_v = hi.map_or(u64::MAX, |k| k.value);
        self.seqs
            .range(lo_v..=hi_v)
            .flat_map(|(&v, seqs)| seqs.iter().map(move |&s| Key::new(v, s)))
            .skip_while(move |k| lo.is_some_and(|lo| *k < lo))
            .take_while(move |k| hi.is_none_or(|hi| *k < hi))
    }

    /// Every `spacing`-th key of `[lo, hi)`: the keys at positions
    /// `spacing, 2·spacing, …` (zero-based) within the range.
    pub fn spaced_keys(&self, lo: Option<Key>, hi: Option<Key>, spacing: u64) -> Vec<Key> {
        let spacing = spacing.max(1);
        let base = self.rank_bound(lo, false);
        let end = self.rank_bound(hi, true);
        let mut out = Vec::new();
        let mut r = base + spacing;
        while r < end {
            if let Some(k) = self.select(r) {
                out.push(k);
            }
            r += spacing;
        }
        out
    }

    /// Distinct values with their counts, ascending.
    pub fn value_counts(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.seqs.iter().map(|(&v, s)| (v, s.len() as u64))
    }
}

/// Admissible answers for ε-approximate heavy hitters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HhAdmissible {
    /// Items that must be reported: `m_x ≥ φ|A|`.
    pub mandatory: BTreeSet<u64>,
    /// Items that must not be reported: `m_x < (φ−ε)|A|`.
    pub forbidden: BTreeSet<u64>,
}

/// Exact counts and ranks of everything that has arrived.
#[derive(Debug, Clone)]
pub struct ExactOracle {
    index: KeyIndex,
    by_count: BTreeSet<(u64, u64)>,
}

impl ExactOracle {
    pub fn new(u: u64) -> Self {
        ExactOracle { index: KeyIndex::new(u), by_count: BTreeSet::new() }
    }

    pub fn insert(&mut self, key: Key) -> Result<()> {
        self.index.insert(key)?;
        let c = self.index.count_value(key.value);
        if c > 1 {
            self.by_count.remove(&(c - 1, key.value));
        }
        self.by_count.insert((c, key.value));
        Ok(())
    }

    pub fn universe(&self) -> u64 {
        self.index.universe()
    }

    pub fn len(&self) -> u64 {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn count(&self, x: u64) -> u64 {
        self.index.count_value(x)
    }

    pub fn index(&self) -> &KeyIndex {
        &self.index
    }

    /// `#{items < x}` by value.
    pub fn rank_value(&self, x: u64) -> u64 {
        self.index.rank_value(x)
    }

    /// `#{items < key}` under the `(value, seq)` order.
    pub fn rank(&self, key: Key) -> u64 {
        self.index.rank(key)
    }

    pub fn count_between(&self, lo: Option<Key>, hi: Option<Key>) -> u64 {
        self.index.count_between(lo, hi)
    }

    pub fn select(&self, r: u64) -> Option<Key> {
        self.index.select(r)
    }

    /// Items with `m_x ≥ frac·|A|`, heaviest first.
    pub fn at_least(&self, frac: Frac) -> impl Iterator<Item = (u64, u64)> + '_ {
        let n = self.len() as i128;
        let (p, q) = (*frac.numer() as i128, *frac.denom() as i128);
        self.by_count.iter().rev().take_while(move |&&(c, _)| c as i128 * q >= p * n).map(|&(c, x)| (x, c))
    }

    pub fn is_mandatory(&self, x: u64, phi: Frac) -> bool {
        let n = self.len() as i128;
        self.count(x) as i128 * *phi.denom() as i128 >= *phi.numer() as i128 * n
    }

    pub fn is_forbidden(&self, x: u64, phi: Frac, eps: Frac) -> bool {
        let lim = phi - eps;
        let n = self.len() as i128;
        (self.count(x) as i128) * (*lim.denom() as i128) < (*lim.numer() as i128) * n
    }

    /// Mandatory and forbidden sets over the whole universe.
    pub fn admissible_hh(&self, phi: Frac, eps: Frac) -> HhAdmissible {
        let mut mandatory = BTreeSet::new();
        let mut forbidden = BTreeSet::new();
        for x in 1..=self.universe() {
            if self.is_mandatory(x, phi) {
                mandatory.insert(x);
            }
            if self.is_forbidden(x, phi, eps) {
                forbidden.insert(x);
            }
        }
        HhAdmissible { mandatory, forbidden }
    }

    /// Whether value `x` is a φ′-quantile for some φ′ ∈ [φ−ε, φ+ε].
    pub fn is_admissible_quantile(&self, x: u64, phi: Frac, eps: Frac) -> bool {
        let n = self.len() as i128;
        let smaller = self.rank_value(x) as i128;
        let greater = n - self.rank_value(x.saturating_add(1)) as i128;
        let hi = phi + eps;
        let lo = phi - eps;
        // smaller ≤ (φ+ε)·n and (φ−ε)·n ≤ n − greater
        smaller * (*hi.denom() as i128) <= (*hi.numer() as i128) * n
            && (*lo.numer() as i128) * n <= (n - greater) * (*lo.denom() as i128)
    }

    /// The contiguous value range of admissible ε-approximate φ-quantiles.
    pub fn admissible_quantile(&self, phi: Frac, eps: Frac) -> Option<(u64, u64)> {
        let mut range: Option<(u64, u64)> = None;
        for x in 1..=self.universe() {
            if self.is_admissible_quantile(x, phi, eps) {
                range = Some(match range {
                    None => (x, x),
                    Some((a, _)) => (a, x),
                });
            }
        }
        range
    }

    /// Signed distance of `rank` from the target `φ|A|`, as `rank − φ|A|`.
    pub fn rank_error(&self, rank: u64, phi: Frac) -> f64 {
        rank as f64 - crate::config::to_f64(phi) * self.len() as f64
    }

    /// `|rank − φ|A|| ≤ ε|A|`, exactly.
    pub fn rank_within(&self, rank: u64, phi: Frac, eps: Frac) -> bool {
        let n = self.len() as i128;
        let (pn, pd) = (*phi.numer() as i128, *phi.denom() as i128);
        let (en, ed) = (*eps.numer() as i128, *eps.denom() as i128);
        let dev = (rank as i128 * pd - pn * n).abs();
        dev * ed <= en * n * pd
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_frac;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn f(s: &str) -> Frac {
        parse_frac(s).unwrap()
    }

    fn oracle_from(values: &[u64], u: u64) -> ExactOracle {
        let mut o = ExactOracle::new(u);
        for (i, &v) in values.iter().enumerate() {
            o.insert(Key::new(v, i as u64 + 1)).unwrap();
        }
        o
    }

    #[test]
    fn insert_counts() {
        let mut o = ExactOracle::new(10);
        o.insert(Key::new(5, 1)).unwrap();
        assert_eq!((o.count(5), o.len()), (1, 1));
        o.insert(Key::new(5, 2)).unwrap();
        assert_eq!(o.count(5), 2);
        assert!(matches!(o.insert(Key::new(11, 3)), Err(Error::OutOfUniverse { .. })));
        assert!(o.insert(Key::new(0, 3)).is_err());
    }

    #[test]
    fn hh_definition_example() {
        let o = oracle_from(&[1, 1, 1, 2], 2);
        let adm = o.admissible_hh(f("0.5"), f("0.2"));
        assert_eq!(adm.mandatory, BTreeSet::from([1]));
        assert_eq!(adm.forbidden, BTreeSet::from([2]));
    }

    #[test]
    fn hh_uniform_has_no_mandatory() {
        let vals: Vec<u64> = (0..100).map(|i| i % 10 + 1).collect();
        let o = oracle_from(&vals, 10);
        assert!(o.admissible_hh(f("0.2"), f("0.05")).mandatory.is_empty());
        assert_eq!(o.at_least(f("0.2")).count(), 0);
        assert_eq!(o.at_least(f("0.1")).count(), 10);
    }

    #[test]
    fn hh_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vals: Vec<u64> = (0..1000).map(|_| rng.gen_range(1..=20u64).min(rng.gen_range(1..=20))).collect();
        let o = oracle_from(&vals, 20);
        let (phi, eps) = (f("0.1"), f("0.04"));
        let adm = o.admissible_hh(phi, eps);
        let n = vals.len() as f64;
        for x in 1..=20u64 {
            let c = vals.iter().filter(|&&v| v == x).count() as f64;
            assert_eq!(adm.mandatory.contains(&x), c >= 0.1 * n, "x={x}");
            assert_eq!(adm.forbidden.contains(&x), c < 0.06 * n - 1e-9, "x={x}");
            assert!(!(adm.mandatory.contains(&x) && adm.forbidden.contains(&x)));
        }
        let fast: BTreeSet<u64> = o.at_least(phi).map(|(x, _)| x).collect();
        assert_eq!(fast, adm.mandatory);
    }

    #[test]
    fn quantile_distinct_example() {
        let vals: Vec<u64> = (1..=100).collect();
        let o = oracle_from(&vals, 100);
        // x is admissible iff [x−1, x]/100 meets [0.4, 0.6]: ranks 39..=60
        assert_eq!(o.admissible_quantile(f("0.5"), f("0.1")), Some((40, 61)));
    }

    #[test]
    fn quantile_exact_when_eps_zero() {
        let vals: Vec<u64> = (1..=9).collect();
        let o = oracle_from(&vals, 9);
        assert_eq!(o.admissible_quantile(f("0.5"), f("0")), Some((5, 5)));
    }

    #[test]
    fn quantile_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let u = 30;
            let vals: Vec<u64> = (0..200).map(|_| rng.gen_range(1..=u)).collect();
            let o = oracle_from(&vals, u);
            let phi = [f("0.1"), f("0.5"), f("0.93")][trial % 3];
            let eps = f("0.05");
            let n = vals.len() as f64;
            let (pf, ef) = (crate::config::to_f64(phi), crate::config::to_f64(eps));
            for x in 1..=u {
                let smaller = vals.iter().filter(|&&v| v < x).count() as f64;
                let greater = vals.iter().filter(|&&v| v > x).count() as f64;
                // scan φ′ over a fine grid plus the two critical endpoints
                let mut ok = false;
                for cand in [smaller / n, 1.0 - greater / n, pf - ef, pf + ef] {
                    if cand >= pf - ef - 1e-12
                        && cand <= pf + ef + 1e-12
                        && smaller <= cand * n + 1e-9
                        && greater <= (1.0 - cand) * n + 1e-9
                    {
                        ok = true;
                    }
                }
                assert_eq!(o.is_admissible_quantile(x, phi, eps), ok, "x={x}");
            }
        }
    }

    #[test]
    fn key_ranks_and_select() {
        let o = oracle_from(&[3, 1, 3, 2, 3], 5);
        assert_eq!(o.rank(Key::floor(3)), 2);
        assert_eq!(o.rank(Key::new(3, 3)), 3);
        assert_eq!(o.rank(Key::new(3, 6)), 5);
        assert_eq!(o.rank_value(6), 5);
        for r in 0..5 {
            let k = o.select(r).unwrap();
            assert_eq!(o.rank(k), r);
        }
        assert!(o.select(5).is_none());
        let keys: Vec<Key> = o.index().keys_between(Some(Key::new(2, 0)), Some(Key::new(3, 5))).collect();
        assert_eq!(keys, vec![Key::new(2, 4), Key::new(3, 1), Key::new(3, 3)]);
        assert_eq!(o.index().spaced_keys(None, None, 2), vec![Key::new(3, 1), Key::new(3, 5)]);
    }

    #[test]
    fn rank_within_is_exact() {
        let vals: Vec<u64> = (1..=100).collect();
        let o = oracle_from(&vals, 100);
        assert!(o.rank_within(40, f("0.5"), f("0.1")));
        assert!(o.rank_within(60, f("0.5"), f("0.1")));
        assert!(!o.rank_within(61, f("0.5"), f("0.1")));
    }
}
