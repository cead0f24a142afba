//! What a site knows about its own arrivals: either every key exactly, or a
//! Greenwald-Khanna summary. The quantile trackers talk to sites only
//! through [`LocalSummary`].

use crate::config::Mode;
use crate::ledger::Key;
use crate::oracle::KeyIndex;
use crate::sketches::GkSketch;

pub trait LocalSummary: Send {
    fn insert(&mut self, key: Key);

    fn len(&self) -> u64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Local keys strictly below `key` (exact or estimated).
    fn rank(&self, key: Key) -> u64;

    /// Local keys in `[lo, hi)`; `None` bounds are open.
    fn count_between(&self, lo: Option<Key>, hi: Option<Key>) -> u64 {
        let a = lo.map_or(0, |k| self.rank(k));
        let b = hi.map_or(self.len(), |k| self.rank(k));
        b.saturating_sub(a)
    }

    /// Separators splitting the local keys of `[lo, hi)` into runs of about
    /// `spacing` keys: the `spacing`-th, `2·spacing`-th, … key of the range,
    /// each paired with the number of local keys in `[lo, key]`. Every
    /// returned key lies strictly inside the range.
    fn separators(&self, lo: Option<Key>, hi: Option<Key>, spacing: u64) -> Vec<(Key, u64)>;
}

#[derive(Debug, Clone)]
pub struct ExactLocal {
    index: KeyIndex,
}

impl ExactLocal {
    pub fn new(u: u64) -> Self {
        ExactLocal { index: KeyIndex::new(u) }
    }
}

impl LocalSummary for ExactLocal {
    fn insert(&mut self, key: Key) {
        // keys reaching a site were validated by the simulator
        self.index.insert(key).expect("key inside universe");
    }

    fn len(&self) -> u64 {
        self.index.len()
    }

    fn rank(&self, key: Key) -> u64 {
        self.index.rank(key)
    }

    fn count_between(&self, lo: Option<Key>, hi: Option<Key>) -> u64 {
        self.index.count_between(lo, hi)
    }

    fn separators(&self, lo: Option<Key>, hi: Option<Key>, spacing: u64) -> Vec<(Key, u64)> {
        let spacing = spacing.max(1);
        let base = self.index.rank_bound(lo, false);
        let end = self.index.rank_bound(hi, true);
        let mut out = Vec::new();
        let mut r = base + spacing - 1;
        while r < end {
            match self.index.select(r) {
                Some(key) if lo != Some(key) => out.push((key, r - base + 1)),
                _ => {}
            }
            r += spacing;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SketchLocal {
    gk: GkSketch<Key>,
}

impl SketchLocal {
    pub fn new(eps: f64) -> Self {
        SketchLocal { gk: GkSketch::new(eps) }
    }
}

impl LocalSummary for SketchLocal {
    fn insert(&mut self, key: Key) {
        self.gk.insert(key);
    }

    fn len(&self) -> u64 {
        self.gk.len()
    }

    fn rank(&self, key: Key) -> u64 {
        self.gk.rank(&key)
    }

    fn separators(&self, lo: Option<Key>, hi: Option<Key>, spacing: u64) -> Vec<(Key, u64)> {
        let spacing = spacing.max(1);
        let a = lo.map_or(0, |k| self.gk.rank(&k));
        let b = hi.map_or(self.gk.len(), |k| self.gk.rank(&k));
        let targets: Vec<u64> = (1..).map(|i| a + i * spacing - 1).take_while(|&r| r < b).collect();
        let mut keys: Vec<Key> = self
            .gk
            .quantiles(&targets)
            .into_iter()
            .filter(|k| lo.is_none_or(|lo| *k > lo) && hi.is_none_or(|hi| *k < hi))
            .collect();
        keys.dedup();
        keys.into_iter()
            .map(|k| (k, (self.gk.rank(&k) + 1).saturating_sub(a).clamp(1, b.saturating_sub(a).max(1))))
            .collect()
    }
}

/// Merges per-site separator lists into one ascending list, pairing each
/// key with the estimated number of keys of the whole range up to and
/// including it (the sum over sites of their latest cumulative count).
pub fn merge_separators(per_site: &[Vec<(Key, u64)>]) -> Vec<(Key, u64)> {
    let mut all: Vec<(Key, usize, u64)> =
        per_site.iter().enumerate().flat_map(|(j, seps)| seps.iter().map(move |&(key, cum)| (key, j, cum))).collect();
    all.sort_unstable();
    let mut current = vec![0u64; per_site.len()];
    let mut total = 0u64;
    all.into_iter()
        .map(|(key, j, cum)| {
            total = total + cum - current[j].min(cum);
            current[j] = current[j].max(cum);
            (key, total)
        })
        .collect()
}

pub fn new_local(mode: Mode, u: u64, sketch_eps: f64) -> Box<dyn LocalSummary> {
    match mode {
        Mode::Exact => Box::new(ExactLocal::new(u)),
        Mode::Sketch => Box::new(SketchLocal::new(sketch_eps)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_sums_latest_counts() {
        let a = vec![(Key::new(2, 1), 3), (Key::new(8, 2), 6)];
        let b = vec![(Key::new(5, 3), 4)];
        let m = merge_separators(&[a, b]);
        assert_eq!(m, vec![(Key::new(2, 1), 3), (Key::new(5, 3), 7), (Key::new(8, 2), 10)]);
    }

    #[test]
    fn exact_and_sketch_agree_roughly() {
        let mut e = ExactLocal::new(1000);
        let mut s = SketchLocal::new(0.01);
        for i in 1..=2000u64 {
            let k = Key::new(i % 997 + 1, i);
            e.insert(k);
            s.insert(k);
        }
        for v in [1u64, 100, 500, 998] {
            let k = Key::floor(v);
            let d = e.rank(k) as i64 - s.rank(k) as i64;
            assert!(d.abs() <= 20);
        }
        let seps = e.separators(Some(Key::floor(100)), Some(Key::floor(200)), 50);
        assert!(!seps.is_empty());
        for w in seps.windows(2) {
            assert_eq!(e.count_between(Some(w[0].0), Some(w[1].0)), 50);
            assert_eq!(w[1].1 - w[0].1, 50);
        }
        assert_eq!(seps[0].1, 50);
        assert_eq!(e.count_between(Some(Key::floor(100)), Some(seps[0].0)), 49);
        let mut one = ExactLocal::new(10);
        one.insert(Key::new(5, 1));
        assert_eq!(one.separators(Some(Key::floor(3)), None, 1), vec![(Key::new(5, 1), 1)]);
        assert!(one.separators(Some(Key::new(5, 1)), None, 1).is_empty());
        let sk = s.separators(Some(Key::floor(100)), Some(Key::floor(200)), 50);
        assert!(sk.iter().all(|(k, _)| k.value >= 100 && k.value < 200));
        assert!(sk.windows(2).all(|w| w[0] < w[1]));
        for (k, c) in &sk {
            let truth = e.count_between(Some(Key::floor(100)), Some(*k)) + 1;
            assert!((*c as i64 - truth as i64).abs() <= 20);
        }
    }
}
