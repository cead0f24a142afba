use std::collections::{BTreeSet, HashMap};
use std::hash::Hash;

/// Space-Saving summary with a fixed number of monitored counters.
///
/// Every monitored item carries its count and the count it inherited on
/// entry (`error`), so `count − error ≤ true ≤ count`.
#[derive(Debug, Clone)]
pub struct SpaceSaving<T> {
    capacity: usize,
    counters: HashMap<T, (u64, u64)>,
    order: BTreeSet<(u64, T)>,
    n: u64,
}

impl<T: Hash + Eq + Ord + Copy> SpaceSaving<T> {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        SpaceSaving { capacity, counters: HashMap::with_capacity(capacity), order: BTreeSet::new(), n: 0 }
    }

    /// Capacity `⌈1/ε′⌉`.
    pub fn with_error(eps: f64) -> Self {
        Self::new((1.0 / eps).ceil() as usize)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn monitored(&self) -> usize {
        self.counters.len()
    }

    pub fn insert(&mut self, item: T) {
        self.n += 1;
        if let Some(entry) = self.counters.get_mut(&item) {
            self.order.remove(&(entry.0, item));
            entry.0 += 1;
            self.order.insert((entry.0, item));
            return;
        }
        if self.counters.len() < self.capacity {
            self.counters.insert(item, (1, 0));
            self.order.insert((1, item));
            return;
        }
        let (min, evicted) = self.order.pop_first().expect("full sketch has a minimum");
        self.counters.remove(&evicted);
        self.counters.insert(item, (min + 1, min));
        self.order.insert((min + 1, item));
    }

    fn min_count(&self) -> u64 {
        if self.counters.len() < self.capacity {
            0
        } else {
            self.order.first().map_or(0, |&(c, _)| c)
        }
    }

    /// `(lower, upper)` bracket on the true count of `item`.
    pub fn estimate(&self, item: &T) -> (u64, u64) {
        match self.counters.get(item) {
            Some(&(count, error)) => (count - error, count),
            None => (0, self.min_count()),
        }
    }

    pub fn lower_bound(&self, item: &T) -> u64 {
        self.estimate(item).0
    }

    /// Monitored items with their `(count, error)`, heaviest first.
    pub fn entries(&self) -> Vec<(T, u64, u64)> {
        self.order.iter().rev().map(|&(c, x)| (x, c, self.counters[&x].1)).collect()
    }
}
