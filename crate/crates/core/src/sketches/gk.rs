/// Greenwald-Khanna rank summary.
///
/// Tuples `(value, gap, range)` are kept in value order. `rmin(i)` is the
/// prefix sum of gaps and `rmax(i) = rmin(i) + range`; the sketch keeps
/// `gap + range ≤ max(1, ⌊2εn⌋)` for every tuple. The first and last tuples
/// always hold the exact minimum and maximum.
#[derive(Debug, Clone)]
pub struct GkSketch<T> {
    eps: f64,
    tuples: Vec<Tuple<T>>,
    n: u64,
    since_compress: u64,
    compress_every: u64,
}

#[derive(Debug, Clone, Copy)]
struct Tuple<T> {
    value: T,
    gap: u64,
    range: u64,
}

impl<T: Ord + Copy> GkSketch<T> {
    pub fn new(eps: f64) -> Self {
        assert!(eps > 0.0 && eps < 1.0, "GK error must lie in (0,1)");
        GkSketch {
            eps,
            tuples: Vec::new(),
            n: 0,
            since_compress: 0,
            compress_every: ((1.0 / (2.0 * eps)).floor() as u64).max(1),
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn tuple_count(&self) -> usize {
        self.tuples.len()
    }

    /// `max(1, ⌊2εn⌋)`
    pub fn band(&self) -> u64 {
        ((2.0 * self.eps * self.n as f64).floor() as u64).max(1)
    }

    pub fn insert(&mut self, value: T) {
        let pos = self.tuples.partition_point(|t| t.value <= value);
        let range = if pos == 0 || pos == self.tuples.len() {
            0
        } else {
            let next = &self.tuples[pos];
            (next.gap + next.range).saturating_sub(1)
        };
        self.tuples.insert(pos, Tuple { value, gap: 1, range });
        self.n += 1;
        self.since_compress += 1;
        if self.since_compress >= self.compress_every {
            self.compress();
            self.since_compress = 0;
        }
    }

    fn compress(&mut self) {
        let band = self.band();
        if self.tuples.len() < 3 {
            return;
        }
        let mut i = self.tuples.len() - 2;
        while i >= 1 {
            let (cur, next) = (self.tuples[i], self.tuples[i + 1]);
            if cur.gap + next.gap + next.range <= band {
                self.tuples[i + 1].gap += cur.gap;
                self.tuples.remove(i);
            }
            i -= 1;
        }
    }

    /// Largest `gap + range` over all tuples.
    pub fn max_spread(&self) -> u64 {
        self.tuples.iter().map(|t| t.gap + t.range).max().unwrap_or(0)
    }

    /// Bracket `[lo, hi]` on the number of inserted values strictly below `x`.
    pub fn rank_bounds(&self, x: &T) -> (u64, u64) {
        let idx = self.tuples.partition_point(|t| t.value < *x);
        if idx == 0 {
            return (0, 0);
        }
        let rmin: u64 = self.tuples[..idx].iter().map(|t| t.gap).sum();
        if idx == self.tuples.len() {
            return (self.n, self.n);
        }
        let next = &self.tuples[idx];
        let hi = rmin + next.gap + next.range - 1;
        (rmin, hi)
    }

    /// Estimated number of inserted values strictly below `x`; within `εn`.
    pub fn rank(&self, x: &T) -> u64 {
        let (lo, hi) = self.rank_bounds(x);
        (lo + hi) / 2
    }

    /// Values whose estimated rank is closest to each target, for ascending
    /// targets, in one pass.
    pub fn quantiles(&self, targets: &[u64]) -> Vec<T> {
        let mut out = Vec::with_capacity(targets.len());
        if self.tuples.is_empty() {
            return out;
        }
        // midpoint estimate of #values below tuple i
        let mut mids = Vec::with_capacity(self.tuples.len());
        let mut rmin = 0u64;
        for t in &self.tuples {
            rmin += t.gap;
            mids.push((rmin - 1) + t.range / 2);
        }
        let mut i = 0usize;
        for &r in targets {
            while i + 1 < mids.len() && mids[i + 1] <= r {
                i += 1;
            }
            let pick = if i + 1 < mids.len() && mids[i + 1] - r < r.saturating_sub(mids[i]) { i + 1 } else { i };
            out.push(self.tuples[pick].value);
        }
        out
    }

    pub fn min(&self) -> Option<T> {
        self.tuples.first().map(|t| t.value)
    }

    pub fn max(&self) -> Option<T> {
        self.tuples.last().map(|t| t.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_rank(sorted: &[u64], x: u64) -> u64 {
        sorted.partition_point(|&v| v < x) as u64
    }

    #[test]
    fn sequential_inserts() {
        let mut g = GkSketch::new(0.1);
        for v in 1..=100u64 {
            g.insert(v);
        }
        let r = g.rank(&50);
        assert!((r as i64 - 49).abs() <= 10, "rank {r}");
        assert!(g.tuple_count() < 100);
    }

    #[test]
    fn single_insert_exact() {
        let mut g = GkSketch::new(0.05);
        g.insert(7u64);
        assert_eq!(g.rank(&7), 0);
        assert_eq!(g.rank(&8), 1);
        assert_eq!(g.rank(&1), 0);
    }

    #[test]
    fn descending_keeps_invariant() {
        let eps = 0.02;
        let mut g = GkSketch::new(eps);
        for v in (1..=20_000u64).rev() {
            g.insert(v);
            assert!(g.max_spread() <= g.band());
        }
        assert!(g.tuple_count() < 2_000);
    }

    #[test]
    fn random_probes_within_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut vals: Vec<u64> = (0..1000u64).map(|i| i * 7 % 1009).collect();
        vals.shuffle(&mut rng);
        let eps = 0.01;
        let mut g = GkSketch::new(eps);
        for &v in &vals {
            g.insert(v);
        }
        vals.sort_unstable();
        let n = vals.len() as f64;
        for x in 0..1100u64 {
            let e = g.rank(&x) as f64 - brute_rank(&vals, x) as f64;
            assert!(e.abs() <= eps * n, "x={x} err={e}");
        }
        assert_eq!(g.rank(&0), 0);
        assert_eq!(g.rank(&2000), 1000);
    }

    #[test]
    fn quantile_targets() {
        let mut g = GkSketch::new(0.01);
        for v in 0..1000u64 {
            g.insert(v);
        }
        let qs = g.quantiles(&[100, 500, 900]);
        for (q, t) in qs.iter().zip([100u64, 500, 900]) {
            assert!((*q as i64 - t as i64).abs() <= 10);
        }
    }

    proptest! {
        #[test]
        fn rank_error_and_monotone(stream in prop::collection::vec(0u64..500, 1..1500), e in 1u32..20) {
            let eps = e as f64 / 200.0;
            let mut g = GkSketch::new(eps);
            for &v in &stream {
                g.insert(v);
                prop_assert!(g.max_spread() <= g.band());
            }
            let mut sorted = stream.clone();
            sorted.sort_unstable();
            let n = stream.len() as f64;
            let mut prev = 0;
            for x in 0..=500u64 {
                let r = g.rank(&x);
                prop_assert!(r >= prev);
                prev = r;
                let (lo, hi) = g.rank_bounds(&x);
                let t = brute_rank(&sorted, x);
                prop_assert!(lo <= t && t <= hi);
                prop_assert!((r as f64 - t as f64).abs() <= eps * n + 1e-9);
            }
        }
    }
}
