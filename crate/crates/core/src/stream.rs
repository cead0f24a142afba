//! Stream sources: synthetic item sequences, site placement and the
//! `seq site item` trace format.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{median_lb_items, HhLowerBoundPlan};
use crate::error::{Error, Result};
use crate::ledger::ArrivalEvent;

#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Uniform,
    Zipf(f64),
    Sorted,
    Permutation,
    Trace(PathBuf),
    HhAdversary,
    MedianAdversary,
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(exp) = s.strip_prefix("zipf:") {
            let v: f64 = exp.parse().map_err(|_| Error::Config(format!("bad zipf exponent `{exp}`")))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("zipf exponent must be positive, got {v}")));
            }
            return Ok(Distribution::Zipf(v));
        }
        if let Some(path) = s.strip_prefix("trace:") {
            return Ok(Distribution::Trace(PathBuf::from(path)));
        }
        match s {
            "uniform" => Ok(Distribution::Uniform),
            "zipf" => Ok(Distribution::Zipf(1.0)),
            "sorted" => Ok(Distribution::Sorted),
            "permutation" => Ok(Distribution::Permutation),
            "hh-adv" => Ok(Distribution::HhAdversary),
            "median-adv" => Ok(Distribution::MedianAdversary),
            other => Err(Error::Config(format!("unknown distribution `{other}`"))),
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Uniform => write!(f, "uniform"),
            Distribution::Zipf(s) => write!(f, "zipf:{s}"),
            Distribution::Sorted => write!(f, "sorted"),
            Distribution::Permutation => write!(f, "permutation"),
            Distribution::Trace(p) => write!(f, "trace:{}", p.display()),
            Distribution::HhAdversary => write!(f, "hh-adv"),
            Distribution::MedianAdversary => write!(f, "median-adv"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    #[default]
    RoundRobin,
    Random,
    /// Placement chosen online by the white-box adversary.
    Whitebox,
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rr" | "round-robin" => Ok(Placement::RoundRobin),
            "random" => Ok(Placement::Random),
            "whitebox" => Ok(Placement::Whitebox),
            other => Err(Error::Config(format!("unknown placement `{other}`"))),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::RoundRobin => "rr",
            Placement::Random => "random",
            Placement::Whitebox => "whitebox",
        })
    }
}

/// A reproducible stream: `(dist, u, n, seed)` fixes the items and
/// `(placement, k, seed)` fixes the sites.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSource {
    pub dist: Distribution,
    pub u: u64,
    pub n: u64,
    pub seed: u64,
    pub placement: Placement,
}

/// Parameters the adversarial generators need beyond `(u, n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversaryParams {
    pub phi: crate::config::Frac,
    pub eps: crate::config::Frac,
    pub m0: u64,
}

impl StreamSource {
    pub fn new(dist: Distribution, u: u64, n: u64, seed: u64) -> Self {
        StreamSource { dist, u, n, seed, placement: Placement::RoundRobin }
    }

    pub fn with_placement(mut self, placement: Placement) -> Self {
        self.placement = placement;
        self
    }

    /// The item sequence, independent of placement.
    pub fn items(&self, adv: Option<AdversaryParams>) -> Result<Vec<u64>> {
        if self.u == 0 {
            return Err(Error::Config("universe size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.n as usize;
        Ok(match &self.dist {
            Distribution::Uniform => (0..n).map(|_| rng.gen_range(1..=self.u)).collect(),
            Distribution::Zipf(s) => {
                let z = Zipf::new(self.u, *s);
                (0..n).map(|_| z.sample(&mut rng)).collect()
            }
            Distribution::Sorted => {
                (0..self.n).map(|i| 1 + (i as u128 * self.u as u128 / self.n as u128) as u64).collect()
            }
            Distribution::Permutation => {
                let mut out = Vec::with_capacity(n);
                let mut perm: Vec<u64> = (1..=self.u).collect();
                while out.len() < n {
                    perm.shuffle(&mut rng);
                    out.extend(perm.iter().take(n - out.len()));
                }
                out
            }
            Distribution::Trace(path) => read_trace(path)?.into_iter().map(|e| e.item).collect(),
            Distribution::HhAdversary => {
                let a = adv.ok_or_else(|| Error::Config("hh-adv needs φ and ε".into()))?;
                let plan = HhLowerBoundPlan::new(a.phi, a.eps, a.m0)?;
                plan.check_universe(self.u)?;
                plan.items(self.n)
            }
            Distribution::MedianAdversary => {
                let a = adv.ok_or_else(|| Error::Config("median-adv needs ε".into()))?;
                if self.u < 2 {
                    return Err(Error::Config("median-adv needs a universe of at least 2".into()));
                }
                median_lb_items(a.eps, a.m0, self.n)?
            }
        })
    }

    /// Items placed on `k` sites. Traces keep their recorded sites.
    pub fn events(&self, k: usize, adv: Option<AdversaryParams>) -> Result<Vec<ArrivalEvent>> {
        if let Distribution::Trace(path) = &self.dist {
            let evs = read_trace(path)?;
            if let Some(e) = evs.iter().find(|e| e.site >= k) {
                return Err(Error::BadSite { site: e.site, k });
            }
            return Ok(evs.into_iter().take(self.n as usize).collect());
        }
        let items = self.items(adv)?;
        place(&items, k, self.placement, self.seed)
    }
}

/// Assigns sites to an item sequence; `seq` runs from 1.
pub fn place(items: &[u64], k: usize, placement: Placement, seed: u64) -> Result<Vec<ArrivalEvent>> {
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    match placement {
        Placement::RoundRobin => {
            Ok(items.iter().enumerate().map(|(i, &x)| ArrivalEvent::new(i as u64 + 1, i % k, x)).collect())
        }
        Placement::Random => {
            // a separate stream so placement never perturbs the items
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            Ok(items
                .iter()
                .enumerate()
                .map(|(i, &x)| ArrivalEvent::new(i as u64 + 1, rng.gen_range(0..k), x))
                .collect())
        }
        Placement::Whitebox => Err(Error::Config("white-box placement is chosen online by the adversary".into())),
    }
}

/// Zipf over `1..=u` by inversion of the exact normalized CDF.
#[derive(Debug, Clone)]
pub struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    pub fn new(u: u64, s: f64) -> Self {
        let mut cdf = Vec::with_capacity(u as usize);
        let mut acc = 0.0;
        for i in 1..=u {
            acc += (i as f64).powf(-s);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Zipf { cdf }
    }

    pub fn probability(&self, x: u64) -> f64 {
        let i = (x - 1) as usize;
        self.cdf[i] - if i == 0 { 0.0 } else { self.cdf[i - 1] }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        let r: f64 = rng.gen();
        let i = self.cdf.partition_point(|&c| c <= r);
        i.min(self.cdf.len() - 1) as u64 + 1
    }
}

pub fn write_trace(path: &Path, events: &[ArrivalEvent]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in events {
        writeln!(w, "{} {} {}", e.seq, e.site, e.item)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<ArrivalEvent>> {
    let r = BufReader::new(File::open(path)?);
    let mut out: Vec<ArrivalEvent> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::Trace { line: lineno, reason: reason.to_string() };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad("expected `seq site item`"));
        }
        let seq: u64 = fields[0].parse().map_err(|_| bad("seq is not an integer"))?;
        let site: usize = fields[1].parse().map_err(|_| bad("site is not an integer"))?;
        let item: u64 = fields[2].parse().map_err(|_| bad("item is not an integer"))?;
        if out.last().is_some_and(|p| p.seq >= seq) {
            return Err(bad("seq must strictly increase"));
        }
        out.push(ArrivalEvent::new(seq, site, item));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_distributions() {
        assert_eq!("zipf:1.2".parse::<Distribution>().unwrap(), Distribution::Zipf(1.2));
        assert_eq!("sorted".parse::<Distribution>().unwrap(), Distribution::Sorted);
        assert!("zipf:-1".parse::<Distribution>().is_err());
        assert!("gauss".parse::<Distribution>().is_err());
        assert_eq!("whitebox".parse::<Placement>().unwrap(), Placement::Whitebox);
    }

    #[test]
    fn generators_are_deterministic_and_sized() {
        for d in [Distribution::Uniform, Distribution::Zipf(1.1), Distribution::Sorted, Distribution::Permutation] {
            let s = StreamSource::new(d, 100, 1000, 9);
            let a = s.events(4, None).unwrap();
            assert_eq!(a.len(), 1000);
            assert_eq!(a, s.events(4, None).unwrap());
            assert!(a.iter().all(|e| (1..=100).contains(&e.item) && e.site < 4));
            assert!(a.windows(2).all(|w| w[0].seq < w[1].seq));
        }
    }

    #[test]
    fn sorted_is_ascending() {
        let items = StreamSource::new(Distribution::Sorted, 50, 200, 0).items(None).unwrap();
        assert!(items.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(items[0], 1);
        assert_eq!(*items.last().unwrap(), 50);
    }

    #[test]
    fn permutation_covers_universe() {
        let mut items = StreamSource::new(Distribution::Permutation, 64, 64, 3).items(None).unwrap();
        items.sort_unstable();
        assert_eq!(items, (1..=64).collect::<Vec<_>>());
    }

    #[test]
    fn placement_keeps_items() {
        let s = StreamSource::new(Distribution::Uniform, 10, 500, 1);
        let rr = s.events(3, None).unwrap();
        let rnd = s.clone().with_placement(Placement::Random).events(3, None).unwrap();
        assert!(rr.iter().zip(&rnd).all(|(a, b)| a.item == b.item));
        assert!(rnd.iter().any(|e| e.site != (e.seq as usize - 1) % 3));
    }

    #[test]
    fn zipf_matches_probabilities() {
        let z = Zipf::new(20, 1.0);
        let h: f64 = (1..=20).map(|i| 1.0 / i as f64).sum();
        assert!((z.probability(1) - 1.0 / h).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let ones = (0..n).filter(|_| z.sample(&mut rng) == 1).count() as f64 / n as f64;
        assert!((ones - 1.0 / h).abs() < 0.01);
    }

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        let evs = StreamSource::new(Distribution::Uniform, 30, 100, 2).events(2, None).unwrap();
        write_trace(&path, &evs).unwrap();
        assert_eq!(read_trace(&path).unwrap(), evs);
        let replay = StreamSource::new(Distribution::Trace(path.clone()), 30, 100, 0).events(2, None).unwrap();
        assert_eq!(replay, evs);
        assert!(matches!(
            StreamSource::new(Distribution::Trace(path), 30, 100, 0).events(1, None),
            Err(Error::BadSite { .. })
        ));
    }

    #[test]
    fn trace_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "1 0 5\n2 0 x\n").unwrap();
        assert_eq!(read_trace(&path), Err(Error::Trace { line: 2, reason: "item is not an integer".into() }));
        std::fs::write(&path, "2 0 5\n1 0 5\n").unwrap();
        assert!(matches!(read_trace(&path), Err(Error::Trace { line: 2, .. })));
    }
}
