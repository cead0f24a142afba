//! Parameter sweeps, CSV emission and scaling fits.
//!
//! An [`ExperimentSpec`] holds one list of values per parameter; its
//! cartesian product expands into validated [`RunSpec`]s. Each run yields
//! one CSV row per checkpoint. Runs are independent and execute on the
//! rayon pool when the `parallel` feature is on.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adversary::{whitebox_attack_with, AttackReport, HhLowerBoundPlan};
use crate::allq::AllQuantilesTracker;
use crate::config::{parse_frac, to_f64, Frac, Mode, TrackerConfig, TrackerKind};
use crate::error::{Error, Result};
use crate::hh::HhTracker;
use crate::ledger::CostLedger;
use crate::quantile::QuantileTracker;
use crate::simulator::{CheckpointHook, CheckpointPolicy, SimulationRun, Tracker, ViolationReport};
use crate::stream::{AdversaryParams, Distribution, Placement, StreamSource};

pub const CSV_HEADER: [&str; 9] =
    ["tracker", "k", "eps", "phi", "n_so_far", "messages", "words", "violations", "bound_messages"];

pub fn make_tracker(kind: TrackerKind, cfg: TrackerConfig, mode: Mode) -> Result<Box<dyn Tracker>> {
    Ok(match kind {
        TrackerKind::HeavyHitters => Box::new(HhTracker::new(cfg, mode)?),
        TrackerKind::Quantile => Box::new(QuantileTracker::new(cfg, mode)?),
        TrackerKind::AllQuantiles => Box::new(AllQuantilesTracker::new(cfg, mode)?),
    })
}

/// Reference curve: `(k/ε)·log₂n`, times `log₂²(1/ε)` for all-quantiles.
pub fn bound_messages(kind: TrackerKind, k: usize, eps: f64, n: u64) -> f64 {
    let base = k as f64 / eps * (n.max(1) as f64).log2();
    match kind {
        TrackerKind::AllQuantiles => base * (1.0 / eps).log2().powi(2),
        _ => base,
    }
}

/// One fully specified run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub tracker: TrackerKind,
    pub cfg: TrackerConfig,
    pub mode: Mode,
    pub source: StreamSource,
    pub adv: Option<AdversaryParams>,
    pub policy: CheckpointPolicy,
}

impl RunSpec {
    pub fn new(tracker: TrackerKind, cfg: TrackerConfig, mode: Mode, source: StreamSource) -> Self {
        let policy = CheckpointPolicy::default_for(source.n);
        RunSpec { tracker, cfg, mode, source, adv: None, policy }
    }

    pub fn with_adversary(mut self, adv: AdversaryParams) -> Self {
        self.adv = Some(adv);
        self
    }

    pub fn with_policy(mut self, policy: CheckpointPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.tracker {
            TrackerKind::HeavyHitters => self.cfg.validate_hh()?,
            _ => self.cfg.validate()?,
        }
        if self.tracker == TrackerKind::AllQuantiles && self.mode == Mode::Sketch {
            return Err(Error::Config("allq has no sketch mode".into()));
        }
        if self.source.u != self.cfg.u {
            return Err(Error::Config(format!(
                "stream universe {} differs from tracker universe {}",
                self.source.u, self.cfg.u
            )));
        }
        match self.source.dist {
            Distribution::HhAdversary => {
                let a = self.adversary()?;
                HhLowerBoundPlan::new(a.phi, a.eps, a.m0)?.check_universe(self.source.u)?;
            }
            Distribution::MedianAdversary => {
                let a = self.adversary()?;
                if a.eps >= Frac::new(1, 8) {
                    return Err(Error::Config(format!("median-adv needs eps < 1/8, got {}", a.eps)));
                }
            }
            _ => {}
        }
        if self.source.placement == Placement::Whitebox
            && (self.tracker != TrackerKind::HeavyHitters || self.source.dist != Distribution::HhAdversary)
        {
            return Err(Error::Config("whitebox placement needs --tracker hh with --dist hh-adv".into()));
        }
        Ok(())
    }

    fn adversary(&self) -> Result<AdversaryParams> {
        self.adv.ok_or_else(|| Error::Config(format!("{} needs adversary parameters", self.source.dist)))
    }

    pub fn describe(&self) -> String {
        format!(
            "tracker={} k={} eps={} phi={} n={} dist={} mode={} placement={} seed={}",
            self.tracker,
            self.cfg.k,
            self.cfg.eps,
            self.cfg.phi,
            self.source.n,
            self.source.dist,
            self.mode,
            self.source.placement,
            self.source.seed
        )
    }
}

/// One CSV row: the state after a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub tracker: TrackerKind,
    pub k: usize,
    pub eps: f64,
    pub phi: f64,
    pub n_so_far: u64,
    pub messages: u64,
    pub words: u64,
    /// Cumulative.
    pub violations: u64,
    pub bound_messages: f64,
}

impl Row {
    fn record(&self) -> [String; 9] {
        [
            self.tracker.to_string(),
            self.k.to_string(),
            self.eps.to_string(),
            self.phi.to_string(),
            self.n_so_far.to_string(),
            self.messages.to_string(),
            self.words.to_string(),
            self.violations.to_string(),
            format!("{:.3}", self.bound_messages),
        ]
    }

    fn parse(rec: &csv::StringRecord, line: usize) -> Result<Row> {
        let field = |i: usize| {
            rec.get(i).ok_or_else(|| Error::Trace { line, reason: format!("missing column {}", CSV_HEADER[i]) })
        };
        let bad = |i: usize| Error::Trace { line, reason: format!("bad {}", CSV_HEADER[i]) };
        Ok(Row {
            tracker: field(0)?.parse()?,
            k: field(1)?.parse().map_err(|_| bad(1))?,
            eps: field(2)?.parse().map_err(|_| bad(2))?,
            phi: field(3)?.parse().map_err(|_| bad(3))?,
            n_so_far: field(4)?.parse().map_err(|_| bad(4))?,
            messages: field(5)?.parse().map_err(|_| bad(5))?,
            words: field(6)?.parse().map_err(|_| bad(6))?,
            violations: field(7)?.parse().map_err(|_| bad(7))?,
            bound_messages: field(8)?.parse().map_err(|_| bad(8))?,
        })
    }
}

#[derive(Debug)]
pub struct RunResult {
    pub spec: RunSpec,
    pub rows: Vec<Row>,
    pub ledger: CostLedger,
    pub report: ViolationReport,
    pub attack: Option<AttackReport>,
}

pub fn run_one(spec: &RunSpec) -> Result<RunResult> {
    run_one_with(spec, &mut |_, _| {})
}

/// [`run_one`], also calling `extra` at every checkpoint.
pub fn run_one_with(spec: &RunSpec, extra: &mut CheckpointHook<'_>) -> Result<RunResult> {
    spec.validate()?;
    let tracker = make_tracker(spec.tracker, spec.cfg, spec.mode)?;
    let mut run = SimulationRun::new(tracker, spec.policy);
    let mut rows = Vec::new();
    let (kind, k, eps, phi) = (spec.tracker, spec.cfg.k, to_f64(spec.cfg.eps), to_f64(spec.cfg.phi));
    let mut hook = |run: &SimulationRun, ev: &crate::ledger::ArrivalEvent| {
        extra(run, ev);
        let t = run.ledger().totals();
        let n = run.steps();
        rows.push(Row {
            tracker: kind,
            k,
            eps,
            phi,
            n_so_far: n,
            messages: t.messages,
            words: t.words,
            violations: run.report().len() as u64,
            bound_messages: bound_messages(kind, k, eps, n),
        });
    };
    let mut attack = None;
    if spec.source.placement == Placement::Whitebox {
        let a = spec.adversary()?;
        let plan = HhLowerBoundPlan::new(a.phi, a.eps, a.m0)?;
        attack = Some(whitebox_attack_with(&mut run, &plan, spec.source.n, &mut hook)?);
    } else {
        let events = spec.source.events(spec.cfg.k, spec.adv)?;
        run.run_with(events, &mut hook)?;
    }
    let (ledger, report) = run.finish();
    Ok(RunResult { spec: spec.clone(), rows, ledger, report, attack })
}

/// Runs one after another, in order.
pub fn run_sequential(specs: &[RunSpec]) -> Vec<Result<RunResult>> {
    specs.iter().map(run_one).collect()
}

/// Runs on the rayon pool; results keep the order of `specs`.
#[cfg(feature = "parallel")]
pub fn run_all(specs: &[RunSpec]) -> Vec<Result<RunResult>> {
    use rayon::prelude::*;
    specs.par_iter().map(run_one).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn run_all(specs: &[RunSpec]) -> Vec<Result<RunResult>> {
    run_sequential(specs)
}

pub fn write_csv<W: Write>(out: W, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, rows: &[Row]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, rows)
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Trace {
            line: 1,
            reason: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    r.records().enumerate().map(|(i, rec)| Row::parse(&rec?, i + 2)).collect()
}

pub fn read_csv_file(path: &Path) -> Result<Vec<Row>> {
    read_csv(std::fs::File::open(path)?)
}

/// The last row of every run. A run ends where the parameters change or
/// `n_so_far` stops increasing.
pub fn final_rows(rows: &[Row]) -> Vec<Row> {
    let mut out: Vec<Row> = Vec::new();
    let mut prev: Option<&Row> = None;
    for r in rows {
        let same_run = prev.is_some_and(|p| {
            p.tracker == r.tracker && p.k == r.k && p.eps == r.eps && p.phi == r.phi && r.n_so_far > p.n_so_far
        });
        if same_run {
            *out.last_mut().expect("run has a row") = r.clone();
        } else {
            out.push(r.clone());
        }
        prev = Some(r);
    }
    out
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub exponent: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub points: usize,
}

pub fn fit_loglog(points: &[(f64, f64)]) -> Result<Fit> {
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::Fit(format!("log fit needs positive values, got ({x}, {y})")));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3 {
        return Err(Error::Fit(format!("under-determined: {} distinct parameter values, need 3", xs.len())));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - exponent * x).powi(2)).sum();
    Ok(Fit { exponent, intercept, residual: (sse / n).sqrt(), points: points.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Param {
    K,
    InvEps,
    LogN,
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Param::K => "k",
            Param::InvEps => "1/eps",
            Param::LogN => "log n",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub tracker: TrackerKind,
    pub param: Param,
    /// The parameters held fixed, e.g. `k=4 eps=0.1 phi=0.5`.
    pub fixed: String,
    pub fit: Fit,
}

impl fmt::Display for ScalingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] exponent on {} = {:.3} (residual {:.3}, {} runs)",
            self.tracker, self.fixed, self.param, self.fit.exponent, self.fit.residual, self.fit.points
        )
    }
}

/// Fits total messages against each parameter that varies over at least
/// three values while the others stay fixed.
pub fn fit_scaling(rows: &[Row]) -> Result<Vec<ScalingReport>> {
    let runs = final_rows(rows);
    let mut out = Vec::new();
    for param in [Param::K, Param::InvEps, Param::LogN] {
        let mut groups: BTreeMap<String, (TrackerKind, Vec<(f64, f64)>)> = BTreeMap::new();
        for r in &runs {
            let (x, fixed) = match param {
                Param::K => (r.k as f64, format!("eps={} phi={} n={}", r.eps, r.phi, r.n_so_far)),
                Param::InvEps => (1.0 / r.eps, format!("k={} phi={} n={}", r.k, r.phi, r.n_so_far)),
                Param::LogN => ((r.n_so_far as f64).log2(), format!("k={} eps={} phi={}", r.k, r.eps, r.phi)),
            };
            groups
                .entry(format!("{} {fixed}", r.tracker))
                .or_insert_with(|| (r.tracker, Vec::new()))
                .1
                .push((x, r.messages as f64));
        }
        for (key, (tracker, pts)) in groups {
            if let Ok(fit) = fit_loglog(&pts) {
                let fixed = key.split_once(' ').map_or(String::new(), |(_, f)| f.to_string());
                out.push(ScalingReport { tracker, param, fixed, fit });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Fit(format!(
            "under-determined: {} runs, none varying one of k, 1/eps, log n over 3 values with the rest fixed",
            runs.len()
        )));
    }
    Ok(out)
}

/// Lists of values per parameter; the runs are their cartesian product.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub trackers: Vec<TrackerKind>,
    pub ks: Vec<usize>,
    pub eps: Vec<Frac>,
    pub phis: Vec<Frac>,
    pub ns: Vec<u64>,
    pub dists: Vec<Distribution>,
    pub modes: Vec<Mode>,
    pub placements: Vec<Placement>,
    pub seeds: Vec<u64>,
    pub u: u64,
    /// Prefix length of the adversarial streams.
    pub m0: u64,
    /// φ of the heavy-hitter construction; defaults to the run's φ.
    pub adv_phi: Option<Frac>,
    pub checkpoint_every: Option<u64>,
    pub invariants: bool,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            trackers: Vec::new(),
            ks: vec![4],
            eps: vec![Frac::new(1, 10)],
            phis: vec![Frac::new(1, 5)],
            ns: vec![10_000],
            dists: vec![Distribution::Uniform],
            modes: vec![Mode::Exact],
            placements: vec![Placement::RoundRobin],
            seeds: vec![1],
            u: 100_000,
            m0: 1000,
            adv_phi: None,
            checkpoint_every: None,
            invariants: false,
            out: None,
        }
    }
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    let items: Vec<T> = value
        .split(',')
        .map(|v| v.trim().parse::<T>().map_err(|e| Error::Config(format!("{key}: bad value {v:?}: {e}"))))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    Ok(items)
}

fn fracs(key: &str, value: &str) -> Result<Vec<Frac>> {
    value.split(',').map(|v| parse_frac(v.trim()).map_err(|e| Error::Config(format!("{key}: {e}")))).collect()
}

fn single<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| Error::Config(format!("{key}: bad value {value:?}: {e}")))
}

impl ExperimentSpec {
    /// Sets one parameter from its flag name (without dashes).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim().trim_start_matches("--") {
            "tracker" => self.trackers = list(key, value)?,
            "k" => self.ks = list(key, value)?,
            "eps" => self.eps = fracs(key, value)?,
            "phi" => self.phis = fracs(key, value)?,
            "n" => self.ns = list(key, value)?,
            "dist" => self.dists = list(key, value)?,
            "mode" => self.modes = list(key, value)?,
            "placement" => self.placements = list(key, value)?,
            "seed" => self.seeds = list(key, value)?,
            "u" => self.u = single(key, value)?,
            "m0" => self.m0 = single(key, value)?,
            "adv-phi" => self.adv_phi = Some(parse_frac(value.trim())?),
            "checkpoint-every" => self.checkpoint_every = Some(single(key, value)?),
            "invariants" => self.invariants = single(key, value)?,
            "out" => self.out = Some(PathBuf::from(value.trim())),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", i + 1)))?;
            self.set(k, v).map_err(|e| Error::Config(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Expands and validates every run.
    pub fn runs(&self) -> Result<Vec<RunSpec>> {
        let mut out = Vec::new();
        for &tracker in &self.trackers {
            for &k in &self.ks {
                for &eps in &self.eps {
                    for &phi in &self.phis {
                        for &n in &self.ns {
                            for dist in &self.dists {
                                for &mode in &self.modes {
                                    for &placement in &self.placements {
                                        for &seed in &self.seeds {
                                            let spec =
                                                self.expand(tracker, k, eps, phi, n, dist, mode, placement, seed);
                                            let spec = spec.and_then(|s| s.validate().map(|_| s)).map_err(|e| {
                                                let why = match e {
                                                    Error::Config(m) => m,
                                                    other => other.to_string(),
                                                };
                                                Error::Config(format!("run #{}: {why}", out.len() + 1))
                                            })?;
                                            out.push(spec);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn expand(
        &self,
        tracker: TrackerKind,
        k: usize,
        eps: Frac,
        phi: Frac,
        n: u64,
        dist: &Distribution,
        mode: Mode,
        placement: Placement,
        seed: u64,
    ) -> Result<RunSpec> {
        let cfg = TrackerConfig::new(k, eps, phi, self.u)?;
        let source = StreamSource::new(dist.clone(), self.u, n, seed).with_placement(placement);
        let mut policy = match self.checkpoint_every {
            Some(c) => CheckpointPolicy::every(c),
            None => CheckpointPolicy::default_for(n),
        };
        policy.invariants = self.invariants;
        let mut spec = RunSpec::new(tracker, cfg, mode, source).with_policy(policy);
        if matches!(dist, Distribution::HhAdversary | Distribution::MedianAdversary) {
            spec = spec.with_adversary(AdversaryParams { phi: self.adv_phi.unwrap_or(phi), eps, m0: self.m0 });
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_exponent() {
        let pts: Vec<(f64, f64)> = [2.0, 4.0, 8.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(1.5))).collect();
        let f = fit_loglog(&pts).unwrap();
        assert!((f.exponent - 1.5).abs() < 1e-9);
        assert!(f.residual < 1e-9);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn fit_rejects_under_determined() {
        assert!(matches!(fit_loglog(&[(1.0, 2.0), (2.0, 4.0)]), Err(Error::Fit(_))));
        assert!(fit_loglog(&[(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)]).is_err());
        assert!(fit_loglog(&[(1.0, 0.0), (2.0, 3.0), (3.0, 4.0)]).is_err());
    }

    #[test]
    fn config_lines_mirror_flags() {
        let mut s = ExperimentSpec::default();
        s.apply_config("# sweep\ntracker=hh,quantile\nk = 2,4\n\neps=0.1\ndist=zipf:1.2\nout=x.csv\n").unwrap();
        assert_eq!(s.trackers, vec![TrackerKind::HeavyHitters, TrackerKind::Quantile]);
        assert_eq!(s.ks, vec![2, 4]);
        assert_eq!(s.dists, vec![Distribution::Zipf(1.2)]);
        assert_eq!(s.runs().unwrap().len(), 4);
        let e = s.apply_config("k=2\nbogus=1").unwrap_err();
        assert!(e.to_string().contains("line 2"));
    }

    #[test]
    fn invalid_combinations_are_named() {
        let mut s = ExperimentSpec::default();
        s.set("tracker", "hh").unwrap();
        s.set("phi", "0.05").unwrap();
        assert!(s.runs().unwrap_err().to_string().contains("phi >= eps"));
        s.set("phi", "0.31").unwrap();
        s.set("eps", "0.05").unwrap();
        s.set("dist", "hh-adv").unwrap();
        assert!(s.runs().unwrap_err().to_string().contains("not an integer"));
        s.set("phi", "0.3").unwrap();
        assert!(s.runs().is_ok());
        s.set("placement", "whitebox").unwrap();
        assert!(s.runs().is_ok());
        s.set("dist", "uniform").unwrap();
        assert!(s.runs().unwrap_err().to_string().contains("whitebox"));
        let mut s = ExperimentSpec::default();
        s.set("tracker", "allq").unwrap();
        s.set("mode", "sketch").unwrap();
        assert!(s.runs().is_err());
    }

    #[test]
    fn empty_spec_has_no_runs() {
        assert!(ExperimentSpec::default().runs().unwrap().is_empty());
    }

    #[test]
    fn final_rows_split_runs() {
        let row = |k, n| Row {
            tracker: TrackerKind::HeavyHitters,
            k,
            eps: 0.1,
            phi: 0.2,
            n_so_far: n,
            messages: n,
            words: n,
            violations: 0,
            bound_messages: 0.0,
        };
        let rows = vec![row(2, 1), row(2, 2), row(2, 1), row(2, 5), row(4, 3)];
        let f = final_rows(&rows);
        assert_eq!(f.iter().map(|r| (r.k, r.n_so_far)).collect::<Vec<_>>(), vec![(2, 2), (2, 5), (4, 3)]);
    }

    #[test]
    fn csv_round_trip() {
        let r = Row {
            tracker: TrackerKind::AllQuantiles,
            k: 8,
            eps: 0.02,
            phi: 0.5,
            n_so_far: 1000,
            messages: 10,
            words: 30,
            violations: 0,
            bound_messages: bound_messages(TrackerKind::AllQuantiles, 8, 0.02, 1000),
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, std::slice::from_ref(&r)).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0].messages, 10);
        assert!((back[0].bound_messages - r.bound_messages).abs() < 1e-3);
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
