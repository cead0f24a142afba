use disttrack::experiment::make_tracker;
use disttrack::hh::HhTracker;
use disttrack::quantile::QuantileTracker;
use disttrack::stream::{AdversaryParams, Distribution, Placement, StreamSource};
use disttrack::*;

fn run(kind: TrackerKind, dist: &str, k: usize, eps: &str, phi: &str, n: u64, seed: u64) -> SimulationRun {
    let adv =
        AdversaryParams { phi: config::parse_frac("0.35").unwrap(), eps: config::parse_frac("0.1").unwrap(), m0: 1000 };
    let events = StreamSource::new(dist.parse::<Distribution>().unwrap(), 10_000, n, seed)
        .with_placement(Placement::Random)
        .events(k, Some(adv))
        .unwrap();
    let cfg = TrackerConfig::parse(k, eps, phi, 10_000).unwrap();
    let mut r = SimulationRun::new(make_tracker(kind, cfg, Mode::Exact).unwrap(), CheckpointPolicy::every(50));
    for ev in &events {
        r.step(ev).unwrap();
    }
    r
}

// Sites drop their partial total at every resync while per-item counters
// keep theirs, so each resync can leave up to one item-signal per site
// unmatched.
#[test]
fn item_signals_are_bounded_by_all_signals() {
    for dist in ["uniform", "zipf:1.5", "sorted", "hh-adv"] {
        for k in [2, 8] {
            let r = run(TrackerKind::HeavyHitters, dist, k, "0.05", "0.1", 50_000, 3);
            let items = r.ledger().messages(MessageKind::ItemSignal);
            let alls = r.ledger().messages(MessageKind::AllSignal);
            let resyncs = r.tracker().as_any().downcast_ref::<HhTracker>().unwrap().resyncs();
            assert!(
                items <= alls + k as u64 * (resyncs + 1),
                "{dist} k={k}: {items} item vs {alls} all, {resyncs} resyncs"
            );
            assert!(r.report().is_empty());
        }
    }
}

#[test]
fn relocations_per_round_stay_bounded() {
    for (dist, phi) in
        [("uniform", "0.5"), ("sorted", "0.5"), ("sorted", "0.1"), ("median-adv", "0.5"), ("zipf:1.2", "0.9")]
    {
        let eps = 0.05;
        let r = run(TrackerKind::Quantile, dist, 4, "0.05", phi, 100_000, 5);
        assert!(r.report().is_empty(), "{dist}: {:?}", r.report().violations.first());
        let q = r.tracker().as_any().downcast_ref::<QuantileTracker>().unwrap();
        let p: f64 = phi.parse().unwrap();
        let cap = (4.0 * p.max(1.0 - p) / eps + 1.0) as u64;
        let worst = q.activity().iter().map(|a| a.relocations).max().unwrap();
        assert!(worst <= cap, "{dist} φ={phi}: {worst} relocations in one round, cap {cap}");
    }
}

#[test]
fn median_cost_constant_is_stable() {
    let ratio = |seed| {
        let r = run(TrackerKind::Quantile, "uniform", 8, "0.05", "0.5", 100_000, seed);
        assert!(r.report().is_empty());
        r.ledger().total_messages() as f64 / ((8.0 / 0.05) * (100_000f64).log2())
    };
    let fitted = ratio(1);
    assert_eq!(fitted, ratio(1));
    for seed in 2..5 {
        let c = ratio(seed);
        assert!((c / fitted - 1.0).abs() < 0.1, "seed {seed}: {c} vs fitted {fitted}");
    }
}
