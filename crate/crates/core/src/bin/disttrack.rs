use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use disttrack::config::parse_frac;
use disttrack::experiment::{self, ExperimentSpec};
use disttrack::stream::{self, AdversaryParams, Distribution, Placement, StreamSource};
use disttrack::{Error, Result};

#[derive(Parser)]
#[command(name = "disttrack", version, about = "Simulate distributed heavy-hitter and quantile trackers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a sweep and write one CSV row per checkpoint. Comma lists sweep.
    Run(Box<RunArgs>),
    /// Fit message-count exponents from CSV files written by `run`.
    Fit {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
    /// Write a stream as a `seq site item` trace.
    Gen(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// key=value file mirroring these flags; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// hh, quantile or allq
    #[arg(long)]
    tracker: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    phi: Option<String>,
    #[arg(long)]
    n: Option<String>,
    /// uniform, zipf:<s>, sorted, permutation, trace:<path>, hh-adv, median-adv
    #[arg(long)]
    dist: Option<String>,
    /// exact or sketch
    #[arg(long)]
    mode: Option<String>,
    /// rr, random or whitebox
    #[arg(long)]
    placement: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<String>,
    /// Universe size.
    #[arg(long)]
    u: Option<String>,
    /// Prefix length of the adversarial streams.
    #[arg(long)]
    m0: Option<String>,
    /// φ of the heavy-hitter construction, if it differs from --phi.
    #[arg(long)]
    adv_phi: Option<String>,
    /// Also check protocol invariants after every event.
    #[arg(long)]
    invariants: bool,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "uniform")]
    dist: Distribution,
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 100_000)]
    u: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "rr")]
    placement: Placement,
    #[arg(long, default_value = "0.3")]
    phi: String,
    #[arg(long, default_value = "0.05")]
    eps: String,
    #[arg(long, default_value_t = 1000)]
    m0: u64,
    #[arg(long)]
    out: PathBuf,
}

fn build_spec(a: &RunArgs) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    if let Some(path) = &a.config {
        spec.apply_config(&std::fs::read_to_string(path)?)?;
    }
    let flags = [
        ("tracker", &a.tracker),
        ("k", &a.k),
        ("eps", &a.eps),
        ("phi", &a.phi),
        ("n", &a.n),
        ("dist", &a.dist),
        ("mode", &a.mode),
        ("placement", &a.placement),
        ("seed", &a.seed),
        ("checkpoint-every", &a.checkpoint_every),
        ("u", &a.u),
        ("m0", &a.m0),
        ("adv-phi", &a.adv_phi),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            spec.set(key, v)?;
        }
    }
    if a.invariants {
        spec.invariants = true;
    }
    if let Some(out) = &a.out {
        spec.out = Some(out.clone());
    }
    Ok(spec)
}

/// Returns whether any run saw a violation.
fn run(a: &RunArgs) -> Result<bool> {
    let spec = build_spec(a)?;
    let runs = spec.runs()?;
    if runs.is_empty() {
        eprintln!("no runs specified");
        return Ok(false);
    }
    let mut rows = Vec::new();
    let mut violated = false;
    for result in experiment::run_all(&runs) {
        let r = result?;
        let t = r.ledger.totals();
        eprintln!(
            "{}: messages={} words={} rounds={} violations={}",
            r.spec.describe(),
            t.messages,
            t.words,
            r.ledger.round_deltas().len(),
            r.report.len()
        );
        if let Some(v) = r.report.violations.first() {
            eprintln!("  first violation: {v}");
        }
        violated |= !r.report.is_empty();
        rows.extend(r.rows);
    }
    match &spec.out {
        Some(path) => experiment::write_csv_file(path, &rows)?,
        None => experiment::write_csv(io::stdout().lock(), &rows)?,
    }
    Ok(violated)
}

fn fit(paths: &[PathBuf]) -> Result<()> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(experiment::read_csv_file(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?);
    }
    for report in experiment::fit_scaling(&rows)? {
        println!("{report}");
    }
    Ok(())
}

fn generate(a: &GenArgs) -> Result<()> {
    let adv = AdversaryParams { phi: parse_frac(&a.phi)?, eps: parse_frac(&a.eps)?, m0: a.m0 };
    let events =
        StreamSource::new(a.dist.clone(), a.u, a.n, a.seed).with_placement(a.placement).events(a.k, Some(adv))?;
    stream::write_trace(&a.out, &events)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::Fit { csv } => fit(csv).map(|_| false),
        Cmd::Gen(a) => generate(a).map(|_| false),
    };
    match outcome {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
