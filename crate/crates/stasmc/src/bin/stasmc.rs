//! Command-line front end.
//!
//! Exit codes: 0 pass, 1 a verdict failed, 2 engine or config error,
//! 3 `verify-pom` ran out of budget.
//!
//! Platoon settings resolve as built-in defaults, then `--config`, then
//! each `--set key=value` in order.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stasmc::cas::{build_platoon, PlatoonConfig, TapRegistry};
use stasmc::pom::{verify_bounded, BlockNetwork, BoundedResult};
use stasmc::sim::{simulate_compiled, write_events_csv, write_signal_csv, RngStream};
use stasmc::smc::{EstimateParams, HypothesisParams, Payload, Query, QueryOptions};
use stasmc::sta::model::Network;
use stasmc::sta::network::CompiledNetwork;
use stasmc::suite::{run_suite, EntryVerdict, Runner, SuiteOptions};
use stasmc::tadl::{aggregate, run_monitor, write_verdicts_csv, Aggregate, ConstraintSpec, EventStream};

type Failure = Box<dyn std::error::Error>;

#[derive(Parser)]
#[command(name = "stasmc", version, about = "Statistical model checking of stochastic timed automata")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one run and write its event log and watched signals.
    Simulate(SimulateArgs),
    /// Estimate a probability, test a hypothesis or compute an expected extremum.
    Query(QueryArgs),
    /// Run the platoon requirement catalog.
    Suite(SuiteArgs),
    /// Exhaustively check a block network's proof objectives.
    VerifyPom(PomArgs),
    /// Check a timing constraint against a recorded event CSV.
    Monitor(MonitorArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Network JSON file; the platoon model when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Platoon config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one platoon config field, e.g. `--set comm_loss_prob=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SeedArgs {
    /// Master seed; drawn from entropy and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "STASMC_JOBS")]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    seed: SeedArgs,
    #[arg(long, default_value_t = 3000.0)]
    bound: f64,
    /// Run index within the seed's stream family.
    #[arg(long, default_value_t = 0)]
    run: u64,
    /// Expression to sample at every event; `@tag` expands a platoon predicate.
    #[arg(long)]
    watch: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Estimate,
    Test,
    Expected,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Max,
    Min,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    seed: SeedArgs,
    #[arg(long, value_enum)]
    kind: Kind,
    /// `[] pred` or `<> pred` for probabilities (bare means `[]`), an
    /// expression for expected values.
    property: String,
    #[arg(long, default_value_t = 3000.0)]
    bound: f64,
    /// Threshold for `test`.
    #[arg(long, default_value_t = 0.95)]
    p0: f64,
    /// Test `Pr <= p0` instead of `Pr >= p0`.
    #[arg(long)]
    at_most: bool,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[arg(long, default_value_t = 10_000)]
    max_runs: usize,
    /// Runs for `expected`.
    #[arg(long, default_value_t = 100)]
    runs: usize,
    #[arg(long, value_enum, default_value = "max")]
    mode: Mode,
    /// Also write the result row here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-run extrema of an `expected` query as a histogram CSV.
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Args)]
struct SuiteArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    seed: SeedArgs,
    /// Comma-separated ids; the whole catalog when empty.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    #[arg(long, default_value_t = 10_000)]
    max_runs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the first failing run of every violated entry here.
    #[arg(long)]
    export: Option<PathBuf>,
}

#[derive(Args)]
struct PomArgs {
    /// Block network JSON file.
    blocks: PathBuf,
    #[arg(long)]
    horizon: usize,
    /// Largest number of input traces to enumerate.
    #[arg(long, default_value_t = 1 << 20)]
    budget: u64,
    /// Counterexample CSV.
    #[arg(long, default_value = "counterexample.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct MonitorArgs {
    /// Constraint JSON, e.g. `{"kind": "sporadic", "event": "a", "min": 20}`.
    #[arg(long)]
    spec: PathBuf,
    /// Event CSV with a `time_ms` column.
    events: PathBuf,
    /// End of the observation window; the last event when omitted.
    #[arg(long)]
    end: Option<f64>,
    /// Per-occurrence verdict CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Query(a) => query(a),
        Cmd::Suite(a) => suite(a),
        Cmd::VerifyPom(a) => verify_pom(a),
        Cmd::Monitor(a) => monitor(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn seed_of(a: &SeedArgs) -> u64 {
    match a.seed {
        Some(s) => s,
        None => {
            let s = rand::random();
            eprintln!("seed {s}");
            s
        }
    }
}

fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure>
where
    T: Send,
{
    match jobs {
        None => Ok(f()),
        Some(j) => Ok(rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build()?.install(f)),
    }
}

fn platoon_config(a: &ModelArgs) -> Result<PlatoonConfig, Failure> {
    let mut table: toml::Table = match &a.config {
        Some(p) => toml::from_str(&fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?)?,
        None => toml::Table::new(),
    };
    for kv in &a.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        let value = match toml::from_str::<toml::Table>(&format!("v = {v}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(v.to_string()),
        };
        table.insert(k.trim().to_string(), value);
    }
    let cfg: PlatoonConfig = toml::Value::Table(table).try_into()?;
    cfg.check()?;
    Ok(cfg)
}

/// The compiled network and, for the platoon, its tap registry.
fn load_model(a: &ModelArgs) -> Result<(CompiledNetwork, Option<TapRegistry>), Failure> {
    match &a.model {
        Some(p) => {
            if a.config.is_some() || !a.set.is_empty() {
                return Err("--config and --set apply to the platoon model only".into());
            }
            let net = Network::load(p)?;
            Ok((CompiledNetwork::compile(&net)?, None))
        }
        None => {
            let p = build_platoon(&platoon_config(a)?)?;
            Ok((CompiledNetwork::compile(&p.network)?, Some(p.taps)))
        }
    }
}

fn expand(taps: &Option<TapRegistry>, s: &str) -> Result<String, Failure> {
    match taps {
        Some(t) => Ok(t.expand(s)?),
        None if s.contains('@') => Err("@tag predicates need the platoon model".into()),
        None => Ok(s.to_string()),
    }
}

fn simulate(a: SimulateArgs) -> Result<u8, Failure> {
    let (net, taps) = load_model(&a.model)?;
    let seed = seed_of(&a.seed);
    let mut watch = vec![];
    for w in &a.watch {
        watch.push((w.clone(), net.compile_str(&expand(&taps, w)?)?));
    }
    let run = simulate_compiled(&net, a.bound, RngStream::new(seed, a.run), &watch)?;
    let mut files: Vec<(PathBuf, Vec<u8>)> = vec![];
    let mut buf = vec![];
    write_events_csv(&net, &run, &mut buf)?;
    files.push((a.out.join("events.csv"), buf));
    for (k, sig) in run.signals.iter().enumerate() {
        let mut buf = vec![];
        write_signal_csv(sig, &mut buf)?;
        files.push((a.out.join(format!("watch_{k}.csv")), buf));
    }
    if let Some(reg) = &taps {
        let set = reg.tap_set(&net)?;
        let mut stream = EventStream { end: Some(run.end), ..EventStream::default() };
        for (k, ev) in run.events.iter().enumerate() {
            set.record(&net, &run.snapshots[k + 1], ev, &mut stream)?;
        }
        let mut buf = vec![];
        stream.write_csv(&mut buf)?;
        files.push((a.out.join("taps.csv"), buf));
        files.push((a.out.join("manifest.csv"), reg.manifest().into_bytes()));
    }
    fs::create_dir_all(&a.out)?;
    for (p, bytes) in &files {
        fs::write(p, bytes)?;
    }
    println!("seed {seed} run {} events {} end {}", a.run, run.events.len(), run.end);
    for (k, w) in a.watch.iter().enumerate() {
        println!("watch_{k}.csv  {w}");
    }
    Ok(0)
}

fn query_text(a: &QueryArgs, property: &str) -> String {
    let b = a.bound;
    match a.kind {
        Kind::Expected => {
            let m = match a.mode {
                Mode::Max => "max",
                Mode::Min => "min",
            };
            format!("E[<={b};{}]({m}: {property})", a.runs)
        }
        Kind::Estimate | Kind::Test => {
            let p = property.trim();
            let path = if p.starts_with("[]") || p.starts_with("<>") { p.to_string() } else { format!("[] {p}") };
            let test = match (a.kind, a.at_most) {
                (Kind::Test, false) => format!(" >= {}", a.p0),
                (Kind::Test, true) => format!(" <= {}", a.p0),
                _ => String::new(),
            };
            format!("Pr[<={b}]({path}){test}")
        }
    }
}

fn query(a: QueryArgs) -> Result<u8, Failure> {
    let (net, taps) = load_model(&a.model)?;
    let seed = seed_of(&a.seed);
    let q = Query::parse(&query_text(&a, &expand(&taps, &a.property)?))?;
    let opts = QueryOptions {
        estimate: EstimateParams { epsilon: a.epsilon, alpha: a.alpha },
        hypothesis: HypothesisParams { delta: a.delta, alpha: a.alpha, beta: a.alpha, max_runs: a.max_runs, ..HypothesisParams::new(a.p0) },
    };
    let r = with_jobs(a.seed.jobs, || q.execute(&net, &opts, seed))??;
    let (lo, hi, verdict) = match &r.payload {
        Payload::Interval { lo, hi, .. } => (Some(*lo), Some(*hi), None),
        Payload::Verdict(v) => (None, None, Some(*v)),
        Payload::Expected { mean, half_width, .. } => (Some(mean - half_width), Some(mean + half_width), None),
        Payload::Traces(_) => unreachable!("simulate queries are not built here"),
    };
    let result = match &r.payload {
        Payload::Expected { mean, half_width, .. } => format!("{mean:.3};{half_width:.3}"),
        _ => match verdict {
            Some(v) => v.to_string(),
            None => format!("[{:.4};{:.4}]", lo.unwrap(), hi.unwrap()),
        },
    };
    let kind = q.kind();
    println!("{kind} {result} runs {} seed {seed}", r.runs_used);
    if let Some(out) = &a.out {
        let num = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["query_id", "kind", "lo", "hi", "verdict", "runs_used", "seed"])?;
        w.write_record([
            &q.to_string(),
            kind,
            &num(lo),
            &num(hi),
            &verdict.map(|v| v.to_string()).unwrap_or_default(),
            &r.runs_used.to_string(),
            &seed.to_string(),
        ])?;
        fs::write(out, w.into_inner()?)?;
    }
    if let Some(path) = &a.histogram {
        let Payload::Expected { values, .. } = &r.payload else {
            return Err("--histogram needs --kind expected".into());
        };
        fs::write(path, histogram_csv(values, a.bins.max(1))?)?;
    }
    Ok(0)
}

/// Equal-width bins over the observed range; the last bin is closed.
fn histogram_csv(values: &[f64], bins: usize) -> Result<Vec<u8>, Failure> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    if values.is_empty() {
        return Ok(w.into_inner()?);
    }
    for (i, c) in counts.iter().enumerate() {
        let a = lo + width * i as f64;
        w.write_record([a.to_string(), (a + width).to_string(), c.to_string()])?;
    }
    Ok(w.into_inner()?)
}

fn suite(a: SuiteArgs) -> Result<u8, Failure> {
    if a.model.model.is_some() {
        return Err("the suite runs on the platoon model only".into());
    }
    let cfg = platoon_config(&a.model)?;
    let seed = seed_of(&a.seed);
    let opts = SuiteOptions { seed, jobs: a.seed.jobs, only: a.only.clone(), max_runs: a.max_runs };
    let report = run_suite(&cfg, &opts)?;
    println!("{}", report.table());
    if let Some(dir) = &a.export {
        let runner = Runner::new(&cfg, &a.only, seed)?;
        for e in report.entries.iter().filter(|e| e.verdict == EntryVerdict::Violated) {
            if let Some(i) = e.counterexample {
                for p in runner.export_run(i, dir, &format!("{}_run{i}", e.id))? {
                    println!("wrote {}", p.display());
                }
            }
        }
    }
    if let Some(out) = &a.out {
        let mut buf = vec![];
        report.write_csv(&mut buf)?;
        fs::write(out, buf)?;
    }
    Ok(report.any_failed() as u8)
}

fn verify_pom(a: PomArgs) -> Result<u8, Failure> {
    let net = BlockNetwork::load(&a.blocks)?;
    match verify_bounded(&net, a.horizon, a.budget)? {
        BoundedResult::Valid { traces, admissible } => {
            println!("valid ({admissible} admissible of {traces} traces)");
            Ok(0)
        }
        BoundedResult::Counterexample { trace, report } => {
            let mut buf = vec![];
            trace.write_csv(&mut buf)?;
            fs::write(&a.out, buf)?;
            let at: Vec<String> = report.failures.iter().map(|f| format!("{}@{}", f.objective, f.step)).collect();
            println!("counterexample {} fails {}", a.out.display(), at.join(" "));
            Ok(1)
        }
        BoundedResult::BudgetExceeded { bits, budget } => {
            println!("budget_exceeded ({bits} input bits, budget {budget})");
            Ok(3)
        }
    }
}

fn monitor(a: MonitorArgs) -> Result<u8, Failure> {
    let spec: ConstraintSpec = serde_json::from_str(&read(&a.spec)?)?;
    let mut stream = EventStream::read_csv(fs::File::open(&a.events).map_err(|e| format!("{}: {e}", a.events.display()))?)?;
    stream.end = a.end;
    let occ = run_monitor(&spec, &stream)?;
    if let Some(out) = &a.out {
        let mut buf = vec![];
        write_verdicts_csv(&occ, &mut buf)?;
        fs::write(out, buf)?;
    }
    let agg = aggregate(&occ);
    println!("{} {agg:?} occurrences {}", spec.kind(), occ.len());
    Ok(matches!(agg, Aggregate::SomeFail) as u8)
}

fn read(p: &Path) -> Result<String, Failure> {
    Ok(fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?)
}
