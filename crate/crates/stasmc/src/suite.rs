//! Runs the requirement catalog against the platoon. Every run index is
//! simulated once with all selected observers attached; each entry then
//! consumes the outcomes it needs in index order, so the report does not
//! depend on how many workers produced them.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::cas::{build_platoon, ConfigError, PlatoonConfig, TapRegistry};
use crate::catalog::{id_key, requirement_catalog, CatalogError, Check, RequirementSpec, BOUND, EXPECTED_RUNS};
use crate::sim::{simulate_compiled, write_events_csv, RngStream, SimError, Simulator, Step};
use crate::smc::{CompiledPath, HypothesisParams, PathProperty, Shape, SmcError, Sprt, Verdict};
use crate::sta::expr::CExpr;
use crate::sta::model::Network;
use crate::sta::network::{CompiledNetwork, StateEnv};
use crate::tadl::{run_monitor, ConstraintSpec, EventStream, MonitorError, OccVerdict, TapSet};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("unknown requirement {0}")]
    UnknownId(String),
    #[error("model does not validate: {0}")]
    Invalid(String),
    #[error(transparent)]
    Smc(#[from] SmcError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("report: {0}")]
    Io(#[from] std::io::Error),
    #[error("report: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Pass(bool),
    Value(f64),
}

enum Probe {
    Path(CompiledPath),
    Monitors(Vec<ConstraintSpec>),
    Max(CExpr),
}

/// The platoon with every selected entry wired in, ready to simulate.
pub struct Runner {
    pub net: CompiledNetwork,
    pub entries: Vec<RequirementSpec>,
    probes: Vec<Probe>,
    taps: TapSet,
    pub seed: u64,
    pub bound: f64,
}

impl Runner {
    /// `only` empty selects the whole catalog.
    pub fn new(cfg: &PlatoonConfig, only: &[String], seed: u64) -> Result<Self, SuiteError> {
        let platoon = build_platoon(cfg)?;
        let mut entries = requirement_catalog(cfg, &platoon.taps)?;
        if !only.is_empty() {
            for id in only {
                if !entries.iter().any(|e| &e.id == id) {
                    return Err(SuiteError::UnknownId(id.clone()));
                }
            }
            entries.retain(|e| only.contains(&e.id));
        }
        entries.sort_by_key(|e| id_key(&e.id));
        let mut net: Network = platoon.network;
        for e in &entries {
            if let Check::Observer(t) = &e.check {
                net = net.with_template(t.clone()).instance(&e.observer_name(), &t.name, vec![]);
            }
        }
        let net = CompiledNetwork::compile(&net).map_err(|r| SuiteError::Invalid(r.to_string()))?;
        let taps = tap_set(&net, &platoon.taps, &entries)?;
        let mut probes = vec![];
        for e in &entries {
            probes.push(match &e.check {
                Check::Observer(_) => {
                    Probe::Path(PathProperty::parse(Shape::Always, BOUND, &format!("!{}.fail", e.observer_name()))?.compile(&net)?)
                }
                Check::Invariant(p) => Probe::Path(PathProperty::parse(Shape::Always, BOUND, p)?.compile(&net)?),
                Check::Monitors(specs) => Probe::Monitors(specs.clone()),
                Check::Dual(spec) => Probe::Monitors(vec![spec.clone()]),
                Check::Expected { expr, .. } => Probe::Max(net.compile_str(expr).map_err(SmcError::from)?),
            });
        }
        Ok(Runner { net, entries, probes, taps, seed, bound: BOUND })
    }

    /// Simulates run `index` once and evaluates every entry on it.
    pub fn run(&self, index: u64) -> Result<Vec<Outcome>, SuiteError> {
        let (out, _) = self.run_with_stream(index)?;
        Ok(out)
    }

    /// As [`Runner::run`], also returning the tapped event stream.
    pub fn run_with_stream(&self, index: u64) -> Result<(Vec<Outcome>, EventStream), SuiteError> {
        let net = &self.net;
        let mut sim = Simulator::new(net, RngStream::new(self.seed, index))?;
        let mut ok = vec![true; self.probes.len()];
        let mut max = vec![f64::NEG_INFINITY; self.probes.len()];
        let mut stream = EventStream { end: Some(self.bound), ..EventStream::default() };
        loop {
            let h = sim.horizon(self.bound);
            let len = h - sim.now();
            for (i, p) in self.probes.iter().enumerate() {
                match p {
                    Probe::Path(cp) if ok[i] => {
                        if cp.segment_hits(net, sim.state(), len, false).map_err(SmcError::from)? {
                            ok[i] = false;
                        }
                    }
                    Probe::Max(e) => {
                        for dt in [0.0, len] {
                            let v = e.eval_f64(&StateEnv { net, state: sim.state(), inst: None, dt }).map_err(SmcError::from)?;
                            max[i] = max[i].max(v);
                        }
                    }
                    _ => {}
                }
            }
            match sim.step(self.bound)? {
                Step::Bound => break,
                Step::Event(ev) => self.taps.record(net, sim.state(), &ev, &mut stream)?,
                _ => {}
            }
        }
        let mut out = vec![];
        for (i, p) in self.probes.iter().enumerate() {
            out.push(match p {
                Probe::Path(_) => Outcome::Pass(ok[i]),
                Probe::Max(_) => Outcome::Value(max[i]),
                Probe::Monitors(specs) => {
                    let mut pass = true;
                    for s in specs {
                        pass &= !run_monitor(s, &stream)?.iter().any(|o| o.verdict == OccVerdict::Fail);
                    }
                    Outcome::Pass(pass)
                }
            });
        }
        Ok((out, stream))
    }
}

impl Runner {
    /// Writes the event log and the tapped stream of run `index` as
    /// `{stem}_events.csv` and `{stem}_taps.csv` under `dir`.
    pub fn export_run(&self, index: u64, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, SuiteError> {
        let run = simulate_compiled(&self.net, self.bound, RngStream::new(self.seed, index), &[])?;
        let (_, stream) = self.run_with_stream(index)?;
        let mut events = vec![];
        write_events_csv(&self.net, &run, &mut events)?;
        let mut taps = vec![];
        stream.write_csv(&mut taps)?;
        std::fs::create_dir_all(dir)?;
        let paths = vec![dir.join(format!("{stem}_events.csv")), dir.join(format!("{stem}_taps.csv"))];
        std::fs::write(&paths[0], events)?;
        std::fs::write(&paths[1], taps)?;
        Ok(paths)
    }
}

fn tap_set(net: &CompiledNetwork, reg: &TapRegistry, entries: &[RequirementSpec]) -> Result<TapSet, SuiteError> {
    let mut tags = BTreeSet::new();
    for e in entries {
        match &e.check {
            Check::Monitors(s) => tags.extend(s.iter().flat_map(|s| s.tags())),
            Check::Dual(s) => tags.extend(s.tags()),
            _ => {}
        }
    }
    let mut taps = TapSet::default();
    for tag in tags {
        let src = reg.events(&tag);
        if src.is_empty() {
            return Err(CatalogError(format!("no event tap {tag}")).into());
        }
        for (ch, payload) in src {
            taps.add(net, &tag, ch, payload)?;
        }
    }
    Ok(taps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryVerdict {
    Satisfied,
    Violated,
    Undecided,
}

impl EntryVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryVerdict::Satisfied => "satisfied",
            EntryVerdict::Violated => "violated",
            EntryVerdict::Undecided => "undecided",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryResult {
    pub id: String,
    pub kind: &'static str,
    pub query: String,
    pub verdict: EntryVerdict,
    /// `accepted`/`rejected`/`undecided`, or `mean;half_width` for expected
    /// values.
    pub value: String,
    pub runs_used: usize,
    /// Index of the first failing run among those consumed.
    pub counterexample: Option<u64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub entries: Vec<EntryResult>,
    pub seed: u64,
    pub config_hash: String,
    pub engine_version: &'static str,
}

impl SuiteReport {
    pub fn any_failed(&self) -> bool {
        self.entries.iter().any(|e| e.verdict == EntryVerdict::Violated)
    }

    pub fn get(&self, id: &str) -> Option<&EntryResult> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Everything except wall time, so equal seeds give equal bytes.
    pub fn write_csv(&self, out: impl Write) -> Result<(), SuiteError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "kind", "query", "verdict", "value", "runs_used", "counterexample", "seed", "config_hash", "engine"])?;
        for e in &self.entries {
            w.write_record([
                e.id.as_str(),
                e.kind,
                e.query.as_str(),
                e.verdict.as_str(),
                e.value.as_str(),
                &e.runs_used.to_string(),
                &e.counterexample.map(|c| c.to_string()).unwrap_or_default(),
                &self.seed.to_string(),
                self.config_hash.as_str(),
                self.engine_version,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let w = self.entries.iter().map(|e| e.value.len()).max().unwrap_or(0).max(5);
        let _ = writeln!(s, "{:<5} {:<10} {:<w$} {:>6} {:>9}  query", "id", "verdict", "value", "runs", "wall_ms");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:<5} {:<10} {:<w$} {:>6} {:>9.1}  {}",
                e.id,
                e.verdict.as_str(),
                e.value,
                e.runs_used,
                e.wall_ms,
                e.query
            );
        }
        let _ = write!(s, "seed {} config {} engine {}", self.seed, self.config_hash, self.engine_version);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Worker threads; the global pool when `None`.
    pub jobs: Option<usize>,
    pub only: Vec<String>,
    pub max_runs: usize,
}

impl SuiteOptions {
    pub fn new(seed: u64) -> Self {
        SuiteOptions { seed, jobs: None, only: vec![], max_runs: 10_000 }
    }
}

pub fn run_suite(cfg: &PlatoonConfig, opts: &SuiteOptions) -> Result<SuiteReport, SuiteError> {
    match opts.jobs {
        None => run_inner(cfg, opts),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build().map_err(|e| SuiteError::Pool(e.to_string()))?;
            pool.install(|| run_inner(cfg, opts))
        }
    }
}

fn run_inner(cfg: &PlatoonConfig, opts: &SuiteOptions) -> Result<SuiteReport, SuiteError> {
    let start = Instant::now();
    let runner = Runner::new(cfg, &opts.only, opts.seed)?;
    let n = runner.entries.len();
    let params = HypothesisParams { max_runs: opts.max_runs, ..HypothesisParams::new(0.95) };
    let mut sprts: Vec<Option<Sprt>> = vec![];
    for e in &runner.entries {
        sprts.push(match e.check {
            Check::Expected { .. } => None,
            _ => Some(Sprt::new(HypothesisParams { p0: e.p0, ..params })?),
        });
    }
    let need_values = runner.entries.iter().any(|e| matches!(e.check, Check::Expected { .. }));
    let mut values: Vec<Vec<f64>> = vec![vec![]; n];
    let mut first_fail: Vec<Option<u64>> = vec![None; n];
    let mut settled: Vec<Option<f64>> = vec![None; n];
    let batch = (4 * rayon::current_num_threads()).max(32) as u64;
    let mut next = 0u64;
    loop {
        let open_tests = sprts.iter().any(|s| s.as_ref().is_some_and(|s| s.verdict().is_none()));
        let open_values = need_values && (next as usize) < EXPECTED_RUNS;
        if !open_tests && !open_values {
            break;
        }
        let chunk: Vec<Vec<Outcome>> = (next..next + batch).into_par_iter().map(|i| runner.run(i)).collect::<Result<_, _>>()?;
        let elapsed = start.elapsed().as_secs_f64() * 1000.0;
        for (off, outs) in chunk.into_iter().enumerate() {
            let idx = next + off as u64;
            for (k, o) in outs.into_iter().enumerate() {
                match o {
                    Outcome::Pass(ok) => {
                        let s = sprts[k].as_mut().expect("test entry");
                        if s.verdict().is_none() {
                            if !ok && first_fail[k].is_none() {
                                first_fail[k] = Some(idx);
                            }
                            if s.push(ok).is_some() {
                                settled[k] = Some(elapsed);
                            }
                        }
                    }
                    Outcome::Value(v) => {
                        if values[k].len() < EXPECTED_RUNS {
                            values[k].push(v);
                            if values[k].len() == EXPECTED_RUNS {
                                settled[k] = Some(elapsed);
                            }
                        }
                    }
                }
            }
        }
        next += batch;
    }
    let mut entries = vec![];
    for (k, e) in runner.entries.iter().enumerate() {
        let wall_ms = settled[k].unwrap_or(0.0);
        let (verdict, value, runs_used) = match &e.check {
            Check::Expected { limit, .. } => {
                let (mean, hw) = mean_half_width(&values[k]);
                let v = if mean < *limit { EntryVerdict::Satisfied } else { EntryVerdict::Violated };
                (v, format!("{mean:.3};{hw:.3}"), values[k].len())
            }
            _ => {
                let s = sprts[k].as_ref().expect("test entry");
                let v = s.verdict().unwrap_or(Verdict::Undecided);
                let ev = match v {
                    Verdict::Accepted => EntryVerdict::Satisfied,
                    Verdict::Rejected => EntryVerdict::Violated,
                    Verdict::Undecided => EntryVerdict::Undecided,
                };
                (ev, v.to_string(), s.used())
            }
        };
        entries.push(EntryResult {
            id: e.id.clone(),
            kind: e.check.kind(),
            query: e.query(),
            verdict,
            value,
            runs_used,
            counterexample: first_fail[k],
            wall_ms,
        });
    }
    Ok(SuiteReport { entries, seed: opts.seed, config_hash: cfg.hash(), engine_version: env!("CARGO_PKG_VERSION") })
}

/// Sample mean and the 95% Student-t half width.
pub fn mean_half_width(v: &[f64]) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid t distribution").inverse_cdf(0.975);
    (mean, t * (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_id_is_an_error() {
        let r = Runner::new(&PlatoonConfig::default(), &["R99".into()], 1);
        assert!(matches!(r, Err(SuiteError::UnknownId(_))));
    }

    #[test]
    fn single_run_evaluates_selected_entries() {
        let r = Runner::new(&PlatoonConfig::default(), &["R27".into(), "R48".into(), "R12".into()], 7).unwrap();
        let out = r.run(0).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], Outcome::Pass(true));
        assert!(matches!(out[2], Outcome::Value(v) if v >= 0.0));
    }
}
