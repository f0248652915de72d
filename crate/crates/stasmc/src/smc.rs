//! Statistical queries over independent simulation runs.
//!
//! Run `i` of a query always uses [`RngStream`]`(seed, i)`, so results do not
//! depend on how many worker threads evaluate the runs.
//!
//! Query strings follow the usual SMC notation:
//!
//! ```text
//! Pr[<=3000]([] !obs.fail)            estimate
//! Pr[<=100]([] safe) >= 0.95          hypothesis test
//! Pr[<=100](<> p.done) <= 0.05        hypothesis test on the complement
//! E[<=3000;100](max: energy.braking)  expected extremum
//! simulate 5 [<=1000]{x[0], p.clk}    trace batch
//! ```

use std::fmt;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::sim::{simulate_compiled, RngStream, Run, SimError, Simulator, Step};
use crate::sta::expr::{self, BinOp, CExpr, Expr, ExprError};
use crate::sta::network::{CompiledNetwork, NetworkState, StateEnv};

#[derive(Debug, Error)]
pub enum SmcError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("cannot parse query: {0}")]
    Parse(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("{0}")]
    NotDualizable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Always,
    Eventually,
}

impl Shape {
    pub fn flip(self) -> Shape {
        match self {
            Shape::Always => Shape::Eventually,
            Shape::Eventually => Shape::Always,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathProperty {
    pub shape: Shape,
    pub predicate: Expr,
    pub bound: f64,
}

impl PathProperty {
    pub fn always(bound: f64, predicate: Expr) -> Self {
        PathProperty { shape: Shape::Always, predicate, bound }
    }

    pub fn eventually(bound: f64, predicate: Expr) -> Self {
        PathProperty { shape: Shape::Eventually, predicate, bound }
    }

    pub fn parse(shape: Shape, bound: f64, predicate: &str) -> Result<Self, SmcError> {
        Ok(PathProperty { shape, predicate: expr::parse_expr(predicate)?, bound })
    }

    pub fn compile(&self, net: &CompiledNetwork) -> Result<CompiledPath, SmcError> {
        if !(self.bound >= 0.0) {
            return Err(SmcError::Params(format!("bound {} must be nonnegative", self.bound)));
        }
        let pred = net.compile_expr(&self.predicate)?;
        let atoms = clock_atoms(&pred);
        Ok(CompiledPath { shape: self.shape, pred, atoms, bound: self.bound })
    }
}

impl fmt::Display for PathProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.shape {
            Shape::Always => "[]",
            Shape::Eventually => "<>",
        };
        write!(f, "Pr[<={}]({op} {})", self.bound, self.predicate)
    }
}

#[derive(Debug, Clone)]
pub struct CompiledPath {
    pub shape: Shape,
    pub pred: CExpr,
    atoms: Vec<(CExpr, CExpr)>,
    pub bound: f64,
}

fn clock_atoms(e: &CExpr) -> Vec<(CExpr, CExpr)> {
    fn walk(e: &CExpr, out: &mut Vec<(CExpr, CExpr)>) {
        match e {
            CExpr::Bin(op, a, b) if op.is_comparison() => {
                if e.has_clock() {
                    out.push(((**a).clone(), (**b).clone()));
                }
            }
            CExpr::Bin(_, a, b) => {
                walk(a, out);
                walk(b, out);
            }
            CExpr::Not(x) | CExpr::Neg(x) => walk(x, out),
            CExpr::Cond(c, a, b) => {
                walk(c, out);
                walk(a, out);
                walk(b, out);
            }
            _ => {}
        }
    }
    let mut out = vec![];
    walk(e, &mut out);
    out
}

impl CompiledPath {
    fn at(&self, net: &CompiledNetwork, st: &NetworkState, dt: f64) -> Result<bool, ExprError> {
        self.pred.eval_bool(&StateEnv { net, state: st, inst: None, dt })
    }

    /// Whether the predicate equals `want` somewhere in `[0, len]` of the
    /// segment starting at `st`. Checks the endpoints, every crossing of a
    /// clock comparison, and the midpoints between them.
    pub fn segment_hits(&self, net: &CompiledNetwork, st: &NetworkState, len: f64, want: bool) -> Result<bool, ExprError> {
        if self.at(net, st, 0.0)? == want {
            return Ok(true);
        }
        if len <= 0.0 || !self.pred.has_clock() {
            return Ok(false);
        }
        let mut ts = vec![0.0, len];
        for (a, b) in &self.atoms {
            let e0 = StateEnv { net, state: st, inst: None, dt: 0.0 };
            let e1 = StateEnv { net, state: st, inst: None, dt: 1.0 };
            let f0 = a.eval_f64(&e0)? - b.eval_f64(&e0)?;
            let s = a.eval_f64(&e1)? - b.eval_f64(&e1)? - f0;
            if s != 0.0 {
                let r = -f0 / s;
                if r > 0.0 && r < len {
                    ts.push(r);
                }
            }
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let mut probes = vec![];
        for w in ts.windows(2) {
            probes.push(0.5 * (w[0] + w[1]));
            probes.push(w[1]);
        }
        for t in probes {
            if self.at(net, st, t)? == want {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// The verdict of this property on `stream`, simulating only as far as
    /// needed.
    pub fn run(&self, net: &CompiledNetwork, stream: RngStream) -> Result<bool, SmcError> {
        let mut sim = Simulator::new(net, stream)?;
        let want = self.shape == Shape::Eventually;
        loop {
            let h = sim.horizon(self.bound);
            if self.segment_hits(net, sim.state(), h - sim.now(), want)? {
                return Ok(want);
            }
            if sim.step(self.bound)? == Step::Bound {
                return Ok(!want);
            }
        }
    }
}

/// Checks a property against a recorded run.
pub fn check_path(net: &CompiledNetwork, run: &Run, property: &PathProperty) -> Result<bool, SmcError> {
    if run.bound < property.bound {
        return Err(SmcError::Params(format!("run bound {} is shorter than property bound {}", run.bound, property.bound)));
    }
    let cp = property.compile(net)?;
    let want = cp.shape == Shape::Eventually;
    for k in 0..run.snapshots.len() {
        let (st, start, end) = run.segment(k);
        if start > cp.bound {
            break;
        }
        let len = end.min(cp.bound) - start;
        if cp.segment_hits(net, st, len, want)? {
            return Ok(want);
        }
    }
    Ok(!want)
}

// ------------------------------------------------------------------ params

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateParams {
    pub epsilon: f64,
    pub alpha: f64,
}

impl Default for EstimateParams {
    fn default() -> Self {
        EstimateParams { epsilon: 0.05, alpha: 0.05 }
    }
}

impl EstimateParams {
    pub fn runs(&self) -> usize {
        ((2.0 / self.alpha).ln() / (2.0 * self.epsilon * self.epsilon)).ceil() as usize
    }

    fn check(&self) -> Result<(), SmcError> {
        let ok = |x: f64| x > 0.0 && x < 1.0;
        if ok(self.epsilon) && ok(self.alpha) {
            Ok(())
        } else {
            Err(SmcError::Params(format!("epsilon {} and alpha {} must lie in (0, 1)", self.epsilon, self.alpha)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisParams {
    pub p0: f64,
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub max_runs: usize,
}

impl HypothesisParams {
    pub fn new(p0: f64) -> Self {
        HypothesisParams { p0, delta: 0.01, alpha: 0.05, beta: 0.05, max_runs: 10_000 }
    }

    fn check(&self) -> Result<(), SmcError> {
        let lo = self.p0 - self.delta;
        let hi = self.p0 + self.delta;
        if !(lo > 0.0 && hi < 1.0 && self.delta > 0.0) {
            return Err(SmcError::Params(format!("indifference region [{lo}, {hi}] must lie inside (0, 1)")));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.beta > 0.0 && self.beta < 1.0) {
            return Err(SmcError::Params("alpha and beta must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected,
    Undecided,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Accepted => "accepted",
            Verdict::Rejected => "rejected",
            Verdict::Undecided => "undecided",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extremum {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Interval { lo: f64, hi: f64, p_hat: f64, successes: usize },
    Verdict(Verdict),
    Expected { mean: f64, half_width: f64, values: Vec<f64> },
    Traces(Vec<Run>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub payload: Payload,
    pub runs_used: usize,
    pub seed: u64,
}

impl QueryResult {
    pub fn interval(&self) -> Option<(f64, f64)> {
        match self.payload {
            Payload::Interval { lo, hi, .. } => Some((lo, hi)),
            _ => None,
        }
    }

    pub fn verdict(&self) -> Option<Verdict> {
        match self.payload {
            Payload::Verdict(v) => Some(v),
            _ => None,
        }
    }

    pub fn mean(&self) -> Option<(f64, f64)> {
        match self.payload {
            Payload::Expected { mean, half_width, .. } => Some((mean, half_width)),
            _ => None,
        }
    }
}

// ------------------------------------------------------------------ engines

/// Outcomes of runs `0..n`, in index order.
pub fn outcomes<F>(n: usize, seed: u64, f: &F) -> Result<Vec<bool>, SmcError>
where
    F: Fn(RngStream) -> Result<bool, SmcError> + Sync,
{
    (0..n as u64).into_par_iter().map(|i| f(RngStream::new(seed, i))).collect()
}

pub fn estimate_with<F>(params: EstimateParams, seed: u64, f: &F) -> Result<QueryResult, SmcError>
where
    F: Fn(RngStream) -> Result<bool, SmcError> + Sync,
{
    params.check()?;
    let n = params.runs();
    let successes = outcomes(n, seed, f)?.into_iter().filter(|&b| b).count();
    let p_hat = successes as f64 / n as f64;
    Ok(QueryResult {
        payload: Payload::Interval {
            lo: (p_hat - params.epsilon).max(0.0),
            hi: (p_hat + params.epsilon).min(1.0),
            p_hat,
            successes,
        },
        runs_used: n,
        seed,
    })
}

/// Wald's sequential test of `p >= p0 + delta` against `p <= p0 - delta`,
/// fed one outcome at a time.
#[derive(Debug, Clone)]
pub struct Sprt {
    on_success: f64,
    on_failure: f64,
    upper: f64,
    lower: f64,
    llr: f64,
    used: usize,
    max_runs: usize,
    verdict: Option<Verdict>,
}

impl Sprt {
    pub fn new(params: HypothesisParams) -> Result<Self, SmcError> {
        params.check()?;
        let p_hi = params.p0 + params.delta;
        let p_lo = params.p0 - params.delta;
        Ok(Sprt {
            on_success: (p_lo / p_hi).ln(),
            on_failure: ((1.0 - p_lo) / (1.0 - p_hi)).ln(),
            upper: ((1.0 - params.beta) / params.alpha).ln(),
            lower: (params.beta / (1.0 - params.alpha)).ln(),
            llr: 0.0,
            used: 0,
            max_runs: params.max_runs,
            verdict: None,
        })
    }

    /// Consumes one outcome; returns the verdict once there is one. Further
    /// outcomes are ignored.
    pub fn push(&mut self, ok: bool) -> Option<Verdict> {
        if self.verdict.is_some() {
            return self.verdict;
        }
        self.used += 1;
        self.llr += if ok { self.on_success } else { self.on_failure };
        if self.llr <= self.lower {
            self.verdict = Some(Verdict::Accepted);
        } else if self.llr >= self.upper {
            self.verdict = Some(Verdict::Rejected);
        } else if self.used >= self.max_runs {
            self.verdict = Some(Verdict::Undecided);
        }
        self.verdict
    }

    pub fn verdict(&self) -> Option<Verdict> {
        self.verdict
    }

    pub fn used(&self) -> usize {
        self.used
    }
}

/// Runs [`Sprt`] over outcomes in run-index order.
pub fn hypothesis_with<F>(params: HypothesisParams, seed: u64, f: &F) -> Result<QueryResult, SmcError>
where
    F: Fn(RngStream) -> Result<bool, SmcError> + Sync,
{
    let mut sprt = Sprt::new(params)?;
    if params.max_runs == 0 {
        return Ok(QueryResult { payload: Payload::Verdict(Verdict::Undecided), runs_used: 0, seed });
    }
    let batch = 4 * rayon::current_num_threads().max(1);
    loop {
        let used = sprt.used();
        let take = batch.min(params.max_runs - used);
        let chunk: Vec<bool> = (used as u64..(used + take) as u64)
            .into_par_iter()
            .map(|i| f(RngStream::new(seed, i)))
            .collect::<Result<_, _>>()?;
        for ok in chunk {
            if let Some(v) = sprt.push(ok) {
                return Ok(QueryResult { payload: Payload::Verdict(v), runs_used: sprt.used(), seed });
            }
        }
    }
}

pub fn expected_with<F>(runs: usize, seed: u64, f: &F) -> Result<QueryResult, SmcError>
where
    F: Fn(RngStream) -> Result<f64, SmcError> + Sync,
{
    if runs == 0 {
        return Err(SmcError::Params("expected value needs at least one run".into()));
    }
    let values: Vec<f64> = (0..runs as u64).into_par_iter().map(|i| f(RngStream::new(seed, i))).collect::<Result<_, _>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let half_width = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid t distribution").inverse_cdf(0.975);
        t * (var / n).sqrt()
    };
    Ok(QueryResult { payload: Payload::Expected { mean, half_width, values }, runs_used: runs, seed })
}

pub fn estimate_probability(
    net: &CompiledNetwork,
    property: &PathProperty,
    params: EstimateParams,
    seed: u64,
) -> Result<QueryResult, SmcError> {
    let cp = property.compile(net)?;
    estimate_with(params, seed, &|s| cp.run(net, s))
}

pub fn hypothesis_test(
    net: &CompiledNetwork,
    property: &PathProperty,
    params: HypothesisParams,
    seed: u64,
) -> Result<QueryResult, SmcError> {
    let cp = property.compile(net)?;
    hypothesis_with(params, seed, &|s| cp.run(net, s))
}

/// Extremum of `expr` along one run, sampled at every segment endpoint.
pub fn run_extremum(
    net: &CompiledNetwork,
    expr: &CExpr,
    mode: Extremum,
    bound: f64,
    stream: RngStream,
) -> Result<f64, SmcError> {
    let mut sim = Simulator::new(net, stream)?;
    let pick = |a: f64, b: f64| match mode {
        Extremum::Max => a.max(b),
        Extremum::Min => a.min(b),
    };
    let eval = |st: &NetworkState, dt: f64| expr.eval_f64(&StateEnv { net, state: st, inst: None, dt });
    let mut best = eval(sim.state(), 0.0)?;
    loop {
        let h = sim.horizon(bound);
        best = pick(best, eval(sim.state(), h - sim.now())?);
        if sim.step(bound)? == Step::Bound {
            return Ok(best);
        }
        best = pick(best, eval(sim.state(), 0.0)?);
    }
}

pub fn expected_value(
    net: &CompiledNetwork,
    bound: f64,
    runs: usize,
    mode: Extremum,
    expr: &Expr,
    seed: u64,
) -> Result<QueryResult, SmcError> {
    let c = net.compile_expr(expr)?;
    expected_with(runs, seed, &|s| run_extremum(net, &c, mode, bound, s))
}

pub fn simulate_batch(net: &CompiledNetwork, bound: f64, runs: usize, watch: &[Expr], seed: u64) -> Result<QueryResult, SmcError> {
    let w: Vec<(String, CExpr)> =
        watch.iter().map(|e| Ok((e.to_string(), net.compile_expr(e)?))).collect::<Result<_, SmcError>>()?;
    let out: Vec<Run> = (0..runs as u64)
        .into_par_iter()
        .map(|i| simulate_compiled(net, bound, RngStream::new(seed, i), &w).map_err(SmcError::from))
        .collect::<Result<_, _>>()?;
    Ok(QueryResult { payload: Payload::Traces(out), runs_used: runs, seed })
}

// ------------------------------------------------------------------ queries

/// Probability threshold in parts per billion, so `1 - (1 - p)` is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Threshold(pub u64);

const PPB: u64 = 1_000_000_000;

impl Threshold {
    pub fn from_f64(p: f64) -> Result<Self, SmcError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(SmcError::Params(format!("probability {p} outside [0, 1]")));
        }
        Ok(Threshold((p * PPB as f64).round() as u64))
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / PPB as f64
    }

    pub fn complement(self) -> Self {
        Threshold(PPB - self.0)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let int = self.0 / PPB;
        let frac = self.0 % PPB;
        if frac == 0 {
            return write!(f, "{int}");
        }
        let digits = format!("{frac:09}");
        write!(f, "{int}.{}", digits.trim_end_matches('0'))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    AtLeast,
    AtMost,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Probability { property: PathProperty, test: Option<(Cmp, Threshold)> },
    Expected { bound: f64, runs: usize, mode: Extremum, expr: Expr },
    Simulate { bound: f64, runs: usize, watch: Vec<Expr> },
}

impl Query {
    /// `Pr(φ) >= p` becomes `Pr(¬φ under the other modality) <= 1 - p` and
    /// back.
    pub fn dualize(&self) -> Result<Query, SmcError> {
        match self {
            Query::Probability { property, test: Some((cmp, p)) } => Ok(Query::Probability {
                property: PathProperty {
                    shape: property.shape.flip(),
                    predicate: property.predicate.negate(),
                    bound: property.bound,
                },
                test: Some((
                    match cmp {
                        Cmp::AtLeast => Cmp::AtMost,
                        Cmp::AtMost => Cmp::AtLeast,
                    },
                    p.complement(),
                )),
            }),
            _ => Err(SmcError::NotDualizable(format!("only hypothesis tests can be dualized: {self}"))),
        }
    }

    pub fn parse(src: &str) -> Result<Query, SmcError> {
        parse_query(src)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Query::Probability { test: None, .. } => "estimate",
            Query::Probability { .. } => "test",
            Query::Expected { .. } => "expected",
            Query::Simulate { .. } => "simulate",
        }
    }

    /// Runs the query. Hypothesis tests use `delta`, `alpha = beta` and the
    /// run cap from `opts`.
    pub fn execute(&self, net: &CompiledNetwork, opts: &QueryOptions, seed: u64) -> Result<QueryResult, SmcError> {
        match self {
            Query::Probability { property, test: None } => estimate_probability(net, property, opts.estimate, seed),
            Query::Probability { property, test: Some((cmp, p)) } => {
                let cp = property.compile(net)?;
                let mut hp = opts.hypothesis;
                match cmp {
                    Cmp::AtLeast => {
                        hp.p0 = p.value();
                        hypothesis_with(hp, seed, &|s| cp.run(net, s))
                    }
                    Cmp::AtMost => {
                        hp.p0 = p.complement().value();
                        hypothesis_with(hp, seed, &|s| cp.run(net, s).map(|b| !b))
                    }
                }
            }
            Query::Expected { bound, runs, mode, expr } => expected_value(net, *bound, *runs, *mode, expr, seed),
            Query::Simulate { bound, runs, watch } => simulate_batch(net, *bound, *runs, watch, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryOptions {
    pub estimate: EstimateParams,
    pub hypothesis: HypothesisParams,
}

impl Default for QueryOptions {
    fn default() -> Self {
        QueryOptions { estimate: EstimateParams::default(), hypothesis: HypothesisParams::new(0.5) }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Probability { property, test } => {
                write!(f, "{property}")?;
                match test {
                    Some((Cmp::AtLeast, p)) => write!(f, " >= {p}"),
                    Some((Cmp::AtMost, p)) => write!(f, " <= {p}"),
                    None => Ok(()),
                }
            }
            Query::Expected { bound, runs, mode, expr } => {
                let m = match mode {
                    Extremum::Max => "max",
                    Extremum::Min => "min",
                };
                write!(f, "E[<={bound};{runs}]({m}: {expr})")
            }
            Query::Simulate { bound, runs, watch } => {
                let w: Vec<String> = watch.iter().map(|e| e.to_string()).collect();
                write!(f, "simulate {runs} [<={bound}]{{{}}}", w.join(", "))
            }
        }
    }
}

fn perr<T>(msg: impl Into<String>) -> Result<T, SmcError> {
    Err(SmcError::Parse(msg.into()))
}

/// Index of the bracket closing the one at `open`.
fn matching(s: &str, open: usize) -> Result<usize, SmcError> {
    let bytes = s.as_bytes();
    let (o, c) = match bytes[open] {
        b'(' => (b'(', b')'),
        b'[' => (b'[', b']'),
        b'{' => (b'{', b'}'),
        _ => return perr("expected a bracket"),
    };
    let mut depth = 0;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if b == o {
            depth += 1;
        } else if b == c {
            depth -= 1;
            if depth == 0 {
                return Ok(i);
            }
        }
    }
    perr(format!("unbalanced {}", o as char))
}

fn number(s: &str) -> Result<f64, SmcError> {
    s.trim().parse::<f64>().or_else(|_| perr(format!("expected a number, got {s:?}")))
}

fn bound_spec(s: &str) -> Result<f64, SmcError> {
    let s = s.trim();
    let s = s.strip_prefix("<=").or_else(|| s.strip_prefix('≤')).unwrap_or(s);
    number(s)
}

fn split_top(s: &str, sep: u8) -> Vec<&str> {
    let mut out = vec![];
    let mut depth = 0i32;
    let mut start = 0;
    for (i, b) in s.bytes().enumerate() {
        match b {
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth -= 1,
            _ if b == sep && depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

fn parse_query(src: &str) -> Result<Query, SmcError> {
    let s = src.trim();
    if let Some(rest) = s.strip_prefix("Pr") {
        let rest = rest.trim_start();
        if !rest.starts_with('[') {
            return perr("expected [ after Pr");
        }
        let close = matching(rest, 0)?;
        let bound = bound_spec(&rest[1..close])?;
        let rest = rest[close + 1..].trim_start();
        if !rest.starts_with('(') {
            return perr("expected ( before the path formula");
        }
        let close = matching(rest, 0)?;
        let body = rest[1..close].trim();
        let (shape, pred) = if let Some(p) = body.strip_prefix("[]") {
            (Shape::Always, p)
        } else if let Some(p) = body.strip_prefix("<>") {
            (Shape::Eventually, p)
        } else {
            return perr("path formula must start with [] or <>");
        };
        let property = PathProperty { shape, predicate: expr::parse_expr(pred)?, bound };
        let tail = rest[close + 1..].trim();
        let test = if tail.is_empty() {
            None
        } else if let Some(p) = tail.strip_prefix(">=") {
            Some((Cmp::AtLeast, Threshold::from_f64(number(p)?)?))
        } else if let Some(p) = tail.strip_prefix("<=") {
            Some((Cmp::AtMost, Threshold::from_f64(number(p)?)?))
        } else {
            return perr(format!("unexpected {tail:?} after the path formula"));
        };
        return Ok(Query::Probability { property, test });
    }
    if let Some(rest) = s.strip_prefix('E') {
        let rest = rest.trim_start();
        if !rest.starts_with('[') {
            return perr("expected [ after E");
        }
        let close = matching(rest, 0)?;
        let parts: Vec<&str> = rest[1..close].split(';').collect();
        if parts.len() != 2 {
            return perr("expected E[<=bound;runs]");
        }
        let bound = bound_spec(parts[0])?;
        let runs = parts[1].trim().parse::<usize>().or_else(|_| perr("run count must be an integer"))?;
        let rest = rest[close + 1..].trim();
        if !rest.starts_with('(') || matching(rest, 0)? != rest.len() - 1 {
            return perr("expected (max: expr) or (min: expr)");
        }
        let body = rest[1..rest.len() - 1].trim();
        let (mode, e) = if let Some(e) = body.strip_prefix("max:") {
            (Extremum::Max, e)
        } else if let Some(e) = body.strip_prefix("min:") {
            (Extremum::Min, e)
        } else {
            return perr("expected max: or min:");
        };
        return Ok(Query::Expected { bound, runs, mode, expr: expr::parse_expr(e)? });
    }
    if let Some(rest) = s.strip_prefix("simulate") {
        let rest = rest.trim_start();
        let open = rest.find('[').ok_or_else(|| SmcError::Parse("expected [<=bound]".into()))?;
        let runs = rest[..open].trim().parse::<usize>().or_else(|_| perr("run count must be an integer"))?;
        let close = matching(rest, open)?;
        let bound = bound_spec(&rest[open + 1..close])?;
        let rest = rest[close + 1..].trim();
        if !rest.starts_with('{') || matching(rest, 0)? != rest.len() - 1 {
            return perr("expected {expr, ...}");
        }
        let inner = rest[1..rest.len() - 1].trim();
        let watch = if inner.is_empty() {
            vec![]
        } else {
            split_top(inner, b',').into_iter().map(expr::parse_expr).collect::<Result<_, _>>()?
        };
        return Ok(Query::Simulate { bound, runs, watch });
    }
    perr(format!("unknown query form {s:?}"))
}

/// `Pr[b]([] φ) >= p` shaped test on a network, with `Cmp` given as an
/// operator. Convenience for fixtures.
pub fn test_query(bound: f64, shape: Shape, predicate: &str, cmp: BinOp, p: f64) -> Result<Query, SmcError> {
    let cmp = match cmp {
        BinOp::Ge => Cmp::AtLeast,
        BinOp::Le => Cmp::AtMost,
        _ => return Err(SmcError::Params("threshold comparison must be >= or <=".into())),
    };
    Ok(Query::Probability {
        property: PathProperty { shape, predicate: expr::parse_expr(predicate)?, bound },
        test: Some((cmp, Threshold::from_f64(p)?)),
    })
}
