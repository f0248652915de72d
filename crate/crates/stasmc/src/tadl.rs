//! Timing-constraint monitors over timestamped event streams, weakly-hard
//! windows, and observer automata generated from the same constraints.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::Event;
use crate::sta::expr::CExpr;
use crate::sta::model::{ChannelKind, Edge, Literal, Location, Network, Template, VarKind};
use crate::sta::network::{CompiledNetwork, NetworkState, StateEnv};

/// Absolute slack on every bound comparison, in ms.
pub const TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("timestamps decrease at record {index}: {prev} then {time}")]
    Decreasing { index: usize, prev: f64, time: f64 },
    #[error("invalid constraint: {0}")]
    Spec(String),
    #[error("bad event CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamEvent {
    pub time: f64,
    pub tag: String,
    pub id: Option<u64>,
}

impl StreamEvent {
    pub fn new(time: f64, tag: &str) -> Self {
        StreamEvent { time, tag: tag.into(), id: None }
    }

    pub fn with_id(time: f64, tag: &str, id: u64) -> Self {
        StreamEvent { time, tag: tag.into(), id: Some(id) }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventStream {
    pub events: Vec<StreamEvent>,
    /// End of the observation window; the last event time when unset.
    pub end: Option<f64>,
}

impl EventStream {
    pub fn new(events: Vec<StreamEvent>) -> Self {
        EventStream { events, end: None }
    }

    pub fn observed_until(&self) -> f64 {
        self.end.or_else(|| self.events.last().map(|e| e.time)).unwrap_or(0.0)
    }

    pub fn push(&mut self, e: StreamEvent) {
        self.events.push(e);
    }

    pub fn check(&self) -> Result<(), MonitorError> {
        for (i, w) in self.events.windows(2).enumerate() {
            if w[1].time < w[0].time {
                return Err(MonitorError::Decreasing { index: i + 1, prev: w[0].time, time: w[1].time });
            }
        }
        Ok(())
    }

    pub fn times(&self, tag: &str) -> Vec<f64> {
        self.events.iter().filter(|e| e.tag == tag).map(|e| e.time).collect()
    }

    /// Reads `time_ms` plus the first non-empty of `tag`, `channel`,
    /// `event_kind`, `verdict`, and an optional `id` column. Rows of kind
    /// `init` or `recv` are skipped so that an event log yields one record
    /// per transition.
    pub fn read_csv(input: impl Read) -> Result<Self, MonitorError> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers().map_err(|e| MonitorError::Csv(e.to_string()))?.clone();
        let col = |n: &str| headers.iter().position(|h| h == n);
        let time_col = col("time_ms").ok_or_else(|| MonitorError::Csv("missing time_ms column".into()))?;
        let tag_cols: Vec<usize> = ["tag", "channel", "event_kind", "verdict"].iter().filter_map(|n| col(n)).collect();
        let kind_col = col("event_kind");
        let id_col = col("id");
        let mut events = vec![];
        for rec in r.records() {
            let rec = rec.map_err(|e| MonitorError::Csv(e.to_string()))?;
            if let Some(k) = kind_col {
                if matches!(rec.get(k), Some("init") | Some("recv")) {
                    continue;
                }
            }
            let time: f64 = rec
                .get(time_col)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| MonitorError::Csv(format!("bad time in {rec:?}")))?;
            let tag = tag_cols.iter().filter_map(|&c| rec.get(c)).find(|s| !s.is_empty()).unwrap_or("event");
            let id = match id_col.and_then(|c| rec.get(c)) {
                None | Some("") => None,
                Some(s) => Some(s.parse().map_err(|_| MonitorError::Csv(format!("bad id {s:?}")))?),
            };
            events.push(StreamEvent { time, tag: tag.to_string(), id });
        }
        let s = EventStream::new(events);
        s.check()?;
        Ok(s)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), MonitorError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| MonitorError::Csv(e.to_string());
        w.write_record(["time_ms", "tag", "id"]).map_err(err)?;
        for e in &self.events {
            let id = e.id.map(|i| i.to_string()).unwrap_or_default();
            w.write_record([e.time.to_string(), e.tag.clone(), id]).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl Relation {
    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Relation::Lt => a < b - TOL,
            Relation::Le => a <= b + TOL,
            Relation::Eq => (a - b).abs() <= TOL,
            Relation::Ge => a >= b - TOL,
            Relation::Gt => a > b + TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingExpr {
    Const(f64),
    /// Largest observed delay between matched source/target pairs.
    MaxE2E { source: String, target: String },
    /// Largest observed delay between matched input/output pairs.
    Wcet { input: String, output: String },
    Sum(Vec<TimingExpr>),
}

impl TimingExpr {
    /// `None` when some observed quantity has no samples.
    pub fn eval(&self, stream: &EventStream) -> Option<f64> {
        match self {
            TimingExpr::Const(c) => Some(*c),
            TimingExpr::MaxE2E { source, target } => {
                pairs(stream, source, target, true).into_iter().filter_map(|p| p.delay()).reduce(f64::max)
            }
            TimingExpr::Wcet { input, output } => {
                pairs(stream, input, output, false).into_iter().filter_map(|p| p.delay()).reduce(f64::max)
            }
            TimingExpr::Sum(xs) => xs.iter().map(|x| x.eval(stream)).sum(),
        }
    }
}

/// JSON form: `{"kind": "execution", "input": "a", "output": "b", "lower": 0, "upper": 5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    Execution { input: String, output: String, lower: f64, upper: f64 },
    EndToEnd { source: String, target: String, lower: f64, upper: f64 },
    Synchronization { members: Vec<String>, tolerance: f64 },
    PeriodicCumulative { event: String, period: f64, jitter: f64 },
    PeriodicNoncumulative { event: String, period: f64, jitter: f64 },
    Sporadic { event: String, min: f64 },
    Comparison { lhs: TimingExpr, rel: Relation, rhs: TimingExpr },
}

impl ConstraintSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ConstraintSpec::Execution { .. } => "execution",
            ConstraintSpec::EndToEnd { .. } => "end_to_end",
            ConstraintSpec::Synchronization { .. } => "synchronization",
            ConstraintSpec::PeriodicCumulative { .. } => "periodic_cumulative",
            ConstraintSpec::PeriodicNoncumulative { .. } => "periodic_noncumulative",
            ConstraintSpec::Sporadic { .. } => "sporadic",
            ConstraintSpec::Comparison { .. } => "comparison",
        }
    }

    pub fn check(&self) -> Result<(), MonitorError> {
        let bad = |m: String| Err(MonitorError::Spec(m));
        match self {
            ConstraintSpec::Execution { lower, upper, .. } | ConstraintSpec::EndToEnd { lower, upper, .. } => {
                if !(*lower >= 0.0 && lower <= upper) {
                    return bad(format!("need 0 <= lower <= upper, got [{lower}, {upper}]"));
                }
            }
            ConstraintSpec::Synchronization { members, tolerance } => {
                if !(*tolerance > 0.0) || members.is_empty() {
                    return bad("synchronization needs members and a positive tolerance".into());
                }
            }
            ConstraintSpec::PeriodicCumulative { period, jitter, .. }
            | ConstraintSpec::PeriodicNoncumulative { period, jitter, .. } => {
                if !(*jitter >= 0.0 && jitter < period) {
                    return bad(format!("need 0 <= jitter < period, got j={jitter}, T={period}"));
                }
            }
            ConstraintSpec::Sporadic { min, .. } => {
                if !(*min > 0.0) {
                    return bad(format!("min must be positive, got {min}"));
                }
            }
            ConstraintSpec::Comparison { .. } => {}
        }
        Ok(())
    }

    /// Event tags this constraint reads.
    pub fn tags(&self) -> Vec<String> {
        fn expr_tags(e: &TimingExpr, out: &mut Vec<String>) {
            match e {
                TimingExpr::Const(_) => {}
                TimingExpr::MaxE2E { source: a, target: b } | TimingExpr::Wcet { input: a, output: b } => {
                    out.push(a.clone());
                    out.push(b.clone());
                }
                TimingExpr::Sum(xs) => xs.iter().for_each(|x| expr_tags(x, out)),
            }
        }
        let mut out = vec![];
        match self {
            ConstraintSpec::Execution { input: a, output: b, .. } | ConstraintSpec::EndToEnd { source: a, target: b, .. } => {
                out.push(a.clone());
                out.push(b.clone());
            }
            ConstraintSpec::Synchronization { members, .. } => out.extend(members.iter().cloned()),
            ConstraintSpec::PeriodicCumulative { event, .. }
            | ConstraintSpec::PeriodicNoncumulative { event, .. }
            | ConstraintSpec::Sporadic { event, .. } => out.push(event.clone()),
            ConstraintSpec::Comparison { lhs, rhs, .. } => {
                expr_tags(lhs, &mut out);
                expr_tags(rhs, &mut out);
            }
        }
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccVerdict {
    Success,
    Fail,
    Vacuous,
}

impl fmt::Display for OccVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OccVerdict::Success => "success",
            OccVerdict::Fail => "fail",
            OccVerdict::Vacuous => "vacuous",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occurrence {
    /// Time at which the verdict was settled (the closing event, or the
    /// opening event for verdicts settled at stream end).
    pub time: f64,
    pub verdict: OccVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    NoFail,
    SomeFail,
}

pub fn aggregate(occ: &[Occurrence]) -> Aggregate {
    if occ.iter().any(|o| o.verdict == OccVerdict::Fail) {
        Aggregate::SomeFail
    } else {
        Aggregate::NoFail
    }
}

fn within(d: f64, lo: f64, hi: f64) -> bool {
    d >= lo - TOL && d <= hi + TOL
}

fn verdict(ok: bool) -> OccVerdict {
    if ok {
        OccVerdict::Success
    } else {
        OccVerdict::Fail
    }
}

#[derive(Debug, Clone, Copy)]
struct Pair {
    start: f64,
    end: Option<f64>,
    /// Settled without a partner (end-to-end only).
    dropped: Option<f64>,
}

impl Pair {
    fn delay(&self) -> Option<f64> {
        self.end.map(|e| e - self.start)
    }
}

/// Matches `from` events to `to` events by id when the `to` event carries
/// one, otherwise first-in first-out. With `discard`, a matched id drops
/// every older pending `from` (end-to-end); otherwise they wait.
fn pairs(stream: &EventStream, from: &str, to: &str, discard: bool) -> Vec<Pair> {
    let mut out: Vec<Pair> = vec![];
    let mut pending: VecDeque<(Option<u64>, usize)> = VecDeque::new();
    for e in &stream.events {
        // A tag may be both ends (degenerate); treat it as closing first.
        if e.tag == to {
            match e.id {
                Some(id) => {
                    if let Some(pos) = pending.iter().position(|p| p.0 == Some(id)) {
                        if discard {
                            for (_, k) in pending.drain(..pos) {
                                out[k].dropped = Some(e.time);
                            }
                            let (_, k) = pending.pop_front().unwrap();
                            out[k].end = Some(e.time);
                        } else {
                            let (_, k) = pending.remove(pos).unwrap();
                            out[k].end = Some(e.time);
                        }
                    } else if discard {
                        // No tracker for this id: older ones still can't match.
                        while pending.front().is_some_and(|p| p.0.is_some_and(|x| x < id)) {
                            let (_, k) = pending.pop_front().unwrap();
                            out[k].dropped = Some(e.time);
                        }
                    }
                }
                None => {
                    if let Some((_, k)) = pending.pop_front() {
                        out[k].end = Some(e.time);
                    }
                }
            }
            if from != to {
                continue;
            }
        }
        if e.tag == from {
            pending.push_back((e.id, out.len()));
            out.push(Pair { start: e.time, end: None, dropped: None });
        }
    }
    out
}

/// Verdicts for each checked occurrence, in settlement order.
pub fn run_monitor(spec: &ConstraintSpec, stream: &EventStream) -> Result<Vec<Occurrence>, MonitorError> {
    spec.check()?;
    stream.check()?;
    let mut occ = vec![];
    match spec {
        ConstraintSpec::Execution { input, output, lower, upper } => {
            let ps = pairs(stream, input, output, false);
            let settled: Vec<(f64, OccVerdict)> = ps
                .iter()
                .map(|p| match p.end {
                    Some(end) => (end, verdict(within(end - p.start, *lower, *upper))),
                    None if stream.observed_until() > p.start + upper + TOL => (f64::INFINITY, OccVerdict::Fail),
                    None => (f64::INFINITY, OccVerdict::Vacuous),
                })
                .collect();
            // Unmatched inputs settle at stream end, in input order. Only
            // those whose deadline passed inside the window fail.
            let starts: Vec<f64> = ps.iter().map(|p| p.start).collect();
            let mut idx: Vec<usize> = (0..settled.len()).collect();
            idx.sort_by(|&a, &b| settled[a].0.total_cmp(&settled[b].0).then(a.cmp(&b)));
            for k in idx {
                let (t, v) = settled[k];
                occ.push(Occurrence { time: if t.is_finite() { t } else { starts[k] }, verdict: v });
            }
        }
        ConstraintSpec::EndToEnd { source, target, lower, upper } => {
            let ps = pairs(stream, source, target, true);
            let mut keyed: Vec<(f64, usize, Occurrence)> = ps
                .iter()
                .enumerate()
                .map(|(k, p)| match (p.end, p.dropped) {
                    (Some(end), _) => (end, k, Occurrence { time: end, verdict: verdict(within(end - p.start, *lower, *upper)) }),
                    (None, Some(t)) => (t, k, Occurrence { time: t, verdict: OccVerdict::Vacuous }),
                    (None, None) => (f64::INFINITY, k, Occurrence { time: p.start, verdict: OccVerdict::Vacuous }),
                })
                .collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            occ.extend(keyed.into_iter().map(|k| k.2));
        }
        ConstraintSpec::Synchronization { members, tolerance } => {
            let mut open: Option<(f64, Vec<bool>)> = None;
            for e in &stream.events {
                let Some(m) = members.iter().position(|x| *x == e.tag) else { continue };
                if let Some((t0, seen)) = &mut open {
                    if e.time - *t0 > tolerance + TOL {
                        occ.push(Occurrence { time: e.time, verdict: OccVerdict::Fail });
                        open = None;
                    } else {
                        seen[m] = true;
                        if seen.iter().all(|&b| b) {
                            occ.push(Occurrence { time: e.time, verdict: OccVerdict::Success });
                            open = None;
                        }
                        continue;
                    }
                }
                let mut seen = vec![false; members.len()];
                seen[m] = true;
                if seen.iter().all(|&b| b) {
                    occ.push(Occurrence { time: e.time, verdict: OccVerdict::Success });
                } else {
                    open = Some((e.time, seen));
                }
            }
            if let Some((t0, _)) = open {
                occ.push(Occurrence { time: t0, verdict: OccVerdict::Vacuous });
            }
        }
        ConstraintSpec::PeriodicCumulative { event, period, jitter } => {
            let ts = stream.times(event);
            if ts.len() == 1 {
                occ.push(Occurrence { time: ts[0], verdict: OccVerdict::Vacuous });
            }
            for w in ts.windows(2) {
                occ.push(Occurrence { time: w[1], verdict: verdict(within(w[1] - w[0], period - jitter, period + jitter)) });
            }
        }
        ConstraintSpec::PeriodicNoncumulative { event, period, jitter } => {
            for (i, t) in stream.times(event).into_iter().enumerate() {
                let nominal = (i + 1) as f64 * period;
                occ.push(Occurrence { time: t, verdict: verdict(within(t, nominal - jitter, nominal + jitter)) });
            }
        }
        ConstraintSpec::Sporadic { event, min } => {
            let ts = stream.times(event);
            if ts.len() == 1 {
                occ.push(Occurrence { time: ts[0], verdict: OccVerdict::Vacuous });
            }
            for w in ts.windows(2) {
                occ.push(Occurrence { time: w[1], verdict: verdict(w[1] - w[0] >= min - TOL) });
            }
        }
        ConstraintSpec::Comparison { lhs, rel, rhs } => {
            let end = stream.events.last().map_or(0.0, |e| e.time);
            let v = match (lhs.eval(stream), rhs.eval(stream)) {
                (Some(a), Some(b)) => verdict(rel.holds(a, b)),
                _ => OccVerdict::Vacuous,
            };
            occ.push(Occurrence { time: end, verdict: v });
        }
    }
    Ok(occ)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeaklyHard {
    pub m: usize,
    pub k: usize,
}

impl WeaklyHard {
    pub fn new(m: usize, k: usize) -> Result<Self, MonitorError> {
        if k == 0 || m > k {
            return Err(MonitorError::Spec(format!("need 0 <= m <= k and k >= 1, got m={m}, k={k}")));
        }
        Ok(WeaklyHard { m, k })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhResult {
    Satisfied,
    Violated,
}

/// Every window of `k` consecutive non-vacuous verdicts needs `m` successes.
pub fn apply_weakly_hard(verdicts: &[OccVerdict], wh: WeaklyHard) -> WhResult {
    let v: Vec<bool> = verdicts.iter().filter(|v| **v != OccVerdict::Vacuous).map(|v| *v == OccVerdict::Success).collect();
    if v.len() < wh.k {
        return WhResult::Satisfied;
    }
    let mut count = v[..wh.k].iter().filter(|&&b| b).count();
    if count < wh.m {
        return WhResult::Violated;
    }
    for i in wh.k..v.len() {
        count += v[i] as usize;
        count -= v[i - wh.k] as usize;
        if count < wh.m {
            return WhResult::Violated;
        }
    }
    WhResult::Satisfied
}

pub fn write_verdicts_csv(occ: &[Occurrence], out: impl Write) -> Result<(), MonitorError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| MonitorError::Csv(e.to_string());
    w.write_record(["index", "time_ms", "verdict"]).map_err(err)?;
    for (i, o) in occ.iter().enumerate() {
        w.write_record([i.to_string(), o.time.to_string(), o.verdict.to_string()]).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

// ------------------------------------------------------------------ taps

/// Records a stream event whenever a model event synchronizes on a
/// channel, with an optional payload id evaluated on the post-event state.
#[derive(Debug, Clone)]
pub struct Tap {
    pub tag: String,
    pub channel: usize,
    pub payload: Option<CExpr>,
}

#[derive(Debug, Clone, Default)]
pub struct TapSet {
    pub taps: Vec<Tap>,
}

impl TapSet {
    pub fn add(&mut self, net: &CompiledNetwork, tag: &str, channel: &str, payload: Option<&str>) -> Result<(), MonitorError> {
        let ch = net.channel_index(channel).ok_or_else(|| MonitorError::Spec(format!("unknown channel {channel}")))?;
        let payload = match payload {
            None => None,
            Some(p) => Some(net.compile_str(p).map_err(|e| MonitorError::Spec(e.to_string()))?),
        };
        self.taps.push(Tap { tag: tag.into(), channel: ch, payload });
        Ok(())
    }

    pub fn record(&self, net: &CompiledNetwork, post: &NetworkState, ev: &Event, out: &mut EventStream) -> Result<(), MonitorError> {
        let Some(ch) = ev.channel else { return Ok(()) };
        if ev.by_observer() {
            return Ok(());
        }
        for t in self.taps.iter().filter(|t| t.channel == ch) {
            let id = match &t.payload {
                None => None,
                Some(p) => {
                    let v = p
                        .eval(&StateEnv { net, state: post, inst: None, dt: 0.0 })
                        .map_err(|e| MonitorError::Spec(e.to_string()))?;
                    Some(v.as_int().map_err(|e| MonitorError::Spec(e.to_string()))?.max(0) as u64)
                }
            };
            out.push(StreamEvent { time: ev.time, tag: t.tag.clone(), id });
        }
        Ok(())
    }
}

// ------------------------------------------------------------------ attach

#[derive(Debug, Error, PartialEq)]
pub enum AttachError {
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("channel {0} is binary; observers may only listen on broadcast channels")]
    BinaryChannel(String),
    #[error("no binding for event {0}")]
    Unbound(String),
    #[error("{0} constraints have no observer form")]
    Unsupported(&'static str),
    #[error("name {0} is already taken")]
    NameTaken(String),
    #[error("invalid constraint: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BindingSource {
    /// A broadcast channel; every send is one occurrence.
    Channel(String),
    /// A state predicate; every rising edge is one occurrence.
    Predicate(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventBinding {
    pub tag: String,
    pub source: BindingSource,
    /// Integer expression giving the occurrence id, for id matching.
    pub payload: Option<String>,
}

impl EventBinding {
    pub fn channel(tag: &str, ch: &str) -> Self {
        EventBinding { tag: tag.into(), source: BindingSource::Channel(ch.into()), payload: None }
    }

    pub fn predicate(tag: &str, pred: &str) -> Self {
        EventBinding { tag: tag.into(), source: BindingSource::Predicate(pred.into()), payload: None }
    }

    pub fn with_payload(mut self, p: &str) -> Self {
        self.payload = Some(p.into());
        self
    }
}

/// Handle to an attached observer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttachedMonitor {
    pub instance: String,
    /// Query predicate that is true while the observer reports a failure.
    pub fail_predicate: String,
}

const EPS: &str = "0.000001";

/// Builds observer edges for "occurrence of `tag`" from a location.
struct Builder<'a> {
    t: Template,
    bindings: &'a [EventBinding],
    rising: Vec<String>,
}

impl<'a> Builder<'a> {
    fn binding(&self, tag: &str) -> Result<&'a EventBinding, AttachError> {
        self.bindings.iter().find(|b| b.tag == tag).ok_or_else(|| AttachError::Unbound(tag.into()))
    }

    fn prev(tag_index: usize) -> String {
        format!("prev_{tag_index}")
    }

    /// Edge taken on an occurrence of `tag` when `guard` holds.
    fn on(&mut self, tag: &str, from: &str, to: &str, guard: &str, updates: &[String]) -> Result<(), AttachError> {
        let b = self.binding(tag)?;
        let mut e = Edge::new(from, to);
        let mut g = vec![];
        match &b.source {
            BindingSource::Channel(ch) => e = e.recv(ch),
            BindingSource::Predicate(p) => {
                let k = self.rising_index(tag);
                g.push(format!("({p})"));
                g.push(format!("!{}", Self::prev(k)));
                e = e.update(format!("{} = true", Self::prev(k)));
            }
        }
        if guard != "true" {
            g.push(format!("({guard})"));
        }
        if !g.is_empty() {
            e = e.guard(g.join(" && "));
        }
        for u in updates {
            e = e.update(u.clone());
        }
        self.t.edges.push(e);
        Ok(())
    }

    fn rising_index(&mut self, tag: &str) -> usize {
        if let Some(k) = self.rising.iter().position(|t| t == tag) {
            return k;
        }
        self.rising.push(tag.into());
        self.t.vars.push(crate::sta::model::VarDecl {
            name: Self::prev(self.rising.len() - 1),
            kind: VarKind::Bool,
            initial: Some(Literal::Bool(false)),
            size: None,
        });
        self.rising.len() - 1
    }

    fn payload(&self, tag: &str) -> Result<Option<String>, AttachError> {
        Ok(self.binding(tag)?.payload.clone())
    }

    /// Fallback and falling edges so predicate bindings keep `prev` in step
    /// at every non-fail location.
    fn finish(&mut self, live: &[&str]) {
        let preds: Vec<(usize, String)> = self
            .rising
            .iter()
            .enumerate()
            .filter_map(|(k, tag)| match &self.bindings.iter().find(|b| &b.tag == tag)?.source {
                BindingSource::Predicate(p) => Some((k, p.clone())),
                _ => None,
            })
            .collect();
        for l in live {
            for (k, p) in &preds {
                let prev = Self::prev(*k);
                self.t.edges.push(Edge::new(l, l).guard(format!("({p}) && !{prev}")).update(format!("{prev} = true")));
                self.t.edges.push(Edge::new(l, l).guard(format!("!({p}) && {prev}")).update(format!("{prev} = false")));
            }
        }
    }
}

fn fail_loc() -> Location {
    Location { labels: vec!["fail".into()], ..Location::new("fail") }
}

/// Adds observer automata for `spec` to `net`. The returned handle names
/// the static observer instance and the predicate that flags a failure.
pub fn attach(
    spec: &ConstraintSpec,
    net: &Network,
    bindings: &[EventBinding],
    name: &str,
) -> Result<(Network, AttachedMonitor), AttachError> {
    spec.check().map_err(|e| AttachError::Spec(e.to_string()))?;
    if net.instances.iter().any(|i| i.name == name) || net.templates.iter().any(|t| t.name == name || t.name == format!("{name}_trk")) {
        return Err(AttachError::NameTaken(name.into()));
    }
    for tag in spec.tags() {
        let b = bindings.iter().find(|b| b.tag == tag).ok_or_else(|| AttachError::Unbound(tag.clone()))?;
        if let BindingSource::Channel(ch) = &b.source {
            match net.channels.iter().find(|c| &c.name == ch) {
                None => return Err(AttachError::UnknownChannel(ch.clone())),
                Some(c) if c.kind == ChannelKind::Binary => return Err(AttachError::BinaryChannel(ch.clone())),
                _ => {}
            }
        }
    }
    let mut base = Template::new(name, "idle");
    base.observer = true;
    let mut b = Builder { t: base, bindings, rising: vec![] };
    let mut out = net.clone();
    let mut fail_predicate = format!("{name}.fail");
    let f = |x: f64| format!("{x:?}");
    match spec {
        ConstraintSpec::PeriodicNoncumulative { event, period, jitter } => {
            b.t = b.t.clock("c").var("i", VarKind::Int, Literal::Int(1));
            b.t.initial = "run".into();
            b.t = b.t.loc(Location::new("run")).loc(fail_loc());
            let (lo, hi) = (format!("i * {} - {} - {EPS}", f(*period), f(*jitter)), format!("i * {} + {} + {EPS}", f(*period), f(*jitter)));
            b.on(event, "run", "run", &format!("c >= {lo} && c <= {hi}"), &["i = i + 1".into()])?;
            b.on(event, "run", "fail", &format!("c < {lo} || c > {hi}"), &[])?;
            b.t.edges.push(Edge::new("run", "fail").guard(format!("c >= {hi}")));
            b.finish(&["run"]);
        }
        ConstraintSpec::PeriodicCumulative { event, period, jitter } => {
            b.t = b.t.clock("c");
            b.t = b.t.loc(Location::new("idle")).loc(Location::new("run")).loc(fail_loc());
            let (lo, hi) = (format!("{} - {EPS}", f(period - jitter)), format!("{} + {EPS}", f(period + jitter)));
            b.on(event, "idle", "run", "true", &["c = 0".into()])?;
            b.on(event, "run", "run", &format!("c >= {lo} && c <= {hi}"), &["c = 0".into()])?;
            b.on(event, "run", "fail", &format!("c < {lo} || c > {hi}"), &[])?;
            b.t.edges.push(Edge::new("run", "fail").guard(format!("c >= {hi}")));
            b.finish(&["idle", "run"]);
        }
        ConstraintSpec::Sporadic { event, min } => {
            b.t = b.t.clock("c");
            b.t = b.t.loc(Location::new("idle")).loc(Location::new("run")).loc(fail_loc());
            let lo = format!("{} - {EPS}", f(*min));
            b.on(event, "idle", "run", "true", &["c = 0".into()])?;
            b.on(event, "run", "run", &format!("c >= {lo}"), &["c = 0".into()])?;
            b.on(event, "run", "fail", &format!("c < {lo}"), &[])?;
            b.finish(&["idle", "run"]);
        }
        ConstraintSpec::Synchronization { members, tolerance } => {
            b.t = b.t.clock("c");
            for k in 0..members.len() {
                b.t = b.t.var(&format!("seen_{k}"), VarKind::Bool, Literal::Bool(false));
            }
            b.t = b.t.loc(Location::new("idle")).loc(Location::new("open")).loc(fail_loc());
            let hi = format!("{} + {EPS}", f(*tolerance));
            let all: Vec<String> = (0..members.len()).map(|k| format!("seen_{k}")).collect();
            for (k, m) in members.iter().enumerate() {
                let mut ups: Vec<String> = (0..members.len()).map(|j| format!("seen_{j} = {}", j == k)).collect();
                ups.push("c = 0".into());
                b.on(m, "idle", "open", "true", &ups)?;
                b.on(m, "open", "open", &format!("c <= {hi}"), &[format!("seen_{k} = true")])?;
                b.on(m, "open", "fail", &format!("c > {hi}"), &[])?;
            }
            // Completed group closes immediately.
            b.t.edges.insert(0, Edge::new("open", "idle").guard(all.join(" && ")));
            b.finish(&["idle", "open"]);
        }
        ConstraintSpec::Execution { input, output, lower, upper } | ConstraintSpec::EndToEnd { source: input, target: output, lower, upper } => {
            let e2e = matches!(spec, ConstraintSpec::EndToEnd { .. });
            let trk = format!("{name}_trk");
            let by_id = b.payload(output)?.is_some() && b.payload(input)?.is_some();
            b.t = b
                .t
                .var("n_in", VarKind::Int, Literal::Int(0))
                .var("n_out", VarKind::Int, Literal::Int(0))
                .var("max_out", VarKind::Int, Literal::Int(-1))
                .loc(Location::new("idle"));
            let key = if by_id { b.payload(input)?.unwrap() } else { "n_in".into() };
            let mut spawn_edge_ups = vec!["n_in = n_in + 1".to_string()];
            if by_id {
                spawn_edge_ups.clear();
            }
            b.on(input, "idle", "idle", "true", &spawn_edge_ups)?;
            let idx = b.t.edges.len() - 1;
            b.t.edges[idx] = b.t.edges[idx].clone().spawn(&trk, &[&key]);
            let out_ups = match b.payload(output)? {
                Some(p) if by_id => vec!["n_out = n_out + 1".to_string(), format!("max_out = {p}")],
                _ => vec!["n_out = n_out + 1".to_string()],
            };
            b.on(output, "idle", "idle", "true", &out_ups)?;
            b.finish(&["idle"]);

            let matched = if by_id { format!("{name}.max_out == k") } else { format!("{name}.n_out >= k") };
            let (lo, hi) = (format!("{} - {EPS}", f(*lower)), format!("{} + {EPS}", f(*upper)));
            let mut t = Template::new(&trk, "wait")
                .param("k", VarKind::Int)
                .clock("c")
                .loc(Location::new("wait"))
                .loc(Location { labels: vec!["success".into()], ..Location::new("ok") })
                .loc(fail_loc())
                .edge(Edge::new("wait", "ok").guard(format!("{matched} && c >= {lo} && c <= {hi}")))
                .edge(Edge::new("wait", "fail").guard(format!("{matched} && (c < {lo} || c > {hi})")));
            if e2e {
                if by_id {
                    t = t
                        .loc(Location { labels: vec!["vacuous".into()], ..Location::new("dropped") })
                        .edge(Edge::new("wait", "dropped").guard(format!("{name}.max_out > k")));
                }
            } else {
                t = t.edge(Edge::new("wait", "fail").guard(format!("c >= {hi}")));
            }
            t.spawnable = true;
            t.observer = true;
            out.templates.push(t);
            fail_predicate = format!("any({trk}, fail)");
        }
        ConstraintSpec::Comparison { .. } => return Err(AttachError::Unsupported("comparison")),
    }
    out.templates.push(b.t);
    out.instances.push(crate::sta::model::InstanceDecl { name: name.into(), template: name.into(), args: vec![] });
    Ok((out, AttachedMonitor { instance: name.into(), fail_predicate }))
}

/// Tag → occurrence verdicts, for reporting several monitors at once.
pub fn run_all(specs: &BTreeMap<String, ConstraintSpec>, stream: &EventStream) -> Result<BTreeMap<String, Vec<Occurrence>>, MonitorError> {
    specs.iter().map(|(k, s)| Ok((k.clone(), run_monitor(s, stream)?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use OccVerdict::*;

    fn verdicts(spec: &ConstraintSpec, ev: Vec<StreamEvent>) -> Vec<OccVerdict> {
        run_monitor(spec, &EventStream::new(ev)).unwrap().into_iter().map(|o| o.verdict).collect()
    }

    fn ev(t: f64, tag: &str) -> StreamEvent {
        StreamEvent::new(t, tag)
    }

    #[test]
    fn execution_bounds() {
        let s = ConstraintSpec::Execution { input: "in".into(), output: "out".into(), lower: 100.0, upper: 300.0 };
        assert_eq!(verdicts(&s, vec![ev(0.0, "in"), ev(150.0, "out")]), vec![Success]);
        assert_eq!(verdicts(&s, vec![ev(0.0, "in"), ev(350.0, "out")]), vec![Fail]);
        assert_eq!(verdicts(&s, vec![ev(0.0, "in")]), vec![Vacuous]);
        assert_eq!(verdicts(&s, vec![ev(0.0, "in"), ev(400.0, "x")]), vec![Fail]);
        let open = EventStream { end: Some(250.0), ..EventStream::new(vec![ev(0.0, "in")]) };
        assert_eq!(run_monitor(&s, &open).unwrap()[0].verdict, Vacuous);
    }

    #[test]
    fn noncumulative_periodic() {
        let s = ConstraintSpec::PeriodicNoncumulative { event: "t".into(), period: 50.0, jitter: 10.0 };
        assert_eq!(verdicts(&s, vec![ev(45.0, "t"), ev(95.0, "t"), ev(152.0, "t")]), vec![Success; 3]);
        assert_eq!(verdicts(&s, vec![ev(70.0, "t")]), vec![Fail]);
    }

    #[test]
    fn sporadic_gaps() {
        let s = ConstraintSpec::Sporadic { event: "m".into(), min: 20000.0 };
        assert_eq!(verdicts(&s, vec![ev(0.0, "m"), ev(25000.0, "m")]), vec![Success]);
        assert_eq!(verdicts(&s, vec![ev(0.0, "m"), ev(15000.0, "m")]), vec![Fail]);
        assert_eq!(verdicts(&s, vec![ev(0.0, "m")]), vec![Vacuous]);
    }

    #[test]
    fn synchronization_window() {
        let s = ConstraintSpec::Synchronization { members: vec!["a".into(), "b".into(), "c".into()], tolerance: 200.0 };
        assert_eq!(verdicts(&s, vec![ev(0.0, "a"), ev(50.0, "b"), ev(180.0, "c")]), vec![Success]);
        let v = verdicts(&s, vec![ev(0.0, "a"), ev(50.0, "b"), ev(250.0, "c")]);
        assert_eq!(v[0], Fail);
        assert!(!v.contains(&Success));
    }

    #[test]
    fn end_to_end_discards_overtaken_trackers() {
        let s = ConstraintSpec::EndToEnd { source: "s".into(), target: "t".into(), lower: 0.0, upper: 100.0 };
        let stream = vec![
            StreamEvent::with_id(0.0, "s", 1),
            StreamEvent::with_id(10.0, "s", 2),
            StreamEvent::with_id(60.0, "t", 2),
            StreamEvent::with_id(70.0, "s", 3),
        ];
        assert_eq!(verdicts(&s, stream), vec![Vacuous, Success, Vacuous]);
    }

    #[test]
    fn comparison_of_observed_delays() {
        let s = ConstraintSpec::Comparison {
            lhs: TimingExpr::Sum(vec![TimingExpr::Wcet { input: "i".into(), output: "o".into() }, TimingExpr::Const(10.0)]),
            rel: Relation::Ge,
            rhs: TimingExpr::MaxE2E { source: "s".into(), target: "t".into() },
        };
        let base = vec![ev(0.0, "s"), ev(0.0, "i"), ev(40.0, "o"), ev(50.0, "t")];
        assert_eq!(verdicts(&s, base.clone()), vec![Success]);
        let mut late = base.clone();
        late[3].time = 60.0;
        assert_eq!(verdicts(&s, late), vec![Fail]);
        assert_eq!(verdicts(&s, vec![ev(0.0, "s")]), vec![Vacuous]);
    }

    #[test]
    fn weakly_hard_windows() {
        let v = [Success, Fail, Success, Success, Fail];
        assert_eq!(apply_weakly_hard(&v, WeaklyHard::new(0, 3).unwrap()), WhResult::Satisfied);
        assert_eq!(apply_weakly_hard(&v, WeaklyHard::new(2, 3).unwrap()), WhResult::Satisfied);
        assert_eq!(apply_weakly_hard(&v, WeaklyHard::new(3, 3).unwrap()), WhResult::Violated);
        assert_eq!(apply_weakly_hard(&v[..2], WeaklyHard::new(3, 3).unwrap()), WhResult::Satisfied);
        assert!(WeaklyHard::new(4, 3).is_err());
    }

    #[test]
    fn decreasing_stream_is_rejected() {
        let s = ConstraintSpec::Sporadic { event: "m".into(), min: 1.0 };
        let r = run_monitor(&s, &EventStream::new(vec![ev(5.0, "m"), ev(4.0, "m")]));
        assert!(matches!(r, Err(MonitorError::Decreasing { index: 1, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let s = EventStream::new(vec![StreamEvent::with_id(1.5, "a", 3), ev(2.0, "b")]);
        let mut buf = vec![];
        s.write_csv(&mut buf).unwrap();
        assert_eq!(EventStream::read_csv(&buf[..]).unwrap(), s);
        let occ = run_monitor(&ConstraintSpec::Sporadic { event: "a".into(), min: 1.0 }, &s).unwrap();
        let mut buf = vec![];
        write_verdicts_csv(&occ, &mut buf).unwrap();
        let back = EventStream::read_csv(&buf[..]).unwrap();
        assert_eq!(back.events[0].tag, "vacuous");
    }
}
