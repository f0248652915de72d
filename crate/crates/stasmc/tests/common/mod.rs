//! Shared helpers for the integration tests: a brute-force monitor oracle
//! and random stream/spec generators.

#![allow(dead_code)]

use rand::Rng;
use stasmc::tadl::{ConstraintSpec, EventStream, OccVerdict, Relation, StreamEvent, TimingExpr, TOL};

pub const TAGS: [&str; 3] = ["a", "b", "c"];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Open,
    Closed(f64),
    Dropped,
}

/// Start time and fate of every `from` event, found by rescanning the
/// prefix before each `to` event.
fn match_all(s: &EventStream, from: &str, to: &str, discard: bool) -> Vec<(f64, Status)> {
    let mut starts: Vec<(usize, f64, Option<u64>)> = vec![];
    let mut fate: Vec<Status> = vec![];
    for (j, e) in s.events.iter().enumerate() {
        if e.tag == to {
            let open: Vec<usize> = (0..starts.len()).filter(|&k| starts[k].0 < j && fate[k] == Status::Open).collect();
            match e.id {
                Some(id) => match open.iter().position(|&k| starts[k].2 == Some(id)) {
                    Some(pos) => {
                        if discard {
                            for &k in &open[..pos] {
                                fate[k] = Status::Dropped;
                            }
                        }
                        fate[open[pos]] = Status::Closed(e.time);
                    }
                    None if discard => {
                        for &k in &open {
                            match starts[k].2 {
                                Some(x) if x < id => fate[k] = Status::Dropped,
                                _ => break,
                            }
                        }
                    }
                    None => {}
                },
                None => {
                    if let Some(&k) = open.first() {
                        fate[k] = Status::Closed(e.time);
                    }
                }
            }
        }
        if e.tag == from {
            starts.push((j, e.time, e.id));
            fate.push(Status::Open);
        }
    }
    starts.iter().zip(fate).map(|(s, f)| (s.1, f)).collect()
}

fn ok(b: bool) -> OccVerdict {
    if b {
        OccVerdict::Success
    } else {
        OccVerdict::Fail
    }
}

fn between(d: f64, lo: f64, hi: f64) -> bool {
    lo - TOL <= d && d <= hi + TOL
}

fn rel_holds(rel: Relation, a: f64, b: f64) -> bool {
    match rel {
        Relation::Lt => a + TOL < b,
        Relation::Le => a <= b + TOL,
        Relation::Eq => a - b <= TOL && b - a <= TOL,
        Relation::Ge => a + TOL >= b,
        Relation::Gt => a > b + TOL,
    }
}

fn max_delay(s: &EventStream, from: &str, to: &str, discard: bool) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (start, f) in match_all(s, from, to, discard) {
        if let Status::Closed(end) = f {
            let d = end - start;
            best = Some(best.map_or(d, |b: f64| if d > b { d } else { b }));
        }
    }
    best
}

fn timing(e: &TimingExpr, s: &EventStream) -> Option<f64> {
    match e {
        TimingExpr::Const(c) => Some(*c),
        TimingExpr::MaxE2E { source, target } => max_delay(s, source, target, true),
        TimingExpr::Wcet { input, output } => max_delay(s, input, output, false),
        TimingExpr::Sum(xs) => {
            let mut total = 0.0;
            for x in xs {
                total += timing(x, s)?;
            }
            Some(total)
        }
    }
}

/// Gaps between consecutive occurrences of `tag`; a lone occurrence is
/// vacuous.
fn gaps(s: &EventStream, tag: &str, good: impl Fn(f64) -> bool) -> Vec<OccVerdict> {
    let ts: Vec<f64> = s.events.iter().filter(|e| e.tag == tag).map(|e| e.time).collect();
    if ts.len() == 1 {
        return vec![OccVerdict::Vacuous];
    }
    (1..ts.len()).map(|i| ok(good(ts[i] - ts[i - 1]))).collect()
}

/// Occurrence verdicts, unordered.
pub fn oracle(spec: &ConstraintSpec, s: &EventStream) -> Vec<OccVerdict> {
    let end = s.end.unwrap_or_else(|| s.events.last().map_or(0.0, |e| e.time));
    match spec {
        ConstraintSpec::Execution { input, output, lower, upper } => match_all(s, input, output, false)
            .into_iter()
            .map(|(start, f)| match f {
                Status::Closed(t) => ok(between(t - start, *lower, *upper)),
                _ if end > start + upper + TOL => OccVerdict::Fail,
                _ => OccVerdict::Vacuous,
            })
            .collect(),
        ConstraintSpec::EndToEnd { source, target, lower, upper } => match_all(s, source, target, true)
            .into_iter()
            .map(|(start, f)| match f {
                Status::Closed(t) => ok(between(t - start, *lower, *upper)),
                _ => OccVerdict::Vacuous,
            })
            .collect(),
        ConstraintSpec::Synchronization { members, tolerance } => {
            // Windows open at a member event and close once every member
            // has been seen, or fail at the first member event too late.
            let ev: Vec<&StreamEvent> = s.events.iter().filter(|e| members.contains(&e.tag)).collect();
            let mut out = vec![];
            let mut i = 0;
            while i < ev.len() {
                let t0 = ev[i].time;
                let mut seen = vec![ev[i].tag.clone()];
                let mut j = i + 1;
                let mut settled = None;
                if members.iter().all(|m| seen.contains(m)) {
                    settled = Some((OccVerdict::Success, j));
                }
                while settled.is_none() && j < ev.len() {
                    if ev[j].time > t0 + tolerance + TOL {
                        settled = Some((OccVerdict::Fail, j));
                        break;
                    }
                    seen.push(ev[j].tag.clone());
                    j += 1;
                    if members.iter().all(|m| seen.contains(m)) {
                        settled = Some((OccVerdict::Success, j));
                    }
                }
                match settled {
                    Some((v, next)) => {
                        out.push(v);
                        i = next;
                    }
                    None => {
                        out.push(OccVerdict::Vacuous);
                        break;
                    }
                }
            }
            out
        }
        ConstraintSpec::PeriodicCumulative { event, period, jitter } => {
            gaps(s, event, |d| between(d, period - jitter, period + jitter))
        }
        ConstraintSpec::PeriodicNoncumulative { event, period, jitter } => s
            .events
            .iter()
            .filter(|e| &e.tag == event)
            .zip(1..)
            .map(|(e, i)| ok(between(e.time, i as f64 * period - jitter, i as f64 * period + jitter)))
            .collect(),
        ConstraintSpec::Sporadic { event, min } => gaps(s, event, |d| d + TOL >= *min),
        ConstraintSpec::Comparison { lhs, rel, rhs } => match (timing(lhs, s), timing(rhs, s)) {
            (Some(a), Some(b)) => vec![ok(rel_holds(*rel, a, b))],
            _ => vec![OccVerdict::Vacuous],
        },
    }
}

/// Verdict counts as (success, fail, vacuous).
pub fn tally(v: &[OccVerdict]) -> (usize, usize, usize) {
    let n = |x| v.iter().filter(|&&y| y == x).count();
    (n(OccVerdict::Success), n(OccVerdict::Fail), n(OccVerdict::Vacuous))
}

/// Whole-millisecond times so that bounds are hit exactly, random ids on
/// about half the events.
pub fn random_stream(rng: &mut impl Rng, max_len: usize) -> EventStream {
    let n = rng.random_range(0..=max_len);
    let mut t = 0.0;
    let mut s = EventStream::default();
    for _ in 0..n {
        t += rng.random_range(0..=12) as f64;
        let tag = TAGS[rng.random_range(0..TAGS.len())];
        let id = rng.random_bool(0.5).then(|| rng.random_range(0..6));
        s.push(StreamEvent { time: t, tag: tag.into(), id });
    }
    if rng.random_bool(0.3) {
        s.end = Some(t + rng.random_range(0..=40) as f64);
    }
    s
}

fn two_tags(rng: &mut impl Rng) -> (String, String) {
    let a = rng.random_range(0..TAGS.len());
    let b = (a + rng.random_range(1..TAGS.len())) % TAGS.len();
    (TAGS[a].into(), TAGS[b].into())
}

fn random_timing(rng: &mut impl Rng, depth: u32) -> TimingExpr {
    match rng.random_range(0..if depth == 0 { 3 } else { 4 }) {
        0 => TimingExpr::Const(rng.random_range(0..=60) as f64),
        1 => {
            let (source, target) = two_tags(rng);
            TimingExpr::MaxE2E { source, target }
        }
        2 => {
            let (input, output) = two_tags(rng);
            TimingExpr::Wcet { input, output }
        }
        _ => TimingExpr::Sum((0..rng.random_range(0..3)).map(|_| random_timing(rng, depth - 1)).collect()),
    }
}

/// A valid spec of the given kind index (0..7, in declaration order).
pub fn random_spec(rng: &mut impl Rng, kind: usize) -> ConstraintSpec {
    let tag = |rng: &mut _| TAGS[Rng::random_range(rng, 0..TAGS.len())].to_string();
    let bounds = |rng: &mut _| {
        let lo = Rng::random_range(rng, 0..=20) as f64;
        (lo, lo + Rng::random_range(rng, 0..=30) as f64)
    };
    match kind {
        0 => {
            let (input, output) = two_tags(rng);
            let (lower, upper) = bounds(rng);
            ConstraintSpec::Execution { input, output, lower, upper }
        }
        1 => {
            let (source, target) = two_tags(rng);
            let (lower, upper) = bounds(rng);
            ConstraintSpec::EndToEnd { source, target, lower, upper }
        }
        2 => {
            let k = rng.random_range(1..=TAGS.len());
            let mut members: Vec<String> = TAGS.iter().map(|t| t.to_string()).collect();
            members.truncate(k);
            ConstraintSpec::Synchronization { members, tolerance: rng.random_range(1..=20) as f64 }
        }
        3 | 4 => {
            let period = rng.random_range(1..=30) as f64;
            let jitter = rng.random_range(0..period as u32) as f64;
            let event = tag(rng);
            if kind == 3 {
                ConstraintSpec::PeriodicCumulative { event, period, jitter }
            } else {
                ConstraintSpec::PeriodicNoncumulative { event, period, jitter }
            }
        }
        5 => ConstraintSpec::Sporadic { event: tag(rng), min: rng.random_range(1..=30) as f64 },
        _ => {
            let rel = [Relation::Lt, Relation::Le, Relation::Eq, Relation::Ge, Relation::Gt][rng.random_range(0..5)];
            ConstraintSpec::Comparison { lhs: random_timing(rng, 2), rel, rhs: random_timing(rng, 2) }
        }
    }
}
