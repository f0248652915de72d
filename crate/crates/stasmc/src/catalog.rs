//! The R1..R50 requirement catalog for the platoon, bound to the taps and
//! predicates exported by [`crate::cas`].

use std::fmt;

use crate::cas::{PlatoonConfig, TapRegistry, BRAKING, TURN_LEFT, TURN_RIGHT};
use crate::sta::model::{Edge, Location, Template};
use crate::tadl::{ConstraintSpec, Relation, TimingExpr};

/// Default run length of the suite, ms.
pub const BOUND: f64 = 3000.0;
/// Runs averaged by expected-value entries.
pub const EXPECTED_RUNS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub enum Check {
    /// Observer composed with the model; a run passes iff the observer
    /// never reaches its `fail` location.
    Observer(Template),
    /// `[] predicate` over the run.
    Invariant(String),
    /// Offline monitors over the tapped event stream; a run passes iff no
    /// occurrence fails.
    Monitors(Vec<ConstraintSpec>),
    /// As `Monitors`, but decided through the dual query
    /// `Pr(<> fail) <= 1 - p0`.
    Dual(ConstraintSpec),
    /// Mean over runs of the per-run maximum of `expr` must stay below
    /// `limit`.
    Expected { expr: String, limit: f64 },
}

impl Check {
    pub fn kind(&self) -> &'static str {
        match self {
            Check::Observer(_) => "observer",
            Check::Invariant(_) => "invariant",
            Check::Monitors(_) => "monitor",
            Check::Dual(_) => "dual",
            Check::Expected { .. } => "expected",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequirementSpec {
    pub id: String,
    pub prose: String,
    pub check: Check,
    /// Threshold of the hypothesis test, where one applies.
    pub p0: f64,
    pub note: Option<String>,
}

impl RequirementSpec {
    /// Lower-case instance name for observer entries.
    pub fn observer_name(&self) -> String {
        self.id.to_lowercase()
    }

    /// The query this entry runs, in the query syntax where one exists.
    pub fn query(&self) -> String {
        let p = self.p0;
        match &self.check {
            Check::Observer(_) => format!("Pr[<={BOUND}]([] !{}.fail) >= {p}", self.observer_name()),
            Check::Invariant(pred) => format!("Pr[<={BOUND}]([] {pred}) >= {p}"),
            Check::Monitors(specs) => {
                let s: Vec<String> = specs.iter().map(describe).collect();
                format!("Pr[<={BOUND}]([] !fail({})) >= {p}", s.join(" & "))
            }
            Check::Dual(spec) => format!("Pr[<={BOUND}](<> fail({})) <= {}", describe(spec), round(1.0 - p)),
            Check::Expected { expr, limit } => format!("E[<={BOUND};{EXPECTED_RUNS}](max: {expr}) < {limit}"),
        }
    }
}

impl fmt::Display for RequirementSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.id, self.query())
    }
}

fn round(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

fn describe(s: &ConstraintSpec) -> String {
    match s {
        ConstraintSpec::Execution { input, output, lower, upper } => format!("execution {input}->{output} [{lower} {upper}]"),
        ConstraintSpec::EndToEnd { source, target, lower, upper } => format!("end_to_end {source}->{target} [{lower} {upper}]"),
        ConstraintSpec::Synchronization { members, tolerance } => format!("sync {} tol {tolerance}", members.join(" ")),
        ConstraintSpec::PeriodicCumulative { event, period, jitter } => format!("cumulative {event} T {period} j {jitter}"),
        ConstraintSpec::PeriodicNoncumulative { event, period, jitter } => format!("noncumulative {event} T {period} j {jitter}"),
        ConstraintSpec::Sporadic { event, min } => format!("sporadic {event} min {min}"),
        ConstraintSpec::Comparison { lhs, rel, rhs } => format!("{} {} {}", texpr(lhs), rel_str(*rel), texpr(rhs)),
    }
}

fn rel_str(r: Relation) -> &'static str {
    match r {
        Relation::Lt => "<",
        Relation::Le => "<=",
        Relation::Eq => "==",
        Relation::Ge => ">=",
        Relation::Gt => ">",
    }
}

fn texpr(e: &TimingExpr) -> String {
    match e {
        TimingExpr::Const(c) => format!("{c}"),
        TimingExpr::MaxE2E { source, target } => format!("e2e({source} {target})"),
        TimingExpr::Wcet { input, output } => format!("wcet({input} {output})"),
        TimingExpr::Sum(xs) => xs.iter().map(texpr).collect::<Vec<_>>().join(" + "),
    }
}

// ------------------------------------------------------------------ observers

fn fail_loc() -> Location {
    Location { labels: vec!["fail".into()], ..Location::new("fail") }
}

/// Watches for the premise to become true; from then on `response` must
/// hold within `window` ms. Re-arms once the premise falls.
pub fn rise_observer(name: &str, premise: &str, response: &str, window: f64) -> Template {
    Template { observer: true, ..Template::new(name, "low") }
        .clock("c")
        .loc(Location::new("low"))
        .loc(Location::new("wait"))
        .loc(Location::new("high"))
        .loc(fail_loc())
        .edge(Edge::new("low", "wait").guard(premise).update("c = 0"))
        .edge(Edge::new("wait", "high").guard(response))
        .edge(Edge::new("wait", "fail").guard(format!("c >= {window}")))
        .edge(Edge::new("high", "low").guard(format!("!({premise})")))
}

/// Each broadcast on `channel` that satisfies `guard` (evaluated after the
/// sender's updates) starts a wait for `response` of at most `window` ms.
pub fn event_observer(name: &str, channel: &str, guard: &str, response: &str, window: f64) -> Template {
    Template { observer: true, ..Template::new(name, "idle") }
        .clock("c")
        .loc(Location::new("idle"))
        .loc(Location::new("wait"))
        .loc(fail_loc())
        .edge(Edge::new("idle", "wait").recv(channel).guard(guard).update("c = 0"))
        .edge(Edge::new("wait", "idle").guard(response))
        .edge(Edge::new("wait", "fail").guard(format!("c >= {window}")))
}

/// After vehicle `a` turns to `side` (1 left, 2 right), once vehicle `b`
/// has taken the same heading and neither is still turning, both must be
/// in one lane. Fails as well if that does not happen within `window`.
pub fn lane_observer(name: &str, a: usize, b: usize, side: i64, lane: &str, window: f64) -> Template {
    let settled = format!(
        "dx_{a} == dx_{b} && dy_{a} == dy_{b} && sub_{a} != {TURN_LEFT} && sub_{a} != {TURN_RIGHT} && sub_{b} != {TURN_LEFT} && sub_{b} != {TURN_RIGHT}"
    );
    Template { observer: true, ..Template::new(name, "idle") }
        .clock("c")
        .loc(Location::new("idle"))
        .loc(Location::new("wait"))
        .loc(fail_loc())
        .edge(Edge::new("idle", "wait").recv(&format!("turn_{a}")).guard(format!("tl_{a} == {side}")).update("c = 0"))
        .edge(Edge::new("wait", "idle").guard(format!("{settled} && {lane}")))
        .edge(Edge::new("wait", "fail").guard(format!("{settled} && !{lane}")))
        .edge(Edge::new("wait", "fail").guard(format!("c >= {window}")))
}

// ------------------------------------------------------------------ catalog

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("catalog: {0}")]
pub struct CatalogError(pub String);

/// Window for follower reactions, ms: two controller cycles.
pub const FOLLOW_WINDOW: f64 = 1200.0;
/// Wait for the lane check after a turn, ms.
pub const LANE_WINDOW: f64 = 5000.0;

/// All fifty entries for a three-vehicle platoon.
pub fn requirement_catalog(cfg: &PlatoonConfig, taps: &TapRegistry) -> Result<Vec<RequirementSpec>, CatalogError> {
    if cfg.n_vehicles != 3 {
        return Err(CatalogError(format!("the catalog describes 3 vehicles, config has {}", cfg.n_vehicles)));
    }
    let pred = |tag: &str| taps.predicate(tag).map(str::to_string).ok_or_else(|| CatalogError(format!("no predicate tap {tag}")));
    let safe = cfg.safe_distance;
    let maxg = cfg.max_gap;
    let mut out = vec![];
    let mut push = |id: usize, prose: &str, check: Check, note: Option<&str>| {
        let id = format!("R{id}");
        let check = match check {
            Check::Observer(t) => Check::Observer(Template { name: format!("Obs{id}"), ..t }),
            c => c,
        };
        out.push(RequirementSpec { id, prose: prose.into(), check, p0: 0.95, note: note.map(Into::into) });
    };
    let obs = |t: Template| Check::Observer(t);

    for k in 1..=3 {
        push(
            k,
            &format!("v{k}: automatic mode with the message link down switches to userCtrl within 200 ms"),
            obs(rise_observer("o", &format!("auto_{k} && !msg_{k}"), &format!("!auto_{k}"), 200.0)),
            None,
        );
    }
    let sign_guard = |v: i64, extra: &str| format!("sign == {v} && auto_1 && sub_1 == 0 && drive1.cruise{extra}");
    push(4, "v1 in automatic constant speed sees a stop sign: braking within 500 ms", obs(event_observer("o", "sign", &sign_guard(5, ""), &format!("sub_1 == {BRAKING}"), 500.0)), None);
    push(
        5,
        "v1 in automatic constant speed sees a left-turn sign: turnLeft within 200 ms",
        obs(event_observer("o", "sign", &sign_guard(4, " && !turn_pending"), &format!("sub_1 == {TURN_LEFT}"), 200.0)),
        Some("premise excludes signs seen while an earlier turn is still propagating"),
    );
    push(
        6,
        "v1 in automatic constant speed sees a right-turn sign: turnRight within 200 ms",
        obs(event_observer("o", "sign", &sign_guard(3, " && !turn_pending"), &format!("sub_1 == {TURN_RIGHT}"), 200.0)),
        Some("premise excludes signs seen while an earlier turn is still propagating"),
    );
    for (id, req, what, resp) in [
        (7, 1, "steers left: turnLeft", TURN_LEFT),
        (8, 2, "steers right: turnRight", TURN_RIGHT),
        (9, 3, "brakes: braking", BRAKING),
        (10, 4, "shifts up: acc", crate::cas::ACC),
        (11, 5, "shifts down: dec", crate::cas::DEC),
    ] {
        push(
            id,
            &format!("v1 under userCtrl at constant speed, driver {what} within 200 ms"),
            obs(event_observer("o", "drv_1", &format!("req_1 == {req} && !auto_1"), &format!("sub_1 == {resp}"), 200.0)),
            None,
        );
    }
    for (id, a, b) in [(12, 1, 2), (13, 2, 3)] {
        let both = format!("dx_{a} == 1 && dy_{a} == 0 && dx_{b} == 1 && dy_{b} == 0 && {} && {}", pred(&format!("straight{a}"))?, pred(&format!("straight{b}"))?);
        push(id, &format!("v{b} stays behind v{a} while both drive straight along +x"), Check::Invariant(format!("!({both}) || veh{a}.x > veh{b}.x")), None);
    }
    push(
        14,
        "stop sign seen by v1 in automatic constant speed: all three vehicles static within 5000 ms",
        obs(event_observer("o", "sign", &sign_guard(5, ""), "sub_1 == 6 && sub_2 == 6 && sub_3 == 6", 5000.0)),
        Some("the 5000 ms window outlasts the 3000 ms run; only completed waits can fail"),
    );
    let follow = |a: usize, b: usize, cond: &str| format!("sub_{a} == 0 && sub_{b} == 0 && auto_{b} && {cond}");
    let discharge = |premise: &str, resp: &str| format!("({resp}) || !({premise})");
    let note_follow = Some("window is two follower controller cycles; a wait ends early once the premise no longer holds");
    for (id, a, b) in [(15, 1, 2), (16, 2, 3)] {
        let p = follow(a, b, &format!("vel_{a} > vel_{b} + 0.5 && gap_{b} >= {safe}"));
        push(id, &format!("v{b} at constant speed slower than v{a}: accelerates"), obs(rise_observer("o", &p, &discharge(&p, &format!("sub_{b} == 1")), FOLLOW_WINDOW)), note_follow);
    }
    for (id, a, b) in [(17, 1, 2), (18, 2, 3)] {
        let p = follow(a, b, &format!("vel_{a} < vel_{b} - 0.5"));
        push(
            id,
            &format!("v{b} at constant speed faster than v{a}: decelerates"),
            obs(rise_observer("o", &p, &discharge(&p, &format!("sub_{b} == 2 || sub_{b} == 5")), FOLLOW_WINDOW)),
            note_follow,
        );
    }
    for (id, a, b) in [(19, 1, 2), (20, 2, 3)] {
        let p = follow(a, b, &format!("gap_{b} > {maxg}"));
        push(id, &format!("v{b} more than max_gap behind v{a}: accelerates"), obs(rise_observer("o", &p, &discharge(&p, &format!("sub_{b} == 1")), FOLLOW_WINDOW)), note_follow);
    }
    for (id, a, b) in [(21, 1, 2), (22, 2, 3)] {
        let p = follow(a, b, &format!("gap_{b} < {safe}"));
        push(
            id,
            &format!("v{b} closer than safe_distance to v{a}: slows down"),
            obs(rise_observer("o", &p, &discharge(&p, &format!("sub_{b} == 2 || sub_{b} == 5")), FOLLOW_WINDOW)),
            note_follow,
        );
    }
    for (id, a, b, side, what) in [(23, 1, 2, 1, "left"), (24, 2, 3, 1, "left"), (25, 1, 2, 2, "right"), (26, 2, 3, 2, "right")] {
        push(
            id,
            &format!("after v{a} turns {what}, v{b} ends up in the same lane"),
            obs(lane_observer("o", a, b, side, &pred(&format!("lane{a}{b}"))?, LANE_WINDOW)),
            Some("same lane means x or y agree within 0.5 m, checked once both have finished turning"),
        );
    }

    for k in 1..=3 {
        let ev = format!("vd{k}");
        push(
            26 + k,
            &format!("v{k} dynamics trigger every 50 ms with 10 ms jitter"),
            Check::Monitors(vec![
                ConstraintSpec::PeriodicNoncumulative { event: ev.clone(), period: 50.0, jitter: 10.0 },
                ConstraintSpec::PeriodicCumulative { event: ev, period: 50.0, jitter: 10.0 },
            ]),
            None,
        );
    }
    for k in 1..=3 {
        push(
            29 + k,
            &format!("v{k} mode changes at least 2000 ms apart"),
            Check::Monitors(vec![ConstraintSpec::Sporadic { event: format!("mode{k}"), min: 2000.0 }]),
            Some("separation scaled from 20 s to 2000 ms to fit the 3000 ms bound"),
        );
    }
    for k in 1..=3 {
        push(
            32 + k,
            &format!("v{k} controller: Avel input to decision output within [100, 300] ms"),
            Check::Monitors(vec![ConstraintSpec::Execution { input: format!("avel{k}"), output: format!("cout{k}"), lower: 100.0, upper: 300.0 }]),
            None,
        );
    }
    for k in 1..=3 {
        push(
            35 + k,
            &format!("v{k} communication device: get to send within [50, 100] ms"),
            Check::Monitors(vec![ConstraintSpec::Execution { input: format!("cd_in{k}"), output: format!("cd_out{k}"), lower: 50.0, upper: 100.0 }]),
            None,
        );
    }
    for (id, a, b) in [(39, 1, 2), (40, 2, 3)] {
        push(
            id,
            &format!("v{a} controller output to the v{b} controller output that uses it within [300, 700] ms"),
            Check::Monitors(vec![ConstraintSpec::EndToEnd { source: format!("cout{a}_id"), target: format!("cout{b}_src"), lower: 300.0, upper: 700.0 }]),
            Some("targets carry the id of the upstream output they consumed; upstream outputs never consumed are vacuous"),
        );
    }
    for k in 1..=3 {
        push(
            40 + k,
            &format!("v{k} position read to controller output within [200, 500] ms"),
            Check::Monitors(vec![ConstraintSpec::EndToEnd { source: format!("pos{k}"), target: format!("cout{k}"), lower: 200.0, upper: 500.0 }]),
            None,
        );
    }
    for k in 1..=3 {
        push(
            43 + k,
            &format!("v{k} controller reads pos, vel, Apos and Avel within 200 ms of each other"),
            Check::Monitors(vec![ConstraintSpec::Synchronization {
                members: ["pos", "vel", "apos", "avel"].iter().map(|p| format!("{p}{k}")).collect(),
                tolerance: 200.0,
            }]),
            None,
        );
    }
    let wcet = |i: &str, o: &str| TimingExpr::Wcet { input: i.into(), output: o.into() };
    push(
        47,
        "summed worst-case times of both controllers and both communication devices cover the v1 to v2 end-to-end delay",
        Check::Dual(ConstraintSpec::Comparison {
            lhs: TimingExpr::Sum(vec![wcet("avel1", "cout1"), wcet("avel2", "cout2"), wcet("cd_in1", "cd_out1"), wcet("cd_in2", "cd_out2")]),
            rel: Relation::Ge,
            rhs: TimingExpr::MaxE2E { source: "cout1_id".into(), target: "cout2_src".into() },
        }),
        Some("runs where a side has no samples count as not failing"),
    );
    push(48, "expected peak braking energy of v1 below 30 kJ", Check::Expected { expr: pred("braking_energy1")?, limit: 30000.0 }, None);
    let all = |tag: &str, lim: f64| -> Result<String, CatalogError> {
        let parts: Result<Vec<String>, CatalogError> = (1..=3).map(|k| Ok(format!("{} <= {lim}", pred(&format!("{tag}{k}"))?))).collect();
        Ok(parts?.join(" && "))
    };
    push(49, "controller energy per decision at most 30 J", Check::Invariant(all("ctrl_energy", 30.0)?), None);
    push(50, "communication energy per transmission at most 5 J", Check::Invariant(all("com_energy", 5.0)?), None);
    Ok(out)
}

/// `R7` sorts before `R10`.
pub fn id_key(id: &str) -> (u32, String) {
    let n = id.trim_start_matches(|c: char| !c.is_ascii_digit()).parse().unwrap_or(u32::MAX);
    (n, id.to_string())
}
