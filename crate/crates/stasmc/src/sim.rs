//! Seeded race simulation of a compiled network.
//!
//! Every model instance samples a delay from the window in which one of its
//! edges can become enabled (uniform when the window is bounded by a guard
//! or the location invariant, exponential with the location's exit rate
//! otherwise). The earliest instance fires; ties go to the lowest id.
//!
//! Observer instances never sample: they fire at the earliest time one of
//! their own edges is enabled, pick the first enabled edge in document
//! order, and re-plan only each other. Model behaviour is therefore the
//! same with or without observers.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::sta::expr::{BinOp, CExpr, ExprError};
use crate::sta::model::{ChannelKind, Network, ValidationReport};
use crate::sta::network::{CompiledNetwork, Conj, NetworkState, StateEnv, SyncKind, OBSERVER_ID_BASE};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid network:\n{0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("ill-formed model: {0}")]
    IllFormed(String),
    #[error("no time progress after {events} events at t = {time} ms")]
    Zeno { time: f64, events: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Independent random stream `index` of a seeded family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub index: u64,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        RngStream { seed, index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.index);
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockBound {
    pub value: f64,
    pub bound: f64,
    pub rate: f64,
}

/// What delay sampling needs to know about one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceView {
    pub bounds: Vec<ClockBound>,
    pub exit_rate: f64,
}

impl InstanceView {
    /// Longest delay the invariant allows.
    pub fn cap(&self) -> Result<f64, SimError> {
        let mut cap = f64::INFINITY;
        for b in &self.bounds {
            let room = b.bound - b.value;
            let d = if b.rate > 0.0 {
                room.max(0.0) / b.rate
            } else if room > 0.0 {
                return Err(SimError::IllFormed(format!(
                    "clock bounded by {} has non-positive rate {}",
                    b.bound, b.rate
                )));
            } else {
                0.0
            };
            cap = cap.min(d);
        }
        Ok(cap)
    }
}

/// Samples from `[lo, hi]`: uniform when `hi` is finite, `lo` plus an
/// exponential with rate `exit_rate` otherwise. No draw when `lo == hi`.
pub fn sample_window(lo: f64, hi: f64, exit_rate: f64, rng: &mut impl Rng) -> Result<f64, SimError> {
    if hi.is_finite() {
        if hi > lo {
            Ok(lo + (hi - lo) * rng.random::<f64>())
        } else {
            Ok(lo)
        }
    } else {
        let exp = Exp::new(exit_rate).map_err(|_| SimError::IllFormed(format!("exit rate {exit_rate}")))?;
        Ok(lo + exp.sample(rng))
    }
}

pub fn sample_delay(view: &InstanceView, rng: &mut impl Rng) -> Result<f64, SimError> {
    sample_window(0.0, view.cap()?, view.exit_rate, rng)
}

/// Clock values and times live on a 1e-9 ms grid so that a delay solved
/// from a guard lands exactly on the guard's boundary.
pub(crate) fn snap(x: f64) -> f64 {
    if x.is_finite() {
        (x * 1e9).round() / 1e9
    } else {
        x
    }
}

/// Shift applied to strict guard bounds.
const STRICT_EPS: f64 = 1e-6;
/// Consecutive silent steps at one instant before the run is declared stuck.
const MAX_SILENT: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Fire,
    Deadlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Participant {
    pub id: u64,
    pub template: usize,
    pub name: String,
    pub edge: usize,
    pub from: usize,
    pub to: usize,
    pub observer: bool,
}

/// One discrete transition. The first participant is the initiator.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub channel: Option<usize>,
    pub participants: Vec<Participant>,
    pub spawned: Vec<u64>,
}

impl Event {
    pub fn by_observer(&self) -> bool {
        self.participants.first().is_some_and(|p| p.observer)
    }

    /// The event as the model sees it: observer receivers and observer
    /// spawns dropped. `None` when an observer initiated it.
    pub fn model_view(&self) -> Option<Event> {
        if self.by_observer() {
            return None;
        }
        let mut e = self.clone();
        e.participants.retain(|p| !p.observer);
        e.spawned.retain(|&id| id < OBSERVER_ID_BASE);
        Some(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Event(Event),
    /// The winning instance found no enabled edge; only its plan changed.
    Silent,
    Deadlock(Event),
    Bound,
}

pub struct Simulator<'n> {
    net: &'n CompiledNetwork,
    state: NetworkState,
    rng: ChaCha8Rng,
    sched: Vec<f64>,
    caps: Vec<f64>,
    events: u64,
    silent: u32,
    finished: bool,
    pub max_events: u64,
}

impl<'n> Simulator<'n> {
    pub fn new(net: &'n CompiledNetwork, stream: RngStream) -> Result<Self, SimError> {
        let state = net.initial_state()?;
        let n = state.instances.len();
        let mut sim = Simulator {
            net,
            state,
            rng: stream.rng(),
            sched: vec![f64::INFINITY; n],
            caps: vec![f64::INFINITY; n],
            events: 0,
            silent: 0,
            finished: false,
            max_events: 5_000_000,
        };
        sim.replan(false)?;
        Ok(sim)
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn net(&self) -> &'n CompiledNetwork {
        self.net
    }

    pub fn now(&self) -> f64 {
        self.state.elapsed
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    fn is_observer(&self, i: usize) -> bool {
        self.net.is_observer(&self.state.instances[i])
    }

    fn env(&self, i: usize, dt: f64) -> StateEnv<'_> {
        StateEnv { net: self.net, state: &self.state, inst: Some(i), dt }
    }

    fn view(&self, i: usize) -> Result<InstanceView, SimError> {
        let inst = &self.state.instances[i];
        let loc = &self.net.templates[inst.template].locations[inst.loc];
        let env = self.env(i, 0.0);
        let mut bounds = vec![];
        for b in &loc.invariant {
            bounds.push(ClockBound {
                value: inst.clocks[b.clock],
                bound: b.bound.eval_f64(&env)?,
                rate: inst.rates[b.clock],
            });
        }
        Ok(InstanceView { bounds, exit_rate: loc.exit_rate })
    }

    /// Delays (relative) over which every conjunct of the guard can hold.
    fn edge_window(&self, i: usize, conj: &[Conj]) -> Result<Option<(f64, f64)>, SimError> {
        let e0 = self.env(i, 0.0);
        let e1 = self.env(i, 1.0);
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for c in conj {
            match c {
                Conj::Static(x) => {
                    if !x.eval_bool(&e0)? {
                        return Ok(None);
                    }
                }
                Conj::Opaque => {}
                Conj::Linear { op, lhs, rhs } => {
                    let f0 = lhs.eval_f64(&e0)? - rhs.eval_f64(&e0)?;
                    let s = lhs.eval_f64(&e1)? - rhs.eval_f64(&e1)? - f0;
                    let strict = matches!(op, BinOp::Gt | BinOp::Lt);
                    let eps = if strict { STRICT_EPS } else { 0.0 };
                    // Rewrite as g(d) = f0 + s d >= 0 or <= 0.
                    let (f0, s, ge) = match op {
                        BinOp::Ge | BinOp::Gt => (f0, s, true),
                        BinOp::Le | BinOp::Lt => (f0, s, false),
                        BinOp::Eq => {
                            if s == 0.0 {
                                if snap(f0) != 0.0 {
                                    return Ok(None);
                                }
                            } else {
                                let d = -f0 / s;
                                lo = lo.max(d);
                                hi = hi.min(d);
                            }
                            continue;
                        }
                        _ => continue,
                    };
                    let (f0, s) = if ge { (f0, s) } else { (-f0, -s) };
                    // f0 + s d >= eps
                    if s > 0.0 {
                        lo = lo.max((eps - f0) / s);
                    } else if s < 0.0 {
                        hi = hi.min((eps - f0) / s);
                    } else if snap(f0) < eps {
                        return Ok(None);
                    }
                }
            }
            if lo > hi + 1e-12 {
                return Ok(None);
            }
        }
        Ok(Some((lo, hi)))
    }

    fn could_receive(&self, ch: usize, except: usize) -> bool {
        self.state.instances.iter().enumerate().any(|(j, inst)| {
            j != except && {
                let t = &self.net.templates[inst.template];
                t.out_edges[inst.loc].iter().any(|&e| t.edges[e].sync == SyncKind::Recv(ch))
            }
        })
    }

    /// Earliest and latest relative delay at which some initiating edge of
    /// `i` can fire, clipped to `cap`.
    fn window(&self, i: usize, cap: f64) -> Result<Option<(f64, f64)>, SimError> {
        let inst = &self.state.instances[i];
        let t = &self.net.templates[inst.template];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &ei in &t.out_edges[inst.loc] {
            let e = &t.edges[ei];
            match e.sync {
                SyncKind::Recv(_) => continue,
                SyncKind::Send(ch) if self.net.channels[ch].1 == ChannelKind::Binary && !self.could_receive(ch, i) => {
                    continue
                }
                _ => {}
            }
            if let Some((a, b)) = self.edge_window(i, &e.conj)? {
                let (a, b) = (a.max(0.0), b.min(cap));
                if a <= b + 1e-12 {
                    lo = lo.min(a);
                    hi = hi.max(b.max(a));
                }
            }
        }
        Ok((lo.is_finite()).then_some((lo, hi)))
    }

    fn plan(&mut self, i: usize) -> Result<(), SimError> {
        let now = self.state.elapsed;
        let view = self.view(i)?;
        let cap = view.cap()?;
        let observer = self.is_observer(i);
        let at = match self.window(i, cap)? {
            None => f64::INFINITY,
            Some((lo, _)) if observer => now + lo,
            Some((lo, hi)) => now + sample_window(lo, hi, view.exit_rate, &mut self.rng)?,
        };
        self.sched[i] = snap(at);
        self.caps[i] = if observer { f64::INFINITY } else { snap(now + cap) };
        Ok(())
    }

    fn replan(&mut self, observers_only: bool) -> Result<(), SimError> {
        for i in 0..self.state.instances.len() {
            if !observers_only || self.is_observer(i) {
                self.plan(i)?;
            }
        }
        Ok(())
    }

    fn drop_finished_spawns(&mut self) {
        let removed = self.net.despawn(&mut self.state);
        for &k in removed.iter().rev() {
            self.sched.remove(k);
            self.caps.remove(k);
        }
    }

    fn winner(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &t) in self.sched.iter().enumerate() {
            if !t.is_finite() {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let (tb, ib) = (self.sched[b], self.state.instances[b].id);
                    if t < tb || (t == tb && self.state.instances[i].id < ib) {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        best
    }

    /// Earliest time a passive model instance runs out of invariant room.
    fn time_lock(&self) -> f64 {
        (0..self.sched.len())
            .filter(|&i| !self.sched[i].is_finite() && !self.is_observer(i))
            .map(|i| self.caps[i])
            .fold(f64::INFINITY, f64::min)
    }

    /// Time of the next step, capped at `bound`. The current state holds,
    /// with clocks advancing at their rates, until then.
    pub fn horizon(&self, bound: f64) -> f64 {
        if self.finished {
            return self.state.elapsed;
        }
        let live = |i: &usize| {
            let inst = &self.state.instances[*i];
            !(inst.spawned && self.net.templates[inst.template].locations[inst.loc].terminal)
        };
        let next = (0..self.sched.len()).filter(live).map(|i| self.sched[i]).fold(f64::INFINITY, f64::min);
        next.min(self.time_lock()).min(bound).max(self.state.elapsed)
    }

    fn advance_to(&mut self, t: f64) {
        let d = t - self.state.elapsed;
        if d > 0.0 {
            for inst in &mut self.state.instances {
                for (c, r) in inst.clocks.iter_mut().zip(&inst.rates) {
                    *c = snap(*c + r * d);
                }
            }
        }
        self.state.elapsed = t;
    }

    fn choose_weighted(&mut self, edges: &[usize], template: usize) -> usize {
        if edges.len() == 1 {
            return edges[0];
        }
        let t = &self.net.templates[template];
        let total: f64 = edges.iter().map(|&e| t.edges[e].weight).sum();
        let mut x = self.rng.random::<f64>() * total;
        for &e in edges {
            x -= t.edges[e].weight;
            if x < 0.0 {
                return e;
            }
        }
        *edges.last().unwrap()
    }

    fn binary_receiver_exists(&self, i: usize, ei: usize, ch: usize) -> Result<bool, SimError> {
        let mut tentative = self.state.clone();
        self.net.apply_edge(&mut tentative, i, ei)?;
        for j in 0..tentative.instances.len() {
            if j != i && !self.net.receivers(&tentative, j, ch)?.is_empty() {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn participant(&self, i: usize, ei: usize, from: usize) -> Participant {
        let inst = &self.state.instances[i];
        Participant {
            id: inst.id,
            template: inst.template,
            name: self.net.instance_name(&self.state, i),
            edge: ei,
            from,
            to: inst.loc,
            observer: self.net.is_observer(inst),
        }
    }

    /// Advances to the next event (or to `bound`) and applies it.
    pub fn step(&mut self, bound: f64) -> Result<Step, SimError> {
        if self.finished {
            return Ok(Step::Bound);
        }
        self.drop_finished_spawns();
        let win = self.winner();
        let t_win = win.map_or(f64::INFINITY, |w| self.sched[w]);
        let t_lock = self.time_lock();
        if t_lock < t_win && t_lock < bound {
            self.advance_to(t_lock);
            self.finished = true;
            let ev = Event { time: t_lock, kind: EventKind::Deadlock, channel: None, participants: vec![], spawned: vec![] };
            return Ok(Step::Deadlock(ev));
        }
        if !(t_win < bound) {
            self.advance_to(bound.max(self.state.elapsed));
            self.finished = true;
            return Ok(Step::Bound);
        }
        let w = win.expect("finite winner");
        if t_win > self.state.elapsed {
            self.silent = 0;
        }
        self.advance_to(t_win);
        self.events += 1;
        if self.events > self.max_events {
            return Err(SimError::Zeno { time: t_win, events: self.events });
        }

        let observer = self.is_observer(w);
        let template = self.state.instances[w].template;
        let tdef = &self.net.templates[template];
        let mut candidates = vec![];
        for ei in self.net.enabled_edges(&self.state, w)? {
            match tdef.edges[ei].sync {
                SyncKind::Recv(_) => {}
                SyncKind::Send(ch) if self.net.channels[ch].1 == ChannelKind::Binary => {
                    if self.binary_receiver_exists(w, ei, ch)? {
                        candidates.push(ei);
                    }
                }
                _ => candidates.push(ei),
            }
        }
        if candidates.is_empty() {
            self.silent += 1;
            if self.silent > MAX_SILENT {
                return Err(SimError::Zeno { time: t_win, events: self.events });
            }
            self.plan(w)?;
            return Ok(Step::Silent);
        }
        let ei = if observer { candidates[0] } else { self.choose_weighted(&candidates, template) };
        let sync = tdef.edges[ei].sync;

        let from = self.state.instances[w].loc;
        let mut spawns = vec![];
        spawns.extend(self.net.apply_edge(&mut self.state, w, ei)?);
        let mut participants = vec![self.participant(w, ei, from)];
        let mut channel = None;
        if let SyncKind::Send(ch) = sync {
            channel = Some(ch);
            let mut chosen = vec![];
            match self.net.channels[ch].1 {
                ChannelKind::Broadcast => {
                    for j in 0..self.state.instances.len() {
                        if j == w {
                            continue;
                        }
                        let recv = self.net.receivers(&self.state, j, ch)?;
                        if recv.is_empty() {
                            continue;
                        }
                        let e = if self.is_observer(j) {
                            recv[0]
                        } else {
                            self.choose_weighted(&recv, self.state.instances[j].template)
                        };
                        chosen.push((j, e));
                    }
                }
                ChannelKind::Binary => {
                    let mut who = vec![];
                    for j in 0..self.state.instances.len() {
                        if j != w {
                            let recv = self.net.receivers(&self.state, j, ch)?;
                            if !recv.is_empty() {
                                who.push((j, recv));
                            }
                        }
                    }
                    if !who.is_empty() {
                        let k = if who.len() == 1 { 0 } else { self.rng.random_range(0..who.len()) };
                        let (j, recv) = who.swap_remove(k);
                        let e = self.choose_weighted(&recv, self.state.instances[j].template);
                        chosen.push((j, e));
                    }
                }
            }
            for (j, e) in chosen {
                let from = self.state.instances[j].loc;
                spawns.extend(self.net.apply_edge(&mut self.state, j, e)?);
                participants.push(self.participant(j, e, from));
            }
        }
        let mut spawned = vec![];
        for (t, args) in spawns {
            let k = self.net.push_spawn(&mut self.state, t, args);
            spawned.push(self.state.instances[k].id);
            self.sched.push(f64::INFINITY);
            self.caps.push(f64::INFINITY);
        }
        self.net.refresh_rates(&mut self.state)?;
        self.replan(observer)?;
        Ok(Step::Event(Event { time: t_win, kind: EventKind::Fire, channel, participants, spawned }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Signal {
    fn push(&mut self, t: f64, v: f64) {
        if self.points.last() == Some(&(t, v)) {
            return;
        }
        // Drop the middle of three collinear points on a straight stretch.
        if let [.., (t0, v0), (t1, v1)] = self.points[..] {
            if t1 > t0 && t > t1 && ((v1 - v0) / (t1 - t0) - (v - v1) / (t - t1)).abs() < 1e-12 {
                self.points.pop();
            }
        }
        self.points.push((t, v));
    }

    /// Linear interpolation; at a jump the later value wins.
    pub fn at(&self, t: f64) -> Option<f64> {
        let k = self.points.partition_point(|p| p.0 <= t);
        if k == 0 {
            return None;
        }
        let (t1, v1) = self.points[k - 1];
        match self.points.get(k) {
            Some(&(t2, v2)) if t2 > t1 => Some(v1 + (v2 - v1) * (t - t1) / (t2 - t1)),
            _ => Some(v1),
        }
    }
}

/// A simulated trajectory. `snapshots[0]` is the initial state and
/// `snapshots[k + 1]` the state right after `events[k]`; each snapshot
/// holds, with clocks moving at its rates, until the next event or `end`.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub seed: u64,
    pub index: u64,
    pub bound: f64,
    pub end: f64,
    pub events: Vec<Event>,
    pub snapshots: Vec<NetworkState>,
    pub signals: Vec<Signal>,
    /// Observer name to "entered a fail location during the run".
    pub verdicts: BTreeMap<String, bool>,
}

impl Run {
    pub fn model_events(&self) -> Vec<Event> {
        self.events.iter().filter_map(Event::model_view).collect()
    }

    pub fn deadlocked(&self) -> bool {
        self.events.last().is_some_and(|e| e.kind == EventKind::Deadlock)
    }

    /// Segment `k`: the snapshot and the interval it covers.
    pub fn segment(&self, k: usize) -> (&NetworkState, f64, f64) {
        let start = self.snapshots[k].elapsed;
        let end = self.events.get(k).map_or(self.end, |e| e.time);
        (&self.snapshots[k], start, end)
    }
}

fn record_verdicts(net: &CompiledNetwork, st: &NetworkState, verdicts: &mut BTreeMap<String, bool>) {
    for (i, inst) in st.instances.iter().enumerate() {
        let t = &net.templates[inst.template];
        if !t.observer {
            continue;
        }
        let key = if i < net.instances.len() { net.instances[i].name.clone() } else { t.name.clone() };
        let failed = t.locations[inst.loc].has_label("fail");
        let slot = verdicts.entry(key).or_insert(false);
        *slot |= failed;
    }
}

/// Runs stream `stream` of `net` up to `bound`, recording snapshots and
/// the watched expressions.
pub fn simulate_compiled(
    net: &CompiledNetwork,
    bound: f64,
    stream: RngStream,
    watch: &[(String, CExpr)],
) -> Result<Run, SimError> {
    let mut sim = Simulator::new(net, stream)?;
    let eval = |st: &NetworkState, e: &CExpr, dt: f64| -> Result<f64, SimError> {
        Ok(e.eval_f64(&StateEnv { net, state: st, inst: None, dt })?)
    };
    let mut signals: Vec<Signal> = watch.iter().map(|(n, _)| Signal { name: n.clone(), points: vec![] }).collect();
    for (s, (_, e)) in signals.iter_mut().zip(watch) {
        s.push(0.0, eval(sim.state(), e, 0.0)?);
    }
    let mut verdicts = BTreeMap::new();
    record_verdicts(net, sim.state(), &mut verdicts);
    let mut events = vec![];
    let mut snapshots = vec![sim.state().clone()];
    loop {
        let h = sim.horizon(bound);
        let dt = h - sim.now();
        for (s, (_, e)) in signals.iter_mut().zip(watch) {
            s.push(h, eval(sim.state(), e, dt)?);
        }
        match sim.step(bound)? {
            Step::Bound => break,
            Step::Silent => {}
            Step::Event(ev) | Step::Deadlock(ev) => {
                for (s, (_, e)) in signals.iter_mut().zip(watch) {
                    s.push(ev.time, eval(sim.state(), e, 0.0)?);
                }
                record_verdicts(net, sim.state(), &mut verdicts);
                events.push(ev);
                snapshots.push(sim.state().clone());
            }
        }
    }
    Ok(Run {
        seed: stream.seed,
        index: stream.index,
        bound,
        end: sim.now(),
        events,
        snapshots,
        signals,
        verdicts,
    })
}

/// Validates `net`, then simulates run 0 of `seed`. Watched expressions
/// use the query scope (globals, `inst.member`, `any(T, label)`).
pub fn simulate(net: &Network, bound: f64, seed: u64, watch: &[&str]) -> Result<Run, SimError> {
    let c = CompiledNetwork::compile(net).map_err(SimError::Invalid)?;
    let w = watch
        .iter()
        .map(|s| Ok((s.to_string(), c.compile_str(s)?)))
        .collect::<Result<Vec<_>, ExprError>>()?;
    simulate_compiled(&c, bound, RngStream::new(seed, 0), &w)
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

/// Event log: one row per participant plus one `init` row per static
/// instance.
pub fn write_events_csv(net: &CompiledNetwork, run: &Run, out: impl Write) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| SimError::Io(e.into());
    w.write_record(["time_ms", "instance", "location", "event_kind", "channel"]).map_err(io)?;
    let init = &run.snapshots[0];
    for (i, inst) in init.instances.iter().enumerate() {
        let t = &net.templates[inst.template];
        w.write_record([
            "0",
            &net.instance_name(init, i),
            &t.locations[inst.loc].name,
            "init",
            "",
        ])
        .map_err(io)?;
    }
    for ev in &run.events {
        let time = fmt_num(ev.time);
        if ev.kind == EventKind::Deadlock {
            w.write_record([time.as_str(), "", "", "deadlock", ""]).map_err(io)?;
            continue;
        }
        let ch = ev.channel.map_or("", |c| net.channels[c].0.as_str());
        for (k, p) in ev.participants.iter().enumerate() {
            let kind = match (ev.channel, k) {
                (None, _) => "fire",
                (Some(_), 0) => "send",
                _ => "recv",
            };
            let loc = &net.templates[p.template].locations[p.to].name;
            w.write_record([time.as_str(), p.name.as_str(), loc.as_str(), kind, ch]).map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_signal_csv(sig: &Signal, out: impl Write) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| SimError::Io(e.into());
    w.write_record(["time_ms", "value"]).map_err(io)?;
    for &(t, v) in &sig.points {
        w.write_record([fmt_num(t), fmt_num(v)]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sta::model::{Edge, Literal, Location, Template, VarKind};

    fn bounded(value: f64, bound: f64) -> InstanceView {
        InstanceView { bounds: vec![ClockBound { value, bound, rate: 1.0 }], exit_rate: 1.0 }
    }

    #[test]
    fn forced_immediate_delay() {
        let mut rng = RngStream::new(1, 0).rng();
        assert_eq!(sample_delay(&bounded(0.0, 0.0), &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn uniform_delay_mean() {
        let mut rng = RngStream::new(2, 0).rng();
        let n = 100_000;
        let v = bounded(4.0, 10.0);
        let mean: f64 = (0..n).map(|_| sample_delay(&v, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 3.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn exponential_delay_mean() {
        let mut rng = RngStream::new(3, 0).rng();
        let n = 100_000;
        let v = InstanceView { bounds: vec![], exit_rate: 0.5 };
        let mean: f64 = (0..n).map(|_| sample_delay(&v, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn stopped_bounded_clock_is_ill_formed() {
        let v = InstanceView { bounds: vec![ClockBound { value: 1.0, bound: 5.0, rate: 0.0 }], exit_rate: 1.0 };
        assert!(matches!(v.cap(), Err(SimError::IllFormed(_))));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(RngStream::new(9, 1).rng(), |r, _: u64| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(RngStream::new(9, 1).rng(), |r, _: u64| Some(r.random())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(RngStream::new(9, 2).rng(), |r, _: u64| Some(r.random())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    fn clock_only() -> Network {
        Network::default()
            .with_template(Template::new("C", "a").clock("clk").loc(Location::new("a")))
            .instance("c", "C", vec![])
    }

    #[test]
    fn bound_zero_keeps_initial_snapshot_only() {
        let run = simulate(&clock_only(), 0.0, 1, &[]).unwrap();
        assert!(run.events.is_empty());
        assert_eq!(run.snapshots.len(), 1);
    }

    #[test]
    fn watched_clock_is_linear() {
        let run = simulate(&clock_only(), 10.0, 1, &["c.clk"]).unwrap();
        let pts = &run.signals[0].points;
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(10.0, 10.0)));
        assert_eq!(run.signals[0].at(2.5), Some(2.5));
    }

    #[test]
    fn immediate_edge_keeps_time() {
        let net = Network::default()
            .with_template(
                Template::new("P", "a")
                    .clock("u")
                    .loc(Location { invariant: Some("u <= 0".into()), ..Location::new("a") })
                    .loc(Location::new("b"))
                    .edge(Edge::new("a", "b")),
            )
            .instance("p", "P", vec![]);
        let c = CompiledNetwork::compile(&net).unwrap();
        let mut sim = Simulator::new(&c, RngStream::new(5, 0)).unwrap();
        let Step::Event(ev) = sim.step(10.0).unwrap() else { panic!("expected an event") };
        assert_eq!(ev.time, 0.0);
        assert_eq!(sim.state().instances[0].loc, 1);
    }

    #[test]
    fn branch_frequency_follows_weights() {
        let net = Network::default()
            .with_template(
                Template::new("P", "a")
                    .clock("u")
                    .loc(Location { invariant: Some("u <= 1".into()), ..Location::new("a") })
                    .loc(Location { invariant: Some("u <= 1".into()), ..Location::new("b") })
                    .edge(Edge::new("a", "b").weight(3.0).update("u = 0"))
                    .edge(Edge::new("a", "a").weight(7.0).update("u = 0"))
                    .edge(Edge::new("b", "a").update("u = 0")),
            )
            .instance("p", "P", vec![]);
        let c = CompiledNetwork::compile(&net).unwrap();
        let mut sim = Simulator::new(&c, RngStream::new(11, 0)).unwrap();
        let (mut first, mut total) = (0u32, 0u32);
        while total < 100_000 {
            if let Step::Event(ev) = sim.step(f64::INFINITY).unwrap() {
                if ev.participants[0].from == 0 {
                    total += 1;
                    first += (ev.participants[0].edge == 0) as u32;
                }
            }
        }
        let f = first as f64 / total as f64;
        assert!((f - 0.3).abs() < 0.01, "{f}");
    }

    #[test]
    fn broadcast_moves_all_enabled_receivers_together() {
        let net = Network::default()
            .channel("go", ChannelKind::Broadcast)
            .global("n", VarKind::Int, Literal::Int(0))
            .with_template(
                Template::new("S", "a")
                    .clock("u")
                    .loc(Location { invariant: Some("u <= 2".into()), ..Location::new("a") })
                    .loc(Location::new("b"))
                    .edge(Edge::new("a", "b").send("go").update("n = 1")),
            )
            .with_template(
                Template::new("R", "w")
                    .loc(Location::new("w"))
                    .loc(Location::new("got"))
                    .edge(Edge::new("w", "got").recv("go").guard("n == 1")),
            )
            .instance("s", "S", vec![])
            .instance("r1", "R", vec![])
            .instance("r2", "R", vec![]);
        let run = simulate(&net, 10.0, 3, &[]).unwrap();
        assert_eq!(run.events.len(), 1);
        let names: Vec<&str> = run.events[0].participants.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, vec!["s", "r1", "r2"]);
    }

    #[test]
    fn binary_picks_exactly_one_receiver() {
        let net = Network::default()
            .channel("go", ChannelKind::Binary)
            .with_template(
                Template::new("S", "a")
                    .clock("u")
                    .loc(Location { invariant: Some("u <= 2".into()), ..Location::new("a") })
                    .loc(Location::new("b"))
                    .edge(Edge::new("a", "b").send("go")),
            )
            .with_template(Template::new("R", "w").loc(Location::new("w")).loc(Location::new("got")).edge(Edge::new("w", "got").recv("go")))
            .instance("s", "S", vec![])
            .instance("r1", "R", vec![])
            .instance("r2", "R", vec![]);
        let c = CompiledNetwork::compile(&net).unwrap();
        let mut hits = [0u32; 2];
        for seed in 0..400 {
            let run = simulate_compiled(&c, 10.0, RngStream::new(seed, 0), &[]).unwrap();
            assert_eq!(run.events[0].participants.len(), 2);
            hits[(run.events[0].participants[1].name == "r2") as usize] += 1;
        }
        assert!(hits[0] > 150 && hits[1] > 150, "{hits:?}");
    }

    #[test]
    fn time_lock_is_a_recorded_deadlock() {
        let net = Network::default()
            .with_template(
                Template::new("P", "a")
                    .clock("u")
                    .loc(Location { invariant: Some("u <= 3".into()), ..Location::new("a") })
                    .loc(Location::new("b"))
                    .edge(Edge::new("a", "b").guard("u >= 5")),
            )
            .instance("p", "P", vec![]);
        let run = simulate(&net, 10.0, 1, &[]).unwrap();
        assert!(run.deadlocked());
        assert_eq!(run.events[0].time, 3.0);
    }

    #[test]
    fn rate_expressions_follow_variables() {
        let net = Network::default()
            .global("on", VarKind::Bool, Literal::Bool(false))
            .with_template(
                Template::new("Sw", "off")
                    .clock("u")
                    .loc(Location { invariant: Some("u <= 4".into()), ..Location::new("off") })
                    .loc(Location::new("on"))
                    .edge(Edge::new("off", "on").guard("u >= 4").update("on = true")),
            )
            .with_template(Template::new("M", "m").clock("e").loc(Location {
                rates: [("e".to_string(), crate::sta::RateSpec::Expr("on ? 2.0 : 0.0".into()))].into(),
                ..Location::new("m")
            }))
            .instance("sw", "Sw", vec![])
            .instance("m", "M", vec![]);
        let run = simulate(&net, 10.0, 1, &["m.e"]).unwrap();
        assert_eq!(run.signals[0].at(4.0), Some(0.0));
        assert_eq!(run.signals[0].points.last(), Some(&(10.0, 12.0)));
    }
}
