//! Compiled network: resolved names, typed updates, and the runtime state
//! those compiled expressions read.

use std::collections::HashMap;

use thiserror::Error;

use super::expr::{self, BinOp, CExpr, Env, Expr, ExprError, LValue, Ref, Scope, Value};
use super::model::{ChannelKind, Literal, Network, RateSpec, ValidationReport, VarKind};

/// Ids of observer instances start here so they never collide with model ids.
pub const OBSERVER_ID_BASE: u64 = 1 << 40;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("template {0} is not spawnable")]
    NotSpawnable(String),
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("spawn of {template} expects {expected} arguments, got {got}")]
    Arity { template: String, expected: usize, got: usize },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSlot {
    pub name: String,
    pub kind: VarKind,
    pub base: usize,
    pub len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvBound {
    pub clock: usize,
    pub strict: bool,
    pub bound: CExpr,
}

/// One top-level conjunct of a guard, classified for delay-window solving.
#[derive(Debug, Clone, PartialEq)]
pub enum Conj {
    Static(CExpr),
    Linear { op: BinOp, lhs: CExpr, rhs: CExpr },
    Opaque,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CLocation {
    pub name: String,
    pub labels: Vec<String>,
    pub invariant: Vec<InvBound>,
    /// Per clock; `None` means rate 1.
    pub rates: Vec<Option<CExpr>>,
    pub exit_rate: f64,
    /// Spawned instances sitting here are removed at the next step.
    pub terminal: bool,
}

impl CLocation {
    pub fn has_label(&self, l: &str) -> bool {
        self.labels.iter().any(|x| x == l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncKind {
    None,
    Send(usize),
    Recv(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CUpdate {
    Clock(usize, CExpr),
    Local(usize, VarKind, CExpr),
    Global(usize, VarKind, CExpr),
    GlobalAt { base: usize, len: usize, kind: VarKind, idx: CExpr, value: CExpr },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CEdge {
    pub source: usize,
    pub target: usize,
    pub guard: CExpr,
    pub conj: Vec<Conj>,
    pub sync: SyncKind,
    pub weight: f64,
    pub updates: Vec<CUpdate>,
    pub spawn: Option<(usize, Vec<CExpr>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CTemplate {
    pub name: String,
    pub params: Vec<(String, VarKind)>,
    pub clocks: Vec<(String, f64)>,
    pub vars: Vec<(String, VarKind, Value)>,
    pub locations: Vec<CLocation>,
    pub initial: usize,
    pub edges: Vec<CEdge>,
    pub out_edges: Vec<Vec<usize>>,
    pub spawnable: bool,
    pub observer: bool,
}

impl CTemplate {
    pub fn location(&self, name: &str) -> Option<usize> {
        self.locations.iter().position(|l| l.name == name)
    }

    pub fn clock(&self, name: &str) -> Option<usize> {
        self.clocks.iter().position(|c| c.0 == name)
    }

    pub fn var(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.0 == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticInstance {
    pub name: String,
    pub template: usize,
    pub args: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledNetwork {
    pub source: Network,
    pub channels: Vec<(String, ChannelKind)>,
    pub globals: Vec<GlobalSlot>,
    pub global_init: Vec<Value>,
    pub templates: Vec<CTemplate>,
    pub instances: Vec<StaticInstance>,
}

pub fn coerce(kind: VarKind, v: Value) -> Value {
    match kind {
        VarKind::Int => match v {
            Value::Int(_) => v,
            Value::Bool(b) => Value::Int(b as i64),
            Value::Real(x) => Value::Int(x.round() as i64),
        },
        VarKind::Bool => Value::Bool(v.truthy()),
        VarKind::Real => Value::Real(v.as_f64()),
    }
}

fn literal_value(kind: VarKind, l: &Literal) -> Option<Value> {
    let v = match l {
        Literal::Bool(b) => Value::Bool(*b),
        Literal::Int(i) => Value::Int(*i),
        Literal::Real(x) => Value::Real(*x),
        Literal::List(_) => return None,
    };
    if kind == VarKind::Int {
        if let Value::Real(x) = v {
            if x.fract() != 0.0 {
                return None;
            }
        }
    }
    Some(coerce(kind, v))
}

fn default_value(kind: VarKind) -> Value {
    match kind {
        VarKind::Int => Value::Int(0),
        VarKind::Bool => Value::Bool(false),
        VarKind::Real => Value::Real(0.0),
    }
}

// ------------------------------------------------------------------ scopes

struct NetScope<'a> {
    globals: &'a HashMap<String, usize>,
    slots: &'a [GlobalSlot],
    templates: &'a [CTemplate],
    template_names: &'a HashMap<String, usize>,
    instances: &'a [StaticInstance],
}

impl NetScope<'_> {
    fn global(&self, name: &str) -> Option<Ref> {
        let s = &self.slots[*self.globals.get(name)?];
        Some(match s.len {
            None => Ref::Global(s.base),
            Some(len) => Ref::GlobalArray { base: s.base, len },
        })
    }
}

impl Scope for NetScope<'_> {
    fn resolve(&self, name: &str) -> Option<Ref> {
        self.global(name)
    }

    fn resolve_member(&self, inst: &str, member: &str) -> Option<Ref> {
        let i = self.instances.iter().position(|s| s.name == inst)?;
        let t = self.templates.get(self.instances[i].template)?;
        if let Some(c) = t.clock(member) {
            return Some(Ref::InstClock(i, c));
        }
        if let Some(v) = t.var(member) {
            return Some(Ref::InstLocal(i, v));
        }
        let mask: Vec<bool> =
            t.locations.iter().map(|l| l.name == member || l.has_label(member)).collect();
        mask.iter().any(|&b| b).then_some(Ref::InstAt(i, mask))
    }

    fn resolve_any(&self, template: &str, label: &str) -> Option<(usize, Vec<bool>)> {
        let ti = *self.template_names.get(template)?;
        let mask: Vec<bool> = self.templates[ti]
            .locations
            .iter()
            .map(|l| l.name == label || l.has_label(label))
            .collect();
        mask.iter().any(|&b| b).then_some((ti, mask))
    }
}

struct TemplateScope<'a, 'b> {
    net: &'a NetScope<'b>,
    clocks: &'a [(String, f64)],
    vars: &'a [(String, VarKind, Value)],
    params: &'a [(String, VarKind)],
}

impl Scope for TemplateScope<'_, '_> {
    fn resolve(&self, name: &str) -> Option<Ref> {
        if let Some(i) = self.clocks.iter().position(|c| c.0 == name) {
            return Some(Ref::Clock(i));
        }
        if let Some(i) = self.vars.iter().position(|v| v.0 == name) {
            return Some(Ref::Local(i));
        }
        if let Some(i) = self.params.iter().position(|p| p.0 == name) {
            return Some(Ref::Param(i));
        }
        self.net.global(name)
    }

    fn resolve_member(&self, inst: &str, member: &str) -> Option<Ref> {
        self.net.resolve_member(inst, member)
    }

    fn resolve_any(&self, template: &str, label: &str) -> Option<(usize, Vec<bool>)> {
        self.net.resolve_any(template, label)
    }
}

fn classify(c: &CExpr) -> Conj {
    if !c.has_clock() {
        return Conj::Static(c.clone());
    }
    match c {
        CExpr::Bin(op, a, b) if op.is_comparison() && *op != BinOp::Ne => {
            Conj::Linear { op: *op, lhs: (**a).clone(), rhs: (**b).clone() }
        }
        _ => Conj::Opaque,
    }
}

fn parse_compile(
    src: &str,
    scope: &dyn Scope,
    report: &mut ValidationReport,
    tname: &str,
    edge: Option<usize>,
    what: &str,
) -> Option<CExpr> {
    let e = match expr::parse_expr(src) {
        Ok(e) => e,
        Err(err) => {
            report.push(Some(tname), edge, format!("{what}: {err}"));
            return None;
        }
    };
    match expr::compile(&e, scope) {
        Ok(c) => Some(c),
        Err(err) => {
            report.push(Some(tname), edge, format!("{what}: {err}"));
            None
        }
    }
}

impl CompiledNetwork {
    /// Resolves every name and checks every structural rule, collecting
    /// all violations rather than stopping at the first.
    pub fn compile(net: &Network) -> Result<CompiledNetwork, ValidationReport> {
        let mut report = ValidationReport::default();

        let mut channels: Vec<(String, ChannelKind)> = vec![];
        for c in &net.channels {
            if channels.iter().any(|x| x.0 == c.name) {
                report.push(None, None, format!("duplicate channel {}", c.name));
            }
            channels.push((c.name.clone(), c.kind));
        }

        let mut slots = vec![];
        let mut global_init = vec![];
        let mut gnames = HashMap::new();
        for g in &net.globals {
            if gnames.insert(g.name.clone(), slots.len()).is_some() {
                report.push(None, None, format!("duplicate global {}", g.name));
            }
            let base = global_init.len();
            match g.size {
                None => {
                    let v = match &g.initial {
                        None => Some(default_value(g.kind)),
                        Some(l) => literal_value(g.kind, l),
                    };
                    match v {
                        Some(v) => global_init.push(v),
                        None => {
                            report.push(None, None, format!("global {}: initial value does not match its kind", g.name));
                            global_init.push(default_value(g.kind));
                        }
                    }
                }
                Some(n) => {
                    let vals: Option<Vec<Value>> = match &g.initial {
                        None => Some(vec![default_value(g.kind); n]),
                        Some(Literal::List(xs)) if xs.len() == n => {
                            xs.iter().map(|x| literal_value(g.kind, x)).collect()
                        }
                        Some(Literal::List(_)) => None,
                        Some(l) => literal_value(g.kind, l).map(|v| vec![v; n]),
                    };
                    match vals {
                        Some(v) => global_init.extend(v),
                        None => {
                            report.push(None, None, format!("global {}: initial value does not match its kind or size", g.name));
                            global_init.extend(vec![default_value(g.kind); n]);
                        }
                    }
                }
            }
            slots.push(GlobalSlot { name: g.name.clone(), kind: g.kind, base, len: g.size });
        }

        // Pass 1: names, clocks, vars, locations (needed for member scopes).
        let mut tnames = HashMap::new();
        let mut templates: Vec<CTemplate> = vec![];
        for t in &net.templates {
            if tnames.insert(t.name.clone(), templates.len()).is_some() {
                report.push(Some(&t.name), None, "duplicate template name");
            }
            let mut seen = HashMap::new();
            let mut note = |n: &str, report: &mut ValidationReport| {
                if seen.insert(n.to_string(), ()).is_some() {
                    report.push(Some(&t.name), None, format!("duplicate name {n}"));
                }
            };
            let mut params = vec![];
            for p in &t.parameters {
                note(&p.name, &mut report);
                params.push((p.name.clone(), p.kind));
            }
            let mut clocks = vec![];
            for c in &t.clocks {
                note(&c.name, &mut report);
                if !(c.initial >= 0.0) {
                    report.push(Some(&t.name), None, format!("clock {} has negative initial value", c.name));
                }
                clocks.push((c.name.clone(), c.initial));
            }
            let mut vars = vec![];
            for v in &t.vars {
                note(&v.name, &mut report);
                if v.size.is_some() {
                    report.push(Some(&t.name), None, format!("local {} cannot be an array", v.name));
                }
                let init = match &v.initial {
                    None => Some(default_value(v.kind)),
                    Some(l) => literal_value(v.kind, l),
                };
                let init = init.unwrap_or_else(|| {
                    report.push(Some(&t.name), None, format!("local {}: initial value does not match its kind", v.name));
                    default_value(v.kind)
                });
                vars.push((v.name.clone(), v.kind, init));
            }
            let mut locations = vec![];
            for l in &t.locations {
                if locations.iter().any(|x: &CLocation| x.name == l.name) {
                    report.push(Some(&t.name), None, format!("duplicate location {}", l.name));
                }
                if !(l.exit_rate > 0.0) {
                    report.push(Some(&t.name), None, format!("location {}: exit_rate must be positive", l.name));
                }
                locations.push(CLocation {
                    name: l.name.clone(),
                    labels: l.labels.clone(),
                    invariant: vec![],
                    rates: vec![None; clocks.len()],
                    exit_rate: l.exit_rate,
                    terminal: false,
                });
            }
            let initial = locations.iter().position(|l| l.name == t.initial).unwrap_or_else(|| {
                report.push(Some(&t.name), None, format!("initial location {} does not exist", t.initial));
                0
            });
            if locations.is_empty() {
                report.push(Some(&t.name), None, "template has no locations");
            }
            templates.push(CTemplate {
                name: t.name.clone(),
                params,
                clocks,
                vars,
                locations,
                initial,
                edges: vec![],
                out_edges: vec![],
                spawnable: t.spawnable,
                observer: t.observer,
            });
        }

        let mut instances = vec![];
        for inst in &net.instances {
            if instances.iter().any(|x: &StaticInstance| x.name == inst.name) {
                report.push(None, None, format!("duplicate instance {}", inst.name));
            }
            let Some(&ti) = tnames.get(&inst.template) else {
                report.push(None, None, format!("instance {}: unknown template {}", inst.name, inst.template));
                continue;
            };
            let t = &templates[ti];
            if t.spawnable {
                report.push(None, None, format!("instance {}: template {} is spawnable and cannot be instantiated statically", inst.name, t.name));
            }
            if inst.args.len() != t.params.len() {
                report.push(None, None, format!("instance {}: expected {} arguments, got {}", inst.name, t.params.len(), inst.args.len()));
                continue;
            }
            let mut args = vec![];
            for (a, (pn, pk)) in inst.args.iter().zip(&t.params) {
                match literal_value(*pk, a) {
                    Some(v) => args.push(v),
                    None => {
                        report.push(None, None, format!("instance {}: argument {pn} does not match its kind", inst.name));
                        args.push(default_value(*pk));
                    }
                }
            }
            instances.push(StaticInstance { name: inst.name.clone(), template: ti, args });
        }

        // Pass 2: expressions.
        let shells = templates.clone();
        let scope = NetScope {
            globals: &gnames,
            slots: &slots,
            templates: &shells,
            template_names: &tnames,
            instances: &instances,
        };
        for (ti, t) in net.templates.iter().enumerate() {
            if tnames.get(&t.name) != Some(&ti) {
                continue;
            }
            let ct = &mut templates[ti];
            let ts = TemplateScope { net: &scope, clocks: &shells[ti].clocks, vars: &shells[ti].vars, params: &shells[ti].params };
            let tn = t.name.as_str();

            for (li, l) in t.locations.iter().enumerate() {
                if let Some(src) = &l.invariant {
                    if let Some(c) = parse_compile(src, &ts, &mut report, tn, None, &format!("invariant of {}", l.name)) {
                        let mut bounds = vec![];
                        for part in c.conjuncts() {
                            if part.is_const_true() {
                                continue;
                            }
                            let b = match part {
                                CExpr::Bin(op @ (BinOp::Le | BinOp::Lt), a, b) => match (&**a, &**b) {
                                    (CExpr::Clock(k), rhs) if !rhs.has_clock() => Some(InvBound { clock: *k, strict: *op == BinOp::Lt, bound: rhs.clone() }),
                                    _ => None,
                                },
                                CExpr::Bin(op @ (BinOp::Ge | BinOp::Gt), a, b) => match (&**a, &**b) {
                                    (lhs, CExpr::Clock(k)) if !lhs.has_clock() => Some(InvBound { clock: *k, strict: *op == BinOp::Gt, bound: lhs.clone() }),
                                    _ => None,
                                },
                                _ => None,
                            };
                            match b {
                                Some(b) => bounds.push(b),
                                None => report.push(Some(tn), None, format!("invariant of {} must be a conjunction of clock upper bounds", l.name)),
                            }
                        }
                        ct.locations[li].invariant = bounds;
                    }
                }
                for (clock, spec) in &l.rates {
                    let Some(ci) = shells[ti].clock(clock) else {
                        report.push(Some(tn), None, format!("location {}: rate for unknown clock {clock}", l.name));
                        continue;
                    };
                    let r = match spec {
                        RateSpec::Const(x) => Some(CExpr::Const(Value::Real(*x))),
                        RateSpec::Expr(src) => parse_compile(src, &ts, &mut report, tn, None, &format!("rate of {clock} in {}", l.name)),
                    };
                    if let Some(r) = r {
                        if r.has_clock() {
                            report.push(Some(tn), None, format!("rate of {clock} in {} may not depend on clocks", l.name));
                        }
                        ct.locations[li].rates[ci] = Some(r);
                    }
                }
            }

            ct.out_edges = vec![vec![]; ct.locations.len()];
            for (ei, e) in t.edges.iter().enumerate() {
                let source = shells[ti].location(&e.source);
                let target = shells[ti].location(&e.target);
                if source.is_none() {
                    report.push(Some(tn), Some(ei), format!("source location {} does not exist", e.source));
                }
                if target.is_none() {
                    report.push(Some(tn), Some(ei), format!("target location {} does not exist", e.target));
                }
                if !(e.weight > 0.0) {
                    report.push(Some(tn), Some(ei), "weight must be positive");
                }
                let guard = match &e.guard {
                    None => CExpr::Const(Value::Bool(true)),
                    Some(g) => parse_compile(g, &ts, &mut report, tn, Some(ei), "guard").unwrap_or(CExpr::Const(Value::Bool(false))),
                };
                let conj = guard.conjuncts().into_iter().map(classify).collect();
                let sync = match &e.sync {
                    None => SyncKind::None,
                    Some(s) => {
                        let s = s.trim();
                        let (name, send) = if let Some(n) = s.strip_suffix('!') {
                            (n.trim(), true)
                        } else if let Some(n) = s.strip_suffix('?') {
                            (n.trim(), false)
                        } else {
                            report.push(Some(tn), Some(ei), format!("sync {s} must end in ! or ?"));
                            (s, true)
                        };
                        match channels.iter().position(|c| c.0 == name) {
                            None => {
                                report.push(Some(tn), Some(ei), format!("undeclared channel {name}"));
                                SyncKind::None
                            }
                            Some(ch) => {
                                if t.observer && send {
                                    report.push(Some(tn), Some(ei), "observer templates may not send");
                                }
                                if t.observer && channels[ch].1 == ChannelKind::Binary {
                                    report.push(Some(tn), Some(ei), format!("observer may not receive on binary channel {name}"));
                                }
                                if send {
                                    SyncKind::Send(ch)
                                } else {
                                    SyncKind::Recv(ch)
                                }
                            }
                        }
                    }
                };
                let mut updates = vec![];
                for src in &e.updates {
                    let parsed = match expr::parse_updates(src) {
                        Ok(p) => p,
                        Err(err) => {
                            report.push(Some(tn), Some(ei), format!("update: {err}"));
                            continue;
                        }
                    };
                    for (lv, rhs) in parsed {
                        if let Some(u) = compile_update(&lv, &rhs, &ts, &mut report, tn, ei, t.observer) {
                            updates.push(u);
                        }
                    }
                }
                let spawn = e.spawn.as_ref().and_then(|sp| {
                    let Some(&target_t) = tnames.get(&sp.template) else {
                        report.push(Some(tn), Some(ei), format!("spawn of unknown template {}", sp.template));
                        return None;
                    };
                    if !shells[target_t].spawnable {
                        report.push(Some(tn), Some(ei), format!("spawn of non-spawnable template {}", sp.template));
                    }
                    if sp.args.len() != shells[target_t].params.len() {
                        report.push(Some(tn), Some(ei), format!("spawn of {} expects {} arguments", sp.template, shells[target_t].params.len()));
                        return None;
                    }
                    let args: Option<Vec<CExpr>> = sp
                        .args
                        .iter()
                        .map(|a| parse_compile(a, &ts, &mut report, tn, Some(ei), "spawn argument"))
                        .collect();
                    args.map(|a| (target_t, a))
                });
                if let (Some(s), Some(tg)) = (source, target) {
                    ct.out_edges[s].push(ct.edges.len());
                    ct.edges.push(CEdge { source: s, target: tg, guard, conj, sync, weight: e.weight, updates, spawn });
                }
            }
            for (li, l) in ct.locations.iter_mut().enumerate() {
                l.terminal = ct.out_edges[li].is_empty() || l.has_label("despawn");
            }
            if ct.spawnable && has_live_cycle(ct) {
                report.push(Some(tn), None, "non-terminating spawnable");
            }
        }

        if report.is_valid() {
            Ok(CompiledNetwork { source: net.clone(), channels, globals: slots, global_init, templates, instances })
        } else {
            Err(report)
        }
    }

    pub fn template_index(&self, name: &str) -> Option<usize> {
        self.templates.iter().position(|t| t.name == name)
    }

    pub fn instance_index(&self, name: &str) -> Option<usize> {
        self.instances.iter().position(|i| i.name == name)
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.0 == name)
    }

    fn scope_parts(&self) -> (HashMap<String, usize>, HashMap<String, usize>) {
        let g = self.globals.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        let t = self.templates.iter().enumerate().map(|(i, t)| (t.name.clone(), i)).collect();
        (g, t)
    }

    /// Compiles a query-level expression: globals, `inst.member` and
    /// `any(Template, label)`.
    pub fn compile_expr(&self, e: &Expr) -> Result<CExpr, ExprError> {
        let (g, t) = self.scope_parts();
        let scope = NetScope { globals: &g, slots: &self.globals, templates: &self.templates, template_names: &t, instances: &self.instances };
        expr::compile(e, &scope)
    }

    pub fn compile_str(&self, src: &str) -> Result<CExpr, ExprError> {
        self.compile_expr(&expr::parse_expr(src)?)
    }

    pub fn global_value(&self, state: &NetworkState, name: &str, index: usize) -> Option<Value> {
        let s = self.globals.iter().find(|s| s.name == name)?;
        if index >= s.len.unwrap_or(1) {
            return None;
        }
        state.globals.get(s.base + index).copied()
    }

    pub fn initial_state(&self) -> Result<NetworkState, ExprError> {
        let mut st = NetworkState {
            elapsed: 0.0,
            globals: self.global_init.clone(),
            instances: vec![],
            next_model_id: 0,
            next_observer_id: OBSERVER_ID_BASE,
        };
        for si in &self.instances {
            let t = &self.templates[si.template];
            let id = if t.observer {
                st.next_observer_id += 1;
                st.next_observer_id - 1
            } else {
                st.next_model_id += 1;
                st.next_model_id - 1
            };
            st.instances.push(self.fresh_instance(si.template, si.args.clone(), id, false));
        }
        self.refresh_rates(&mut st)?;
        Ok(st)
    }

    fn fresh_instance(&self, template: usize, args: Vec<Value>, id: u64, spawned: bool) -> InstanceState {
        let t = &self.templates[template];
        InstanceState {
            id,
            template,
            loc: t.initial,
            clocks: t.clocks.iter().map(|c| c.1).collect(),
            rates: vec![1.0; t.clocks.len()],
            vars: t.vars.iter().map(|v| v.2).collect(),
            args,
            spawned,
        }
    }

    /// Re-evaluates every location rate against the current valuation.
    pub fn refresh_rates(&self, st: &mut NetworkState) -> Result<(), ExprError> {
        for i in 0..st.instances.len() {
            let inst = &st.instances[i];
            let loc = &self.templates[inst.template].locations[inst.loc];
            if loc.rates.iter().all(Option::is_none) {
                st.instances[i].rates.iter_mut().for_each(|r| *r = 1.0);
                continue;
            }
            let env = StateEnv { net: self, state: st, inst: Some(i), dt: 0.0 };
            let rates: Result<Vec<f64>, ExprError> =
                loc.rates.iter().map(|r| r.as_ref().map_or(Ok(1.0), |e| e.eval_f64(&env))).collect();
            st.instances[i].rates = rates?;
        }
        Ok(())
    }

    pub fn instance_name(&self, st: &NetworkState, idx: usize) -> String {
        if idx < self.instances.len() {
            self.instances[idx].name.clone()
        } else {
            let inst = &st.instances[idx];
            format!("{}#{}", self.templates[inst.template].name, inst.id)
        }
    }

    pub fn is_observer(&self, inst: &InstanceState) -> bool {
        self.templates[inst.template].observer
    }

    /// Outgoing edges of `idx` whose guard holds now. Binary receives also
    /// need some other instance with a guard-true send on the channel.
    pub fn enabled_edges(&self, st: &NetworkState, idx: usize) -> Result<Vec<usize>, ExprError> {
        self.enabled_edges_at(st, idx, 0.0)
    }

    pub(crate) fn enabled_edges_at(&self, st: &NetworkState, idx: usize, dt: f64) -> Result<Vec<usize>, ExprError> {
        let inst = &st.instances[idx];
        let t = &self.templates[inst.template];
        let env = StateEnv { net: self, state: st, inst: Some(idx), dt };
        let mut out = vec![];
        for &ei in &t.out_edges[inst.loc] {
            let e = &t.edges[ei];
            if !e.guard.eval_bool(&env)? {
                continue;
            }
            if let SyncKind::Recv(ch) = e.sync {
                if self.channels[ch].1 == ChannelKind::Binary && !self.has_sender(st, ch, idx, dt)? {
                    continue;
                }
            }
            out.push(ei);
        }
        Ok(out)
    }

    fn has_sender(&self, st: &NetworkState, ch: usize, except: usize, dt: f64) -> Result<bool, ExprError> {
        for j in 0..st.instances.len() {
            if j == except {
                continue;
            }
            let inst = &st.instances[j];
            let t = &self.templates[inst.template];
            let env = StateEnv { net: self, state: st, inst: Some(j), dt };
            for &ei in &t.out_edges[inst.loc] {
                let e = &t.edges[ei];
                if e.sync == SyncKind::Send(ch) && e.guard.eval_bool(&env)? {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Guard-true receive edges of `idx` on `ch`.
    pub(crate) fn receivers(&self, st: &NetworkState, idx: usize, ch: usize) -> Result<Vec<usize>, ExprError> {
        let inst = &st.instances[idx];
        let t = &self.templates[inst.template];
        let env = StateEnv { net: self, state: st, inst: Some(idx), dt: 0.0 };
        let mut out = vec![];
        for &ei in &t.out_edges[inst.loc] {
            let e = &t.edges[ei];
            if e.sync == SyncKind::Recv(ch) && e.guard.eval_bool(&env)? {
                out.push(ei);
            }
        }
        Ok(out)
    }

    /// Applies the updates of edge `ei` on instance `idx` and moves it to
    /// the target. Returns the evaluated spawn request, if any.
    pub(crate) fn apply_edge(
        &self,
        st: &mut NetworkState,
        idx: usize,
        ei: usize,
    ) -> Result<Option<(usize, Vec<Value>)>, ExprError> {
        let t = &self.templates[st.instances[idx].template];
        let e = &t.edges[ei];
        for u in &e.updates {
            let env = StateEnv { net: self, state: st, inst: Some(idx), dt: 0.0 };
            match u {
                CUpdate::Clock(c, v) => {
                    let x = v.eval_f64(&env)?;
                    st.instances[idx].clocks[*c] = x;
                }
                CUpdate::Local(i, k, v) => {
                    let x = coerce(*k, v.eval(&env)?);
                    st.instances[idx].vars[*i] = x;
                }
                CUpdate::Global(i, k, v) => {
                    let x = coerce(*k, v.eval(&env)?);
                    st.globals[*i] = x;
                }
                CUpdate::GlobalAt { base, len, kind, idx: ix, value } => {
                    let k = ix.eval(&env)?.as_int()?;
                    if k < 0 || k as usize >= *len {
                        return Err(ExprError::Eval(format!("index {k} out of range 0..{len}")));
                    }
                    let x = coerce(*kind, value.eval(&env)?);
                    st.globals[base + k as usize] = x;
                }
            }
        }
        st.instances[idx].loc = e.target;
        let Some((target, args)) = &e.spawn else { return Ok(None) };
        let env = StateEnv { net: self, state: st, inst: Some(idx), dt: 0.0 };
        let params = &self.templates[*target].params;
        let vals: Result<Vec<Value>, ExprError> =
            args.iter().zip(params).map(|(a, p)| Ok(coerce(p.1, a.eval(&env)?))).collect();
        Ok(Some((*target, vals?)))
    }

    /// Adds a spawned instance in place and returns its index.
    pub(crate) fn push_spawn(&self, st: &mut NetworkState, template: usize, args: Vec<Value>) -> usize {
        let id = if self.templates[template].observer {
            st.next_observer_id += 1;
            st.next_observer_id - 1
        } else {
            st.next_model_id += 1;
            st.next_model_id - 1
        };
        st.instances.push(self.fresh_instance(template, args, id, true));
        st.instances.len() - 1
    }

    pub fn instantiate_spawn(
        &self,
        st: &NetworkState,
        template: &str,
        args: &[Value],
    ) -> Result<NetworkState, StateError> {
        let ti = self.template_index(template).ok_or_else(|| StateError::UnknownTemplate(template.into()))?;
        let t = &self.templates[ti];
        if !t.spawnable {
            return Err(StateError::NotSpawnable(template.into()));
        }
        if args.len() != t.params.len() {
            return Err(StateError::Arity { template: template.into(), expected: t.params.len(), got: args.len() });
        }
        let mut next = st.clone();
        let vals = args.iter().zip(&t.params).map(|(a, p)| coerce(p.1, *a)).collect();
        self.push_spawn(&mut next, ti, vals);
        self.refresh_rates(&mut next)?;
        Ok(next)
    }

    /// Drops spawned instances that sit at a terminal location. Returns the
    /// removed indices in ascending order.
    pub fn despawn(&self, st: &mut NetworkState) -> Vec<usize> {
        let mut removed = vec![];
        let mut k = 0;
        st.instances.retain(|inst| {
            let done = inst.spawned && self.templates[inst.template].locations[inst.loc].terminal;
            if done {
                removed.push(k);
            }
            k += 1;
            !done
        });
        removed
    }
}

fn compile_update(
    lv: &LValue,
    rhs: &Expr,
    ts: &TemplateScope<'_, '_>,
    report: &mut ValidationReport,
    tn: &str,
    ei: usize,
    observer: bool,
) -> Option<CUpdate> {
    let value = match expr::compile(rhs, ts) {
        Ok(v) => v,
        Err(err) => {
            report.push(Some(tn), Some(ei), format!("update: {err}"));
            return None;
        }
    };
    let name = match lv {
        LValue::Name(n) | LValue::Index(n, _) => n,
    };
    let global_write = |report: &mut ValidationReport| {
        if observer {
            report.push(Some(tn), Some(ei), format!("observer may not write global {name}"));
        }
    };
    match (lv, ts.resolve(name)) {
        (LValue::Name(_), Some(Ref::Clock(c))) => match value {
            CExpr::Const(v) if v.as_f64() >= 0.0 => Some(CUpdate::Clock(c, value)),
            _ => {
                report.push(Some(tn), Some(ei), format!("clock reset of {name} must be a nonnegative constant"));
                None
            }
        },
        (LValue::Name(_), Some(Ref::Local(i))) => Some(CUpdate::Local(i, ts.vars[i].1, value)),
        (LValue::Name(_), Some(Ref::Global(b))) => {
            global_write(report);
            let kind = ts.net.slots.iter().find(|s| s.base == b && s.len.is_none()).map(|s| s.kind)?;
            Some(CUpdate::Global(b, kind, value))
        }
        (LValue::Index(_, ix), Some(Ref::GlobalArray { base, len })) => {
            global_write(report);
            let kind = ts.net.slots.iter().find(|s| s.base == base && s.len.is_some()).map(|s| s.kind)?;
            match expr::compile(ix, ts) {
                Ok(idx) => Some(CUpdate::GlobalAt { base, len, kind, idx, value }),
                Err(err) => {
                    report.push(Some(tn), Some(ei), format!("update: {err}"));
                    None
                }
            }
        }
        (_, None) => {
            report.push(Some(tn), Some(ei), format!("update: unknown identifier {name}"));
            None
        }
        _ => {
            report.push(Some(tn), Some(ei), format!("update: {name} is not assignable here"));
            None
        }
    }
}

/// A cycle reachable from the initial location that avoids terminal locations.
fn has_live_cycle(t: &CTemplate) -> bool {
    // 0 unvisited, 1 on stack, 2 done
    fn dfs(t: &CTemplate, l: usize, mark: &mut [u8]) -> bool {
        if t.locations[l].terminal {
            return false;
        }
        mark[l] = 1;
        for &ei in &t.out_edges[l] {
            let n = t.edges[ei].target;
            if t.locations[n].terminal {
                continue;
            }
            if mark[n] == 1 || (mark[n] == 0 && dfs(t, n, mark)) {
                return true;
            }
        }
        mark[l] = 2;
        false
    }
    if t.locations.is_empty() {
        return false;
    }
    let mut mark = vec![0u8; t.locations.len()];
    dfs(t, t.initial, &mut mark)
}

// ------------------------------------------------------------------ state

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceState {
    pub id: u64,
    pub template: usize,
    pub loc: usize,
    pub clocks: Vec<f64>,
    pub rates: Vec<f64>,
    pub vars: Vec<Value>,
    pub args: Vec<Value>,
    pub spawned: bool,
}

/// A snapshot of the whole network. Static instances occupy the first
/// slots in declaration order; spawned ones follow.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub elapsed: f64,
    pub globals: Vec<Value>,
    pub instances: Vec<InstanceState>,
    pub next_model_id: u64,
    pub next_observer_id: u64,
}

impl NetworkState {
    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.instances.iter().position(|i| i.id == id)
    }
}

/// Evaluation context: the state, optionally an instance for local names,
/// and a pending delay `dt` applied to every clock read.
pub struct StateEnv<'a> {
    pub net: &'a CompiledNetwork,
    pub state: &'a NetworkState,
    pub inst: Option<usize>,
    pub dt: f64,
}

impl StateEnv<'_> {
    fn me(&self) -> &InstanceState {
        &self.state.instances[self.inst.expect("expression needs an instance context")]
    }
}

impl Env for StateEnv<'_> {
    fn clock(&self, i: usize) -> f64 {
        let m = self.me();
        m.clocks[i] + m.rates[i] * self.dt
    }
    fn local(&self, i: usize) -> Value {
        self.me().vars[i]
    }
    fn param(&self, i: usize) -> Value {
        self.me().args[i]
    }
    fn global(&self, i: usize) -> Value {
        self.state.globals[i]
    }
    fn inst_clock(&self, inst: usize, i: usize) -> f64 {
        let m = &self.state.instances[inst];
        m.clocks[i] + m.rates[i] * self.dt
    }
    fn inst_local(&self, inst: usize, i: usize) -> Value {
        self.state.instances[inst].vars[i]
    }
    fn inst_loc(&self, inst: usize) -> usize {
        self.state.instances[inst].loc
    }
    fn any_at(&self, template: usize, mask: &[bool]) -> bool {
        self.state.instances.iter().any(|i| i.template == template && mask[i.loc])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sta::model::{Edge, Location, Template};

    fn one_edge(guard: &str) -> CompiledNetwork {
        let net = Network::default()
            .with_template(
                Template::new("P", "a")
                    .clock("clk")
                    .loc(Location::new("a"))
                    .loc(Location::new("b"))
                    .edge(Edge::new("a", "b").guard(guard)),
            )
            .instance("p", "P", vec![]);
        CompiledNetwork::compile(&net).unwrap()
    }

    #[test]
    fn guard_boundary_is_inclusive() {
        let net = one_edge("clk >= 5");
        let mut st = net.initial_state().unwrap();
        st.instances[0].clocks[0] = 3.0;
        assert!(net.enabled_edges(&st, 0).unwrap().is_empty());
        st.instances[0].clocks[0] = 5.0;
        assert_eq!(net.enabled_edges(&st, 0).unwrap(), vec![0]);
    }

    #[test]
    fn weighted_edges_keep_weights() {
        let net = Network::default()
            .with_template(
                Template::new("P", "a")
                    .loc(Location::new("a"))
                    .loc(Location::new("b"))
                    .loc(Location::new("c"))
                    .edge(Edge::new("a", "b").weight(3.0))
                    .edge(Edge::new("a", "c").weight(7.0)),
            )
            .instance("p", "P", vec![]);
        let net = CompiledNetwork::compile(&net).unwrap();
        let st = net.initial_state().unwrap();
        let en = net.enabled_edges(&st, 0).unwrap();
        let w: Vec<f64> = en.iter().map(|&e| net.templates[0].edges[e].weight).collect();
        assert_eq!(w, vec![3.0, 7.0]);
    }

    #[test]
    fn binary_receive_needs_a_sender() {
        let net = Network::default()
            .channel("c", ChannelKind::Binary)
            .with_template(
                Template::new("S", "a")
                    .var("ready", VarKind::Bool, Literal::Bool(false))
                    .loc(Location::new("a"))
                    .loc(Location::new("b"))
                    .edge(Edge::new("a", "b").guard("ready").send("c")),
            )
            .with_template(
                Template::new("R", "a").loc(Location::new("a")).loc(Location::new("b")).edge(Edge::new("a", "b").recv("c")),
            )
            .instance("s", "S", vec![])
            .instance("r", "R", vec![]);
        let net = CompiledNetwork::compile(&net).unwrap();
        let mut st = net.initial_state().unwrap();
        assert!(net.enabled_edges(&st, 1).unwrap().is_empty());
        st.instances[0].vars[0] = Value::Bool(true);
        assert_eq!(net.enabled_edges(&st, 1).unwrap(), vec![0]);
    }

    fn tracker() -> Template {
        Template {
            spawnable: true,
            ..Template::new("E2E", "wait")
                .param("i", VarKind::Int)
                .clock("clk")
                .loc(Location::new("wait"))
                .loc(Location::new("done"))
                .edge(Edge::new("wait", "done").guard("clk >= 1"))
        }
    }

    #[test]
    fn spawn_gives_fresh_distinct_instances() {
        let net = CompiledNetwork::compile(&Network::default().with_template(tracker())).unwrap();
        let st = net.initial_state().unwrap();
        let one = net.instantiate_spawn(&st, "E2E", &[Value::Int(1)]).unwrap();
        assert_eq!(one.instances.len(), 1);
        assert_eq!(one.instances[0].clocks, vec![0.0]);
        let two = net.instantiate_spawn(&one, "E2E", &[Value::Int(2)]).unwrap();
        assert_eq!(two.instances.len(), 2);
        assert_ne!(two.instances[0].id, two.instances[1].id);
        assert_eq!(two.instances[1].args, vec![Value::Int(2)]);
    }

    #[test]
    fn spawn_of_static_template_fails() {
        let net = one_edge("true");
        let st = net.initial_state().unwrap();
        assert!(matches!(net.instantiate_spawn(&st, "P", &[]), Err(StateError::NotSpawnable(_))));
    }

    #[test]
    fn terminal_spawned_instances_are_dropped() {
        let net = CompiledNetwork::compile(&Network::default().with_template(tracker())).unwrap();
        let st = net.initial_state().unwrap();
        let mut st = net.instantiate_spawn(&st, "E2E", &[Value::Int(1)]).unwrap();
        st = net.instantiate_spawn(&st, "E2E", &[Value::Int(2)]).unwrap();
        st.instances[0].clocks[0] = 1.0;
        net.apply_edge(&mut st, 0, 0).unwrap();
        let removed = net.despawn(&mut st);
        assert_eq!(removed, vec![0]);
        assert_eq!(st.instances.len(), 1);
        assert_eq!(st.instances[0].args, vec![Value::Int(2)]);
        let id = net.push_spawn(&mut st, 0, vec![Value::Int(3)]);
        assert_eq!(st.instances[id].id, 2);
    }
}
