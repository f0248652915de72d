//! Three-vehicle cooperative platoon as an STA network.
//!
//! Per vehicle `k` the network holds `veh{k}` (periodic dynamics trigger and
//! position clocks), `energy{k}`, `com{k}` (lossy sender), `link{k}`
//! (receiver with timeout), `ctrl{k}` (controller loop), `drive{k}`
//! (submode logic), `mode{k}` (auto/userCtrl). Vehicle 1 also has a
//! `driver1`, followers have `turn{k}`. One `signs` instance feeds the
//! leader. Shared state lives in globals suffixed with the vehicle index.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sta::model::{ChannelKind, Edge, Literal, Location, Network, RateSpec, Template, VarKind};
use crate::sta::network::CompiledNetwork;
use crate::tadl::{MonitorError, TapSet};

pub use crate::fixtures::{mutex_predicate, mutual_exclusion as mutual_exclusion_fixture};

pub const CONST_SPEED: i64 = 0;
pub const ACC: i64 = 1;
pub const DEC: i64 = 2;
pub const TURN_LEFT: i64 = 3;
pub const TURN_RIGHT: i64 = 4;
pub const BRAKING: i64 = 5;
pub const STATIC: i64 = 6;

pub const GEARS: usize = 9;
pub const TORQUES: usize = 11;

/// Sign values as seen by the leader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignType {
    Straight = 0,
    MaxSpeed = 1,
    MinSpeed = 2,
    TurnRight = 3,
    TurnLeft = 4,
    Stop = 5,
}

impl SignType {
    pub const ALL: [SignType; 6] =
        [SignType::Straight, SignType::MaxSpeed, SignType::MinSpeed, SignType::TurnRight, SignType::TurnLeft, SignType::Stop];

    pub fn from_value(v: i64) -> Option<Self> {
        Self::ALL.get(usize::try_from(v).ok()?).copied()
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid platoon config: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyCoeffs {
    /// constant speed
    pub a: f64,
    /// braking
    pub b: f64,
    /// turning
    pub c: f64,
    /// acc/dec
    pub d: f64,
}

impl Default for EnergyCoeffs {
    fn default() -> Self {
        EnergyCoeffs { a: 2.0, b: 40.0, c: 5.0, d: 10.0 }
    }
}

impl EnergyCoeffs {
    /// Coefficient for a submode, in J per (km/h)·s.
    pub fn for_submode(&self, sub: i64) -> f64 {
        match sub {
            BRAKING => self.b,
            TURN_LEFT | TURN_RIGHT => self.c,
            ACC | DEC => self.d,
            STATIC => 0.0,
            _ => self.a,
        }
    }
}

fn default_speed_table() -> Vec<Vec<f64>> {
    (0..GEARS).map(|g| (0..TORQUES).map(|t| (15.0 * g as f64 - 5.0 * t as f64).clamp(0.0, 120.0)).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatoonConfig {
    pub n_vehicles: usize,
    /// m
    pub safe_distance: f64,
    /// m
    pub max_gap: f64,
    pub comm_loss_prob: f64,
    /// ms
    pub comm_timeout: f64,
    /// Weights for sign values 0..=5.
    pub sign_distribution: [f64; 6],
    pub energy_coeffs: EnergyCoeffs,
    /// km/h, indexed `[gear][torque]`.
    pub speed_table: Vec<Vec<f64>>,
    pub turn_location_propagation: bool,
    /// Spacing between consecutive vehicles at time 0, m.
    pub initial_gap: f64,
    pub initial_gear: i64,
}

impl Default for PlatoonConfig {
    fn default() -> Self {
        PlatoonConfig {
            n_vehicles: 3,
            safe_distance: 50.0,
            max_gap: 500.0,
            comm_loss_prob: 0.5,
            comm_timeout: 2000.0,
            sign_distribution: [0.5, 0.1, 0.1, 0.1, 0.1, 0.1],
            energy_coeffs: EnergyCoeffs::default(),
            speed_table: default_speed_table(),
            turn_location_propagation: true,
            initial_gap: 80.0,
            initial_gear: 6,
        }
    }
}

impl PlatoonConfig {
    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(2..=9).contains(&self.n_vehicles) {
            return bad(format!("n_vehicles must lie in 2..=9, got {}", self.n_vehicles));
        }
        if !(0.0..=1.0).contains(&self.comm_loss_prob) {
            return bad(format!("comm_loss_prob must lie in [0, 1], got {}", self.comm_loss_prob));
        }
        if self.sign_distribution.iter().any(|w| !(*w >= 0.0)) {
            return bad("sign weights must be nonnegative".into());
        }
        let total: f64 = self.sign_distribution.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("sign weights sum to {total}, not 1"));
        }
        let EnergyCoeffs { a, b, c, d } = self.energy_coeffs;
        if !(b > d && d > c && c > a && a >= 0.0) {
            return bad(format!("energy coefficients need b > d > c > a >= 0, got a={a} b={b} c={c} d={d}"));
        }
        if self.speed_table.len() != GEARS || self.speed_table.iter().any(|r| r.len() != TORQUES) {
            return bad(format!("speed_table must be {GEARS} x {TORQUES}"));
        }
        for t in 0..TORQUES {
            for g in 0..GEARS {
                let v = self.speed_table[g][t];
                if !(v >= 0.0) {
                    return bad(format!("negative speed at gear {g} torque {t}"));
                }
                if g > 0 && v < self.speed_table[g - 1][t] {
                    return bad(format!("speed_table decreases from gear {} to {g} at torque {t}", g - 1));
                }
            }
        }
        if !(self.comm_timeout > 0.0 && self.safe_distance > 0.0 && self.max_gap > self.safe_distance) {
            return bad("need comm_timeout > 0 and max_gap > safe_distance > 0".into());
        }
        if !(self.initial_gap > self.safe_distance) {
            return bad(format!("initial_gap {} must exceed safe_distance", self.initial_gap));
        }
        if !(1..GEARS as i64).contains(&self.initial_gear) {
            return bad(format!("initial_gear must lie in 1..{GEARS}"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: PlatoonConfig = toml::from_str(text)?;
        c.check()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn speed(&self, gear: i64, torque: i64) -> (f64, bool) {
        let g = gear.clamp(0, GEARS as i64 - 1);
        let t = torque.clamp(0, TORQUES as i64 - 1);
        (self.speed_table[g as usize][t as usize], g != gear || t != torque)
    }
}

// ------------------------------------------------------------------ dynamics

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub dx: i64,
    pub dy: i64,
    /// km/h
    pub velocity: f64,
    pub gear: i64,
    pub torque: i64,
    pub auto: bool,
    pub submode: i64,
    pub braking_energy: f64,
    pub total_energy: f64,
}

impl VehicleState {
    pub fn at(x: f64, y: f64) -> Self {
        VehicleState {
            x,
            y,
            dx: 1,
            dy: 0,
            velocity: 0.0,
            gear: 0,
            torque: 0,
            auto: true,
            submode: CONST_SPEED,
            braking_energy: 0.0,
            total_energy: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsStep {
    pub state: VehicleState,
    /// Set when (gear, torque) fell outside the table and was clamped.
    pub warning: Option<String>,
}

/// Advances one vehicle by `dt` ms at the speed looked up for
/// `(gear, torque)`. The same arithmetic the network performs through its
/// clock rates.
pub fn vehicle_dynamics_step(cfg: &PlatoonConfig, state: &VehicleState, gear: i64, torque: i64, dt: f64) -> DynamicsStep {
    assert!(dt > 0.0, "dt must be positive");
    let (mut v, clamped) = cfg.speed(gear, torque);
    if state.submode == STATIC {
        v = 0.0;
    }
    let mut s = state.clone();
    s.gear = gear.clamp(0, GEARS as i64 - 1);
    s.torque = torque.clamp(0, TORQUES as i64 - 1);
    s.velocity = v;
    s.x += v * s.dx as f64 * dt / 3600.0;
    s.y += v * s.dy as f64 * dt / 3600.0;
    let e = cfg.energy_coeffs.for_submode(s.submode) * v * dt / 1000.0;
    s.total_energy += e;
    if s.submode == BRAKING {
        s.braking_energy += e;
    }
    let warning = clamped.then(|| format!("gear {gear} torque {torque} outside the speed table, clamped"));
    DynamicsStep { state: s, warning }
}

// ------------------------------------------------------------------ network

fn loc(name: &str, inv: Option<String>) -> Location {
    Location { invariant: inv, ..Location::new(name) }
}

fn rated(mut l: Location, rates: &[(&str, String)]) -> Location {
    for (c, r) in rates {
        l.rates.insert((*c).into(), RateSpec::Expr(r.clone()));
    }
    l
}

fn abs(e: &str) -> String {
    format!("(({e}) >= 0 ? ({e}) : -({e}))")
}

fn num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        format!("{x}")
    }
}

/// Upstream vehicle whose messages vehicle `k` receives.
pub fn upstream(k: usize) -> usize {
    if k == 1 {
        2
    } else {
        k - 1
    }
}

/// A named event or state predicate monitors may bind to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TapDef {
    Event { channel: String, payload: Option<String> },
    Predicate { expr: String },
}

/// Tag -> sources. An event tag may be fed by several channels.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TapRegistry {
    pub taps: BTreeMap<String, Vec<TapDef>>,
}

impl TapRegistry {
    fn event(&mut self, tag: &str, channel: &str, payload: Option<&str>) {
        self.taps.entry(tag.into()).or_default().push(TapDef::Event { channel: channel.into(), payload: payload.map(Into::into) });
    }

    fn pred(&mut self, tag: &str, expr: String) {
        self.taps.entry(tag.into()).or_default().push(TapDef::Predicate { expr });
    }

    pub fn predicate(&self, tag: &str) -> Option<&str> {
        self.taps.get(tag)?.iter().find_map(|t| match t {
            TapDef::Predicate { expr } => Some(expr.as_str()),
            _ => None,
        })
    }

    /// `(channel, payload)` sources of an event tag.
    pub fn events(&self, tag: &str) -> Vec<(&str, Option<&str>)> {
        let Some(v) = self.taps.get(tag) else { return vec![] };
        v.iter()
            .filter_map(|t| match t {
                TapDef::Event { channel, payload } => Some((channel.as_str(), payload.as_deref())),
                _ => None,
            })
            .collect()
    }

    /// Replaces every `@tag` with its parenthesized predicate.
    pub fn expand(&self, src: &str) -> Result<String, ConfigError> {
        let mut out = String::new();
        let mut rest = src;
        while let Some(at) = rest.find('@') {
            out.push_str(&rest[..at]);
            let tail = &rest[at + 1..];
            let len = tail.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(tail.len());
            let tag = &tail[..len];
            let expr = self.predicate(tag).ok_or_else(|| ConfigError::Invalid(format!("no predicate tap @{tag}")))?;
            out.push('(');
            out.push_str(expr);
            out.push(')');
            rest = &tail[len..];
        }
        out.push_str(rest);
        Ok(out)
    }

    /// Every event tap, bound to `net`.
    pub fn tap_set(&self, net: &CompiledNetwork) -> Result<TapSet, MonitorError> {
        let mut set = TapSet::default();
        for tag in self.taps.keys() {
            for (ch, payload) in self.events(tag) {
                set.add(net, tag, ch, payload)?;
            }
        }
        Ok(set)
    }

    /// The manifest: one line per source, `tag,kind,source,payload`.
    pub fn manifest(&self) -> String {
        let mut s = String::from("tag,kind,source,payload\n");
        for (tag, defs) in &self.taps {
            for d in defs {
                match d {
                    TapDef::Event { channel, payload } => {
                        let _ = writeln!(s, "{tag},event,{channel},{}", payload.as_deref().unwrap_or(""));
                    }
                    TapDef::Predicate { expr } => {
                        let _ = writeln!(s, "{tag},predicate,\"{expr}\",");
                    }
                }
            }
        }
        s
    }
}

pub struct Platoon {
    pub network: Network,
    pub taps: TapRegistry,
}

/// Builds the platoon network and its tap registry.
pub fn build_platoon(cfg: &PlatoonConfig) -> Result<Platoon, ConfigError> {
    cfg.check()?;
    let n = cfg.n_vehicles;
    let mut net = Network::default().channel("sign", ChannelKind::Broadcast);
    for k in 1..=n {
        for ch in [
            "vd", "cd_in", "cd_ok", "cd_lost", "cin", "rd_pos", "rd_vel", "rd_apos", "rd_avel", "cout", "lost", "manual",
            "automode", "turn", "drv",
        ] {
            net = net.channel(&format!("{ch}_{k}"), ChannelKind::Broadcast);
        }
    }
    let speeds: Vec<Literal> = cfg.speed_table.iter().flatten().map(|v| Literal::Real(*v)).collect();
    net = net
        .global("sign", VarKind::Int, Literal::Int(0))
        .global("fix", VarKind::Bool, Literal::Bool(cfg.turn_location_propagation))
        .global("turn_pending", VarKind::Bool, Literal::Bool(false))
        .global_array("speed", VarKind::Real, speeds);
    let g0 = cfg.initial_gear;
    let v0 = cfg.speed(g0, 0).0;
    for k in 1..=n {
        let int = |net: Network, name: &str, v: i64| net.global(&format!("{name}_{k}"), VarKind::Int, Literal::Int(v));
        let real = |net: Network, name: &str, v: f64| net.global(&format!("{name}_{k}"), VarKind::Real, Literal::Real(v));
        let boolean = |net: Network, name: &str, v: bool| net.global(&format!("{name}_{k}"), VarKind::Bool, Literal::Bool(v));
        net = real(net, "vel", v0);
        net = int(net, "gear", g0);
        net = int(net, "torque", 0);
        net = int(net, "dx", 1);
        net = int(net, "dy", 0);
        net = int(net, "sub", CONST_SPEED);
        net = boolean(net, "auto", true);
        net = boolean(net, "msg", true);
        net = int(net, "tmp", 0);
        net = real(net, "gap", cfg.initial_gap);
        net = int(net, "dec", CONST_SPEED);
        // controller output
        net = int(net, "cseq", 0);
        net = real(net, "cst", 0.0);
        net = int(net, "used", 0);
        // outgoing message
        net = int(net, "mseq", 0);
        net = real(net, "mst", 0.0);
        net = real(net, "mvel", v0);
        net = int(net, "mgear", g0);
        net = int(net, "msub", CONST_SPEED);
        // last message received from upstream
        net = int(net, "rseq", 0);
        net = real(net, "rst", -1e9);
        net = real(net, "lv", v0);
        net = int(net, "lg", g0);
        net = int(net, "lsub", CONST_SPEED);
        // last turn: location and side (1 left, 2 right)
        net = real(net, "tx", 0.0);
        net = real(net, "ty", 0.0);
        net = int(net, "tl", 0);
        net = int(net, "req", 0);
    }

    net = net.with_template(signs(cfg)).instance("signs", "Signs", vec![]);
    for k in 1..=n {
        let x0 = (n - k) as f64 * cfg.initial_gap;
        for t in [dynamics(k, n, x0), energy(k, &cfg.energy_coeffs), com(k, cfg.comm_loss_prob), link(k, cfg.comm_timeout)] {
            net = add(net, t, k);
        }
        net = add(net, controller(k, cfg), k);
        net = add(net, mode(k), k);
        if k == 1 {
            net = add(net, leader_drive(g0), k);
            net = add(net, driver(), k);
        } else {
            net = add(net, follower_drive(k), k);
            net = add(net, turn_follow(k, n), k);
        }
    }
    Ok(Platoon { network: net, taps: taps(n) })
}

fn add(net: Network, t: Template, k: usize) -> Network {
    let inst = format!("{}{k}", instance_prefix(&t.name));
    let name = t.name.clone();
    net.with_template(t).instance(&inst, &name, vec![])
}

fn instance_prefix(template: &str) -> &'static str {
    match template.trim_end_matches(|c: char| c.is_ascii_digit()) {
        "Dyn" => "veh",
        "Energy" => "energy",
        "Com" => "com",
        "Link" => "link",
        "Ctrl" => "ctrl",
        "Mode" => "mode",
        "Drive" => "drive",
        "Driver" => "driver",
        "Turn" => "turn",
        other => panic!("no instance prefix for {other}"),
    }
}

fn signs(cfg: &PlatoonConfig) -> Template {
    let mut t = Template::new("Signs", "wait").clock("s").loc(loc("wait", Some("s <= 800".into())));
    for (v, w) in cfg.sign_distribution.iter().enumerate() {
        if *w > 0.0 {
            t = t.edge(Edge::new("wait", "wait").guard("s >= 400").send("sign").weight(*w).update(format!("sign = {v}, s = 0")));
        }
    }
    t
}

/// Periodic trigger: the i-th tick lands in [50i - 10, 50i + 10] and
/// consecutive ticks are 40..60 ms apart.
fn dynamics(k: usize, n: usize, x0: f64) -> Template {
    let mut t = Template::new(&format!("Dyn{k}"), "run").clock("c").clock("t").var("i", VarKind::Int, Literal::Int(1));
    t.clocks.push(crate::sta::model::ClockDecl { name: "x".into(), initial: x0 });
    t = t.clock("y");
    let run = rated(
        loc("run", Some("c <= 50 * i + 10 && t <= 60".into())),
        &[("x", format!("vel_{k} * dx_{k} / 3600.0")), ("y", format!("vel_{k} * dy_{k} / 3600.0"))],
    );
    let mut upd = format!("i = i + 1, t = 0, vel_{k} = sub_{k} == {STATIC} ? 0.0 : speed[gear_{k} * {TORQUES} + torque_{k}]");
    if n >= 2 {
        let u = upstream(k);
        let _ = write!(upd, ", gap_{k} = {} + {}", abs(&format!("veh{u}.x - x")), abs(&format!("veh{u}.y - y")));
    }
    t.loc(run).edge(Edge::new("run", "run").guard("c >= 50 * i - 10 && t >= 40").send(&format!("vd_{k}")).update(upd))
}

fn energy(k: usize, e: &EnergyCoeffs) -> Template {
    let coef = format!(
        "(sub_{k} == {BRAKING} ? {} : (sub_{k} == {TURN_LEFT} || sub_{k} == {TURN_RIGHT} ? {} : (sub_{k} == {ACC} || sub_{k} == {DEC} ? {} : {})))",
        num(e.b),
        num(e.c),
        num(e.d),
        num(e.a)
    );
    let run = rated(
        Location::new("run"),
        &[
            ("total_energy", format!("{coef} * vel_{k} / 1000.0")),
            ("braking_energy", format!("sub_{k} == {BRAKING} ? {} * vel_{k} / 1000.0 : 0.0", num(e.b))),
        ],
    );
    Template::new(&format!("Energy{k}"), "run").clock("total_energy").clock("braking_energy").loc(run)
}

/// Sends the vehicle's state downstream every 50..110 ms; each transmission
/// is lost with probability `loss`.
fn com(k: usize, loss: f64) -> Template {
    let busy = rated(loc("busy", Some("p <= 100".into())), &[("energy", "0.04".into())]);
    let mut t = Template::new(&format!("Com{k}"), "idle")
        .clock("p")
        .clock("energy")
        .loc(rated(loc("idle", Some("p <= 10".into())), &[("energy", "0.0".into())]))
        .loc(busy)
        .edge(Edge::new("idle", "busy").send(&format!("cd_in_{k}")).update(format!(
            "p = 0, energy = 0, mseq_{k} = cseq_{k}, mst_{k} = cst_{k}, mvel_{k} = vel_{k}, mgear_{k} = gear_{k}, msub_{k} = sub_{k}"
        )));
    if loss < 1.0 {
        t = t.edge(Edge::new("busy", "idle").guard("p >= 50").send(&format!("cd_ok_{k}")).weight(1.0 - loss).update("p = 0"));
    }
    if loss > 0.0 {
        t = t.edge(Edge::new("busy", "idle").guard("p >= 50").send(&format!("cd_lost_{k}")).weight(loss).update("p = 0"));
    }
    t
}

fn link(k: usize, timeout: f64) -> Template {
    let u = upstream(k);
    let copy = format!("w = 0, rseq_{k} = mseq_{u}, rst_{k} = mst_{u}, lv_{k} = mvel_{u}, lg_{k} = mgear_{u}, lsub_{k} = msub_{u}");
    let to = num(timeout);
    Template::new(&format!("Link{k}"), "normal")
        .clock("w")
        .loc(loc("normal", Some(format!("w <= {to}"))))
        .loc(Location::new("lost"))
        .edge(Edge::new("normal", "normal").recv(&format!("cd_ok_{u}")).update(copy.clone()))
        .edge(Edge::new("normal", "lost").guard(format!("w >= {to}")).send(&format!("lost_{k}")).update(format!("msg_{k} = false")))
        .edge(Edge::new("lost", "normal").recv(&format!("cd_ok_{u}")).update(format!("{copy}, msg_{k} = true")))
}

/// Read pos, vel, Apos, Avel; compute; emit a decision.
fn controller(k: usize, cfg: &PlatoonConfig) -> Template {
    let read = |name: &str| rated(loc(name, Some("z <= 40".into())), &[("energy", "0.05".into())]);
    let decision = format!(
        "dec_{k} = (lsub_{k} == {BRAKING} || lsub_{k} == {STATIC} || gap_{k} < {safe}) ? {BRAKING} : \
         (lv_{k} > vel_{k} + 0.5 ? {ACC} : (lv_{k} < vel_{k} - 0.5 ? {DEC} : (gap_{k} > {maxg} ? {ACC} : {CONST_SPEED})))",
        safe = num(cfg.safe_distance),
        maxg = num(cfg.max_gap),
    );
    let mut t = Template::new(&format!("Ctrl{k}"), "idle")
        .clock("z")
        .clock("energy")
        .loc(rated(loc("idle", Some("z <= 200".into())), &[("energy", "0.0".into())]))
        .loc(read("r_pos"))
        .loc(read("r_vel"))
        .loc(read("r_apos"))
        .loc(read("r_avel"))
        .loc(rated(loc("compute", Some("z <= 250".into())), &[("energy", "0.05".into())]))
        .edge(
            Edge::new("idle", "r_pos")
                .guard("z >= 100")
                .send(&format!("cin_{k}"))
                .update(format!("z = 0, energy = 0, used_{k} = veh1.c - rst_{k} <= 250.0 ? rseq_{k} : 0")),
        );
    for (from, to, port) in [("r_pos", "r_vel", "pos"), ("r_vel", "r_apos", "vel"), ("r_apos", "r_avel", "apos"), ("r_avel", "compute", "avel")] {
        t = t.edge(Edge::new(from, to).guard("z >= 25").send(&format!("rd_{port}_{k}")).update("z = 0"));
    }
    t.edge(
        Edge::new("compute", "idle")
            .guard("z >= 150")
            .send(&format!("cout_{k}"))
            .update(format!("z = 0, cseq_{k} = cseq_{k} + 1, cst_{k} = veh1.c, {decision}")),
    )
}

fn mode(k: usize) -> Template {
    Template::new(&format!("Mode{k}"), "auto")
        .clock("m")
        .loc(Location::new("auto"))
        .loc(loc("react", Some("m <= 100".into())))
        .loc(Location { exit_rate: 0.01, ..Location::new("user") })
        .edge(Edge::new("auto", "react").recv(&format!("lost_{k}")).update("m = 0"))
        .edge(Edge::new("react", "user").guard("m >= 20").send(&format!("manual_{k}")).update(format!("m = 0, auto_{k} = false")))
        .edge(Edge::new("user", "auto").guard(format!("m >= 2000 && msg_{k}")).send(&format!("automode_{k}")).update(format!("auto_{k} = true")))
}

fn keep_turn(k: usize, sub: &str) -> String {
    format!("sub_{k} = sub_{k} == {TURN_LEFT} || sub_{k} == {TURN_RIGHT} ? sub_{k} : {sub}")
}

fn rotate(k: usize, left: bool) -> String {
    if left {
        format!("tmp_{k} = dx_{k}, dx_{k} = -dy_{k}, dy_{k} = tmp_{k}")
    } else {
        format!("tmp_{k} = dx_{k}, dx_{k} = dy_{k}, dy_{k} = -tmp_{k}")
    }
}

/// Gear drops by one every 100 ms until the vehicle stands still.
fn braking_edges(t: Template, k: usize) -> Template {
    t.edge(Edge::new("braking", "braking").guard(format!("d >= 100 && gear_{k} > 1")).update(format!("d = 0, gear_{k} = gear_{k} - 1, {}", keep_turn(k, "5"))))
        .edge(
            Edge::new("braking", "stopped")
                .guard(format!("d >= 100 && gear_{k} <= 1"))
                .update(format!("d = 0, gear_{k} = 0, vel_{k} = 0.0, {}", keep_turn(k, "6"))),
        )
}

fn leader_drive(g0: i64) -> Template {
    let k = 1;
    let react = |name: &str, lo: u32, hi: u32| (loc(name, Some(format!("d <= {hi}"))), lo);
    let mut t = Template::new("Drive1", "cruise").clock("d").loc(Location::new("cruise"));
    let mut reacts = vec![];
    for (name, lo, hi) in [("r_stop", 50, 150), ("r_left", 50, 150), ("r_right", 50, 150), ("r_brake", 20, 100), ("r_up", 20, 100), ("r_down", 20, 100)] {
        let (l, lo) = react(name, lo, hi);
        t = t.loc(l);
        reacts.push((name, lo));
    }
    t = t
        .loc(loc("braking", Some("d <= 100".into())))
        .loc(loc("stopped", Some("d <= 3500".into())))
        .loc(loc("turning", Some("d <= 200".into())))
        .loc(loc("adjust", Some("d <= 200".into())))
        .loc(loc("ubrake", Some("d <= 200".into())));
    let on_sign = |v: i64, extra: &str| format!("auto_1 && sign == {v}{extra}");
    t = t
        .edge(Edge::new("cruise", "r_stop").recv("sign").guard(on_sign(5, "")).update("d = 0"))
        .edge(Edge::new("cruise", "r_left").recv("sign").guard(on_sign(4, " && !turn_pending")).update("d = 0"))
        .edge(Edge::new("cruise", "r_right").recv("sign").guard(on_sign(3, " && !turn_pending")).update("d = 0"))
        .edge(Edge::new("cruise", "adjust").recv("sign").guard(on_sign(2, " && gear_1 < 8")).update("d = 0, gear_1 = gear_1 + 1, sub_1 = 1"))
        .edge(Edge::new("cruise", "adjust").recv("sign").guard(on_sign(1, " && gear_1 > 4")).update("d = 0, gear_1 = gear_1 - 1, sub_1 = 2"))
        .edge(Edge::new("cruise", "r_left").recv("drv_1").guard("!auto_1 && req_1 == 1").update("d = 0"))
        .edge(Edge::new("cruise", "r_right").recv("drv_1").guard("!auto_1 && req_1 == 2").update("d = 0"))
        .edge(Edge::new("cruise", "r_brake").recv("drv_1").guard("!auto_1 && req_1 == 3").update("d = 0"))
        .edge(Edge::new("cruise", "r_up").recv("drv_1").guard("!auto_1 && req_1 == 4").update("d = 0"))
        .edge(Edge::new("cruise", "r_down").recv("drv_1").guard("!auto_1 && req_1 == 5").update("d = 0"));
    let lo = |name: &str| reacts.iter().find(|r| r.0 == name).unwrap().1;
    let turn = |left: bool| {
        format!(
            "d = 0, req_1 = 0, {}, sub_1 = {}, tl_1 = {}, tx_1 = veh1.x, ty_1 = veh1.y, turn_pending = true",
            rotate(k, left),
            if left { TURN_LEFT } else { TURN_RIGHT },
            if left { 1 } else { 2 }
        )
    };
    t = t
        .edge(Edge::new("r_stop", "braking").guard(format!("d >= {}", lo("r_stop"))).update("d = 0, sub_1 = 5"))
        .edge(Edge::new("r_left", "turning").guard(format!("d >= {}", lo("r_left"))).send("turn_1").update(turn(true)))
        .edge(Edge::new("r_right", "turning").guard(format!("d >= {}", lo("r_right"))).send("turn_1").update(turn(false)))
        .edge(Edge::new("r_brake", "ubrake").guard(format!("d >= {}", lo("r_brake"))).update("d = 0, req_1 = 0, sub_1 = 5, gear_1 = gear_1 >= 2 ? gear_1 - 2 : 0"))
        .edge(Edge::new("r_up", "adjust").guard(format!("d >= {}", lo("r_up"))).update("d = 0, req_1 = 0, sub_1 = 1, gear_1 = gear_1 < 8 ? gear_1 + 1 : 8"))
        .edge(Edge::new("r_down", "adjust").guard(format!("d >= {}", lo("r_down"))).update("d = 0, req_1 = 0, sub_1 = 2, gear_1 = gear_1 > 0 ? gear_1 - 1 : 0"))
        .edge(Edge::new("stopped", "cruise").guard("d >= 2500").update(format!("d = 0, gear_1 = {g0}, sub_1 = 0")))
        .edge(Edge::new("turning", "cruise").guard("d >= 100").update("d = 0, sub_1 = 0"))
        .edge(Edge::new("adjust", "cruise").guard("d >= 100").update("d = 0, sub_1 = 0"))
        .edge(Edge::new("ubrake", "cruise").guard("d >= 100").update("d = 0, sub_1 = 0"));
    braking_edges(t, k)
}

/// Driver requests while vehicle 1 is under user control: 1 steer left,
/// 2 steer right, 3 brake, 4 gear up, 5 gear down.
fn driver() -> Template {
    let ready = "q >= 300 && sub_1 == 0 && drive1.cruise";
    let mut t = Template::new("Driver1", "off")
        .clock("q")
        .loc(Location::new("off"))
        .loc(loc("on", Some("q <= 600".into())))
        .edge(Edge::new("off", "on").recv("manual_1").update("q = 0"))
        .edge(Edge::new("on", "off").recv("automode_1"))
        .edge(Edge::new("on", "on").guard("q >= 300").update("q = 0").weight(2.0));
    for (r, extra) in [(1, " && !turn_pending"), (2, " && !turn_pending"), (3, ""), (4, " && gear_1 < 8"), (5, " && gear_1 > 0")] {
        t = t.edge(Edge::new("on", "on").guard(format!("{ready}{extra}")).send("drv_1").update(format!("q = 0, req_1 = {r}")));
    }
    t
}

fn follower_drive(k: usize) -> Template {
    let name = format!("Drive{k}");
    let cout = format!("cout_{k}");
    let straight = format!("auto_{k} && sub_{k} != {TURN_LEFT} && sub_{k} != {TURN_RIGHT}");
    let t = Template::new(&name, "cruise")
        .clock("d")
        .loc(Location::new("cruise"))
        .loc(loc("braking", Some("d <= 100".into())))
        .loc(Location::new("stopped"))
        .edge(Edge::new("cruise", "braking").recv(&cout).guard(format!("{straight} && dec_{k} == {BRAKING}")).update(format!("d = 0, sub_{k} = 5")))
        .edge(
            Edge::new("cruise", "cruise")
                .recv(&cout)
                .guard(format!("{straight} && dec_{k} == {ACC}"))
                .update(format!("gear_{k} = gear_{k} < 8 ? gear_{k} + 1 : 8, sub_{k} = 1")),
        )
        .edge(
            Edge::new("cruise", "cruise")
                .recv(&cout)
                .guard(format!("{straight} && dec_{k} == {DEC}"))
                .update(format!("gear_{k} = gear_{k} > 0 ? gear_{k} - 1 : 0, sub_{k} = 2")),
        )
        .edge(Edge::new("cruise", "cruise").recv(&cout).guard(format!("{straight} && dec_{k} == {CONST_SPEED}")).update(format!("sub_{k} = 0")))
        .edge(
            Edge::new("stopped", "cruise")
                .recv(&cout)
                .guard(format!("auto_{k} && dec_{k} != {BRAKING}"))
                .update(format!("gear_{k} = lg_{k} < 1 ? 1 : (lg_{k} > 8 ? 8 : lg_{k}), {}", keep_turn(k, "1"))),
        );
    braking_edges(t, k)
}

/// Follows the upstream vehicle's turns. With `fix` set (or for right
/// turns) the follower drives to the recorded turn location first;
/// otherwise it turns as soon as it notices the change of direction.
fn turn_follow(k: usize, n: usize) -> Template {
    let u = upstream(k);
    let need = format!("need = {} + {}", abs(&format!("ttx - veh{k}.x")), abs(&format!("tty - veh{k}.y")));
    let approach = rated(Location { exit_rate: 1000.0, ..Location::new("approach") }, &[("trav", format!("vel_{k} / 3600.0"))]);
    let mut t = Template::new(&format!("Turn{k}"), "idle")
        .clock("d")
        .clock("trav")
        .var("ttl", VarKind::Int, Literal::Int(0))
        .var("ttx", VarKind::Real, Literal::Real(0.0))
        .var("tty", VarKind::Real, Literal::Real(0.0))
        .var("need", VarKind::Real, Literal::Real(0.0))
        .loc(Location::new("idle"))
        .loc(loc("detect", Some("d <= 300".into())))
        .loc(approach)
        .loc(loc("turning", Some("d <= 200".into())))
        .edge(Edge::new("idle", "detect").recv(&format!("turn_{u}")).update(format!("d = 0, ttl = tl_{u}, ttx = tx_{u}, tty = ty_{u}")))
        .edge(Edge::new("detect", "approach").guard("d >= 100 && (fix || ttl == 2)").update(format!("trav = 0, {need}")));
    for (side, left) in [(1, true), (2, false)] {
        let act = format!(
            "d = 0, {}, sub_{k} = {}, tl_{k} = {side}, tx_{k} = veh{k}.x, ty_{k} = veh{k}.y",
            rotate(k, left),
            if left { TURN_LEFT } else { TURN_RIGHT }
        );
        t = t.edge(Edge::new("approach", "turning").guard(format!("ttl == {side} && trav >= need")).send(&format!("turn_{k}")).update(act.clone()));
        if left {
            t = t.edge(Edge::new("detect", "turning").guard("d >= 100 && !fix && ttl == 1").send(&format!("turn_{k}")).update(act));
        }
    }
    let mut done = format!("d = 0, sub_{k} = drive{k}.stopped ? 6 : (drive{k}.braking ? 5 : 0)");
    if k == n {
        done.push_str(", turn_pending = false");
    }
    t.edge(Edge::new("turning", "idle").guard("d >= 100").update(done))
}

fn taps(n: usize) -> TapRegistry {
    let mut r = TapRegistry::default();
    r.event("sign", "sign", Some("sign"));
    for k in 1..=n {
        r.event(&format!("vd{k}"), &format!("vd_{k}"), None);
        r.event(&format!("cd_in{k}"), &format!("cd_in_{k}"), None);
        r.event(&format!("cd_out{k}"), &format!("cd_ok_{k}"), None);
        r.event(&format!("cd_out{k}"), &format!("cd_lost_{k}"), None);
        r.event(&format!("cin{k}"), &format!("cin_{k}"), None);
        for p in ["pos", "vel", "apos", "avel"] {
            r.event(&format!("{p}{k}"), &format!("rd_{p}_{k}"), None);
        }
        r.event(&format!("cout{k}"), &format!("cout_{k}"), None);
        r.event(&format!("cout{k}_id"), &format!("cout_{k}"), Some(&format!("cseq_{k}")));
        r.event(&format!("cout{k}_src"), &format!("cout_{k}"), Some(&format!("used_{k}")));
        r.event(&format!("mode{k}"), &format!("manual_{k}"), None);
        r.event(&format!("mode{k}"), &format!("automode_{k}"), None);
        r.event(&format!("lost{k}"), &format!("lost_{k}"), None);
        r.event(&format!("turn{k}"), &format!("turn_{k}"), Some(&format!("tl_{k}")));
        r.pred(&format!("auto{k}"), format!("auto_{k}"));
        r.pred(&format!("user{k}"), format!("!auto_{k}"));
        r.pred(&format!("msg{k}"), format!("msg_{k}"));
        for (name, v) in [("const", CONST_SPEED), ("acc", ACC), ("dec", DEC), ("left", TURN_LEFT), ("right", TURN_RIGHT), ("brake", BRAKING), ("static", STATIC)] {
            r.pred(&format!("{name}{k}"), format!("sub_{k} == {v}"));
        }
        r.pred(&format!("straight{k}"), format!("(sub_{k} == 0 || sub_{k} == 1 || sub_{k} == 2)"));
        r.pred(&format!("gap{k}"), format!("gap_{k}"));
        r.pred(&format!("braking_energy{k}"), format!("energy{k}.braking_energy"));
        r.pred(&format!("total_energy{k}"), format!("energy{k}.total_energy"));
        r.pred(&format!("ctrl_energy{k}"), format!("ctrl{k}.energy"));
        r.pred(&format!("com_energy{k}"), format!("com{k}.energy"));
    }
    for k in 2..=n {
        let u = k - 1;
        r.pred(
            &format!("lane{u}{k}"),
            format!(
                "((veh{u}.x - veh{k}.x < 0.5 && veh{k}.x - veh{u}.x < 0.5) || (veh{u}.y - veh{k}.y < 0.5 && veh{k}.y - veh{u}.y < 0.5))"
            ),
        );
    }
    r
}

/// Sets the turn-location fix on a network built by [`build_platoon`].
pub fn enable_refinement(mut net: Network, on: bool) -> Network {
    if let Some(g) = net.globals.iter_mut().find(|g| g.name == "fix") {
        g.initial = Some(Literal::Bool(on));
    }
    net
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::simulate;
    use crate::sta::validate;

    #[test]
    fn default_config_validates_and_runs() {
        let p = build_platoon(&PlatoonConfig::default()).unwrap();
        let r = validate(&p.network);
        assert!(r.is_valid(), "{r}");
        let run = simulate(&p.network, 3000.0, 1, &[]).unwrap();
        assert!(!run.deadlocked());
        assert!(run.model_events().len() > 100);
    }

    #[test]
    fn config_invariants() {
        let mut c = PlatoonConfig::default();
        c.energy_coeffs.b = 1.0;
        assert!(c.check().is_err());
        let mut c = PlatoonConfig::default();
        c.sign_distribution[0] = 0.6;
        assert!(c.check().is_err());
        let mut c = PlatoonConfig::default();
        c.speed_table[3][0] = 0.0;
        assert!(c.check().unwrap_err().to_string().contains("decreases"));
        let c = PlatoonConfig::default();
        assert_eq!(PlatoonConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(c.hash(), PlatoonConfig::default().hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn dynamics_step_examples() {
        let cfg = PlatoonConfig::default();
        let s = VehicleState::at(10.0, 5.0);
        let out = vehicle_dynamics_step(&cfg, &s, 0, 0, 100.0);
        assert_eq!((out.state.x, out.state.y, out.state.total_energy), (10.0, 5.0, 0.0));
        // 60 km/h for 3 s at coefficient a: a * 60 * 3
        let out = vehicle_dynamics_step(&cfg, &s, 4, 0, 3000.0);
        assert!((out.state.total_energy - 2.0 * 60.0 * 3.0).abs() < 1e-9);
        assert!((out.state.x - 60.0).abs() < 1e-9);
        assert!(out.warning.is_none());
        let out = vehicle_dynamics_step(&cfg, &s, 12, 0, 10.0);
        assert!(out.warning.is_some());
        assert_eq!(out.state.velocity, 120.0);
    }

    #[test]
    fn refinement_toggle_restores_fresh_build() {
        let fresh = build_platoon(&PlatoonConfig::default()).unwrap().network;
        let back = enable_refinement(enable_refinement(fresh.clone(), false), true);
        assert_eq!(back, fresh);
        assert_ne!(enable_refinement(fresh.clone(), false), fresh);
    }

    #[test]
    fn sign_values() {
        assert_eq!(SignType::from_value(5), Some(SignType::Stop));
        assert_eq!(SignType::from_value(2), Some(SignType::MinSpeed));
        assert_eq!(SignType::from_value(6), None);
    }
}
