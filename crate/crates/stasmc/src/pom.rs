//! Synchronous boolean block networks evaluated one discrete step at a time,
//! pattern builders for bounded temporal properties and timing constraints,
//! and an exhaustive bounded verifier for small input spaces.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ltl::{BoolTrace, Formula};

pub const DEFAULT_STEP_MS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum PomError {
    #[error("combinational cycle through {0}")]
    Cycle(String),
    #[error("unknown signal {0}")]
    Unknown(String),
    #[error("duplicate name {0}")]
    Duplicate(String),
    #[error("block {block}: expected {expected} inputs, got {got}")]
    Arity { block: String, expected: String, got: usize },
    #[error("goto tag {0}: {1}")]
    Tag(String, String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("missing input signal {0}")]
    MissingInput(String),
    #[error("trace signals have different lengths")]
    Ragged,
    #[error("input {0} is not boolean")]
    NonBoolean(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl CmpOp {
    fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Eq => a == b,
            CmpOp::Ge => a >= b,
            CmpOp::Gt => a > b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BlockKind {
    Const { value: f64 },
    Not,
    And,
    Or,
    /// inputs: A, B
    Implies,
    /// inputs: lhs, rhs
    Compare { op: CmpOp },
    /// inputs: In, Obs
    WithinImplies,
    Extender { steps: usize },
    Detector { detect: usize, out: usize },
    Delay { steps: usize },
    PulseGenerator { period: usize, width: f64, phase: usize },
    ProofObjective,
    ProofAssumption,
    Goto { tag: String },
    From { tag: String },
}

impl BlockKind {
    fn arity(&self) -> (usize, Option<usize>) {
        match self {
            BlockKind::Const { .. } | BlockKind::PulseGenerator { .. } | BlockKind::From { .. } => (0, Some(0)),
            BlockKind::And | BlockKind::Or => (1, None),
            BlockKind::Implies | BlockKind::Compare { .. } | BlockKind::WithinImplies => (2, Some(2)),
            _ => (1, Some(1)),
        }
    }

    /// Output depends only on inputs of earlier steps.
    fn is_register(&self) -> bool {
        matches!(self, BlockKind::Detector { .. }) || matches!(self, BlockKind::Delay { steps } if *steps > 0)
    }

    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::Const { .. } => "const",
            BlockKind::Not => "not",
            BlockKind::And => "and",
            BlockKind::Or => "or",
            BlockKind::Implies => "implies",
            BlockKind::Compare { .. } => "compare",
            BlockKind::WithinImplies => "within_implies",
            BlockKind::Extender { .. } => "extender",
            BlockKind::Detector { .. } => "detector",
            BlockKind::Delay { .. } => "delay",
            BlockKind::PulseGenerator { .. } => "pulse_generator",
            BlockKind::ProofObjective => "proof_objective",
            BlockKind::ProofAssumption => "proof_assumption",
            BlockKind::Goto { .. } => "goto",
            BlockKind::From { .. } => "from",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDecl {
    pub name: String,
    #[serde(flatten)]
    pub kind: BlockKind,
    #[serde(default)]
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    #[default]
    Bool,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDecl {
    pub name: String,
    #[serde(default)]
    pub kind: InputKind,
}

/// Block network as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockNetwork {
    #[serde(default = "default_step")]
    pub step_ms: f64,
    pub inputs: Vec<InputDecl>,
    pub blocks: Vec<BlockDecl>,
}

fn default_step() -> f64 {
    DEFAULT_STEP_MS
}

impl Default for BlockNetwork {
    fn default() -> Self {
        BlockNetwork { step_ms: DEFAULT_STEP_MS, inputs: vec![], blocks: vec![] }
    }
}

impl BlockNetwork {
    pub fn input(mut self, name: &str) -> Self {
        self.inputs.push(InputDecl { name: name.into(), kind: InputKind::Bool });
        self
    }

    pub fn real_input(mut self, name: &str) -> Self {
        self.inputs.push(InputDecl { name: name.into(), kind: InputKind::Real });
        self
    }

    /// Appends a block and returns its name for wiring.
    pub fn add(&mut self, name: &str, kind: BlockKind, inputs: &[&str]) -> String {
        self.blocks.push(BlockDecl { name: name.into(), kind, inputs: inputs.iter().map(|s| s.to_string()).collect() });
        name.to_string()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.blocks.iter().filter(|b| b.kind.name() == kind).count()
    }

    pub fn load(path: &Path) -> Result<Self, PomError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("block network serializes")
    }

    pub fn compile(&self) -> Result<Compiled, PomError> {
        Compiled::new(self)
    }
}

/// Per-step values of named signals; booleans are stored as 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub step_ms: f64,
    pub signals: BTreeMap<String, Vec<f64>>,
}

impl StepTrace {
    pub fn new(step_ms: f64) -> Self {
        StepTrace { step_ms, signals: BTreeMap::new() }
    }

    pub fn with_bools(mut self, name: &str, v: &[bool]) -> Self {
        self.signals.insert(name.into(), v.iter().map(|&b| b as u8 as f64).collect());
        self
    }

    pub fn with_values(mut self, name: &str, v: &[f64]) -> Self {
        self.signals.insert(name.into(), v.to_vec());
        self
    }

    pub fn from_bools(step_ms: f64, t: &BoolTrace) -> Self {
        t.iter().fold(StepTrace::new(step_ms), |acc, (k, v)| acc.with_bools(k, v))
    }

    pub fn len(&self) -> usize {
        self.signals.values().map(|v| v.len()).min().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bools(&self, name: &str) -> Option<Vec<bool>> {
        self.signals.get(name).map(|v| v.iter().map(|&x| x != 0.0).collect())
    }

    pub fn write_csv(&self, out: impl Write) -> Result<(), PomError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| PomError::Csv(e.to_string());
        let mut header = vec!["step".to_string(), "time_ms".to_string()];
        header.extend(self.signals.keys().cloned());
        w.write_record(&header).map_err(err)?;
        for k in 0..self.len() {
            let mut row = vec![k.to_string(), (k as f64 * self.step_ms).to_string()];
            row.extend(self.signals.values().map(|v| v[k].to_string()));
            w.write_record(&row).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectiveFailure {
    pub objective: String,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObjectiveReport {
    /// False when some assumption was violated; such a trace proves nothing.
    pub admissible: bool,
    /// First failing step of each failed objective.
    pub failures: Vec<ObjectiveFailure>,
    /// WithinImplies blocks whose true duration was still open at the end
    /// (name, opening step). These are inconclusive and do not fail.
    pub pending: Vec<(String, usize)>,
}

impl ObjectiveReport {
    pub fn valid(&self) -> bool {
        self.admissible && self.failures.is_empty()
    }
}

#[derive(Debug, Clone)]
enum Src {
    Input(usize),
    Block(usize),
}

#[derive(Debug, Clone)]
struct Node {
    name: String,
    kind: BlockKind,
    srcs: Vec<Src>,
}

/// A loaded network with Goto/From resolved and an evaluation order fixed.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub step_ms: f64,
    inputs: Vec<InputDecl>,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
struct BlockState {
    // Delay history, newest last.
    hist: Vec<bool>,
    run: usize,
    remaining: usize,
    // WithinImplies: open duration start and whether Obs was seen in it.
    open: Option<usize>,
    seen: bool,
    ext: usize,
}

impl Compiled {
    fn new(net: &BlockNetwork) -> Result<Self, PomError> {
        if !(net.step_ms > 0.0) {
            return Err(PomError::Param(format!("step_ms must be positive, got {}", net.step_ms)));
        }
        let mut names: HashMap<&str, Src> = HashMap::new();
        for (i, inp) in net.inputs.iter().enumerate() {
            if names.insert(&inp.name, Src::Input(i)).is_some() {
                return Err(PomError::Duplicate(inp.name.clone()));
            }
        }
        let mut gotos: HashMap<&str, &BlockDecl> = HashMap::new();
        for b in &net.blocks {
            let (lo, hi) = b.kind.arity();
            if b.inputs.len() < lo || hi.is_some_and(|h| b.inputs.len() > h) {
                let expected = match hi {
                    Some(h) if h == lo => h.to_string(),
                    Some(h) => format!("{lo}..={h}"),
                    None => format!("at least {lo}"),
                };
                return Err(PomError::Arity { block: b.name.clone(), expected, got: b.inputs.len() });
            }
            check_params(b)?;
            if let BlockKind::Goto { tag } = &b.kind {
                if gotos.insert(tag, b).is_some() {
                    return Err(PomError::Tag(tag.clone(), "more than one goto".into()));
                }
            }
        }
        let mut nodes = vec![];
        let mut index: HashMap<&str, usize> = HashMap::new();
        for b in net.blocks.iter().filter(|b| !matches!(b.kind, BlockKind::Goto { .. } | BlockKind::From { .. })) {
            if names.contains_key(b.name.as_str()) || index.insert(&b.name, nodes.len()).is_some() {
                return Err(PomError::Duplicate(b.name.clone()));
            }
            nodes.push(Node { name: b.name.clone(), kind: b.kind.clone(), srcs: vec![] });
        }
        // From blocks alias the signal feeding their Goto.
        let mut alias: HashMap<&str, &str> = HashMap::new();
        for b in &net.blocks {
            if let BlockKind::From { tag } = &b.kind {
                let g = gotos.get(tag.as_str()).ok_or_else(|| PomError::Tag(tag.clone(), "from without goto".into()))?;
                if names.contains_key(b.name.as_str()) || index.contains_key(b.name.as_str()) || alias.insert(&b.name, &g.inputs[0]).is_some() {
                    return Err(PomError::Duplicate(b.name.clone()));
                }
            }
        }
        let resolve = |start: &str| -> Result<Src, PomError> {
            let mut s = start.to_string();
            for _ in 0..=alias.len() {
                let s_ref = s.as_str();
                if let Some(src) = names.get(s_ref) {
                    return Ok(src.clone());
                }
                if let Some(&i) = index.get(s_ref) {
                    return Ok(Src::Block(i));
                }
                match alias.get(s_ref) {
                    Some(next) => s = next.to_string(),
                    None => return Err(PomError::Unknown(s)),
                }
            }
            Err(PomError::Cycle(s))
        };
        for b in &net.blocks {
            if let Some(&i) = index.get(b.name.as_str()) {
                nodes[i].srcs = b.inputs.iter().map(|s| resolve(s)).collect::<Result<_, _>>()?;
            } else if let BlockKind::Goto { .. } = b.kind {
                resolve(&b.inputs[0])?;
            }
        }
        // Topological order over combinational edges.
        let mut order = vec![];
        let mut mark = vec![0u8; nodes.len()];
        fn visit(i: usize, nodes: &[Node], mark: &mut [u8], order: &mut Vec<usize>) -> Result<(), PomError> {
            match mark[i] {
                2 => return Ok(()),
                1 => return Err(PomError::Cycle(nodes[i].name.clone())),
                _ => {}
            }
            mark[i] = 1;
            if !nodes[i].kind.is_register() {
                for s in &nodes[i].srcs {
                    if let Src::Block(j) = s {
                        visit(*j, nodes, mark, order)?;
                    }
                }
            }
            mark[i] = 2;
            order.push(i);
            Ok(())
        }
        for i in 0..nodes.len() {
            visit(i, &nodes, &mut mark, &mut order)?;
        }
        Ok(Compiled { step_ms: net.step_ms, inputs: net.inputs.clone(), nodes, order })
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.inputs.iter().map(|i| i.name.as_str()).collect()
    }

    /// Runs the network over `inputs`, returning every input and block
    /// signal together with the objective report.
    pub fn eval(&self, inputs: &StepTrace) -> Result<(StepTrace, ObjectiveReport), PomError> {
        let mut cols = vec![];
        for inp in &self.inputs {
            cols.push(inputs.signals.get(&inp.name).ok_or_else(|| PomError::MissingInput(inp.name.clone()))?);
        }
        let n = cols.iter().map(|c| c.len()).min().unwrap_or(inputs.len());
        if cols.iter().any(|c| c.len() != n) {
            return Err(PomError::Ragged);
        }
        let mut out = vec![vec![0.0; n]; self.nodes.len()];
        self.run(n, |k, i| cols[i][k], |k, i, v| out[i][k] = v, |_| false).map(|rep| {
            let mut tr = StepTrace::new(self.step_ms);
            for (inp, c) in self.inputs.iter().zip(&cols) {
                tr.signals.insert(inp.name.clone(), c.to_vec());
            }
            for (node, v) in self.nodes.iter().zip(out) {
                tr.signals.insert(node.name.clone(), v);
            }
            (tr, rep)
        })
    }

    /// Core loop. `stop` is polled after every step and may cut the run
    /// short once the outcome is known.
    fn run(
        &self,
        n: usize,
        input: impl Fn(usize, usize) -> f64,
        mut sink: impl FnMut(usize, usize, f64),
        stop: impl Fn(&ObjectiveReport) -> bool,
    ) -> Result<ObjectiveReport, PomError> {
        let mut st = vec![BlockState::default(); self.nodes.len()];
        let mut val = vec![0.0f64; self.nodes.len()];
        let mut rep = ObjectiveReport { admissible: true, ..Default::default() };
        let b = |x: f64| x != 0.0;
        let f = |x: bool| x as u8 as f64;
        for k in 0..n {
            let get = |val: &[f64], s: &Src| match s {
                Src::Input(i) => input(k, *i),
                Src::Block(j) => val[*j],
            };
            // Registers first: they read last step's state only.
            for (i, node) in self.nodes.iter().enumerate() {
                match node.kind {
                    BlockKind::Delay { steps } if steps > 0 => {
                        let h = &st[i].hist;
                        val[i] = f(h.len() >= steps && h[h.len() - steps]);
                    }
                    BlockKind::Detector { .. } => val[i] = f(st[i].remaining > 0),
                    _ => {}
                }
            }
            for &i in &self.order {
                let node = &self.nodes[i];
                let x = |m: usize| get(&val, &node.srcs[m]);
                let v = match &node.kind {
                    BlockKind::Const { value } => *value,
                    BlockKind::Not => f(!b(x(0))),
                    BlockKind::And => f((0..node.srcs.len()).all(|m| b(x(m)))),
                    BlockKind::Or => f((0..node.srcs.len()).any(|m| b(x(m)))),
                    BlockKind::Implies => f(!b(x(0)) || b(x(1))),
                    BlockKind::Compare { op } => f(op.apply(x(0), x(1))),
                    BlockKind::WithinImplies => {
                        let s = &mut st[i];
                        if b(x(0)) {
                            if s.open.is_none() {
                                s.open = Some(k);
                                s.seen = false;
                            }
                            s.seen |= b(x(1));
                            1.0
                        } else if s.open.take().is_some() {
                            f(s.seen)
                        } else {
                            1.0
                        }
                    }
                    BlockKind::Extender { steps } => {
                        let s = &mut st[i];
                        if b(x(0)) {
                            s.ext = *steps;
                        }
                        let on = s.ext > 0;
                        s.ext = s.ext.saturating_sub(1);
                        f(on)
                    }
                    BlockKind::Delay { steps: 0 } => x(0),
                    BlockKind::Delay { .. } | BlockKind::Detector { .. } => val[i],
                    BlockKind::PulseGenerator { period, width, phase } => {
                        f(k >= *phase && (((k - phase) % period) as f64) < width * *period as f64)
                    }
                    BlockKind::ProofObjective => {
                        let v = x(0);
                        if !b(v) && !rep.failures.iter().any(|fl| fl.objective == node.name) {
                            rep.failures.push(ObjectiveFailure { objective: node.name.clone(), step: k });
                        }
                        v
                    }
                    BlockKind::ProofAssumption => {
                        let v = x(0);
                        if !b(v) {
                            rep.admissible = false;
                        }
                        v
                    }
                    BlockKind::Goto { .. } | BlockKind::From { .. } => unreachable!("resolved at load"),
                };
                val[i] = v;
            }
            // Register state update with this step's inputs.
            for (i, node) in self.nodes.iter().enumerate() {
                match node.kind {
                    BlockKind::Delay { steps } if steps > 0 => {
                        let v = b(get(&val, &node.srcs[0]));
                        let h = &mut st[i].hist;
                        h.push(v);
                        if h.len() > steps {
                            h.remove(0);
                        }
                    }
                    BlockKind::Detector { detect, out } => {
                        let v = b(get(&val, &node.srcs[0]));
                        let s = &mut st[i];
                        s.remaining = s.remaining.saturating_sub(1);
                        s.run = if v { s.run + 1 } else { 0 };
                        if s.run == detect {
                            s.remaining = out;
                        }
                    }
                    _ => {}
                }
            }
            for (i, v) in val.iter().enumerate() {
                sink(k, i, *v);
            }
            if stop(&rep) {
                break;
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(s0) = st[i].open {
                rep.pending.push((node.name.clone(), s0));
            }
        }
        Ok(rep)
    }
}

fn check_params(b: &BlockDecl) -> Result<(), PomError> {
    let bad = |m: String| Err(PomError::Param(format!("{}: {m}", b.name)));
    match &b.kind {
        BlockKind::PulseGenerator { period, width, .. } => {
            if *period == 0 || !(*width > 0.0 && *width < 1.0) {
                return bad(format!("need period >= 1 and width in (0, 1), got {period}, {width}"));
            }
        }
        BlockKind::Extender { steps } if *steps == 0 => return bad("extender needs at least one step".into()),
        BlockKind::Detector { detect, .. } if *detect == 0 => return bad("detector needs at least one step".into()),
        _ => {}
    }
    Ok(())
}

/// Convenience wrapper over [`Compiled::eval`].
pub fn eval(net: &BlockNetwork, inputs: &StepTrace) -> Result<(StepTrace, ObjectiveReport), PomError> {
    net.compile()?.eval(inputs)
}

// ------------------------------------------------------------------ patterns

#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    /// `p` holds at every step of the first `t + 1` steps.
    AlwaysWithin { p: String, t: usize },
    /// `p` holds at some step of the first `t + 1` steps.
    EventuallyWithin { p: String, t: usize },
    /// `q` holds at some step `k <= t` and `p` holds at every step before it.
    UntilWithin { p: String, q: String, t: usize },
    /// Every `p` opens a window of `t + 1` steps that must contain a `q`.
    /// Overlapping windows merge.
    Response { p: String, q: String, t: usize },
    Synchronization { members: Vec<String>, tolerance_ms: f64 },
    Execution { input: String, output: String, lower_ms: f64, upper_ms: f64, lower_cut: bool },
    EndToEnd { source: String, target: String, lower_ms: f64, upper_ms: f64 },
    Sporadic { event: String, min_ms: f64 },
    PeriodicCumulative { event: String, period_ms: f64, jitter_ms: f64 },
    PeriodicNoncumulative { event: String, period_ms: f64, jitter_ms: f64 },
    EnergyBound { signal: String, lower: f64, upper: f64 },
}

impl Pattern {
    /// Reference formula for the patterns inside the bounded LTL fragment.
    pub fn formula(&self) -> Option<Formula> {
        match self {
            Pattern::AlwaysWithin { p, t } => Some(Formula::globally(0, *t, Formula::atom(p))),
            Pattern::EventuallyWithin { p, t } => Some(Formula::finally(0, *t, Formula::atom(p))),
            Pattern::UntilWithin { p, q, t } => Some(Formula::until(0, *t, Formula::atom(p), Formula::atom(q))),
            _ => None,
        }
    }
}

fn steps(ms: f64, step_ms: f64, what: &str) -> Result<usize, PomError> {
    let s = ms / step_ms;
    if !(ms >= 0.0) || (s - s.round()).abs() > 1e-9 {
        return Err(PomError::Param(format!("{what} = {ms} ms is not a whole number of {step_ms} ms steps")));
    }
    Ok(s.round() as usize)
}

/// Block construction for `pattern` at the given step length.
pub fn build_pattern(pattern: &Pattern, step_ms: f64) -> Result<BlockNetwork, PomError> {
    let mut net = BlockNetwork { step_ms, ..Default::default() };
    let bad = |m: &str| Err(PomError::Param(m.into()));
    // dur: true for steps 0..=t, false afterwards.
    let dur = |net: &mut BlockNetwork, t: usize| {
        net.add("one", BlockKind::Const { value: 1.0 }, &[]);
        net.add("late", BlockKind::Delay { steps: t + 1 }, &["one"]);
        net.add("dur", BlockKind::Not, &["late"])
    };
    match pattern {
        Pattern::AlwaysWithin { p, t } => {
            if *t == 0 {
                return bad("t must be positive");
            }
            net = net.input(p);
            let d = dur(&mut net, *t);
            net.add("check", BlockKind::Implies, &[&d, p]);
            net.add("objective", BlockKind::ProofObjective, &["check"]);
        }
        Pattern::EventuallyWithin { p, t } => {
            if *t == 0 {
                return bad("t must be positive");
            }
            net = net.input(p);
            let d = dur(&mut net, *t);
            net.add("check", BlockKind::WithinImplies, &[&d, p]);
            net.add("objective", BlockKind::ProofObjective, &["check"]);
        }
        Pattern::UntilWithin { p, q, t } => {
            if *t == 0 {
                return bad("t must be positive");
            }
            net = net.input(p).input(q);
            let d = dur(&mut net, *t);
            net.add("phi1", BlockKind::WithinImplies, &[&d, q]);
            // Within the window, the extended q reads "q has happened".
            net.add("q_ext", BlockKind::Extender { steps: t + 1 }, &[q]);
            net.add("not_q", BlockKind::Not, &["q_ext"]);
            net.add("before_q", BlockKind::And, &[&d, "not_q"]);
            net.add("phi2", BlockKind::Implies, &["before_q", p]);
            net.add("both", BlockKind::And, &["phi1", "phi2"]);
            net.add("objective", BlockKind::ProofObjective, &["both"]);
        }
        Pattern::Response { p, q, t } => {
            if *t == 0 {
                return bad("t must be positive");
            }
            net = net.input(p).input(q);
            net.add("window", BlockKind::Extender { steps: t + 1 }, &[p]);
            net.add("check", BlockKind::WithinImplies, &["window", q]);
            net.add("objective", BlockKind::ProofObjective, &["check"]);
        }
        Pattern::Synchronization { members, tolerance_ms } => {
            if members.is_empty() || !(*tolerance_ms > 0.0) {
                return bad("synchronization needs members and a positive tolerance");
            }
            let tol = steps(*tolerance_ms, step_ms, "tolerance")?;
            for m in members {
                net = net.input(m);
            }
            let ms: Vec<&str> = members.iter().map(|s| s.as_str()).collect();
            net.add("any", BlockKind::Or, &ms);
            net.add("was_open", BlockKind::Delay { steps: 1 }, &["window"]);
            net.add("idle", BlockKind::Not, &["was_open"]);
            net.add("first", BlockKind::And, &["any", "idle"]);
            net.add("window", BlockKind::Extender { steps: tol + 1 }, &["first"]);
            let mut checks = vec![];
            for (i, m) in members.iter().enumerate() {
                checks.push(net.add(&format!("seen_{i}"), BlockKind::WithinImplies, &["window", m]));
            }
            let cs: Vec<&str> = checks.iter().map(|s| s.as_str()).collect();
            net.add("all", BlockKind::And, &cs);
            net.add("objective", BlockKind::ProofObjective, &["all"]);
        }
        Pattern::Execution { input, output, lower_ms, upper_ms, lower_cut } => {
            if !(lower_ms <= upper_ms) || *upper_ms <= 0.0 {
                return bad("need 0 <= lower <= upper and upper > 0");
            }
            let (lo, hi) = (steps(*lower_ms, step_ms, "lower")?, steps(*upper_ms, step_ms, "upper")?);
            net = net.input(input).input(output);
            net.add("window", BlockKind::Extender { steps: hi }, &[input]);
            net.add("in_time", BlockKind::WithinImplies, &["window", output]);
            if *lower_cut && lo > 0 {
                net.add("early", BlockKind::Extender { steps: lo }, &[input]);
                net.add("no_out", BlockKind::Not, &[output]);
                net.add("not_early", BlockKind::Implies, &["early", "no_out"]);
                net.add("both", BlockKind::And, &["in_time", "not_early"]);
                net.add("objective", BlockKind::ProofObjective, &["both"]);
            } else {
                net.add("objective", BlockKind::ProofObjective, &["in_time"]);
            }
        }
        Pattern::EndToEnd { source, target, lower_ms, upper_ms } => {
            let p = Pattern::Execution {
                input: source.clone(),
                output: target.clone(),
                lower_ms: *lower_ms,
                upper_ms: *upper_ms,
                lower_cut: true,
            };
            return build_pattern(&p, step_ms);
        }
        Pattern::Sporadic { event, min_ms } => {
            if !(*min_ms > 0.0) {
                return bad("min must be positive");
            }
            let m = steps(*min_ms, step_ms, "min")?;
            net = net.input(event);
            if m <= 1 {
                net.add("one", BlockKind::Const { value: 1.0 }, &[]);
                net.add("objective", BlockKind::ProofObjective, &["one"]);
            } else {
                net.add("prev", BlockKind::Delay { steps: 1 }, &[event]);
                net.add("quiet", BlockKind::Extender { steps: m - 1 }, &["prev"]);
                net.add("absent", BlockKind::Not, &[event]);
                net.add("check", BlockKind::Implies, &["quiet", "absent"]);
                net.add("objective", BlockKind::ProofObjective, &["check"]);
            }
        }
        Pattern::PeriodicCumulative { event, period_ms, jitter_ms } => {
            if !(*jitter_ms >= 0.0 && jitter_ms < period_ms) {
                return bad("need 0 <= jitter < period");
            }
            let (tp, j) = (steps(*period_ms, step_ms, "period")?, steps(*jitter_ms, step_ms, "jitter")?);
            net = net.input(event);
            net.add("shifted", BlockKind::Delay { steps: tp - j }, &[event]);
            net.add("window", BlockKind::Extender { steps: 2 * j + 1 }, &["shifted"]);
            net.add("check", BlockKind::WithinImplies, &["window", event]);
            net.add("objective", BlockKind::ProofObjective, &["check"]);
        }
        Pattern::PeriodicNoncumulative { event, period_ms, jitter_ms } => {
            if !(*jitter_ms > 0.0 && jitter_ms < period_ms) {
                return bad("need 0 < jitter < period");
            }
            let (tp, j) = (steps(*period_ms, step_ms, "period")?, steps(*jitter_ms, step_ms, "jitter")?);
            net = net.input(event);
            net.add("pulse", BlockKind::PulseGenerator { period: tp, width: (2 * j) as f64 / tp as f64, phase: tp - j }, &[]);
            net.add("check", BlockKind::WithinImplies, &["pulse", event]);
            net.add("objective", BlockKind::ProofObjective, &["check"]);
        }
        Pattern::EnergyBound { signal, lower, upper } => {
            if lower > upper {
                return bad("lower > upper");
            }
            net = net.real_input(signal);
            net.add("lower", BlockKind::Const { value: *lower }, &[]);
            net.add("upper", BlockKind::Const { value: *upper }, &[]);
            net.add("above_lower", BlockKind::Compare { op: CmpOp::Ge }, &[signal, "lower"]);
            net.add("below_upper", BlockKind::Compare { op: CmpOp::Le }, &[signal, "upper"]);
            net.add("both", BlockKind::And, &["above_lower", "below_upper"]);
            net.add("objective", BlockKind::ProofObjective, &["both"]);
        }
    }
    Ok(net)
}

// ------------------------------------------------------------------ verify

#[derive(Debug, Clone, PartialEq)]
pub enum BoundedResult {
    Valid { traces: u64, admissible: u64 },
    Counterexample { trace: StepTrace, report: ObjectiveReport },
    BudgetExceeded { bits: usize, budget: u64 },
}

/// Enumerates every boolean input trace of `horizon` steps. Bit
/// `step * n_inputs + input` of the trace index drives that input at that
/// step, so the returned counterexample is the one with the smallest index.
pub fn verify_bounded(net: &BlockNetwork, horizon: usize, budget: u64) -> Result<BoundedResult, PomError> {
    let c = net.compile()?;
    if let Some(i) = c.inputs.iter().find(|i| i.kind != InputKind::Bool) {
        return Err(PomError::NonBoolean(i.name.clone()));
    }
    let n_in = c.inputs.len();
    let bits = n_in * horizon;
    if bits >= 64 || (bits as f64) > (budget.max(1) as f64).log2() {
        return Ok(BoundedResult::BudgetExceeded { bits, budget });
    }
    let total: u64 = 1 << bits;
    let bit = |idx: u64, k: usize, i: usize| ((idx >> (k * n_in + i)) & 1) as f64;
    let check = |idx: u64| -> Option<bool> {
        let rep = c.run(horizon, |k, i| bit(idx, k, i), |_, _, _| {}, |r| !r.admissible || !r.failures.is_empty()).ok()?;
        if !rep.admissible {
            None
        } else {
            Some(rep.failures.is_empty())
        }
    };
    let found = (0..total).into_par_iter().find_first(|&idx| check(idx) == Some(false));
    match found {
        Some(idx) => {
            let mut tr = StepTrace::new(c.step_ms);
            for (i, inp) in c.inputs.iter().enumerate() {
                tr.signals.insert(inp.name.clone(), (0..horizon).map(|k| bit(idx, k, i)).collect());
            }
            let (full, report) = c.eval(&tr)?;
            Ok(BoundedResult::Counterexample { trace: full, report })
        }
        None => {
            let admissible = (0..total).into_par_iter().filter(|&idx| check(idx).is_some()).count() as u64;
            Ok(BoundedResult::Valid { traces: total, admissible })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    fn sig(tr: &StepTrace, name: &str) -> Vec<u8> {
        tr.bools(name).unwrap().into_iter().map(|x| x as u8).collect()
    }

    #[test]
    fn implies_truth_table() {
        let mut net = BlockNetwork::default().input("a").input("b");
        net.add("out", BlockKind::Implies, &["a", "b"]);
        let inp = StepTrace::new(10.0).with_bools("a", &b(&[1, 1, 0, 0])).with_bools("b", &b(&[1, 0, 1, 0]));
        let (tr, _) = eval(&net, &inp).unwrap();
        assert_eq!(sig(&tr, "out"), vec![1, 0, 1, 1]);
    }

    #[test]
    fn within_implies_falls_once_after_unobserved_duration() {
        let mut net = BlockNetwork::default().input("in").input("obs");
        net.add("out", BlockKind::WithinImplies, &["in", "obs"]);
        let run = |obs: &[u8]| {
            let inp = StepTrace::new(10.0).with_bools("in", &b(&[0, 1, 1, 0, 0])).with_bools("obs", &b(obs));
            sig(&eval(&net, &inp).unwrap().0, "out")
        };
        assert_eq!(run(&[0, 0, 1, 0, 0]), vec![1; 5]);
        assert_eq!(run(&[0, 0, 0, 0, 0]), vec![1, 1, 1, 0, 1]);
    }

    #[test]
    fn within_implies_pending_at_end_is_reported() {
        let mut net = BlockNetwork::default().input("in").input("obs");
        net.add("w", BlockKind::WithinImplies, &["in", "obs"]);
        net.add("objective", BlockKind::ProofObjective, &["w"]);
        let inp = StepTrace::new(10.0).with_bools("in", &b(&[0, 1, 1])).with_bools("obs", &b(&[0, 0, 0]));
        let (_, rep) = eval(&net, &inp).unwrap();
        assert!(rep.valid());
        assert_eq!(rep.pending, vec![("w".to_string(), 1)]);
    }

    #[test]
    fn pulse_generator_phase_and_width() {
        let mut net = BlockNetwork::default();
        net.add("p", BlockKind::PulseGenerator { period: 5, width: 0.4, phase: 4 }, &[]);
        let inp = StepTrace::new(10.0).with_bools("dummy", &[false; 12]);
        let (tr, _) = eval(&net, &inp).unwrap();
        let on: Vec<usize> = sig(&tr, "p").iter().enumerate().filter(|(_, &v)| v == 1).map(|(k, _)| k).collect();
        assert_eq!(on, vec![4, 5, 9, 10]);
    }

    #[test]
    fn detector_starts_after_window() {
        let mut net = BlockNetwork::default().input("x");
        net.add("d", BlockKind::Detector { detect: 2, out: 3 }, &["x"]);
        let inp = StepTrace::new(10.0).with_bools("x", &b(&[1, 1, 0, 0, 0, 0, 0]));
        assert_eq!(sig(&eval(&net, &inp).unwrap().0, "d"), vec![0, 0, 1, 1, 1, 0, 0]);
    }

    #[test]
    fn delay_and_extender() {
        let mut net = BlockNetwork::default().input("x");
        net.add("d", BlockKind::Delay { steps: 2 }, &["x"]);
        net.add("e", BlockKind::Extender { steps: 3 }, &["x"]);
        let inp = StepTrace::new(10.0).with_bools("x", &b(&[1, 0, 0, 0, 1, 0]));
        let (tr, _) = eval(&net, &inp).unwrap();
        assert_eq!(sig(&tr, "d"), vec![0, 0, 1, 0, 0, 0]);
        assert_eq!(sig(&tr, "e"), vec![1, 1, 1, 0, 1, 1]);
    }

    #[test]
    fn combinational_cycle_is_rejected() {
        let mut net = BlockNetwork::default();
        net.add("a", BlockKind::Not, &["b"]);
        net.add("b", BlockKind::Not, &["a"]);
        assert!(matches!(net.compile(), Err(PomError::Cycle(_))));
        let mut ok = BlockNetwork::default();
        ok.add("a", BlockKind::Not, &["b"]);
        ok.add("b", BlockKind::Delay { steps: 1 }, &["a"]);
        assert!(ok.compile().is_ok());
        let mut ext = BlockNetwork::default();
        ext.add("a", BlockKind::Not, &["b"]);
        ext.add("b", BlockKind::Extender { steps: 2 }, &["a"]);
        assert!(matches!(ext.compile(), Err(PomError::Cycle(_))));
    }

    #[test]
    fn goto_from_aliasing() {
        let mut net = BlockNetwork::default().input("x");
        net.add("n", BlockKind::Not, &["x"]);
        net.add("g", BlockKind::Goto { tag: "dur".into() }, &["n"]);
        net.add("f", BlockKind::From { tag: "dur".into() }, &[]);
        net.add("out", BlockKind::Not, &["f"]);
        let (tr, _) = eval(&net, &StepTrace::new(10.0).with_bools("x", &b(&[1, 0]))).unwrap();
        assert_eq!(sig(&tr, "out"), vec![1, 0]);
        net.add("f2", BlockKind::From { tag: "nope".into() }, &[]);
        assert!(matches!(net.compile(), Err(PomError::Tag(..))));
        let json = net.to_json();
        assert_eq!(serde_json::from_str::<BlockNetwork>(&json).unwrap(), net);
        let extra = json.replacen('{', "{\"wires\": [],", 1);
        assert!(serde_json::from_str::<BlockNetwork>(&extra).is_err());
    }

    #[test]
    fn until_pattern_block_inventory() {
        let net = build_pattern(&Pattern::UntilWithin { p: "p".into(), q: "q".into(), t: 4 }, 10.0).unwrap();
        assert_eq!(net.count("within_implies"), 1);
        assert_eq!(net.count("extender"), 1);
        assert_eq!(net.count("implies"), 1);
        assert_eq!(net.count("proof_objective"), 1);
        let obj = net.blocks.iter().find(|b| b.name == "objective").unwrap();
        let feed = net.blocks.iter().find(|b| b.name == obj.inputs[0]).unwrap();
        assert_eq!(feed.kind, BlockKind::And);
    }

    #[test]
    fn execution_pattern_step_mapping() {
        let p = Pattern::Execution { input: "i".into(), output: "o".into(), lower_ms: 100.0, upper_ms: 300.0, lower_cut: true };
        let net = build_pattern(&p, 10.0).unwrap();
        let ext: Vec<usize> = net
            .blocks
            .iter()
            .filter_map(|b| match b.kind {
                BlockKind::Extender { steps } => Some(steps),
                _ => None,
            })
            .collect();
        assert_eq!(ext, vec![30, 10]);
        let bad = Pattern::Execution { input: "i".into(), output: "o".into(), lower_ms: 400.0, upper_ms: 300.0, lower_cut: true };
        assert!(build_pattern(&bad, 10.0).is_err());
    }

    #[test]
    fn energy_bound_uses_comparator_pair() {
        let net = build_pattern(&Pattern::EnergyBound { signal: "energy".into(), lower: 0.0, upper: 30000.0 }, 10.0).unwrap();
        assert_eq!(net.count("compare"), 2);
        let inp = StepTrace::new(10.0).with_values("energy", &[0.0, 1e4, 3e4, 3.1e4]);
        let (_, rep) = eval(&net, &inp).unwrap();
        assert_eq!(rep.failures, vec![ObjectiveFailure { objective: "objective".into(), step: 3 }]);
    }

    #[test]
    fn periodic_noncumulative_pattern_matches_pulse_layout() {
        let p = Pattern::PeriodicNoncumulative { event: "e".into(), period_ms: 50.0, jitter_ms: 10.0 };
        let net = build_pattern(&p, 10.0).unwrap();
        assert!(net.blocks.iter().any(|b| b.kind == BlockKind::PulseGenerator { period: 5, width: 0.4, phase: 4 }));
        let ok = StepTrace::new(10.0).with_bools("e", &b(&[0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0]));
        assert!(eval(&net, &ok).unwrap().1.valid());
        let late = StepTrace::new(10.0).with_bools("e", &b(&[0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0]));
        assert!(!eval(&net, &late).unwrap().1.valid());
    }

    #[test]
    fn verify_constant_true_is_valid() {
        let mut net = BlockNetwork::default().input("x");
        net.add("one", BlockKind::Const { value: 1.0 }, &[]);
        net.add("objective", BlockKind::ProofObjective, &["one"]);
        for h in [1, 4, 8] {
            assert!(matches!(verify_bounded(&net, h, 1 << 20).unwrap(), BoundedResult::Valid { .. }));
        }
    }

    #[test]
    fn verify_response_counterexample_and_assumption() {
        let net = build_pattern(&Pattern::Response { p: "p".into(), q: "q".into(), t: 2 }, 10.0).unwrap();
        match verify_bounded(&net, 6, 1 << 12).unwrap() {
            BoundedResult::Counterexample { trace, .. } => {
                assert!(trace.bools("p").unwrap()[0]);
                assert!(trace.bools("q").unwrap().iter().all(|&x| !x));
            }
            other => panic!("expected counterexample, got {other:?}"),
        }
        let mut fixed = net.clone();
        fixed.add("p_prev", BlockKind::Delay { steps: 1 }, &["p"]);
        fixed.add("q_follows", BlockKind::Compare { op: CmpOp::Eq }, &["q", "p_prev"]);
        fixed.add("assume", BlockKind::ProofAssumption, &["q_follows"]);
        assert!(matches!(verify_bounded(&fixed, 6, 1 << 12).unwrap(), BoundedResult::Valid { .. }));
    }

    #[test]
    fn verify_reports_budget_exceeded() {
        let mut net = BlockNetwork::default().input("a").input("b").input("c").input("d");
        net.add("objective", BlockKind::ProofObjective, &["a"]);
        assert_eq!(verify_bounded(&net, 5, 1 << 4).unwrap(), BoundedResult::BudgetExceeded { bits: 20, budget: 16 });
    }
}
