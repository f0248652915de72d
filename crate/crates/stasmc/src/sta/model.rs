//! Serializable network description (the model file format).
//!
//! A model file is a JSON object with the keys `channels`, `globals`,
//! `templates` and `instances`. Unknown keys anywhere in the tree are
//! rejected. Expressions (guards, invariants, updates, rates, spawn
//! arguments) are strings in the syntax of [`crate::sta::expr`].
//!
//! ```json
//! {
//!   "channels": [{"name": "go", "kind": "broadcast"}],
//!   "globals": [{"name": "n", "kind": "int", "initial": 0}],
//!   "templates": [{
//!     "name": "P",
//!     "clocks": [{"name": "c"}],
//!     "locations": [{"name": "idle", "invariant": "c <= 10"}, {"name": "done"}],
//!     "initial": "idle",
//!     "edges": [{"source": "idle", "target": "done", "guard": "c >= 5",
//!                "sync": "go!", "updates": ["n = n + 1"]}]
//!   }],
//!   "instances": [{"name": "p", "template": "P"}]
//! }
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed model: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Binary,
    Broadcast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelDecl {
    pub name: String,
    pub kind: ChannelKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    #[serde(alias = "integer")]
    Int,
    #[serde(alias = "boolean")]
    Bool,
    Real,
}

/// Literal value in a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Bool(bool),
    Int(i64),
    Real(f64),
    List(Vec<Literal>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarDecl {
    pub name: String,
    pub kind: VarKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Literal>,
    /// Fixed array length; scalar when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockDecl {
    pub name: String,
    #[serde(default)]
    pub initial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDecl {
    pub name: String,
    pub kind: VarKind,
}

/// Clock derivative: a number, or an expression over variables that is
/// re-evaluated after every event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateSpec {
    Const(f64),
    Expr(String),
}

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Location {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariant: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rates: BTreeMap<String, RateSpec>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub exit_rate: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

impl Location {
    pub fn new(name: &str) -> Self {
        Location { name: name.into(), invariant: None, rates: BTreeMap::new(), exit_rate: 1.0, labels: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnDecl {
    pub template: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<String>,
    /// `ch!` sends, `ch?` receives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync: Option<String>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub updates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spawn: Option<SpawnDecl>,
}

impl Edge {
    pub fn new(source: &str, target: &str) -> Self {
        Edge {
            source: source.into(),
            target: target.into(),
            guard: None,
            sync: None,
            weight: 1.0,
            updates: vec![],
            spawn: None,
        }
    }

    pub fn guard(mut self, g: impl Into<String>) -> Self {
        self.guard = Some(g.into());
        self
    }

    pub fn send(mut self, ch: &str) -> Self {
        self.sync = Some(format!("{ch}!"));
        self
    }

    pub fn recv(mut self, ch: &str) -> Self {
        self.sync = Some(format!("{ch}?"));
        self
    }

    pub fn weight(mut self, w: f64) -> Self {
        self.weight = w;
        self
    }

    pub fn update(mut self, u: impl Into<String>) -> Self {
        self.updates.push(u.into());
        self
    }

    pub fn spawn(mut self, template: &str, args: &[&str]) -> Self {
        self.spawn = Some(SpawnDecl { template: template.into(), args: args.iter().map(|s| s.to_string()).collect() });
        self
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parameters: Vec<ParamDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clocks: Vec<ClockDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vars: Vec<VarDecl>,
    pub locations: Vec<Location>,
    pub initial: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub spawnable: bool,
    /// Observer templates never send and never write globals; they react
    /// to enabled edges immediately instead of sampling a delay.
    #[serde(default, skip_serializing_if = "is_false")]
    pub observer: bool,
}

impl Template {
    pub fn new(name: &str, initial: &str) -> Self {
        Template {
            name: name.into(),
            parameters: vec![],
            clocks: vec![],
            vars: vec![],
            locations: vec![],
            initial: initial.into(),
            edges: vec![],
            spawnable: false,
            observer: false,
        }
    }

    pub fn param(mut self, name: &str, kind: VarKind) -> Self {
        self.parameters.push(ParamDecl { name: name.into(), kind });
        self
    }

    pub fn clock(mut self, name: &str) -> Self {
        self.clocks.push(ClockDecl { name: name.into(), initial: 0.0 });
        self
    }

    pub fn var(mut self, name: &str, kind: VarKind, initial: Literal) -> Self {
        self.vars.push(VarDecl { name: name.into(), kind, initial: Some(initial), size: None });
        self
    }

    pub fn loc(mut self, l: Location) -> Self {
        self.locations.push(l);
        self
    }

    pub fn edge(mut self, e: Edge) -> Self {
        self.edges.push(e);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDecl {
    pub name: String,
    pub template: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    #[serde(default)]
    pub channels: Vec<ChannelDecl>,
    #[serde(default)]
    pub globals: Vec<VarDecl>,
    #[serde(default)]
    pub templates: Vec<Template>,
    #[serde(default)]
    pub instances: Vec<InstanceDecl>,
}

impl Network {
    pub fn from_json(text: &str) -> Result<Self, LoadError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| LoadError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn template(&self, name: &str) -> Option<&Template> {
        self.templates.iter().find(|t| t.name == name)
    }

    pub fn template_mut(&mut self, name: &str) -> Option<&mut Template> {
        self.templates.iter_mut().find(|t| t.name == name)
    }

    pub fn channel(mut self, name: &str, kind: ChannelKind) -> Self {
        self.channels.push(ChannelDecl { name: name.into(), kind });
        self
    }

    pub fn global(mut self, name: &str, kind: VarKind, initial: Literal) -> Self {
        self.globals.push(VarDecl { name: name.into(), kind, initial: Some(initial), size: None });
        self
    }

    pub fn global_array(mut self, name: &str, kind: VarKind, initial: Vec<Literal>) -> Self {
        let size = initial.len();
        self.globals.push(VarDecl { name: name.into(), kind, initial: Some(Literal::List(initial)), size: Some(size) });
        self
    }

    pub fn with_template(mut self, t: Template) -> Self {
        self.templates.push(t);
        self
    }

    pub fn instance(mut self, name: &str, template: &str, args: Vec<Literal>) -> Self {
        self.instances.push(InstanceDecl { name: name.into(), template: template.into(), args });
        self
    }
}

/// One structural problem, with template/edge coordinates when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub template: Option<String>,
    pub edge: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.template, self.edge) {
            (Some(t), Some(e)) => write!(f, "template {t}, edge {e}: {}", self.message),
            (Some(t), None) => write!(f, "template {t}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }

    pub(crate) fn push(&mut self, template: Option<&str>, edge: Option<usize>, message: impl Into<String>) {
        self.violations.push(Violation { template: template.map(str::to_string), edge, message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

/// Checks every structural invariant of the network. Pure: the same input
/// always yields the same report.
pub fn validate(net: &Network) -> ValidationReport {
    match crate::sta::CompiledNetwork::compile(net) {
        Ok(_) => ValidationReport::default(),
        Err(r) => r,
    }
}
