//! Stochastic timed automata: the model format, the expression language and
//! the compiled network with its runtime state.

pub mod expr;
pub mod model;
pub mod network;

pub use expr::{parse_expr, CExpr, Expr, ExprError, Value};
pub use model::{
    validate, ChannelKind, Edge, Literal, Location, Network, RateSpec, Template, ValidationReport, VarKind,
    Violation,
};
pub use network::{CompiledNetwork, InstanceState, NetworkState, StateEnv, StateError};
