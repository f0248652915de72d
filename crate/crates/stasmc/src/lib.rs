//! Statistical model checking of stochastic timed automata.
//!
//! [`sta`] holds the model format and compiled networks, [`sim`] runs them,
//! and [`smc`] turns batches of seeded runs into estimates, sequential
//! tests and expected values. [`tadl`] checks timing constraints over event
//! streams, either offline or as observer automata attached to a network.
//! [`pom`] evaluates and exhaustively checks step-synchronous block
//! networks against [`ltl`]. [`cas`], [`catalog`] and [`suite`] build the
//! three-vehicle platoon and run its requirement catalog.
//!
//! Runnable examples (`cargo run --example NAME`):
//!
//! - `simulate_clock`: event log and a watched clock for a small lamp model
//! - `estimate_probability`: Chernoff estimate on a biased coin
//! - `sprt`: sequential probability ratio test, by hand and on a model
//! - `duality_mutex`: a test and its dual on a safe and an unsafe lock
//! - `monitors_offline`: every constraint kind over one stream, plus m-of-k
//! - `pom_until`: the bounded-until pattern as blocks, with bounded search
//! - `platoon_r23_refinement`: R23 with the turn-location fix off and on
//! - `energy_r48`: expected braking energy and its coefficient sensitivity

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod cas;
pub mod catalog;
pub mod fixtures;
pub mod ltl;
pub mod pom;
pub mod sim;
pub mod smc;
pub mod sta;
pub mod suite;
pub mod tadl;
