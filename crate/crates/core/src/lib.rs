//! Deterministic simulation framework for signature-based Byzantine
//! fault-tolerant pulse synchronization.
//!
//! The crate provides, end to end:
//!
//! - exact rational time arithmetic and piecewise-linear hardware clocks
//!   ([`rational`], [`clock`], [`params`]);
//! - a symbolic signature scheme whose unforgeability is enforced by an
//!   observation ledger ([`sig`]);
//! - a lock-step synchronous engine running crusader broadcast and iterated
//!   midpoint approximate agreement under a rushing adversary
//!   ([`agreement`]);
//! - a continuous-time discrete-event simulator with full trace recording
//!   and per-node local views ([`sim`]);
//! - the timed-crusader-broadcast pulse synchronization protocol ([`cps`]);
//! - built-in Byzantine strategies and the three-execution shifting attack
//!   that witnesses the skew lower bound on links with larger uncertainty
//!   toward faulty nodes ([`adversary`], [`attack`]);
//! - a parameter feasibility solver and exact trace conformance checkers
//!   ([`analysis`]);
//! - config-driven experiment orchestration with reproducible file output
//!   ([`experiment`]).
//!
//! Everything is exact: no floating point touches any protocol or checker
//! path, so replays are bit-identical and indistinguishability between
//! executions is decidable by value equality.

use serde::{Deserialize, Serialize};

pub mod adversary;
pub mod agreement;
pub mod analysis;
pub mod attack;
pub mod clock;
pub mod cps;
pub mod experiment;
pub mod params;
pub mod rational;
pub mod sig;
pub mod sim;

/// Identifies a node; ids are dense in `0..n`.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub use clock::{ClockSchedule, ClockSegment, LocalTime, TimePoint};
pub use params::SystemParams;
pub use rational::Rat;
pub use sim::{DelayPolicy, ExecutionTrace};
