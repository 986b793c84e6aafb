//! Queue-based corridor traffic microsimulator with signalized intersections.
//!
//! The model is deliberately small but exactly testable:
//!
//! * **Two-regime kinematics** — a vehicle either moves at its link's
//!   free-flow speed or stands in a queue at the stop line. There is no
//!   car-following; queues are the only congestion mechanism.
//! * **Signal interval machines** — per intersection, a green/yellow/all-red
//!   sequencer with min/max green enforced through action masks rather than
//!   silent overrides ([`signal`]).
//! * **Range-limited sensing** — agents observe vehicle and queued-vehicle
//!   counts only within a detection range of the stop line; everything
//!   further away is invisible ([`env`]).
//! * **Named random streams** — every stochastic draw (arrivals, turns)
//!   comes from a dedicated seeded stream, so trajectories are bit-exactly
//!   reproducible per (config, seed) and resumable at episode boundaries
//!   ([`rng`]).
//!
//! The crate exposes the raw simulator ([`state`], [`step`]) for physics
//! tests and a joint environment facade ([`env`]) that steps all
//! intersections together and emits per-agent observations, rewards, and
//! valid-action masks.

pub mod arrivals;
pub mod controllers;
pub mod env;
pub mod rng;
pub mod signal;
pub mod state;
pub mod step;
pub mod topology;
pub mod vehicle;

pub use arrivals::{ArrivalModel, DemandSpec, Profile};
pub use env::{AgentContext, Env, EnvParams, StepResult};
pub use signal::{IntervalKind, PhaseScheme, SignalInterval, TransitionMatrix};
pub use state::{LaneRuntime, SimState};
pub use topology::{Approach, CorridorConfig, Network, Turn};
pub use vehicle::Vehicle;

/// Simulation and configuration errors.
#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    /// A configuration value is inconsistent or out of range.
    BadConfig(String),
    /// An agent submitted an action its previous mask forbids. This is a
    /// contract violation (an agent or masking bug), never silently fixed.
    InvalidAction {
        agent: usize,
        action: usize,
        detail: String,
    },
    /// An intersection index outside the network was referenced.
    UnknownIntersection(usize),
    /// A fixed-time plan with no entries.
    EmptyPlan,
}

impl std::fmt::Display for SimError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimError::BadConfig(msg) => write!(f, "bad config: {msg}"),
            SimError::InvalidAction {
                agent,
                action,
                detail,
            } => write!(
                f,
                "agent {agent} chose action {action} outside its valid-action mask: {detail}"
            ),
            SimError::UnknownIntersection(i) => write!(f, "unknown intersection {i}"),
            SimError::EmptyPlan => write!(f, "fixed-time plan has no entries"),
        }
    }
}

impl std::error::Error for SimError {}

/// Crate-local result alias.
pub type Result<T> = std::result::Result<T, SimError>;
