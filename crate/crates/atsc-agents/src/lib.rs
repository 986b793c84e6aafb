//! Learning agents for the corridor: a sequence encoder over padded
//! observation histories, per-intersection Q-heads that consume the
//! neighbours' encoded messages, episodic replay, Q-learning with target
//! networks, and the non-learning baseline controllers.
//!
//! Agents are deliberately separate parameter worlds: each intersection
//! owns its own stores and optimizer, and neighbour messages cross agent
//! boundaries as plain values, never as differentiable graph edges.

pub mod baselines;
pub mod buffer;
pub mod encoder;
pub mod net;
pub mod qhead;
pub mod rollout;
pub mod train;

pub use buffer::{Episode, PaddedHistory, ReplayBuffer};
pub use encoder::{EncoderConfig, EncoderParams};
pub use net::{select_action, AgentConfig, AgentNet};
pub use qhead::{QHeadConfig, QHeadParams};
pub use rollout::{
    run_greedy, run_training, train_episode, EpisodeMetrics, TrainConfig, TrainState,
    EVAL_EPISODE_OFFSET,
};

/// Errors from agent construction, training, and rollouts.
#[derive(Debug)]
pub enum AgentError {
    /// Tensor plumbing failed (shape mismatch, missing parameter, ...).
    Nn(atsc_nn::NnError),
    /// The environment rejected an action or configuration.
    Sim(atsc_sim::SimError),
    /// An agent-level configuration is inconsistent.
    Config(String),
}

impl std::fmt::Display for AgentError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AgentError::Nn(e) => write!(f, "{e}"),
            AgentError::Sim(e) => write!(f, "{e}"),
            AgentError::Config(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for AgentError {}

impl From<atsc_nn::NnError> for AgentError {
    fn from(e: atsc_nn::NnError) -> Self {
        AgentError::Nn(e)
    }
}

impl From<atsc_sim::SimError> for AgentError {
    fn from(e: atsc_sim::SimError) -> Self {
        AgentError::Sim(e)
    }
}

pub type Result<T> = std::result::Result<T, AgentError>;
