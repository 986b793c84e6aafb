//! The control methods the harness can train and evaluate.

use anyhow::{bail, Result};

/// Every supported controller. The first four are learned; the rest are
/// hand-written baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Full method: transformer encoder over observation history plus
    /// neighbour messages.
    Transformer,
    /// Same architecture without neighbour messages (the single-agent
    /// special case, trainable on any corridor).
    DqnTransformer,
    /// No attention blocks, single-step history, no messages: a plain
    /// feed-forward DQN on the current observation.
    MemorylessDqn,
    /// Neighbour messages but single-step history: the history-free
    /// message-passing ancestor.
    EmarlinNoHistory,
    FixedTime,
    Actuated,
    Random,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Transformer,
        Method::DqnTransformer,
        Method::MemorylessDqn,
        Method::EmarlinNoHistory,
        Method::FixedTime,
        Method::Actuated,
        Method::Random,
    ];

    pub fn parse(s: &str) -> Result<Method> {
        for m in Method::ALL {
            if m.label() == s {
                return Ok(m);
            }
        }
        bail!(
            "unknown method {s:?}; expected one of {}",
            Method::ALL.map(|m| m.label()).join(", ")
        )
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Transformer => "transformer",
            Method::DqnTransformer => "dqn-transformer",
            Method::MemorylessDqn => "memoryless-dqn",
            Method::EmarlinNoHistory => "emarlin-nohistory",
            Method::FixedTime => "fixed-time",
            Method::Actuated => "actuated",
            Method::Random => "random",
        }
    }

    /// Whether the method trains networks (and therefore needs
    /// checkpoints before it can be evaluated).
    pub fn is_learning(self) -> bool {
        matches!(
            self,
            Method::Transformer
                | Method::DqnTransformer
                | Method::MemorylessDqn
                | Method::EmarlinNoHistory
        )
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}
