//! One agent's networks: online and target parameter stores sharing a
//! layout, the optimizer, and ε-greedy action selection.

use atsc_nn::{AdamState, ParamStore, Scalar, Tape};
use rand::RngCore;

use crate::buffer::PaddedHistory;
use crate::encoder::{self, EncoderConfig, EncoderParams};
use crate::qhead::{self, QHeadConfig, QHeadParams};
use crate::{AgentError, Result};

/// Everything that defines an agent's learner.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub encoder: EncoderConfig,
    pub head: QHeadConfig,
    /// Exchange encoded messages with corridor neighbours. When off, the
    /// neighbour slots of the Q-head are always zero.
    pub use_messages: bool,
    pub gamma: f64,
    pub lr: f64,
    /// Multiplier applied to rewards inside the TD target. Greedy play is
    /// unaffected (a positive scale preserves the argmax); it only keeps
    /// Q magnitudes in a range the Huber loss treats quadratically.
    pub reward_scale: f64,
    /// Hard-copy the online store into the target every this many
    /// gradient steps.
    pub target_sync: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Environment steps over which ε anneals linearly.
    pub eps_decay_steps: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            encoder: EncoderConfig::default(),
            head: QHeadConfig::default(),
            use_messages: true,
            gamma: 0.95,
            lr: 1e-3,
            reward_scale: 1.0,
            target_sync: 1000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 50_000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.head.validate()?;
        if self.encoder.d_model != self.head.d_model {
            return Err(AgentError::Config(format!(
                "encoder width {} does not match Q-head slot width {}",
                self.encoder.d_model, self.head.d_model
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(AgentError::Config(format!(
                "discount must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if self.lr <= 0.0 {
            return Err(AgentError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.reward_scale <= 0.0 {
            return Err(AgentError::Config(format!(
                "reward scale must be positive, got {}",
                self.reward_scale
            )));
        }
        if self.target_sync == 0 {
            return Err(AgentError::Config(
                "target sync interval must be at least one step".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.eps_start)
            || !(0.0..=1.0).contains(&self.eps_end)
            || self.eps_end > self.eps_start
        {
            return Err(AgentError::Config(format!(
                "ε must anneal downwards within [0, 1], got {} -> {}",
                self.eps_start, self.eps_end
            )));
        }
        if self.eps_decay_steps == 0 {
            return Err(AgentError::Config(
                "ε decay horizon must be at least one step".into(),
            ));
        }
        Ok(())
    }

    /// Linear ε schedule over global environment steps. Pins the floor
    /// exactly once decay completes instead of interpolating to it.
    pub fn epsilon(&self, global_steps: u64) -> f64 {
        if global_steps >= self.eps_decay_steps {
            return self.eps_end;
        }
        let frac = global_steps as f64 / self.eps_decay_steps as f64;
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

/// Online/target stores plus the optimizer and sync counter for one
/// intersection.
pub struct AgentNet<S: Scalar> {
    pub cfg: AgentConfig,
    pub online: ParamStore<S>,
    pub target: ParamStore<S>,
    pub enc: EncoderParams,
    pub head: QHeadParams,
    pub adam: AdamState<S>,
    /// Gradient steps taken (drives target syncing).
    pub train_steps: u64,
}

impl<S: Scalar> AgentNet<S> {
    /// Fresh networks. The rng is consumed in a fixed registration
    /// order, so one stream per agent pins the initialization bit-for-bit
    /// regardless of corridor position or message wiring.
    pub fn new(cfg: AgentConfig, rng: &mut impl rand::Rng) -> Result<Self> {
        cfg.validate()?;
        let mut online = ParamStore::<S>::new();
        let enc = EncoderParams::build(&mut online, "enc", &cfg.encoder, rng)?;
        let head = QHeadParams::build(&mut online, "head", &cfg.head, rng)?;
        let target = online.clone();
        let adam = AdamState::new(&online, cfg.lr);
        Ok(AgentNet {
            cfg,
            online,
            target,
            enc,
            head,
            adam,
            train_steps: 0,
        })
    }

    /// Rebuilds an agent around stores restored from a checkpoint.
    pub fn restore(
        cfg: AgentConfig,
        online: ParamStore<S>,
        target: ParamStore<S>,
        adam: AdamState<S>,
        train_steps: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let enc = EncoderParams::lookup(&online, "enc", &cfg.encoder)?;
        let head = QHeadParams::lookup(&online, "head", &cfg.head)?;
        EncoderParams::lookup(&target, "enc", &cfg.encoder)?;
        QHeadParams::lookup(&target, "head", &cfg.head)?;
        Ok(AgentNet {
            cfg,
            online,
            target,
            enc,
            head,
            adam,
            train_steps,
        })
    }

    /// Hard synchronisation: target := online.
    pub fn sync_target(&mut self) {
        self.target
            .copy_values_from(&self.online)
            .expect("online and target share a layout");
    }

    /// Forward-only online encoding (messages, greedy play).
    pub fn encode_online(&self, hist: &PaddedHistory) -> Result<Vec<f64>> {
        encoder::encode_values(&self.online, &self.enc, &self.cfg.encoder, &hist.rows, &hist.mask)
    }

    /// Forward-only target encoding (bootstrap messages).
    pub fn encode_target(&self, hist: &PaddedHistory) -> Result<Vec<f64>> {
        encoder::encode_values(&self.target, &self.enc, &self.cfg.encoder, &hist.rows, &hist.mask)
    }

    /// Forward-only Q-values from already-encoded messages.
    pub fn q_from_encodings(
        &self,
        store: &ParamStore<S>,
        own: &[f64],
        upstream: Option<&[f64]>,
        downstream: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::<S>::new();
        let own_t = tape.constant_row(own.iter().map(|&v| S::from_f64(v)).collect());
        let up_t =
            upstream.map(|m| tape.constant_row(m.iter().map(|&v| S::from_f64(v)).collect()));
        let down_t =
            downstream.map(|m| tape.constant_row(m.iter().map(|&v| S::from_f64(v)).collect()));
        let q = qhead::q_values(
            &mut tape, store, &self.head, &self.cfg.head, own_t, up_t, down_t, false,
        )?;
        Ok(tape.value(q).iter().map(|&v| Scalar::to_f64(v)).collect())
    }

    /// Online Q-values for acting.
    pub fn q_online(
        &self,
        own: &[f64],
        upstream: Option<&[f64]>,
        downstream: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        self.q_from_encodings(&self.online, own, upstream, downstream)
    }

    /// Target Q-values for bootstrapping.
    pub fn q_target(
        &self,
        own: &[f64],
        upstream: Option<&[f64]>,
        downstream: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        self.q_from_encodings(&self.target, own, upstream, downstream)
    }
}

/// Masked ε-greedy selection. With probability ε picks uniformly among
/// valid actions, otherwise the valid argmax (ties to the lowest index).
/// ε = 0 consumes no randomness at all.
pub fn select_action(q: &[f64], mask: &[bool], eps: f64, rng: &mut impl RngCore) -> usize {
    debug_assert_eq!(q.len(), mask.len());
    debug_assert!(mask.iter().any(|&ok| ok), "no valid action to select");
    if eps > 0.0 {
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        if u < eps {
            let valid: Vec<usize> = mask
                .iter()
                .enumerate()
                .filter(|&(_, &ok)| ok)
                .map(|(i, _)| i)
                .collect();
            return valid[(rng.next_u64() % valid.len() as u64) as usize];
        }
    }
    let mut best = usize::MAX;
    let mut best_q = f64::NEG_INFINITY;
    for (i, (&qi, &ok)) in q.iter().zip(mask.iter()).enumerate() {
        if ok && qi > best_q {
            best = i;
            best_q = qi;
        }
    }
    best
}
