//! Action-value head: `[own ‖ upstream ‖ downstream] → hidden → Q`.
//!
//! The head always sees three message slots. Missing neighbours (corridor
//! ends, or architectures that do not exchange messages) contribute exact
//! zero vectors, so the parameter shapes never depend on where in the
//! corridor an agent sits.

use atsc_nn::{ParamId, ParamStore, Scalar, Tape, Tid};
use rand::Rng;

use crate::{AgentError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QHeadConfig {
    /// Width of each message slot (the encoder's `d_model`).
    pub d_model: usize,
    /// Hidden layer width.
    pub hidden: usize,
    /// Number of actions (phases).
    pub n_actions: usize,
}

impl Default for QHeadConfig {
    fn default() -> Self {
        QHeadConfig {
            d_model: 64,
            hidden: 128,
            n_actions: 4,
        }
    }
}

impl QHeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.hidden == 0 || self.n_actions == 0 {
            return Err(AgentError::Config(format!(
                "Q-head dimensions must be positive: d {}, hidden {}, actions {}",
                self.d_model, self.hidden, self.n_actions
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QHeadParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl QHeadParams {
    pub fn build<S: Scalar>(
        store: &mut ParamStore<S>,
        ns: &str,
        cfg: &QHeadConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let fan_in = 3 * cfg.d_model;
        Ok(QHeadParams {
            w1: store.add_uniform_fan_in(&format!("{ns}.w1"), fan_in, cfg.hidden, fan_in, rng)?,
            b1: store.add_zeros(&format!("{ns}.b1"), 1, cfg.hidden)?,
            w2: store.add_uniform_fan_in(
                &format!("{ns}.w2"),
                cfg.hidden,
                cfg.n_actions,
                cfg.hidden,
                rng,
            )?,
            b2: store.add_zeros(&format!("{ns}.b2"), 1, cfg.n_actions)?,
        })
    }

    pub fn lookup<S: Scalar>(store: &ParamStore<S>, ns: &str, cfg: &QHeadConfig) -> Result<Self> {
        cfg.validate()?;
        let find = |name: String| -> Result<ParamId> {
            store
                .id_by_name(&name)
                .ok_or_else(|| AgentError::Config(format!("store is missing parameter {name}")))
        };
        Ok(QHeadParams {
            w1: find(format!("{ns}.w1"))?,
            b1: find(format!("{ns}.b1"))?,
            w2: find(format!("{ns}.w2"))?,
            b2: find(format!("{ns}.b2"))?,
        })
    }
}

/// Computes the `[1 × n_actions]` Q-row from an own encoding and optional
/// neighbour messages (already on the tape; pass `None` for a zero slot).
pub fn q_values<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    params: &QHeadParams,
    cfg: &QHeadConfig,
    own: Tid,
    upstream: Option<Tid>,
    downstream: Option<Tid>,
    trainable: bool,
) -> Result<Tid> {
    let lease = |tape: &mut Tape<S>, id: ParamId| -> Tid {
        if trainable {
            tape.param(store, id)
        } else {
            tape.param_const(store, id)
        }
    };
    let slot = |tape: &mut Tape<S>, msg: Option<Tid>| -> Tid {
        msg.unwrap_or_else(|| tape.constant(1, cfg.d_model, vec![S::zero(); cfg.d_model]))
    };
    let up = slot(tape, upstream);
    let down = slot(tape, downstream);
    let x = tape.concat_cols(&[own, up, down])?;
    let w1 = lease(tape, params.w1);
    let b1 = lease(tape, params.b1);
    let h = tape.matmul(x, w1)?;
    let h = tape.add_row(h, b1)?;
    let h = tape.relu(h);
    let w2 = lease(tape, params.w2);
    let b2 = lease(tape, params.b2);
    let q = tape.matmul(h, w2)?;
    Ok(tape.add_row(q, b2)?)
}
