//! Q-learning over episodic replay with target networks and masked
//! bootstrapping.
//!
//! One call trains every agent on one shared batch of joint transitions.
//! For a transition `(s, a, r, s')` of agent `i` the regression target is
//!
//! ```text
//! y = r                                         if s' ends the episode
//! y = r + γ · max_{a' valid in s'} Q_target(s', a')   otherwise
//! ```
//!
//! where the maximum ranges over the *valid-action mask* of `s'` — an
//! action the signal machine would reject can never justify value.
//!
//! Neighbour messages enter each agent's graph as plain constants: the
//! sender's encoding is computed value-only and re-injected, so gradients
//! never cross intersection boundaries.

use atsc_nn::{Scalar, Tape};
use rand::RngCore;

use crate::buffer::{history_at, PaddedHistory, ReplayBuffer};
use crate::encoder;
use crate::net::AgentNet;
use crate::qhead;
use crate::{AgentError, Result};

/// Maximum of `q` over the positions `mask` marks valid.
pub fn masked_max(q: &[f64], mask: &[bool]) -> f64 {
    debug_assert_eq!(q.len(), mask.len());
    let mut best = f64::NEG_INFINITY;
    for (&qi, &ok) in q.iter().zip(mask.iter()) {
        if ok && qi > best {
            best = qi;
        }
    }
    debug_assert!(best.is_finite(), "masked_max over an all-false mask");
    best
}

/// One gradient step for every agent on one shared sampled batch.
/// Returns the per-agent batch losses. `neighbors[i]` are the upstream
/// and downstream agent indices feeding agent `i`'s message slots.
pub fn train_step<S: Scalar>(
    nets: &mut [AgentNet<S>],
    neighbors: &[(Option<usize>, Option<usize>)],
    buffer: &ReplayBuffer,
    rng: &mut impl RngCore,
    batch: usize,
) -> Result<Vec<f64>> {
    let n = nets.len();
    debug_assert_eq!(neighbors.len(), n);
    if buffer.n_transitions() == 0 {
        return Err(AgentError::Config("training from an empty buffer".into()));
    }
    let samples = buffer.sample(rng, batch);

    // Histories for every agent at s and s'.
    let mut cur: Vec<Vec<PaddedHistory>> = Vec::with_capacity(n);
    let mut next: Vec<Vec<PaddedHistory>> = Vec::with_capacity(n);
    for (i, net) in nets.iter().enumerate() {
        let l = net.cfg.encoder.max_len;
        let mut ci = Vec::with_capacity(batch);
        let mut ni = Vec::with_capacity(batch);
        for &(e, k) in &samples {
            let ep = buffer.episode(e);
            ci.push(history_at(ep, i, k, l));
            ni.push(history_at(ep, i, k + 1, l));
        }
        cur.push(ci);
        next.push(ni);
    }

    // Value-only encodings: target encodings at s' for bootstrapping
    // (own slot always, neighbour slots when messages are on), and
    // online encodings at s for the message slots of the gradient pass.
    let any_messages = nets.iter().any(|net| net.cfg.use_messages);
    let mut target_next: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
    let mut online_cur: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
    for (i, net) in nets.iter().enumerate() {
        let tn = next[i]
            .iter()
            .map(|h| net.encode_target(h))
            .collect::<Result<Vec<_>>>()?;
        target_next.push(tn);
        if any_messages {
            let oc = cur[i]
                .iter()
                .map(|h| net.encode_online(h))
                .collect::<Result<Vec<_>>>()?;
            online_cur.push(oc);
        } else {
            online_cur.push(Vec::new());
        }
    }

    // Regression targets.
    let mut targets: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let (up, down) = neighbors[i];
        let mut ys = Vec::with_capacity(batch);
        for (b, &(e, k)) in samples.iter().enumerate() {
            let ep = buffer.episode(e);
            let r = ep.rewards[k][i] * nets[i].cfg.reward_scale;
            if ep.is_terminal(k) {
                ys.push(r);
                continue;
            }
            let msg = |j: Option<usize>| -> Option<&[f64]> {
                if nets[i].cfg.use_messages {
                    j.map(|j| target_next[j][b].as_slice())
                } else {
                    None
                }
            };
            let q_t = nets[i].q_target(&target_next[i][b], msg(up), msg(down))?;
            ys.push(r + nets[i].cfg.gamma * masked_max(&q_t, &ep.next_masks[k][i]));
        }
        targets.push(ys);
    }

    // Gradient pass, one tape per agent.
    let mut losses = Vec::with_capacity(n);
    for i in 0..n {
        let (up, down) = neighbors[i];
        let mut tape = Tape::<S>::new();
        let mut picked = Vec::with_capacity(batch);
        for (b, &(e, k)) in samples.iter().enumerate() {
            let own = encoder::encode(
                &mut tape,
                &nets[i].online,
                &nets[i].enc,
                &nets[i].cfg.encoder,
                &cur[i][b].rows,
                &cur[i][b].mask,
            )?;
            let inject = |tape: &mut Tape<S>, j: Option<usize>| {
                if nets[i].cfg.use_messages {
                    j.map(|j| {
                        tape.constant_row(
                            online_cur[j][b].iter().map(|&v| S::from_f64(v)).collect(),
                        )
                    })
                } else {
                    None
                }
            };
            let up_t = inject(&mut tape, up);
            let down_t = inject(&mut tape, down);
            let q_row = qhead::q_values(
                &mut tape,
                &nets[i].online,
                &nets[i].head,
                &nets[i].cfg.head,
                own,
                up_t,
                down_t,
                true,
            )?;
            picked.push(tape.gather_col(q_row, buffer.episode(e).actions[k][i])?);
        }
        let preds = tape.concat_cols(&picked)?;
        let summed = tape.huber_loss(preds, &targets[i], 1.0)?;
        let loss = tape.scale(summed, 1.0 / batch as f64);
        losses.push(tape.value(loss)[0].to_f64());
        tape.backward(loss)?;
        tape.write_param_grads(&mut nets[i].online);
        nets[i].adam.step(&mut nets[i].online)?;
        nets[i].online.zero_grads();
        nets[i].train_steps += 1;
        if nets[i].train_steps % nets[i].cfg.target_sync == 0 {
            nets[i].sync_target();
        }
    }
    Ok(losses)
}
