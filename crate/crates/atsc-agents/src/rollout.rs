//! Episode loops: training with episodic replay, and greedy evaluation.
//!
//! All randomness is drawn from named streams derived from one master
//! seed: `arrivals.ep{k}` / `turns.ep{k}` inside the environment,
//! `explore.a{i}.ep{k}` per agent, `replay.ep{k}` for batch sampling, and
//! `init.a{i}` (consumed by the caller when building the nets). Stream
//! names depend only on the master seed, the agent index, and the episode
//! index — never on the method — so methods that compute identical
//! numbers produce identical trajectories.

use atsc_nn::Scalar;
use atsc_sim::env::{Env, StepResult};
use atsc_sim::rng::episode_stream;

use crate::buffer::{history_at, Episode, ReplayBuffer};
use crate::net::{select_action, AgentNet};
use crate::train::train_step;
use crate::Result;

/// Evaluation episodes use indices far above any training episode so the
/// two never share arrival draws.
pub const EVAL_EPISODE_OFFSET: u64 = 1_000_000;

/// Training-loop knobs.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub episodes: u64,
    /// Episodes played (and stored) before the first gradient step.
    pub warmup_episodes: u64,
    /// Environment steps between gradient steps.
    pub train_every: u32,
    pub batch: usize,
    /// Replay capacity in episodes.
    pub buffer_episodes: usize,
    pub master: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 40,
            warmup_episodes: 5,
            train_every: 1,
            batch: 32,
            buffer_episodes: 200,
            master: 0,
        }
    }
}

/// Summary of one finished episode.
#[derive(Debug, Clone)]
pub struct EpisodeMetrics {
    pub episode: u64,
    /// Cumulative queued-vehicle-seconds per intersection.
    pub delay: Vec<f64>,
    pub delay_total: f64,
    pub entered: u64,
    pub exited: u64,
    pub reward_total: f64,
    /// Mean training loss across the gradient steps taken during this
    /// episode (0 when none ran).
    pub mean_loss: f64,
    /// Order-sensitive digest of every action and observation bit of the
    /// episode; equal digests mean bit-identical trajectories.
    pub trace_digest: u64,
}

/// FNV-1a absorption of one 64-bit word.
fn absorb(hash: u64, word: u64) -> u64 {
    let mut h = hash;
    for byte in word.to_le_bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn absorb_step(mut digest: u64, actions: &[usize], res: &StepResult) -> u64 {
    for &a in actions {
        digest = absorb(digest, a as u64);
    }
    for obs in &res.obs {
        for &v in obs {
            digest = absorb(digest, v.to_bits());
        }
    }
    for &r in &res.rewards {
        digest = absorb(digest, r.to_bits());
    }
    digest
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;

fn summarize(
    env: &Env,
    episode: u64,
    reward_total: f64,
    losses: &[f64],
    trace_digest: u64,
) -> EpisodeMetrics {
    let delay: Vec<f64> = env.state().delay_s.clone();
    let mean_loss = if losses.is_empty() {
        0.0
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    };
    EpisodeMetrics {
        episode,
        delay_total: delay.iter().sum(),
        delay,
        entered: env.state().entered,
        exited: env.state().exited,
        reward_total,
        mean_loss,
        trace_digest,
    }
}

/// Plays one episode with the nets acting ε-greedily (ε per the config
/// schedule when `explore`, else exactly 0), optionally training along
/// the way. Returns the episode record and its metrics.
#[allow(clippy::too_many_arguments)]
fn play_episode<S: Scalar>(
    env: &mut Env,
    nets: &mut [AgentNet<S>],
    neighbors: &[(Option<usize>, Option<usize>)],
    master: u64,
    episode_idx: u64,
    explore: bool,
    global_steps: &mut u64,
    mut trainer: Option<(&mut ReplayBuffer, &TrainConfig)>,
) -> Result<(Episode, EpisodeMetrics)> {
    let n = nets.len();
    let mut explore_rngs: Vec<_> = (0..n)
        .map(|i| episode_stream(master, &format!("explore.a{i}"), episode_idx))
        .collect();
    let mut replay_rng = episode_stream(master, "replay", episode_idx);
    let mut res = env.reset(master, episode_idx);
    let mut record = Episode::start(res.obs.clone());
    let mut reward_total = 0.0;
    let mut digest = FNV_OFFSET;
    let mut losses: Vec<f64> = Vec::new();
    loop {
        let t = record.obs.len() - 1;
        let encodings: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let h = history_at(&record, i, t, nets[i].cfg.encoder.max_len);
                nets[i].encode_online(&h)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut actions = Vec::with_capacity(n);
        for i in 0..n {
            let (up, down) = neighbors[i];
            let msg = |j: Option<usize>| -> Option<&[f64]> {
                if nets[i].cfg.use_messages {
                    j.map(|j| encodings[j].as_slice())
                } else {
                    None
                }
            };
            let q = nets[i].q_online(&encodings[i], msg(up), msg(down))?;
            let eps = if explore {
                nets[i].cfg.epsilon(*global_steps)
            } else {
                0.0
            };
            actions.push(select_action(&q, &res.masks[i], eps, &mut explore_rngs[i]));
        }
        res = env.step(&actions)?;
        reward_total += res.rewards.iter().sum::<f64>();
        digest = absorb_step(digest, &actions, &res);
        record.push(actions, res.rewards.clone(), res.obs.clone(), res.masks.clone());
        *global_steps += 1;
        if let Some((buffer, tc)) = trainer.as_mut() {
            if buffer.n_transitions() > 0 && *global_steps % tc.train_every as u64 == 0 {
                let l = train_step(nets, neighbors, buffer, &mut replay_rng, tc.batch)?;
                losses.extend_from_slice(&l);
            }
        }
        if res.done {
            break;
        }
    }
    let metrics = summarize(env, episode_idx, reward_total, &losses, digest);
    Ok((record, metrics))
}

/// Cross-episode training state. Keeping it explicit lets a caller
/// persist everything needed to stop after any episode and resume with a
/// bit-identical continuation: together with the nets it fully determines
/// the rest of the run (per-episode rng streams carry no state between
/// episodes).
#[derive(Debug)]
pub struct TrainState {
    pub buffer: ReplayBuffer,
    /// Environment steps taken so far (drives the ε schedule).
    pub global_steps: u64,
    /// Completed training episodes; also the next episode index.
    pub episodes_done: u64,
}

impl TrainState {
    pub fn fresh(cfg: &TrainConfig) -> TrainState {
        TrainState {
            buffer: ReplayBuffer::new(cfg.buffer_episodes),
            global_steps: 0,
            episodes_done: 0,
        }
    }
}

/// Plays (and, past warmup, trains on) the next training episode,
/// advancing `state`.
pub fn train_episode<S: Scalar>(
    env: &mut Env,
    nets: &mut [AgentNet<S>],
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<EpisodeMetrics> {
    let neighbors: Vec<(Option<usize>, Option<usize>)> = env
        .contexts()
        .iter()
        .map(|c| (c.upstream, c.downstream))
        .collect();
    let ep = state.episodes_done;
    let trainer = if ep >= cfg.warmup_episodes {
        Some((&mut state.buffer, cfg))
    } else {
        None
    };
    let (record, m) = play_episode(
        env,
        nets,
        &neighbors,
        cfg.master,
        ep,
        true,
        &mut state.global_steps,
        trainer,
    )?;
    state.buffer.push(record);
    state.episodes_done += 1;
    Ok(m)
}

/// Trains the agents in place over `cfg.episodes` episodes and returns
/// per-episode metrics.
pub fn run_training<S: Scalar>(
    env: &mut Env,
    nets: &mut [AgentNet<S>],
    cfg: &TrainConfig,
) -> Result<Vec<EpisodeMetrics>> {
    let mut state = TrainState::fresh(cfg);
    let mut metrics = Vec::with_capacity(cfg.episodes as usize);
    while state.episodes_done < cfg.episodes {
        metrics.push(train_episode(env, nets, cfg, &mut state)?);
    }
    Ok(metrics)
}

/// Greedy evaluation (ε = 0, no training) over `episodes` fresh episodes
/// starting at [`EVAL_EPISODE_OFFSET`].
pub fn run_greedy<S: Scalar>(
    env: &mut Env,
    nets: &mut [AgentNet<S>],
    master: u64,
    episodes: u64,
) -> Result<Vec<EpisodeMetrics>> {
    let neighbors: Vec<(Option<usize>, Option<usize>)> = env
        .contexts()
        .iter()
        .map(|c| (c.upstream, c.downstream))
        .collect();
    let mut global_steps: u64 = 0;
    let mut metrics = Vec::with_capacity(episodes as usize);
    for j in 0..episodes {
        let ep = EVAL_EPISODE_OFFSET + j;
        let (_, m) = play_episode(
            env,
            nets,
            &neighbors,
            master,
            ep,
            false,
            &mut global_steps,
            None,
        )?;
        metrics.push(m);
    }
    Ok(metrics)
}

/// Runs a hand-written controller over `episodes` evaluation episodes.
/// The closure sees the environment and the latest step result and
/// returns one action per agent; it is invoked before every step.
pub fn run_controller(
    env: &mut Env,
    master: u64,
    episodes: u64,
    mut act: impl FnMut(&Env, &StepResult, u64) -> Result<Vec<usize>>,
) -> Result<Vec<EpisodeMetrics>> {
    let mut metrics = Vec::with_capacity(episodes as usize);
    for j in 0..episodes {
        let ep = EVAL_EPISODE_OFFSET + j;
        let mut res = env.reset(master, ep);
        let mut reward_total = 0.0;
        let mut digest = FNV_OFFSET;
        loop {
            let actions = act(env, &res, ep)?;
            res = env.step(&actions)?;
            reward_total += res.rewards.iter().sum::<f64>();
            digest = absorb_step(digest, &actions, &res);
            if res.done {
                break;
            }
        }
        metrics.push(summarize(env, ep, reward_total, &[], digest));
    }
    Ok(metrics)
}
