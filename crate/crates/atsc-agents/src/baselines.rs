//! Non-learning reference controllers: fixed-time plans, semi-actuated
//! gap-out control, and uniform-random valid actions.
//!
//! Every baseline runs through [`run_controller`], so it is evaluated on
//! exactly the same episodes (same arrival and turn draws) as the
//! learned agents.

use atsc_sim::controllers::{
    actuated_controller, fixed_time_phase, project_to_mask, ActuatedState, FixedTimePlan,
};
use atsc_sim::env::Env;
use atsc_sim::rng::episode_stream;
use rand::RngCore;

use crate::rollout::{run_controller, EpisodeMetrics};
use crate::Result;

/// Evaluates fixed-time plans, one per intersection (a single plan is
/// shared by all). Desired phases are projected onto the current valid
/// mask, so minimum greens and transitions are honoured even when the
/// plan asks for something the machine cannot legally do yet.
pub fn run_fixed_time(
    env: &mut Env,
    plans: &[FixedTimePlan],
    master: u64,
    episodes: u64,
) -> Result<Vec<EpisodeMetrics>> {
    let n = env.n_agents();
    assert!(
        plans.len() == 1 || plans.len() == n,
        "need one plan or one per intersection"
    );
    let dt = env.params().dt;
    run_controller(env, master, episodes, |env_ref, res, _ep| {
        let clock_s = res.clock as f64 * dt;
        let mut actions = Vec::with_capacity(n);
        for i in 0..env_ref.n_agents() {
            let plan = &plans[if plans.len() == 1 { 0 } else { i }];
            let desired = fixed_time_phase(plan, clock_s)?;
            actions.push(project_to_mask(desired, &res.masks[i]));
        }
        Ok(actions)
    })
}

/// Semi-actuated control: extend the green while sensed demand keeps
/// arriving within `gap` seconds, otherwise move to the next phase with
/// demand (or the recall phase when the intersection is quiet).
pub fn run_actuated(
    env: &mut Env,
    gap: f64,
    recall_phase: usize,
    master: u64,
    episodes: u64,
) -> Result<Vec<EpisodeMetrics>> {
    let n = env.n_agents();
    let dt = env.params().dt;
    let lanes_per = env.contexts()[0].lanes.len();
    let mut states: Vec<ActuatedState> = Vec::new();
    let mut current_ep: Option<u64> = None;
    run_controller(env, master, episodes, move |env_ref, res, ep| {
        if current_ep != Some(ep) {
            states = (0..n).map(|_| ActuatedState::new()).collect();
            current_ep = Some(ep);
        }
        let clock_s = res.clock as f64 * dt;
        let mut actions = Vec::with_capacity(n);
        for i in 0..n {
            let sensed = &res.obs[i][..lanes_per];
            let desired = actuated_controller(
                &env_ref.signals()[i],
                env_ref.net(),
                env_ref.scheme(),
                i,
                sensed,
                clock_s,
                gap,
                recall_phase,
                &mut states[i],
            );
            actions.push(project_to_mask(desired, &res.masks[i]));
        }
        Ok(actions)
    })
}

/// Uniform-random choice among the currently valid actions, drawn from
/// the same per-agent exploration streams the learners use.
pub fn run_random(env: &mut Env, master: u64, episodes: u64) -> Result<Vec<EpisodeMetrics>> {
    let n = env.n_agents();
    let mut rngs = Vec::new();
    let mut current_ep: Option<u64> = None;
    run_controller(env, master, episodes, move |_env, res, ep| {
        if current_ep != Some(ep) {
            rngs = (0..n)
                .map(|i| episode_stream(master, &format!("explore.a{i}"), ep))
                .collect();
            current_ep = Some(ep);
        }
        let mut actions = Vec::with_capacity(n);
        for i in 0..n {
            let valid: Vec<usize> = res.masks[i]
                .iter()
                .enumerate()
                .filter(|&(_, &ok)| ok)
                .map(|(a, _)| a)
                .collect();
            actions.push(valid[(rngs[i].next_u64() % valid.len() as u64) as usize]);
        }
        Ok(actions)
    })
}
