//! Multi-agent environment facade over the simulator.
//!
//! One agent per intersection. Each step the caller supplies one phase
//! action per agent; the environment validates the actions against the
//! current signal masks, drives the signal machines, advances traffic,
//! and returns fresh observations, local rewards, and next-step masks.
//!
//! Observations are deliberately *local and range-limited*: an agent only
//! sees vehicles within `detection_range` metres of its own stop lines,
//! mirroring loop-detector or camera coverage. The observation vector per
//! agent is, in order:
//!
//! * vehicles within range, one entry per incoming lane (N, E, S, W
//!   approaches, lane slots in order),
//! * queued vehicles within range (same lane order; a vehicle counts as
//!   queued when its speed is below `queue_speed_threshold`),
//! * a one-hot encoding of the currently displayed phase (the pending
//!   phase while a change is in progress),
//! * green elapsed time normalised by maximum green, clamped to [0, 1],
//! * a transition flag (1 during yellow / all-red, else 0).
//!
//! The local reward is the negated sum of the agent's queued-in-range
//! entries, so reward and observation can never disagree about what the
//! agent senses.

use crate::arrivals::DemandSpec;
use crate::rng::episode_stream;
use crate::signal::{apply_action, valid_actions, PhaseScheme, SignalInterval};
use crate::state::SimState;
use crate::step::step_sim;
use crate::topology::{LaneId, Network};
use crate::{Result, SimError};

/// Sensing and episode parameters.
#[derive(Debug, Clone)]
pub struct EnvParams {
    /// How far upstream of each stop line vehicles are visible, in metres.
    pub detection_range: f64,
    /// Speed below which a sensed vehicle counts as queued, in m/s.
    pub queue_speed_threshold: f64,
    /// Episode length in steps.
    pub episode_len: u32,
    /// Seconds per step.
    pub dt: f64,
    /// Record a per-step log retrievable via [`Env::take_log`].
    pub log_steps: bool,
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            detection_range: 50.0,
            queue_speed_threshold: 2.0,
            episode_len: 3600,
            dt: 1.0,
            log_steps: false,
        }
    }
}

/// Static per-agent wiring, fixed at construction.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub agent: usize,
    pub intersection: usize,
    /// Neighbour agent on the upstream (north) side, if any.
    pub upstream: Option<usize>,
    /// Neighbour agent on the downstream (south) side, if any.
    pub downstream: Option<usize>,
    pub n_actions: usize,
    /// Incoming lanes in observation order.
    pub lanes: Vec<LaneId>,
}

/// What one environment transition hands back.
#[derive(Debug, Clone)]
pub struct StepResult {
    /// Per-agent observation vectors.
    pub obs: Vec<Vec<f64>>,
    /// Per-agent local rewards (negated sensed queue counts).
    pub rewards: Vec<f64>,
    /// Per-agent valid-action masks for the *next* decision.
    pub masks: Vec<Vec<bool>>,
    pub done: bool,
    /// Steps completed so far this episode.
    pub clock: u32,
    /// Standing vehicles across the whole network (not range-limited).
    pub queue_total: usize,
    /// Cumulative queued-vehicle-seconds per intersection.
    pub delay: Vec<f64>,
}

/// One per-step log record, collected when `log_steps` is on.
#[derive(Debug, Clone)]
pub struct StepLog {
    pub clock: u32,
    pub queue_total: usize,
    pub phases: Vec<usize>,
    pub delay_total: f64,
}

/// The corridor environment: network, signal machines, demand, state.
pub struct Env {
    net: Network,
    scheme: PhaseScheme,
    demand: DemandSpec,
    params: EnvParams,
    contexts: Vec<AgentContext>,
    signals: Vec<SignalInterval>,
    state: SimState,
    log: Vec<StepLog>,
}

impl Env {
    /// Validates the pieces against one another and assembles the
    /// environment. Fails if the phase scheme is unsound, the demand
    /// profile is malformed, sensing parameters are degenerate, or demand
    /// routes traffic through a movement no phase ever serves (which
    /// would deadlock the head of a shared lane forever).
    pub fn new(
        net: Network,
        scheme: PhaseScheme,
        demand: DemandSpec,
        params: EnvParams,
    ) -> Result<Env> {
        net.validate()?;
        scheme.validate()?;
        demand.validate()?;
        if params.detection_range <= 0.0 {
            return Err(SimError::BadConfig(format!(
                "detection range must be positive, got {}",
                params.detection_range
            )));
        }
        if params.queue_speed_threshold <= 0.0 {
            return Err(SimError::BadConfig(format!(
                "queue speed threshold must be positive, got {}",
                params.queue_speed_threshold
            )));
        }
        if params.dt <= 0.0 {
            return Err(SimError::BadConfig(format!(
                "step length must be positive, got {}",
                params.dt
            )));
        }
        if params.episode_len == 0 {
            return Err(SimError::BadConfig(
                "episode length must be at least one step".into(),
            ));
        }
        for i in 0..net.n {
            for approach in crate::topology::Approach::ALL {
                let ratios = net.ratios(i, approach);
                for turn in crate::topology::Turn::ALL {
                    if ratios[turn.index()] > 0.0 && !scheme.serves((approach, turn)) {
                        return Err(SimError::BadConfig(format!(
                            "demand sends {} {} traffic through intersection {i} \
                             but no phase in the scheme serves that movement",
                            approach.name(),
                            turn.name()
                        )));
                    }
                }
            }
        }
        let contexts = (0..net.n)
            .map(|i| {
                let (upstream, downstream) = net.neighbors(i);
                AgentContext {
                    agent: i,
                    intersection: i,
                    upstream,
                    downstream,
                    n_actions: scheme.n_phases(),
                    lanes: net.incoming_lanes(i),
                }
            })
            .collect();
        let state = SimState::new(&net, episode_stream(0, "arrivals", 0), episode_stream(0, "turns", 0));
        let signals = vec![SignalInterval::start(0); net.n];
        Ok(Env {
            net,
            scheme,
            demand,
            params,
            contexts,
            signals,
            state,
            log: Vec::new(),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.net.n
    }

    pub fn n_actions(&self) -> usize {
        self.scheme.n_phases()
    }

    /// Length of each agent's observation vector.
    pub fn obs_dim(&self) -> usize {
        let lanes = self.contexts[0].lanes.len();
        2 * lanes + self.scheme.n_phases() + 2
    }

    pub fn contexts(&self) -> &[AgentContext] {
        &self.contexts
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn scheme(&self) -> &PhaseScheme {
        &self.scheme
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn signals(&self) -> &[SignalInterval] {
        &self.signals
    }

    /// Cumulative queued-vehicle-seconds attributed to intersection `i`.
    pub fn intersection_delay(&self, i: usize) -> Result<f64> {
        self.state.intersection_delay(i)
    }

    /// Drains the per-step log collected since the last call.
    pub fn take_log(&mut self) -> Vec<StepLog> {
        std::mem::take(&mut self.log)
    }

    /// Starts a fresh episode. All episode randomness derives from
    /// `(master, episode)` through named streams, so two environments
    /// reset with the same pair see identical arrivals and turns no
    /// matter what controls them afterwards.
    pub fn reset(&mut self, master: u64, episode: u64) -> StepResult {
        self.state = SimState::new(
            &self.net,
            episode_stream(master, "arrivals", episode),
            episode_stream(master, "turns", episode),
        );
        self.signals = vec![SignalInterval::start(0); self.net.n];
        self.log.clear();
        StepResult {
            obs: (0..self.net.n).map(|a| self.observe(a)).collect(),
            rewards: vec![0.0; self.net.n],
            masks: self.masks(),
            done: false,
            clock: 0,
            queue_total: self.state.queue_total(),
            delay: self.state.delay_s.clone(),
        }
    }

    /// Applies one phase action per agent and advances the world by one
    /// step. Rejects any action outside its agent's current valid mask.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if actions.len() != self.net.n {
            return Err(SimError::BadConfig(format!(
                "expected {} actions, got {}",
                self.net.n,
                actions.len()
            )));
        }
        for (agent, &action) in actions.iter().enumerate() {
            apply_action(&mut self.signals[agent], action, &self.scheme).map_err(|e| match e {
                SimError::InvalidAction { action, detail, .. } => {
                    SimError::InvalidAction { agent, action, detail }
                }
                other => other,
            })?;
        }
        for iv in self.signals.iter_mut() {
            crate::signal::advance_interval(iv, self.params.dt, &self.scheme);
        }
        step_sim(
            &mut self.state,
            &self.net,
            &self.scheme,
            &self.signals,
            &self.demand,
            self.params.dt,
        );
        let done = self.state.clock >= self.params.episode_len;
        if self.params.log_steps {
            self.log.push(StepLog {
                clock: self.state.clock,
                queue_total: self.state.queue_total(),
                phases: self.signals.iter().map(|iv| iv.display_phase()).collect(),
                delay_total: self.state.delay_s.iter().sum(),
            });
        }
        Ok(StepResult {
            obs: (0..self.net.n).map(|a| self.observe(a)).collect(),
            rewards: (0..self.net.n).map(|a| self.local_reward(a)).collect(),
            masks: self.masks(),
            done,
            clock: self.state.clock,
            queue_total: self.state.queue_total(),
            delay: self.state.delay_s.clone(),
        })
    }

    /// Vehicles on `lane` within detection range of the stop line, split
    /// into (all sensed, sensed and queued).
    fn sensed(&self, lane: LaneId) -> (usize, usize) {
        let link = &self.net.links[self.net.lanes[lane].link];
        let rt = &self.state.lanes[lane];
        let mut seen = 0usize;
        let mut queued = 0usize;
        for (k, v) in rt.vehicles.iter().enumerate() {
            if link.length - v.pos > self.params.detection_range {
                continue;
            }
            seen += 1;
            if rt.speed_of(k, link.free_flow) < self.params.queue_speed_threshold {
                queued += 1;
            }
        }
        (seen, queued)
    }

    /// Builds agent `a`'s observation vector; see the module docs for the
    /// layout.
    pub fn observe(&self, a: usize) -> Vec<f64> {
        let ctx = &self.contexts[a];
        let iv = &self.signals[ctx.intersection];
        let mut obs = Vec::with_capacity(self.obs_dim());
        let counts: Vec<(usize, usize)> = ctx.lanes.iter().map(|&l| self.sensed(l)).collect();
        obs.extend(counts.iter().map(|&(seen, _)| seen as f64));
        obs.extend(counts.iter().map(|&(_, queued)| queued as f64));
        let shown = iv.display_phase();
        for p in 0..self.scheme.n_phases() {
            obs.push(if p == shown { 1.0 } else { 0.0 });
        }
        let elapsed = if iv.in_transition() { 0.0 } else { iv.elapsed };
        obs.push((elapsed / self.scheme.max_green).clamp(0.0, 1.0));
        obs.push(if iv.in_transition() { 1.0 } else { 0.0 });
        obs
    }

    /// Negated sensed queue count: exactly the negated sum of the queued
    /// section of [`Env::observe`].
    pub fn local_reward(&self, a: usize) -> f64 {
        let ctx = &self.contexts[a];
        -(ctx
            .lanes
            .iter()
            .map(|&l| self.sensed(l).1)
            .sum::<usize>() as f64)
    }

    fn masks(&self) -> Vec<Vec<bool>> {
        self.signals
            .iter()
            .map(|iv| valid_actions(iv, &self.scheme))
            .collect()
    }
}
