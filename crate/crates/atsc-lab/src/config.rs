//! Experiment configuration: one TOML file fully determines a run.
//!
//! Sections mirror the layers they configure — `[network]` and
//! `[network.demand]` build the corridor and its arrivals, `[signal]`
//! the phase scheme (plus the fixed-time baseline plan), `[env]` the
//! sensing model and episode shape, `[agent]` the learner architecture
//! and hyperparameters, `[run]` seeds, episode counts, and output
//! locations. Every key has a default except the handful that define the
//! experiment (`method`, `seeds`).

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use atsc_agents::{AgentConfig, EncoderConfig, QHeadConfig, TrainConfig};
use atsc_sim::arrivals::{ArrivalModel, DemandSpec, Profile};
use atsc_sim::controllers::FixedTimePlan;
use atsc_sim::env::{Env, EnvParams};
use atsc_sim::signal::{PhaseScheme, Timings, TransitionMatrix};
use atsc_sim::topology::{CorridorConfig, Network};

use crate::methods::Method;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSection,
    pub signal: SignalSection,
    #[serde(default)]
    pub env: EnvSection,
    pub agent: AgentSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub intersections: usize,
    #[serde(default = "d_link_length")]
    pub link_length: f64,
    #[serde(default = "d_free_flow")]
    pub free_flow: f64,
    #[serde(default = "d_jam_spacing")]
    pub jam_spacing: f64,
    #[serde(default = "d_sat_flow")]
    pub sat_flow: f64,
    #[serde(default = "d_main_lanes")]
    pub main_lanes: usize,
    #[serde(default = "d_side_lanes")]
    pub side_lanes: usize,
    /// Turn fractions `[left, through, right]` on main-street approaches.
    #[serde(default = "d_main_turns")]
    pub main_turns: [f64; 3],
    /// Turn fractions `[left, through, right]` on side-street approaches.
    #[serde(default = "d_side_turns")]
    pub side_turns: [f64; 3],
    pub demand: DemandSection,
}

fn d_link_length() -> f64 {
    300.0
}
fn d_free_flow() -> f64 {
    15.0
}
fn d_jam_spacing() -> f64 {
    7.0
}
fn d_sat_flow() -> f64 {
    0.5
}
fn d_main_lanes() -> usize {
    2
}
fn d_side_lanes() -> usize {
    2
}
fn d_main_turns() -> [f64; 3] {
    [0.1, 0.8, 0.1]
}
fn d_side_turns() -> [f64; 3] {
    [0.25, 0.5, 0.25]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    /// `"poisson"` or `"periodic"` (deterministic drip for oracles).
    #[serde(default = "d_model")]
    pub model: String,
    /// Piecewise-constant main-street rate: `[[from_s, veh_per_s_lane], ...]`.
    pub main: Vec<[f64; 2]>,
    /// Piecewise-constant side-street rate, same shape.
    pub side: Vec<[f64; 2]>,
}

fn d_model() -> String {
    "poisson".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSection {
    /// `"four-phase"` (through/left pairs) or `"two-phase"` (through+right
    /// only; rejects demand with left turns).
    #[serde(default = "d_scheme")]
    pub scheme: String,
    /// `"all"` (any phase reachable) or `"cyclic"` (fixed ring order).
    #[serde(default = "d_transitions")]
    pub transitions: String,
    #[serde(default = "d_min_green")]
    pub min_green: f64,
    #[serde(default = "d_max_green")]
    pub max_green: f64,
    #[serde(default = "d_yellow")]
    pub yellow: f64,
    #[serde(default = "d_all_red")]
    pub all_red: f64,
    /// Plan for the fixed-time baseline; required to evaluate it.
    pub fixed_time: Option<FixedTimeSection>,
}

fn d_scheme() -> String {
    "four-phase".into()
}
fn d_transitions() -> String {
    "all".into()
}
fn d_min_green() -> f64 {
    10.0
}
fn d_max_green() -> f64 {
    60.0
}
fn d_yellow() -> f64 {
    3.0
}
fn d_all_red() -> f64 {
    2.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedTimeSection {
    /// Cycle as `[[phase, green_s], ...]`; phases must be integers.
    pub phases: Vec<[f64; 2]>,
    /// Per-intersection cycle offsets in seconds (one value, or one per
    /// intersection). Default: all zero.
    #[serde(default)]
    pub offsets: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    #[serde(default = "d_detection_range")]
    pub detection_range: f64,
    #[serde(default = "d_queue_speed")]
    pub queue_speed_threshold: f64,
    #[serde(default = "d_episode_len")]
    pub episode_len: u32,
    #[serde(default = "d_dt")]
    pub dt: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            detection_range: d_detection_range(),
            queue_speed_threshold: d_queue_speed(),
            episode_len: d_episode_len(),
            dt: d_dt(),
        }
    }
}

fn d_detection_range() -> f64 {
    50.0
}
fn d_queue_speed() -> f64 {
    2.0
}
fn d_episode_len() -> u32 {
    3600
}
fn d_dt() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    /// One of: transformer, dqn-transformer, memoryless-dqn,
    /// emarlin-nohistory, fixed-time, actuated, random.
    pub method: String,
    #[serde(default = "d_d_model")]
    pub d_model: usize,
    #[serde(default = "d_n_heads")]
    pub n_heads: usize,
    #[serde(default = "d_d_ff")]
    pub d_ff: usize,
    #[serde(default = "d_n_blocks")]
    pub n_blocks: usize,
    /// Observation-history length fed to the encoder.
    #[serde(default = "d_history")]
    pub history: usize,
    /// Q-head hidden width.
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_reward_scale")]
    pub reward_scale: f64,
    #[serde(default = "d_target_sync")]
    pub target_sync: u64,
    #[serde(default = "d_eps_start")]
    pub eps_start: f64,
    #[serde(default = "d_eps_end")]
    pub eps_end: f64,
    #[serde(default = "d_eps_decay_steps")]
    pub eps_decay_steps: u64,
    /// Gap-out threshold (s) for the actuated baseline.
    #[serde(default = "d_gap")]
    pub gap: f64,
    /// Recall phase for the actuated baseline when no demand is sensed.
    #[serde(default)]
    pub recall_phase: usize,
}

fn d_d_model() -> usize {
    64
}
fn d_n_heads() -> usize {
    4
}
fn d_d_ff() -> usize {
    128
}
fn d_n_blocks() -> usize {
    2
}
fn d_history() -> usize {
    20
}
fn d_hidden() -> usize {
    128
}
fn d_gamma() -> f64 {
    0.95
}
fn d_lr() -> f64 {
    1e-3
}
fn d_reward_scale() -> f64 {
    1.0
}
fn d_target_sync() -> u64 {
    1000
}
fn d_eps_start() -> f64 {
    1.0
}
fn d_eps_end() -> f64 {
    0.05
}
fn d_eps_decay_steps() -> u64 {
    50_000
}
fn d_gap() -> f64 {
    4.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Master seeds; one independent training/evaluation run per seed.
    pub seeds: Vec<u64>,
    #[serde(default = "d_train_episodes")]
    pub train_episodes: u64,
    #[serde(default = "d_warmup_episodes")]
    pub warmup_episodes: u64,
    #[serde(default = "d_train_every")]
    pub train_every: u32,
    #[serde(default = "d_batch")]
    pub batch: usize,
    #[serde(default = "d_buffer_episodes")]
    pub buffer_episodes: usize,
    #[serde(default = "d_eval_episodes")]
    pub eval_episodes: u64,
    /// Write a checkpoint every this many episodes (0 = final only).
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "d_out_dir")]
    pub out_dir: String,
}

fn d_train_episodes() -> u64 {
    40
}
fn d_warmup_episodes() -> u64 {
    5
}
fn d_train_every() -> u32 {
    1
}
fn d_batch() -> usize {
    32
}
fn d_buffer_episodes() -> usize {
    200
}
fn d_eval_episodes() -> u64 {
    5
}
fn d_out_dir() -> String {
    "runs/out".into()
}

fn profile_from_pairs(pairs: &[[f64; 2]]) -> Profile {
    Profile {
        pieces: pairs.iter().map(|p| (p[0], p[1])).collect(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// Cross-field validation beyond what deserialization enforces. The
    /// expensive consistency checks (conflict tables, demand/scheme
    /// compatibility) happen when the environment is built; this catches
    /// what would otherwise surface as a confusing error much later.
    pub fn validate(&self) -> Result<()> {
        self.method()?;
        self.arrival_model()?;
        if self.run.seeds.is_empty() {
            bail!("[run] seeds must list at least one seed");
        }
        let mut seen = self.run.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.run.seeds.len() {
            bail!("[run] seeds contains duplicates");
        }
        if self.run.warmup_episodes >= self.run.train_episodes {
            bail!(
                "[run] warmup_episodes ({}) must be below train_episodes ({})",
                self.run.warmup_episodes,
                self.run.train_episodes
            );
        }
        match self.signal.scheme.as_str() {
            "four-phase" | "two-phase" => {}
            other => bail!("[signal] unknown scheme {other:?} (four-phase or two-phase)"),
        }
        match self.signal.transitions.as_str() {
            "all" | "cyclic" => {}
            other => bail!("[signal] unknown transitions {other:?} (all or cyclic)"),
        }
        if let Some(ft) = &self.signal.fixed_time {
            let n_phases = self.n_phases();
            if ft.phases.is_empty() {
                bail!("[signal.fixed_time] cycle must list at least one phase");
            }
            for &[phase, green] in &ft.phases {
                if phase.fract() != 0.0 || phase < 0.0 || phase as usize >= n_phases {
                    bail!("[signal.fixed_time] phase {phase} is not a valid phase index");
                }
                if green <= 0.0 {
                    bail!("[signal.fixed_time] green {green} must be positive");
                }
            }
            let n = self.network.intersections;
            if !(ft.offsets.is_empty() || ft.offsets.len() == 1 || ft.offsets.len() == n) {
                bail!(
                    "[signal.fixed_time] offsets needs 0, 1, or {n} entries, got {}",
                    ft.offsets.len()
                );
            }
        }
        if self.agent.recall_phase >= self.n_phases() {
            bail!(
                "[agent] recall_phase {} out of range for {} phases",
                self.agent.recall_phase,
                self.n_phases()
            );
        }
        Ok(())
    }

    pub fn method(&self) -> Result<Method> {
        Method::parse(&self.agent.method)
    }

    pub fn arrival_model(&self) -> Result<ArrivalModel> {
        match self.network.demand.model.as_str() {
            "poisson" => Ok(ArrivalModel::Poisson),
            "periodic" => Ok(ArrivalModel::Periodic),
            other => bail!("[network.demand] unknown model {other:?} (poisson or periodic)"),
        }
    }

    pub fn n_phases(&self) -> usize {
        if self.signal.scheme == "two-phase" {
            2
        } else {
            4
        }
    }

    pub fn corridor(&self) -> CorridorConfig {
        CorridorConfig {
            intersections: self.network.intersections,
            link_length: self.network.link_length,
            free_flow: self.network.free_flow,
            jam_spacing: self.network.jam_spacing,
            sat_flow: self.network.sat_flow,
            main_lanes: self.network.main_lanes,
            side_lanes: self.network.side_lanes,
            main_turns: self.network.main_turns,
            side_turns: self.network.side_turns,
        }
    }

    pub fn build_scheme(&self) -> PhaseScheme {
        let t = Timings {
            min_green: self.signal.min_green,
            max_green: self.signal.max_green,
            yellow: self.signal.yellow,
            all_red: self.signal.all_red,
        };
        let matrix = if self.signal.transitions == "cyclic" {
            TransitionMatrix::Cyclic
        } else {
            TransitionMatrix::All
        };
        if self.signal.scheme == "two-phase" {
            PhaseScheme::two_phase(t, matrix)
        } else {
            PhaseScheme::four_phase(t, matrix)
        }
    }

    pub fn build_demand(&self) -> Result<DemandSpec> {
        Ok(DemandSpec {
            model: self.arrival_model()?,
            main: profile_from_pairs(&self.network.demand.main),
            side: profile_from_pairs(&self.network.demand.side),
        })
    }

    pub fn env_params(&self) -> EnvParams {
        EnvParams {
            detection_range: self.env.detection_range,
            queue_speed_threshold: self.env.queue_speed_threshold,
            episode_len: self.env.episode_len,
            dt: self.env.dt,
            log_steps: false,
        }
    }

    /// Builds a fresh environment (the full validation pass).
    pub fn build_env(&self) -> Result<Env> {
        let net = Network::corridor(&self.corridor()).context("building corridor")?;
        let env = Env::new(net, self.build_scheme(), self.build_demand()?, self.env_params())
            .context("assembling environment")?;
        Ok(env)
    }

    /// Fixed-time plans, one per intersection.
    pub fn fixed_time_plans(&self) -> Result<Vec<FixedTimePlan>> {
        let ft = self
            .signal
            .fixed_time
            .as_ref()
            .context("[signal.fixed_time] section required for the fixed-time baseline")?;
        let entries: Vec<(usize, f64)> = ft.phases.iter().map(|&[p, g]| (p as usize, g)).collect();
        let n = self.network.intersections;
        let mut plans = Vec::with_capacity(n);
        for i in 0..n {
            let mut plan = FixedTimePlan::new(entries.clone());
            plan.offset = match ft.offsets.len() {
                0 => 0.0,
                1 => ft.offsets[0] * i as f64,
                _ => ft.offsets[i],
            };
            plans.push(plan);
        }
        Ok(plans)
    }

    /// The learner configuration for `method`, shaped to this
    /// environment. Errors for the non-learning baselines.
    pub fn agent_config(&self, method: Method, env: &Env) -> Result<AgentConfig> {
        let (n_blocks, history, use_messages) = match method {
            Method::Transformer => (self.agent.n_blocks, self.agent.history, true),
            Method::DqnTransformer => (self.agent.n_blocks, self.agent.history, false),
            Method::EmarlinNoHistory => (self.agent.n_blocks, 1, true),
            Method::MemorylessDqn => (0, 1, false),
            _ => bail!("{} does not train an agent", method.label()),
        };
        let ctx = &env.contexts()[0];
        let input_dim = 2 * ctx.lanes.len() + env.scheme().n_phases() + 2;
        let cfg = AgentConfig {
            encoder: EncoderConfig {
                input_dim,
                d_model: self.agent.d_model,
                n_heads: self.agent.n_heads,
                d_ff: self.agent.d_ff,
                n_blocks,
                max_len: history,
            },
            head: QHeadConfig {
                d_model: self.agent.d_model,
                hidden: self.agent.hidden,
                n_actions: ctx.n_actions,
            },
            use_messages,
            gamma: self.agent.gamma,
            lr: self.agent.lr,
            reward_scale: self.agent.reward_scale,
            target_sync: self.agent.target_sync,
            eps_start: self.agent.eps_start,
            eps_end: self.agent.eps_end,
            eps_decay_steps: self.agent.eps_decay_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The training-loop knobs for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            episodes: self.run.train_episodes,
            warmup_episodes: self.run.warmup_episodes,
            train_every: self.run.train_every,
            batch: self.run.batch,
            buffer_episodes: self.run.buffer_episodes,
            master: seed,
        }
    }
}
