//! Seeded training and evaluation runs with checkpointed, exactly
//! resumable training.
//!
//! A checkpoint written at an episode boundary captures everything the
//! remainder of the run depends on — parameter stores, optimizer
//! moments, step counters, and the replay buffer (as a sidecar next to
//! the checkpoint). Because per-episode randomness comes from streams
//! derived only from (seed, purpose, episode index), restoring that
//! state and continuing reproduces the uninterrupted run bit for bit in
//! the 64-bit profile.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use atsc_agents::baselines::{run_actuated, run_fixed_time, run_random};
use atsc_agents::{
    run_greedy, train_episode, AgentConfig, AgentNet, Episode, EpisodeMetrics, ReplayBuffer,
    TrainState,
};
use atsc_nn::checkpoint::Checkpoint;
use atsc_nn::{AdamState, Scalar};
use atsc_sim::rng::stream;

use crate::config::ExperimentConfig;
use crate::methods::Method;

/// Output directory for one (method, seed) pair.
pub fn seed_dir(out: &Path, method: Method, seed: u64) -> PathBuf {
    out.join(method.label()).join(format!("seed{seed}"))
}

/// Fresh agents, one per intersection, each initialized from its own
/// named stream so layouts and weights depend only on (seed, agent).
pub fn build_nets<S: Scalar>(acfg: &AgentConfig, n: usize, seed: u64) -> Result<Vec<AgentNet<S>>> {
    (0..n)
        .map(|i| {
            AgentNet::new(acfg.clone(), &mut stream(seed, &format!("init.a{i}")))
                .map_err(anyhow::Error::from)
        })
        .collect()
}

// ---------------------------------------------------------------------
// Checkpoint encoding
// ---------------------------------------------------------------------

/// Packs nets and training progress into a checkpoint image.
pub fn checkpoint_of<S: Scalar>(nets: &[AgentNet<S>], state: &TrainState) -> Checkpoint<S> {
    let mut ckpt = Checkpoint::new();
    ckpt.scalars.push(("n_agents".into(), nets.len() as f64));
    ckpt.scalars
        .push(("global_steps".into(), state.global_steps as f64));
    ckpt.scalars
        .push(("episodes_done".into(), state.episodes_done as f64));
    for (i, net) in nets.iter().enumerate() {
        ckpt.stores
            .push((format!("a{i}.online"), net.online.clone()));
        ckpt.stores
            .push((format!("a{i}.target"), net.target.clone()));
        ckpt.moments.push((format!("a{i}.m"), net.adam.m.clone()));
        ckpt.moments.push((format!("a{i}.v"), net.adam.v.clone()));
        ckpt.scalars
            .push((format!("a{i}.adam_step"), net.adam.step as f64));
        ckpt.scalars
            .push((format!("a{i}.train_steps"), net.train_steps as f64));
    }
    ckpt
}

/// Rebuilds the agents (and progress counters) from a checkpoint image.
pub fn nets_from_checkpoint<S: Scalar>(
    ckpt: &Checkpoint<S>,
    acfg: &AgentConfig,
) -> Result<(Vec<AgentNet<S>>, u64, u64)> {
    let n = ckpt.scalar("n_agents")? as usize;
    let global_steps = ckpt.scalar("global_steps")? as u64;
    let episodes_done = ckpt.scalar("episodes_done")? as u64;
    let mut nets = Vec::with_capacity(n);
    for i in 0..n {
        let online = ckpt.store(&format!("a{i}.online"))?.clone();
        let target = ckpt.store(&format!("a{i}.target"))?.clone();
        let mut adam = AdamState::new(&online, acfg.lr);
        let m = ckpt.moment_group(&format!("a{i}.m"))?;
        let v = ckpt.moment_group(&format!("a{i}.v"))?;
        if m.len() != adam.m.len() || v.len() != adam.v.len() {
            bail!("checkpoint moment groups do not match the parameter layout");
        }
        adam.m = m.clone();
        adam.v = v.clone();
        adam.step = ckpt.scalar(&format!("a{i}.adam_step"))? as u64;
        let train_steps = ckpt.scalar(&format!("a{i}.train_steps"))? as u64;
        nets.push(AgentNet::restore(
            acfg.clone(),
            online,
            target,
            adam,
            train_steps,
        )?);
    }
    Ok((nets, global_steps, episodes_done))
}

// ---------------------------------------------------------------------
// Replay-buffer sidecar
// ---------------------------------------------------------------------

const BUFFER_MAGIC: &[u8; 8] = b"ATSCRBUF";

/// Serializes the replay buffer (raw little-endian, bit-exact round
/// trip) so a resumed run trains on exactly the transitions the
/// interrupted one held.
pub fn buffer_to_bytes(buffer: &ReplayBuffer) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BUFFER_MAGIC);
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(buffer.n_episodes() as u32).to_le_bytes());
    for e in 0..buffer.n_episodes() {
        let ep = buffer.episode(e);
        let t = ep.len();
        let n = ep.obs[0].len();
        let dim = ep.obs[0][0].len();
        let n_actions = if t > 0 { ep.next_masks[0][0].len() } else { 0 };
        for v in [t as u32, n as u32, dim as u32, n_actions as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for row in &ep.obs {
            for agent in row {
                debug_assert_eq!(agent.len(), dim);
                for &x in agent {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        for step in &ep.actions {
            for &a in step {
                out.extend_from_slice(&(a as u32).to_le_bytes());
            }
        }
        for step in &ep.rewards {
            for &r in step {
                out.extend_from_slice(&r.to_le_bytes());
            }
        }
        for step in &ep.next_masks {
            for agent in step {
                for &ok in agent {
                    out.push(ok as u8);
                }
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            bail!("replay sidecar truncated");
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Inverse of [`buffer_to_bytes`]; `capacity` comes from the run config.
pub fn buffer_from_bytes(bytes: &[u8], capacity: usize) -> Result<ReplayBuffer> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8)? != BUFFER_MAGIC {
        bail!("replay sidecar has a bad magic header");
    }
    let version = cur.u32()?;
    if version != 1 {
        bail!("unsupported replay sidecar version {version}");
    }
    let n_eps = cur.u32()? as usize;
    let mut buffer = ReplayBuffer::new(capacity);
    for _ in 0..n_eps {
        let t = cur.u32()? as usize;
        let n = cur.u32()? as usize;
        let dim = cur.u32()? as usize;
        let n_actions = cur.u32()? as usize;
        let mut obs = Vec::with_capacity(t + 1);
        for _ in 0..=t {
            let mut row = Vec::with_capacity(n);
            for _ in 0..n {
                let mut agent = Vec::with_capacity(dim);
                for _ in 0..dim {
                    agent.push(cur.f64()?);
                }
                row.push(agent);
            }
            obs.push(row);
        }
        let mut actions = Vec::with_capacity(t);
        for _ in 0..t {
            let mut step = Vec::with_capacity(n);
            for _ in 0..n {
                step.push(cur.u32()? as usize);
            }
            actions.push(step);
        }
        let mut rewards = Vec::with_capacity(t);
        for _ in 0..t {
            let mut step = Vec::with_capacity(n);
            for _ in 0..n {
                step.push(cur.f64()?);
            }
            rewards.push(step);
        }
        let mut next_masks = Vec::with_capacity(t);
        for _ in 0..t {
            let mut step = Vec::with_capacity(n);
            for _ in 0..n {
                let raw = cur.take(n_actions)?;
                step.push(raw.iter().map(|&b| b != 0).collect());
            }
            next_masks.push(step);
        }
        let mut ep = Episode::start(obs.remove(0));
        for k in 0..t {
            ep.push(
                actions[k].clone(),
                rewards[k].clone(),
                obs[k].clone(),
                next_masks[k].clone(),
            );
        }
        buffer.push(ep);
    }
    if cur.pos != bytes.len() {
        bail!("replay sidecar has trailing bytes");
    }
    Ok(buffer)
}

// ---------------------------------------------------------------------
// Metrics files
// ---------------------------------------------------------------------

/// Header for per-episode metrics files.
fn metrics_header(n_intersections: usize) -> String {
    let mut h = String::from("episode,delay_total");
    for i in 0..n_intersections {
        h.push_str(&format!(",delay_i{i}"));
    }
    h.push_str(",entered,exited,reward_total,mean_loss,trace_digest");
    h
}

/// One fixed-format metrics row; the formatting is part of the output
/// contract (byte-identical reruns).
fn metrics_row(m: &EpisodeMetrics) -> String {
    let mut row = format!("{},{:.3}", m.episode, m.delay_total);
    for d in &m.delay {
        row.push_str(&format!(",{d:.3}"));
    }
    row.push_str(&format!(
        ",{},{},{:.3},{:.6},{:016x}",
        m.entered, m.exited, m.reward_total, m.mean_loss, m.trace_digest
    ));
    row
}

/// Writes a complete metrics file (header plus one row per episode).
pub fn write_metrics(path: &Path, n_intersections: usize, rows: &[EpisodeMetrics]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", metrics_header(n_intersections))?;
    for m in rows {
        writeln!(w, "{}", metrics_row(m))?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------

/// What one seed's training produced.
pub struct SeedRun {
    pub seed: u64,
    /// Metrics for every episode of the completed run, including any
    /// replayed from a resumed metrics file.
    pub metrics: Vec<EpisodeMetrics>,
    pub checkpoint: PathBuf,
}

fn checkpoint_path(dir: &Path, tag: &str) -> PathBuf {
    dir.join(format!("checkpoint_{tag}.bin"))
}

fn sidecar_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("buf")
}

fn write_checkpoint<S: Scalar>(
    dir: &Path,
    tag: &str,
    nets: &[AgentNet<S>],
    state: &TrainState,
) -> Result<PathBuf> {
    let path = checkpoint_path(dir, tag);
    let ckpt = checkpoint_of(nets, state);
    ckpt.save(&path)
        .with_context(|| format!("writing {}", path.display()))?;
    fs::write(sidecar_path(&path), buffer_to_bytes(&state.buffer))?;
    Ok(path)
}

/// Picks the checkpoint with the most completed episodes in `dir`
/// (filename tags `ep<N>` and `final` both count; `final` is read for
/// its scalar). Returns `None` when the directory holds none.
fn latest_checkpoint<S: Scalar>(dir: &Path) -> Result<Option<(PathBuf, Checkpoint<S>)>> {
    let mut best: Option<(u64, PathBuf, Checkpoint<S>)> = None;
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(_) => return Ok(None),
    };
    for entry in entries {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        if !(name.starts_with("checkpoint_") && name.ends_with(".bin")) {
            continue;
        }
        let ckpt = Checkpoint::<S>::load(&path)
            .map_err(|e| anyhow::anyhow!("loading {}: {e}", path.display()))?;
        let done = ckpt.scalar("episodes_done")? as u64;
        if best.as_ref().map_or(true, |(b, _, _)| done > *b) {
            best = Some((done, path, ckpt));
        }
    }
    Ok(best.map(|(_, p, c)| (p, c)))
}

/// Trains one seed of a learning method, checkpointing at the configured
/// cadence and writing `train_metrics.csv`. With `resume`, continues
/// from the newest checkpoint in the seed directory (exact continuation:
/// nets, optimizer, counters, and replay buffer are all restored).
pub fn train_seed<S: Scalar>(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    episodes_override: Option<u64>,
    out: &Path,
    resume: bool,
) -> Result<SeedRun> {
    if !method.is_learning() {
        bail!("{method} does not train; evaluate it directly");
    }
    let mut env = cfg.build_env()?;
    let n = env.n_agents();
    let acfg = cfg.agent_config(method, &env)?;
    let mut tc = cfg.train_config(seed);
    if let Some(e) = episodes_override {
        tc.episodes = e;
    }

    let dir = seed_dir(out, method, seed);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut state = TrainState::fresh(&tc);
    let mut nets: Vec<AgentNet<S>>;
    let mut metrics: Vec<EpisodeMetrics> = Vec::new();
    if resume {
        match latest_checkpoint::<S>(&dir)? {
            Some((path, ckpt)) => {
                let (restored, global_steps, episodes_done) = nets_from_checkpoint(&ckpt, &acfg)?;
                nets = restored;
                state.global_steps = global_steps;
                state.episodes_done = episodes_done;
                let sidecar = sidecar_path(&path);
                if sidecar.exists() {
                    state.buffer = buffer_from_bytes(&fs::read(&sidecar)?, tc.buffer_episodes)?;
                }
                metrics = read_metrics_rows(&dir.join("train_metrics.csv"), episodes_done)?;
            }
            None => nets = build_nets(&acfg, n, seed)?,
        }
    } else {
        nets = build_nets(&acfg, n, seed)?;
    }

    while state.episodes_done < tc.episodes {
        let m = train_episode(&mut env, &mut nets, &tc, &mut state)?;
        metrics.push(m);
        let cad = cfg.run.checkpoint_every;
        if cad > 0 && state.episodes_done % cad == 0 && state.episodes_done < tc.episodes {
            write_checkpoint(&dir, &format!("ep{}", state.episodes_done), &nets, &state)?;
        }
    }
    let checkpoint = write_checkpoint(&dir, "final", &nets, &state)?;
    write_metrics(&dir.join("train_metrics.csv"), n, &metrics)?;
    Ok(SeedRun {
        seed,
        metrics,
        checkpoint,
    })
}

/// Reads back the first `limit` rows of a metrics file written by
/// [`write_metrics`] so a resumed run's file stays complete. Only the
/// fields the report needs are recovered; the full row text is rebuilt
/// from them (the format is fixed, so this is lossless).
fn read_metrics_rows(path: &Path, limit: u64) -> Result<Vec<EpisodeMetrics>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 7 {
            bail!("malformed metrics row in {}: {line:?}", path.display());
        }
        let episode: u64 = fields[0].parse()?;
        if episode >= limit {
            break;
        }
        let n_i = fields.len() - 7;
        let delay: Vec<f64> = fields[2..2 + n_i]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()?;
        rows.push(EpisodeMetrics {
            episode,
            delay_total: fields[1].parse()?,
            delay,
            entered: fields[2 + n_i].parse()?,
            exited: fields[3 + n_i].parse()?,
            reward_total: fields[4 + n_i].parse()?,
            mean_loss: fields[5 + n_i].parse()?,
            trace_digest: u64::from_str_radix(fields[6 + n_i], 16)?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------

/// Evaluates one method for one seed over `episodes` held-out episodes.
/// Learning methods load their final checkpoint from `ckpt_root`.
pub fn eval_method<S: Scalar>(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    episodes: u64,
    ckpt_root: &Path,
) -> Result<Vec<EpisodeMetrics>> {
    let mut env = cfg.build_env()?;
    let metrics = match method {
        Method::FixedTime => {
            let plans = cfg.fixed_time_plans()?;
            run_fixed_time(&mut env, &plans, seed, episodes)?
        }
        Method::Actuated => run_actuated(
            &mut env,
            cfg.agent.gap,
            cfg.agent.recall_phase,
            seed,
            episodes,
        )?,
        Method::Random => run_random(&mut env, seed, episodes)?,
        _ => {
            let acfg = cfg.agent_config(method, &env)?;
            let path = checkpoint_path(&seed_dir(ckpt_root, method, seed), "final");
            let ckpt = Checkpoint::<S>::load(&path)
                .map_err(|e| anyhow::anyhow!("loading checkpoint {}: {e}", path.display()))?;
            let (mut nets, _, _) = nets_from_checkpoint(&ckpt, &acfg)?;
            run_greedy(&mut env, &mut nets, seed, episodes)?
        }
    };
    Ok(metrics)
}
