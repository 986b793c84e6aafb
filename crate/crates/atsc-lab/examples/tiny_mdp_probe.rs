//! Prints the exhaustively optimal action sequence for the short-horizon
//! single-intersection episode next to the trained policy's greedy
//! sequence, with the network queue at every step. Usage:
//!
//!   tiny_mdp_probe <config.toml> <checkpoint-root> <seed>

use std::path::Path;

use anyhow::{Context, Result};
use atsc_agents::buffer::history_at;
use atsc_agents::{select_action, Episode, EVAL_EPISODE_OFFSET};
use atsc_lab::runner::nets_from_checkpoint;
use atsc_lab::ExperimentConfig;
use atsc_nn::checkpoint::Checkpoint;
use atsc_sim::rng::stream;
use atsc_sim::Env;

fn replay(env: &mut Env, master: u64, ep: u64, actions: &[usize]) -> Result<(f64, Vec<usize>)> {
    let mut res = env.reset(master, ep);
    let mut queues = vec![res.queue_total];
    for &a in actions {
        res = env.step(&[a])?;
        queues.push(res.queue_total);
    }
    Ok((res.delay[0], queues))
}

fn best_sequence(env: &mut Env, master: u64, ep: u64) -> Result<(f64, Vec<usize>)> {
    fn descend(
        env: &mut Env,
        master: u64,
        ep: u64,
        prefix: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>),
    ) -> Result<()> {
        let mut res = env.reset(master, ep);
        for &a in prefix.iter() {
            res = env.step(&[a])?;
        }
        if res.done {
            if res.delay[0] < best.0 {
                *best = (res.delay[0], prefix.clone());
            }
            return Ok(());
        }
        let mask = res.masks[0].clone();
        for a in 0..mask.len() {
            if mask[a] {
                prefix.push(a);
                descend(env, master, ep, prefix, best)?;
                prefix.pop();
            }
        }
        Ok(())
    }
    let mut best = (f64::INFINITY, Vec::new());
    descend(env, master, ep, &mut Vec::new(), &mut best)?;
    Ok(best)
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let cfg = ExperimentConfig::from_path(Path::new(&args[1]))?;
    let root = Path::new(&args[2]);
    let seed: u64 = args[3].parse()?;
    let ep = EVAL_EPISODE_OFFSET;

    let mut env = cfg.build_env()?;
    let (opt_delay, opt_seq) = best_sequence(&mut env, seed, ep)?;
    let (_, opt_queues) = replay(&mut env, seed, ep, &opt_seq)?;

    // Greedy rollout, recording the chosen sequence.
    let method = cfg.method()?;
    let acfg = cfg.agent_config(method, &env)?;
    let ckpt_path = atsc_lab::runner::seed_dir(root, method, seed).join("checkpoint_final.bin");
    let ckpt = Checkpoint::<f64>::load(&ckpt_path)
        .with_context(|| format!("loading {}", ckpt_path.display()))?;
    let (mut nets, _, _) = nets_from_checkpoint(&ckpt, &acfg)?;
    let mut res = env.reset(seed, ep);
    let mut epi = Episode::start(res.obs.clone());
    let mut greedy_seq = Vec::new();
    let mut rng = stream(seed, "probe.greedy");
    while !res.done {
        let t = epi.obs.len() - 1;
        let h = history_at(&epi, 0, t, acfg.encoder.max_len);
        let own = nets[0].encode_online(&h)?;
        let q = nets[0].q_online(&own, None, None)?;
        let a = select_action(&q, &res.masks[0], 0.0, &mut rng);
        greedy_seq.push(a);
        res = env.step(&[a])?;
        epi.push(vec![a], res.rewards.clone(), res.obs.clone(), res.masks.clone());
    }
    let greedy_delay = res.delay[0];
    let (_, greedy_queues) = replay(&mut env, seed, ep, &greedy_seq)?;

    let fmt = |seq: &[usize]| -> String { seq.iter().map(|a| a.to_string()).collect::<String>() };
    println!("seed {seed} optimum {opt_delay:.0}  greedy {greedy_delay:.0}");
    println!("  opt    actions: {}", fmt(&opt_seq));
    println!("  greedy actions: {}", fmt(&greedy_seq));
    println!("  opt    queues:  {:?}", opt_queues);
    println!("  greedy queues:  {:?}", greedy_queues);
    Ok(())
}
