//! Diagnostic: load a trained checkpoint, run one greedy episode, and
//! print how the policy allocates green time versus the actuated
//! controller. Usage:
//!
//! ```text
//! cargo run --release -p atsc-lab --example policy_probe -- <config> <ckpt_root> <seed>
//! ```

use std::path::PathBuf;

use anyhow::{Context, Result};

use atsc_agents::baselines::run_actuated;
use atsc_agents::select_action;
use atsc_lab::config::ExperimentConfig;
use atsc_lab::methods::Method;
use atsc_lab::runner::{eval_method, nets_from_checkpoint, seed_dir};
use atsc_nn::checkpoint::Checkpoint;
use atsc_sim::signal::IntervalKind;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let cfg = ExperimentConfig::from_path(&PathBuf::from(&args[1]))?;
    let root = PathBuf::from(&args[2]);
    let seed: u64 = args[3].parse()?;
    let method = cfg.method()?;

    let mut env = cfg.build_env()?;
    let acfg = cfg.agent_config(method, &env)?;
    let path = seed_dir(&root, method, seed).join("checkpoint_final.bin");
    let ckpt = Checkpoint::<f64>::load(&path)
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let (mut nets, _, _) = nets_from_checkpoint(&ckpt, &acfg)?;

    // Instrumented greedy episode: count green seconds per phase and
    // action switches, sample queue totals.
    let n_phases = env.scheme().n_phases();
    let mut green = vec![vec![0u32; n_phases]; env.n_agents()];
    let mut transitions = vec![0u32; env.n_agents()];
    let mut queue_series = Vec::new();
    {
        use atsc_agents::buffer::{history_at, Episode};
        let mut res = env.reset(seed, 1_000_000);
        let mut ep = Episode::start(res.obs.clone());
        let neighbors: Vec<(Option<usize>, Option<usize>)> = env
            .contexts()
            .iter()
            .map(|c| (c.upstream, c.downstream))
            .collect();
        let mut rng = atsc_sim::rng::stream(seed, "probe");
        loop {
            let t = ep.obs.len() - 1;
            // Own encodings as messages.
            let msgs: Vec<Vec<f64>> = (0..env.n_agents())
                .map(|i| {
                    let h = history_at(&ep, i, t, nets[i].cfg.encoder.max_len);
                    nets[i].encode_online(&h).unwrap()
                })
                .collect();
            let mut actions = Vec::new();
            for i in 0..env.n_agents() {
                let up = neighbors[i].0.map(|j| msgs[j].clone());
                let down = neighbors[i].1.map(|j| msgs[j].clone());
                let q = nets[i]
                    .q_online(
                        &msgs[i],
                        if nets[i].cfg.use_messages { up.as_deref() } else { None },
                        if nets[i].cfg.use_messages { down.as_deref() } else { None },
                    )
                    .unwrap();
                actions.push(select_action(&q, &res.masks[i], 0.0, &mut rng));
            }
            for (i, iv) in env.signals().iter().enumerate() {
                if iv.kind == IntervalKind::Green {
                    green[i][iv.phase] += 1;
                } else {
                    transitions[i] += 1;
                }
            }
            res = env.step(&actions)?;
            if res.clock % 120 == 0 {
                queue_series.push(res.queue_total);
            }
            ep.push(actions.clone(), res.rewards.clone(), res.obs.clone(), res.masks.clone());
            if res.done {
                break;
            }
        }
        println!("greedy {method} seed {seed}:");
        for i in 0..env.n_agents() {
            println!(
                "  agent {i}: green per phase {:?} s, transition time {} s",
                green[i], transitions[i]
            );
        }
        println!("  queue totals every 120 s: {queue_series:?}");
        for i in 0..env.n_agents() {
            println!("  delay i{i}: {:.0}", env.intersection_delay(i)?);
        }
    }

    // Actuated contrast.
    let mut env2 = cfg.build_env()?;
    let m = run_actuated(&mut env2, cfg.agent.gap, cfg.agent.recall_phase, seed, 1)?;
    println!(
        "actuated: delay {:?} (total {:.0})",
        m[0].delay, m[0].delay_total
    );
    let metrics = eval_method::<f64>(&cfg, Method::FixedTime, seed, 1, &root)
        .context("fixed-time eval")?;
    println!(
        "fixed-time: delay {:?} (total {:.0})",
        metrics[0].delay, metrics[0].delay_total
    );
    Ok(())
}
