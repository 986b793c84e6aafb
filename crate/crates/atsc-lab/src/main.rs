//! Command-line entry point: train agents, evaluate methods, compare
//! reports, and inspect resolved configurations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use atsc_lab::config::ExperimentConfig;
use atsc_lab::methods::Method;
use atsc_lab::report::{parse_report, render_comparison, render_report, MethodEval, SeedEval};
use atsc_lab::runner::{eval_method, seed_dir, train_seed, write_metrics};
use atsc_nn::Scalar;

#[derive(Parser)]
#[command(name = "atsc-lab", about = "Adaptive traffic-signal control laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Numeric profile for training and evaluation.
#[derive(Copy, Clone, Debug, ValueEnum)]
enum Profile {
    /// f64 everywhere: bit-reproducible runs, gradient checks.
    Test64,
    /// f32 parameters and arithmetic: faster wall-clock training.
    Train32,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured method, one run per seed.
    Train {
        config: PathBuf,
        /// Train only this seed instead of every seed in the config.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Override the number of training episodes.
        #[arg(long)]
        episodes: Option<u64>,
        /// Output directory (defaults to the config's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test64")]
        profile: Profile,
        /// Continue from the newest checkpoint in each seed directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate methods over held-out episodes and write a delay report.
    Eval {
        config: PathBuf,
        /// Where trained checkpoints live (defaults to the output dir).
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Comma-separated methods to evaluate (default: the config's).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long)]
        seed_override: Option<u64>,
        /// Override the number of evaluation episodes.
        #[arg(long)]
        episodes: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test64")]
        profile: Profile,
    },
    /// Merge delay reports and compare methods against a base.
    Compare {
        reports: Vec<PathBuf>,
        /// Base method for percent-reduction figures.
        #[arg(long, default_value = "fixed-time")]
        base: String,
    },
    /// Parse a config, validate it, and print the resolved experiment.
    InspectConfig { config: PathBuf },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            config,
            seed_override,
            episodes,
            out,
            profile,
            resume,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.run.out_dir));
            match profile {
                Profile::Test64 => train_all::<f64>(&cfg, seed_override, episodes, &out, resume),
                Profile::Train32 => train_all::<f32>(&cfg, seed_override, episodes, &out, resume),
            }
        }
        Command::Eval {
            config,
            checkpoint_dir,
            methods,
            seed_override,
            episodes,
            out,
            profile,
        } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let out = out.unwrap_or_else(|| PathBuf::from(&cfg.run.out_dir));
            let ckpt = checkpoint_dir.unwrap_or_else(|| out.clone());
            let methods = resolve_methods(&cfg, &methods)?;
            match profile {
                Profile::Test64 => {
                    eval_all::<f64>(&cfg, &methods, seed_override, episodes, &out, &ckpt)
                }
                Profile::Train32 => {
                    eval_all::<f32>(&cfg, &methods, seed_override, episodes, &out, &ckpt)
                }
            }
        }
        Command::Compare { reports, base } => compare(&reports, &base),
        Command::InspectConfig { config } => inspect(&config),
    }
}

fn seeds_to_run(cfg: &ExperimentConfig, seed_override: Option<u64>) -> Vec<u64> {
    match seed_override {
        Some(s) => vec![s],
        None => cfg.run.seeds.clone(),
    }
}

fn resolve_methods(cfg: &ExperimentConfig, names: &[String]) -> Result<Vec<Method>> {
    if names.is_empty() {
        return Ok(vec![cfg.method()?]);
    }
    names.iter().map(|n| Method::parse(n)).collect()
}

fn train_all<S: Scalar>(
    cfg: &ExperimentConfig,
    seed_override: Option<u64>,
    episodes: Option<u64>,
    out: &Path,
    resume: bool,
) -> Result<()> {
    let method = cfg.method()?;
    let seeds = seeds_to_run(cfg, seed_override);
    if !method.is_learning() {
        // Nothing to fit; fall through to a plain evaluation so the verb
        // still produces metrics for hand-written controllers.
        println!("{method} has no trainable parameters; evaluation-only pipeline engaged");
        return eval_all::<S>(cfg, &[method], seed_override, None, out, out);
    }
    for seed in seeds {
        let run = train_seed::<S>(cfg, method, seed, episodes, out, resume)?;
        let last = run
            .metrics
            .last()
            .map(|m| format!("{:.3}", m.delay_total))
            .unwrap_or_else(|| "-".into());
        println!(
            "trained {method} seed {seed}: {} episodes, final delay {last} veh*s -> {}",
            run.metrics.len(),
            run.checkpoint.display()
        );
    }
    Ok(())
}

fn eval_all<S: Scalar>(
    cfg: &ExperimentConfig,
    methods: &[Method],
    seed_override: Option<u64>,
    episodes: Option<u64>,
    out: &Path,
    ckpt: &Path,
) -> Result<()> {
    let seeds = seeds_to_run(cfg, seed_override);
    let episodes = episodes.unwrap_or(cfg.run.eval_episodes);
    let n = cfg.network.intersections;
    let mut evals = Vec::new();
    for &method in methods {
        let mut seed_evals = Vec::new();
        for &seed in &seeds {
            let metrics = eval_method::<S>(cfg, method, seed, episodes, ckpt)?;
            let dir = seed_dir(out, method, seed);
            fs::create_dir_all(&dir)?;
            write_metrics(&dir.join("eval_metrics.csv"), n, &metrics)?;
            seed_evals.push(SeedEval::from_metrics(seed, &metrics)?);
        }
        evals.push(MethodEval {
            method,
            seeds: seed_evals,
        });
    }
    let report = render_report(&evals)?;
    fs::create_dir_all(out)?;
    let path = out.join("report.csv");
    fs::write(&path, &report).with_context(|| format!("writing {}", path.display()))?;
    print!("{report}");
    println!("report -> {}", path.display());
    Ok(())
}

fn compare(reports: &[PathBuf], base: &str) -> Result<()> {
    if reports.is_empty() {
        bail!("compare needs at least one report file");
    }
    let base = Method::parse(base)?;
    let mut merged: Vec<MethodEval> = Vec::new();
    for path in reports {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for me in parse_report(&text)? {
            match merged.iter_mut().find(|m| m.method == me.method) {
                Some(existing) => existing.seeds.extend(me.seeds),
                None => merged.push(me),
            }
        }
    }
    print!("{}", render_comparison(&merged, base)?);
    Ok(())
}

fn inspect(config: &Path) -> Result<()> {
    let cfg = ExperimentConfig::from_path(config)?;
    let env = cfg.build_env()?;
    let method = cfg.method()?;
    println!("method: {method}");
    println!(
        "network: {} intersections, {:.0} m links, {}+{} approach lanes",
        cfg.network.intersections, cfg.network.link_length, cfg.network.main_lanes, cfg.network.side_lanes
    );
    println!(
        "signal: {} ({} transitions), green {:.0}-{:.0} s, yellow {:.0} s, all-red {:.0} s",
        cfg.signal.scheme,
        cfg.signal.transitions,
        cfg.signal.min_green,
        cfg.signal.max_green,
        cfg.signal.yellow,
        cfg.signal.all_red
    );
    println!(
        "env: {:.0} m detection range, {:.0} s episodes, dt {:.1} s",
        cfg.env.detection_range, cfg.env.episode_len, cfg.env.dt
    );
    if method.is_learning() {
        let acfg = cfg.agent_config(method, &env)?;
        println!(
            "agent: obs {} -> d_model {} ({} blocks, {} heads, history {}), {} actions",
            acfg.encoder.input_dim,
            acfg.encoder.d_model,
            acfg.encoder.n_blocks,
            acfg.encoder.n_heads,
            acfg.encoder.max_len,
            acfg.head.n_actions
        );
        println!(
            "agent: messages {}, gamma {}, lr {}, reward scale {}",
            if acfg.use_messages { "on" } else { "off" },
            acfg.gamma,
            acfg.lr,
            acfg.reward_scale
        );
    }
    println!(
        "run: seeds {:?}, {} train + {} eval episodes, warm-up {}, out {}",
        cfg.run.seeds,
        cfg.run.train_episodes,
        cfg.run.eval_episodes,
        cfg.run.warmup_episodes,
        cfg.run.out_dir
    );
    Ok(())
}
