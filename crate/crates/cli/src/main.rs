use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qmix_dsa::baselines::oracle_upper_bound;
use qmix_dsa::envsim::ChannelEnvironment;
use qmix_dsa::harness::{
    evaluate, export_plot, gradient_checks, resume_experiment, run_experiment, Checkpoint, ExperimentConfig,
    OUTPUT_DIR_ENV,
};
use qmix_dsa::qmixcore::{EpisodeMetrics, ModelDims};
use qmix_dsa::{Category, Error, Result};

#[derive(Parser)]
#[command(name = "qmix-dsa", version, about = "Multi-agent dynamic spectrum access with QMIX")]
#[command(after_help = format!("The output directory of `train` can be overridden with {OUTPUT_DIR_ENV}."))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML config; writes metrics.csv and checkpoints.
    Train {
        config: PathBuf,
        /// Continue from this checkpoint instead of starting fresh (the config's
        /// epoch_max and output_dir replace the saved ones).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy rollouts of a checkpoint.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        /// Evaluate in this environment instead of the checkpoint's own.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Capacity bound of the configured environment.
    Oracle {
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
    },
    /// Finite-difference gradient checks on a small seeded model.
    Gradcheck {
        #[arg(long, default_value_t = 4)]
        channels: usize,
        #[arg(long, default_value_t = 2)]
        sensed: usize,
        #[arg(long, default_value_t = 2)]
        users: usize,
        #[arg(long, default_value_t = 5)]
        slots: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Render a metrics CSV as an SVG chart.
    Plot { csv: PathBuf, svg: PathBuf },
}

fn exit_code(c: Category) -> u8 {
    match c {
        Category::Usage => 64,
        Category::Data => 65,
        Category::Configuration => 78,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            eprintln!("error category: usage");
            return ExitCode::from(exit_code(Category::Usage));
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            eprintln!("error category: {}", e.category());
            ExitCode::from(exit_code(e.category()))
        }
    }
}

fn summarize(label: &str, results: &[EpisodeMetrics], users: usize, slots: usize) {
    let n = results.len().max(1) as f64;
    let rate = results.iter().map(|m| m.success_rate).sum::<f64>() / n;
    let oracle = results.iter().map(|m| m.oracle_fraction(users, slots)).sum::<f64>() / n;
    let successes = results.iter().map(|m| m.successes as f64).sum::<f64>() / n;
    let collisions = results.iter().map(|m| m.collisions as f64).sum::<f64>() / n;
    println!("{label}: episodes={} success_rate={rate:.4} oracle_fraction={oracle:.4} ratio={:.4} successes/episode={successes:.2} collisions/episode={collisions:.2}",
        results.len(),
        if oracle > 0.0 { rate / oracle } else { 0.0 });
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, resume } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = match resume {
                None => run_experiment(&cfg)?,
                Some(path) => {
                    let mut ckpt = Checkpoint::load(&path)?;
                    if cfg.dims() != ckpt.config.dims() {
                        return Err(Error::Config("checkpoint and config disagree on K, N or M".into()));
                    }
                    ckpt.config.epoch_max = cfg.epoch_max;
                    ckpt.config.output_dir = cfg.output_dir.clone();
                    resume_experiment(&ckpt)?
                }
            };
            let evals: Vec<_> = out.rows.iter().filter(|r| r.is_eval()).collect();
            if let Some(last) = evals.last() {
                let block: Vec<_> = evals.iter().filter(|r| r.epoch == last.epoch).collect();
                let rate = block.iter().map(|r| r.success_rate).sum::<f64>() / block.len() as f64;
                println!("last evaluation (epoch {}): success_rate={rate:.4}", last.epoch);
            }
            println!("degradation resets: {}", out.resets.len());
            println!("metrics: {}", out.metrics_path.display());
            println!("checkpoint: {}", out.checkpoint_path.display());
        }
        Command::Eval { checkpoint, episodes, config } => {
            if episodes == 0 {
                return Err(Error::Usage("--episodes must be at least 1".into()));
            }
            let ckpt = Checkpoint::load(&checkpoint)?;
            let cfg = match config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ckpt.config.clone(),
            };
            let results = evaluate(&ckpt, &cfg, episodes)?;
            summarize("greedy", &results, cfg.num_users, cfg.slots_per_episode);
        }
        Command::Oracle { config, episodes } => {
            let cfg = ExperimentConfig::load(&config)?;
            let mut env = cfg.build_env()?;
            let (mut idle, mut bound, mut slots) = (0usize, 0usize, 0usize);
            for _ in 0..episodes {
                env.begin_episode(cfg.slots_per_episode)?;
                let states = (0..cfg.slots_per_episode)
                    .map(|_| env.next_slot())
                    .collect::<Result<Vec<_>>>()?;
                let report = oracle_upper_bound(&states, cfg.num_users);
                idle += report.idle.iter().sum::<usize>();
                bound += report.total;
                slots += states.len();
            }
            let demand = (cfg.num_users * cfg.slots_per_episode) as f64;
            let per_episode = bound as f64 / episodes.max(1) as f64;
            println!(
                "oracle: episodes={episodes} idle_per_slot={:.3} bound_per_episode={per_episode:.2} demand={demand} oracle_fraction={:.4}",
                idle as f64 / slots.max(1) as f64,
                per_episode / demand
            );
        }
        Command::Gradcheck { channels, sensed, users, slots, seed } => {
            let dims = ModelDims {
                num_channels: channels,
                sensed,
                num_agents: users,
            };
            if sensed == 0 || sensed > channels || users == 0 || slots == 0 {
                return Err(Error::Usage("need 1 <= sensed <= channels, users >= 1, slots >= 1".into()));
            }
            let mut worst = 0.0f64;
            for c in gradient_checks(dims, slots, seed)? {
                let verdict = if c.max_relative_error < 1e-4 { "ok" } else { "FAIL" };
                println!("{:<26} params={:<7} max_rel_err={:.3e} {verdict}", c.name, c.parameters, c.max_relative_error);
                worst = worst.max(c.max_relative_error);
            }
            if worst >= 1e-4 {
                return Err(Error::Data(format!("gradient check failed: max relative error {worst:.3e} >= 1e-4")));
            }
        }
        Command::Plot { csv, svg } => {
            export_plot(&csv, &svg)?;
            println!("wrote {}", svg.display());
        }
    }
    Ok(())
}
