use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::{AnyEnv, ExperimentConfig};
use super::detector::DegradationDetector;
use super::metrics::{load_metrics, MetricsRow, METRICS_HEADER};
use crate::envsim::ChannelEnvironment;
use crate::error::{Error, Result};
use crate::qmixcore::{greedy_rollouts, Algorithm, EpisodeMetrics, Trainer};
use crate::rng::{derived_seed, stream, Stream};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
const RUNNING_MARKER: &str = "RUNNING";

/// A training run that can be advanced one epoch at a time.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    trainer: Trainer,
    env: AnyEnv,
    detector: DegradationDetector,
    episodes_seen: u64,
    resets: Vec<u64>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Experiment {
            env: config.build_env()?,
            trainer: Trainer::new(config.trainer_config())?,
            detector: DegradationDetector::new(config.degradation_window, config.degradation_ratio),
            episodes_seen: 0,
            resets: Vec::new(),
            config,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut env = ckpt.config.build_env()?;
        env.restore(&ckpt.env)?;
        Ok(Experiment {
            config: ckpt.config.clone(),
            trainer: ckpt.trainer()?,
            env,
            detector: ckpt.detector.clone(),
            episodes_seen: ckpt.episodes_seen,
            resets: ckpt.resets.clone(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn trainer(&self) -> &Trainer {
        &self.trainer
    }

    pub fn env(&self) -> &AnyEnv {
        &self.env
    }

    pub fn detector(&self) -> &DegradationDetector {
        &self.detector
    }

    /// Training-episode indices at which the detector fired and learning restarted.
    pub fn resets(&self) -> &[u64] {
        &self.resets
    }

    pub fn epoch(&self) -> usize {
        self.trainer.state().epoch as usize
    }

    pub fn is_finished(&self) -> bool {
        self.epoch() >= self.config.epoch_max
    }

    fn watching(&self) -> bool {
        self.config.degradation_reset && self.env.is_switching() && self.config.algorithm != Algorithm::Random
    }

    /// One epoch of collection and training, the degradation watch, and the greedy
    /// evaluation block when one is due. Returns the rows to log.
    pub fn step_epoch(&mut self) -> Result<Vec<MetricsRow>> {
        let m = self.trainer.train_epoch(&mut self.env)?;
        let mut rows = Vec::with_capacity(m.episodes.len());
        let mut fired = false;
        for ep in &m.episodes {
            let index = self.episodes_seen;
            self.episodes_seen += 1;
            rows.push(MetricsRow::new(m.epoch, index, ep, m.mean_loss, false));
            // Only greedy-phase behaviour is watched: exploration noise would otherwise
            // read as degradation.
            if self.watching() && !fired && ep.epsilon <= self.config.epsilon_end && self.detector.push(ep.success_rate) {
                log::info!("degradation detected at epoch {} episode {index}; resetting", m.epoch);
                self.resets.push(index);
                fired = true;
            }
        }
        if fired {
            self.trainer.reset_learning()?;
            self.detector.reset();
        }
        let interval = self.config.eval_interval;
        if interval > 0 && (m.epoch + 1) % interval as u64 == 0 && self.config.algorithm != Algorithm::Random {
            let results = self.evaluate(self.config.eval_episodes)?;
            rows.extend(
                results
                    .iter()
                    .enumerate()
                    .map(|(i, r)| MetricsRow::new(m.epoch, i as u64, r, None, true)),
            );
        }
        Ok(rows)
    }

    /// Greedy rollouts of the current parameters on a copy of the training environment;
    /// the run itself is not disturbed.
    pub fn evaluate(&self, episodes: usize) -> Result<Vec<EpisodeMetrics>> {
        let mut env = self.env.clone();
        let mut tie = ChaCha8Rng::seed_from_u64(derived_seed(self.config.seed, Stream::Evaluation) ^ self.epoch() as u64);
        self.trainer.evaluate(&mut env, episodes, &mut tie)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let st = self.trainer.state();
        Checkpoint {
            config: self.config.clone(),
            state: st.clone(),
            buffer: self.trainer.buffer().clone(),
            rngs: self.trainer.rngs().snapshots(),
            env: self.env.snapshot(),
            detector: self.detector.clone(),
            episodes_seen: self.episodes_seen,
            resets: self.resets.clone(),
        }
    }
}

/// Where a run left its files.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    /// Every row of the metrics file.
    pub rows: Vec<MetricsRow>,
    pub resets: Vec<u64>,
}

/// Runs `epoch_max` epochs, writing `metrics.csv`, periodic checkpoints and a final
/// `checkpoint.ckpt` under the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    let exp = Experiment::new(config.clone())?;
    drive(exp, Vec::new())
}

/// Continues a run from a checkpoint up to its config's `epoch_max`. Rows of the existing
/// metrics file from later epochs are dropped and regenerated.
pub fn resume_experiment(ckpt: &Checkpoint) -> Result<RunSummary> {
    let exp = Experiment::from_checkpoint(ckpt)?;
    let path = exp.config.resolved_output_dir().join(METRICS_FILE);
    let start = exp.epoch() as u64;
    let kept = if path.exists() {
        load_metrics(&path)?.into_iter().filter(|r| r.epoch < start).collect()
    } else {
        Vec::new()
    };
    drive(exp, kept)
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(format!("cannot create {}", path.display()), e))
}

fn drive(mut exp: Experiment, mut rows: Vec<MetricsRow>) -> Result<RunSummary> {
    let dir = exp.config.resolved_output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("cannot create {}", dir.display()), e))?;
    let marker = dir.join(RUNNING_MARKER);
    std::fs::write(&marker, "partial outputs: run did not finish\n")
        .map_err(|e| Error::io(format!("cannot write {}", marker.display()), e))?;
    std::fs::write(dir.join("config.toml"), exp.config.to_toml())
        .map_err(|e| Error::io("cannot write config copy", e))?;

    let metrics_path = dir.join(METRICS_FILE);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(create(&metrics_path)?));
    let csv_err = |e: csv::Error| Error::Data(format!("cannot write metrics (outputs are partial): {e}"));
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in &rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let checkpoint_path = dir.join(CHECKPOINT_FILE);
    while !exp.is_finished() {
        let new_rows = exp.step_epoch()?;
        for r in &new_rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("cannot write metrics (outputs are partial)", e))?;
        rows.extend(new_rows);
        let every = exp.config.checkpoint_interval;
        if every > 0 && exp.epoch().is_multiple_of(every) && !exp.is_finished() {
            exp.checkpoint().save(dir.join(format!("checkpoint-epoch{:04}.ckpt", exp.epoch())))?;
        }
    }
    w.flush().map_err(|e| Error::io("cannot write metrics (outputs are partial)", e))?;
    exp.checkpoint().save(&checkpoint_path)?;
    std::fs::remove_file(&marker).map_err(|e| Error::io("cannot remove run marker", e))?;
    Ok(RunSummary {
        dir,
        metrics_path,
        checkpoint_path,
        rows,
        resets: exp.resets,
    })
}

/// Greedy rollouts of a checkpoint's agent networks in the environment described by
/// `config`. When `config` is the checkpoint's own, the environment continues from the
/// saved channel state. Rollout tie-breaks use the evaluation stream of `config.seed`.
pub fn evaluate(ckpt: &Checkpoint, config: &ExperimentConfig, episodes: usize) -> Result<Vec<EpisodeMetrics>> {
    config.validate()?;
    if config.dims() != ckpt.config.dims() {
        let (a, b) = (config.dims(), ckpt.config.dims());
        return crate::error::config(format!(
            "checkpoint has K={} N={} M={}, config has K={} N={} M={}",
            b.num_channels, b.num_agents, b.sensed, a.num_channels, a.num_agents, a.sensed
        ));
    }
    let trainer = ckpt.trainer()?;
    let mut env = config.build_env()?;
    if config == &ckpt.config {
        env.restore(&ckpt.env)?;
    } else {
        env.begin_epoch(ckpt.epoch() as usize);
    }
    let mut tie = stream(config.seed, Stream::Evaluation);
    greedy_rollouts(trainer.model(), trainer.theta(), &mut env, config.slots_per_episode, episodes, &mut tie)
}

