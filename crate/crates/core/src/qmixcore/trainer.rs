use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::episode::{EpisodeRecord, ReplayBuffer};
use super::learn::qmix_loss_and_grad;
use super::model::{ModelDims, QmixModel};
use super::rollout::{run_episode, ActingPolicy, EpisodeMetrics};
use crate::agentnet::EpsilonSchedule;
use crate::baselines::iql_loss_and_grad;
use crate::envsim::ChannelEnvironment;
use crate::error::{config, Result};
use crate::ndmath::{Adam, ParamStore};
use crate::rng::{stream, RngSnapshot, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Qmix,
    Iql,
    Random,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Qmix => "qmix",
            Algorithm::Iql => "iql",
            Algorithm::Random => "random",
        })
    }
}

impl FromStr for Algorithm {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qmix" => Ok(Algorithm::Qmix),
            "iql" => Ok(Algorithm::Iql),
            "random" => Ok(Algorithm::Random),
            other => config(format!("unknown algorithm {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub dims: ModelDims,
    pub slots_per_episode: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epsilon: EpsilonSchedule,
    pub target_sync_interval: u64,
    pub buffer_capacity: usize,
    pub episodes_per_epoch: usize,
    pub train_steps_per_epoch: usize,
    pub grad_clip: f64,
    pub algorithm: Algorithm,
    pub seed: u64,
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slots_per_episode == 0 {
            return config("slots_per_episode must be at least 1");
        }
        if self.batch_size == 0 || self.target_sync_interval == 0 {
            return config("batch_size and target_sync_interval must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return config("gamma must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return config("learning rate must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return config("grad_clip must be positive");
        }
        let e = self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) {
            return config("epsilon endpoints must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Learned state that a checkpoint must carry.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub theta: ParamStore,
    pub target: ParamStore,
    pub adam: Adam,
    pub global_slots: u64,
    pub train_steps: u64,
    pub epoch: u64,
}

/// Random streams owned by a trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerRngs {
    pub exploration: ChaCha8Rng,
    pub tie_break: ChaCha8Rng,
    pub batch_sampling: ChaCha8Rng,
    pub weight_init: ChaCha8Rng,
}

impl TrainerRngs {
    pub fn new(seed: u64) -> Self {
        TrainerRngs {
            exploration: stream(seed, Stream::Exploration),
            tie_break: stream(seed, Stream::TieBreak),
            batch_sampling: stream(seed, Stream::BatchSampling),
            weight_init: stream(seed, Stream::WeightInit),
        }
    }

    pub fn snapshots(&self) -> [RngSnapshot; 4] {
        [
            RngSnapshot::of(&self.exploration),
            RngSnapshot::of(&self.tie_break),
            RngSnapshot::of(&self.batch_sampling),
            RngSnapshot::of(&self.weight_init),
        ]
    }

    pub fn from_snapshots(s: &[RngSnapshot; 4]) -> Self {
        TrainerRngs {
            exploration: s[0].restore(),
            tie_break: s[1].restore(),
            batch_sampling: s[2].restore(),
            weight_init: s[3].restore(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub episodes: Vec<EpisodeMetrics>,
    pub records: Vec<EpisodeRecord>,
    pub mean_loss: Option<f64>,
    pub train_steps: usize,
}

/// Epoch-structured collect-then-train loop.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainerConfig,
    model: QmixModel,
    state: TrainerState,
    buffer: ReplayBuffer,
    rngs: TrainerRngs,
}

impl Trainer {
    pub fn new(config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        let mut rngs = TrainerRngs::new(config.seed);
        let (model, theta) = QmixModel::build(config.dims, config.algorithm == Algorithm::Qmix, &mut rngs.weight_init)?;
        let adam = Adam::new(&theta, config.learning_rate);
        let buffer = ReplayBuffer::new(config.buffer_capacity)?;
        Ok(Trainer {
            state: TrainerState {
                target: theta.clone(),
                theta,
                adam,
                global_slots: 0,
                train_steps: 0,
                epoch: 0,
            },
            model,
            buffer,
            rngs,
            config,
        })
    }

    /// Reassembles a trainer from saved parts; layouts are checked against `config`.
    pub fn from_parts(
        config: TrainerConfig,
        state: TrainerState,
        buffer: ReplayBuffer,
        rngs: TrainerRngs,
    ) -> Result<Self> {
        let fresh = Trainer::new(config)?;
        fresh.state.theta.check_same_layout(&state.theta)?;
        fresh.state.theta.check_same_layout(&state.target)?;
        if buffer.capacity() != fresh.buffer.capacity() {
            return crate::error::config("replay buffer capacity does not match the configuration");
        }
        Ok(Trainer {
            state,
            buffer,
            rngs,
            ..fresh
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn model(&self) -> &QmixModel {
        &self.model
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn rngs(&self) -> &TrainerRngs {
        &self.rngs
    }

    pub fn theta(&self) -> &ParamStore {
        &self.state.theta
    }

    pub fn target(&self) -> &ParamStore {
        &self.state.target
    }

    pub fn current_epsilon(&self) -> f64 {
        match self.config.algorithm {
            Algorithm::Random => 1.0,
            _ => self.config.epsilon.value(self.state.global_slots),
        }
    }

    /// True once the exploration schedule has decayed to its floor.
    pub fn exploration_finished(&self) -> bool {
        self.state.global_slots >= self.config.epsilon.horizon
    }

    pub fn sync_target(&mut self) {
        self.state.target = self.state.theta.clone();
    }

    /// Fresh parameters, optimizer, replay buffer and exploration schedule. Weights are
    /// drawn from the continuing initialization stream; the epoch counter is kept.
    pub fn reset_learning(&mut self) -> Result<()> {
        let (_, theta) = QmixModel::build(
            self.config.dims,
            self.config.algorithm == Algorithm::Qmix,
            &mut self.rngs.weight_init,
        )?;
        self.state.adam = Adam::new(&theta, self.config.learning_rate);
        self.state.target = theta.clone();
        self.state.theta = theta;
        self.state.global_slots = 0;
        self.state.train_steps = 0;
        self.buffer.clear();
        Ok(())
    }

    /// Collects `episodes_per_epoch` episodes into the buffer, then runs up to
    /// `train_steps_per_epoch` gradient steps (none while the buffer is smaller than a batch).
    pub fn train_epoch<E: ChannelEnvironment + ?Sized>(&mut self, env: &mut E) -> Result<EpochMetrics> {
        env.begin_epoch(self.state.epoch as usize);
        let mut episodes = Vec::with_capacity(self.config.episodes_per_epoch);
        let mut records = Vec::with_capacity(self.config.episodes_per_epoch);
        for _ in 0..self.config.episodes_per_epoch {
            let ep = self.collect_episode(env)?;
            episodes.push(ep.1);
            records.push(ep.0.clone());
            self.buffer.store_episode(ep.0);
        }
        let mut losses = Vec::new();
        if self.config.algorithm != Algorithm::Random {
            for _ in 0..self.config.train_steps_per_epoch {
                if self.buffer.len() < self.config.batch_size {
                    break;
                }
                losses.push(self.train_step()?);
            }
        }
        let metrics = EpochMetrics {
            epoch: self.state.epoch,
            episodes,
            records,
            mean_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            train_steps: losses.len(),
        };
        self.state.epoch += 1;
        Ok(metrics)
    }

    fn collect_episode<E: ChannelEnvironment + ?Sized>(
        &mut self,
        env: &mut E,
    ) -> Result<(EpisodeRecord, EpisodeMetrics)> {
        let eps0 = self.current_epsilon();
        let schedule = self.config.epsilon;
        let slots = &mut self.state.global_slots;
        let policy = match self.config.algorithm {
            Algorithm::Random => ActingPolicy::Random {
                space: self.model.space(),
                num_agents: self.config.dims.num_agents,
            },
            _ => ActingPolicy::Learned {
                model: &self.model,
                store: &self.state.theta,
            },
        };
        let ep = run_episode(
            env,
            policy,
            self.config.slots_per_episode,
            || {
                let e = schedule.value(*slots);
                *slots += 1;
                e
            },
            &mut self.rngs.exploration,
            &mut self.rngs.tie_break,
        )?;
        let metrics = EpisodeMetrics::of(&ep, eps0);
        Ok((ep, metrics))
    }

    /// One sampled-batch gradient step. Returns the batch loss before the update.
    pub fn train_step(&mut self) -> Result<f64> {
        let idx = self
            .buffer
            .sample_indices(self.config.batch_size, &mut self.rngs.batch_sampling)?;
        let batch: Vec<&EpisodeRecord> = idx.iter().filter_map(|&i| self.buffer.get(i)).collect();
        let st = &mut self.state;
        let loss = match self.config.algorithm {
            Algorithm::Qmix => qmix_loss_and_grad(&self.model, &mut st.theta, &st.target, &batch, self.config.gamma)?,
            Algorithm::Iql => iql_loss_and_grad(&self.model, &mut st.theta, &st.target, &batch, self.config.gamma)?,
            Algorithm::Random => return crate::error::usage("the random policy has nothing to train"),
        };
        st.theta.clip_grad_norm(self.config.grad_clip);
        st.adam.step(&mut st.theta)?;
        st.train_steps += 1;
        if st.train_steps.is_multiple_of(self.config.target_sync_interval) {
            self.sync_target();
        }
        Ok(loss)
    }

    /// Greedy rollouts with the current parameters. Uses only `tie_rng` and `env`, so the
    /// trainer's own streams are untouched.
    pub fn evaluate<E: ChannelEnvironment + ?Sized>(
        &self,
        env: &mut E,
        episodes: usize,
        tie_rng: &mut ChaCha8Rng,
    ) -> Result<Vec<EpisodeMetrics>> {
        greedy_rollouts(&self.model, &self.state.theta, env, self.config.slots_per_episode, episodes, tie_rng)
    }
}

/// `episodes` epsilon-free rollouts of the agent networks in `store`.
pub fn greedy_rollouts<E: ChannelEnvironment + ?Sized>(
    model: &QmixModel,
    store: &ParamStore,
    env: &mut E,
    slots: usize,
    episodes: usize,
    tie_rng: &mut ChaCha8Rng,
) -> Result<Vec<EpisodeMetrics>> {
    // never drawn from at epsilon = 0
    let mut idle_rng = stream(0, Stream::Exploration);
    (0..episodes)
        .map(|_| {
            let ep = run_episode(
                env,
                ActingPolicy::Learned { model, store },
                slots,
                || 0.0,
                &mut idle_rng,
                tie_rng,
            )?;
            Ok(EpisodeMetrics::of(&ep, 0.0))
        })
        .collect()
}
