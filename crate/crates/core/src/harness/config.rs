use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agentnet::EpsilonSchedule;
use crate::envsim::{
    load_trace, make_switching_env, ChannelEnvironment, ChannelModel, ChannelStateVector,
    CorrelatedPattern, EnvSnapshot, Environment, MarkovChannelSet, PeriodicPattern,
    SwitchingEnvironment,
};
use crate::error::{config, Error, Result};
use crate::qmixcore::{Algorithm, ModelDims, TrainerConfig};
use crate::rng::{derived_seed, stream, Stream};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "QMIXDSA_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Markov,
    Periodic,
    Correlated,
    Trace,
    Switching,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Markov => "markov",
            EnvKind::Periodic => "periodic",
            EnvKind::Correlated => "correlated",
            EnvKind::Trace => "trace",
            EnvKind::Switching => "switching",
        })
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markov" => Ok(EnvKind::Markov),
            "periodic" => Ok(EnvKind::Periodic),
            "correlated" => Ok(EnvKind::Correlated),
            "trace" => Ok(EnvKind::Trace),
            "switching" => Ok(EnvKind::Switching),
            other => config(format!("unknown environment {other:?}")),
        }
    }
}

/// Every knob of one experiment. Serialized as a flat TOML table whose keys are the
/// field names; missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_channels: usize,
    pub num_users: usize,
    pub sensed_channels: usize,
    pub slots_per_episode: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_slots: u64,
    pub target_sync_interval: u64,
    pub buffer_capacity: usize,
    pub episodes_per_epoch: usize,
    pub train_steps_per_epoch: usize,
    pub epoch_max: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub algorithm: Algorithm,

    pub env: EnvKind,
    pub markov_lo: f64,
    pub markov_hi: f64,
    pub periodic_switch_prob: f64,
    /// Channels per idle group; 0 means `num_channels / 4`.
    pub periodic_group_size: usize,
    pub correlated_subsets: usize,
    pub correlated_flip_prob: f64,
    pub trace_path: String,
    pub switch_from: EnvKind,
    pub switch_to: EnvKind,
    pub switch_epoch: usize,

    pub degradation_window: usize,
    pub degradation_ratio: f64,
    /// Watch for degradation; only meaningful with `env = "switching"`.
    pub degradation_reset: bool,

    /// Greedy evaluation block every this many epochs (0 disables).
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Intermediate checkpoints every this many epochs (0: final checkpoint only).
    pub checkpoint_interval: usize,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let eps = EpsilonSchedule::default();
        ExperimentConfig {
            num_channels: 16,
            num_users: 3,
            sensed_channels: 4,
            slots_per_episode: 20,
            gamma: 1.0,
            learning_rate: 5e-4,
            batch_size: 16,
            epsilon_start: eps.start,
            epsilon_end: eps.end,
            epsilon_decay_slots: eps.horizon,
            target_sync_interval: 40,
            buffer_capacity: 2000,
            episodes_per_epoch: 10,
            train_steps_per_epoch: 8,
            epoch_max: 300,
            grad_clip: 10.0,
            seed: 1,
            algorithm: Algorithm::Qmix,
            env: EnvKind::Markov,
            markov_lo: 0.05,
            markov_hi: 0.95,
            periodic_switch_prob: 0.75,
            periodic_group_size: 0,
            correlated_subsets: 4,
            correlated_flip_prob: 0.3,
            trace_path: String::new(),
            switch_from: EnvKind::Periodic,
            switch_to: EnvKind::Correlated,
            switch_epoch: 150,
            degradation_window: 20,
            degradation_ratio: 0.6,
            degradation_reset: true,
            eval_interval: 10,
            eval_episodes: 20,
            checkpoint_interval: 0,
            output_dir: "runs".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_channels;
        if k == 0 || self.num_users == 0 {
            return config("num_channels and num_users must be at least 1");
        }
        if self.sensed_channels == 0 || self.sensed_channels > k {
            return config(format!("sensed_channels must lie in 1..={k}"));
        }
        if !(0.0 < self.markov_lo && self.markov_lo < self.markov_hi && self.markov_hi < 1.0) {
            return config("markov_lo and markov_hi must satisfy 0 < lo < hi < 1");
        }
        if !(0.0..=1.0).contains(&self.periodic_switch_prob)
            || !(0.0..=1.0).contains(&self.correlated_flip_prob)
        {
            return config("probabilities must lie in [0, 1]");
        }
        if self.correlated_subsets == 0 || self.correlated_subsets > k {
            return config("correlated_subsets must lie in 1..=num_channels");
        }
        if !(self.degradation_ratio > 0.0 && self.degradation_ratio < 1.0) || self.degradation_window == 0 {
            return config("degradation_ratio must lie in (0, 1) and the window must be positive");
        }
        if self.eval_interval > 0 && self.eval_episodes == 0 {
            return config("eval_episodes must be positive when evaluation is enabled");
        }
        let kinds: &[EnvKind] = match self.env {
            EnvKind::Switching => &[self.switch_from, self.switch_to],
            _ => std::slice::from_ref(&self.env),
        };
        for kind in kinds {
            match kind {
                EnvKind::Switching => return config("switch_from/switch_to cannot be \"switching\""),
                EnvKind::Trace if self.trace_path.is_empty() => {
                    return config("trace environments need trace_path")
                }
                EnvKind::Periodic if !k.is_multiple_of(self.group_size()) => {
                    return config("periodic_group_size must divide num_channels")
                }
                _ => {}
            }
        }
        self.trainer_config().validate()
    }

    pub fn group_size(&self) -> usize {
        if self.periodic_group_size == 0 {
            (self.num_channels / 4).max(1)
        } else {
            self.periodic_group_size
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            num_channels: self.num_channels,
            sensed: self.sensed_channels,
            num_agents: self.num_users,
        }
    }

    pub fn epsilon(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            horizon: self.epsilon_decay_slots,
        }
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            dims: self.dims(),
            slots_per_episode: self.slots_per_episode,
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epsilon: self.epsilon(),
            target_sync_interval: self.target_sync_interval,
            buffer_capacity: self.buffer_capacity,
            episodes_per_epoch: self.episodes_per_epoch,
            train_steps_per_epoch: self.train_steps_per_epoch,
            grad_clip: self.grad_clip,
            algorithm: self.algorithm,
            seed: self.seed,
        }
    }

    /// `output_dir`, unless [`OUTPUT_DIR_ENV`] is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => PathBuf::from(&self.output_dir),
        }
    }

    /// The channel model of one kind, with parameters drawn from the config seed.
    pub fn channel_model(&self, kind: EnvKind) -> Result<ChannelModel> {
        let k = self.num_channels;
        let param_seed = derived_seed(self.seed, Stream::ChannelParams);
        Ok(match kind {
            EnvKind::Markov => {
                ChannelModel::Markov(MarkovChannelSet::random(k, param_seed, self.markov_lo, self.markov_hi)?)
            }
            EnvKind::Periodic => {
                ChannelModel::Periodic(PeriodicPattern::new(k, self.group_size(), self.periodic_switch_prob)?)
            }
            EnvKind::Correlated => {
                let n = self.correlated_subsets;
                let sizes: Vec<usize> = (0..n).map(|i| k / n + usize::from(i < k % n)).collect();
                ChannelModel::Correlated(CorrelatedPattern::random(&sizes, self.correlated_flip_prob, param_seed)?)
            }
            EnvKind::Trace => ChannelModel::Trace(load_trace(&self.trace_path, k)?),
            EnvKind::Switching => return config("a switching environment has no single channel model"),
        })
    }

    pub fn build_env(&self) -> Result<AnyEnv> {
        match self.env {
            EnvKind::Switching => {
                let first = Environment::new(self.channel_model(self.switch_from)?, stream(self.seed, Stream::ChannelDynamics));
                let second = Environment::new(self.channel_model(self.switch_to)?, stream(self.seed, Stream::SwitchedDynamics));
                Ok(AnyEnv::Switching(make_switching_env(first, second, self.switch_epoch)?))
            }
            kind => Ok(AnyEnv::Single(Environment::new(
                self.channel_model(kind)?,
                stream(self.seed, Stream::ChannelDynamics),
            ))),
        }
    }
}

/// Either a single channel process or a scheduled switch between two.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    Single(Environment),
    Switching(SwitchingEnvironment),
}

impl AnyEnv {
    pub fn is_switching(&self) -> bool {
        matches!(self, AnyEnv::Switching(_))
    }
}

impl ChannelEnvironment for AnyEnv {
    fn num_channels(&self) -> usize {
        match self {
            AnyEnv::Single(e) => e.num_channels(),
            AnyEnv::Switching(e) => e.num_channels(),
        }
    }

    fn begin_epoch(&mut self, epoch: usize) {
        match self {
            AnyEnv::Single(e) => e.begin_epoch(epoch),
            AnyEnv::Switching(e) => e.begin_epoch(epoch),
        }
    }

    fn begin_episode(&mut self, slots: usize) -> Result<()> {
        match self {
            AnyEnv::Single(e) => e.begin_episode(slots),
            AnyEnv::Switching(e) => e.begin_episode(slots),
        }
    }

    fn next_slot(&mut self) -> Result<ChannelStateVector> {
        match self {
            AnyEnv::Single(e) => e.next_slot(),
            AnyEnv::Switching(e) => e.next_slot(),
        }
    }

    fn active_model(&self) -> &ChannelModel {
        match self {
            AnyEnv::Single(e) => e.active_model(),
            AnyEnv::Switching(e) => e.active_model(),
        }
    }

    fn snapshot(&self) -> EnvSnapshot {
        match self {
            AnyEnv::Single(e) => e.snapshot(),
            AnyEnv::Switching(e) => e.snapshot(),
        }
    }

    fn restore(&mut self, snap: &EnvSnapshot) -> Result<()> {
        match self {
            AnyEnv::Single(e) => e.restore(snap),
            AnyEnv::Switching(e) => e.restore(snap),
        }
    }
}
