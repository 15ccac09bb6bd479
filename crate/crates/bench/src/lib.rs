//! Fixtures shared by the benchmarks.

use qmix_dsa::envsim::{init_markov, ChannelModel, Environment};
use qmix_dsa::qmixcore::{run_episode, ActingPolicy, EpisodeRecord, ModelDims, QmixModel};
use qmix_dsa::rng::{stream, Stream};
use qmix_dsa::Result;

/// The default evaluation setting: 16 Markov channels, 3 users sensing 4 channels each.
pub const DIMS: ModelDims = ModelDims {
    num_channels: 16,
    sensed: 4,
    num_agents: 3,
};

pub fn markov_env(k: usize, seed: u64) -> Result<Environment> {
    let chans = init_markov(k, seed, 0.05, 0.95)?;
    Ok(Environment::new(ChannelModel::Markov(chans), stream(seed, Stream::ChannelDynamics)))
}

/// `count` uniformly random 20-slot episodes for `model`.
pub fn random_episodes(model: &QmixModel, count: usize, seed: u64) -> Result<Vec<EpisodeRecord>> {
    let dims = model.dims();
    let mut env = markov_env(dims.num_channels, seed)?;
    let mut act = stream(seed, Stream::Exploration);
    let mut tie = stream(seed, Stream::TieBreak);
    (0..count)
        .map(|_| {
            let policy = ActingPolicy::Random {
                space: model.space(),
                num_agents: dims.num_agents,
            };
            run_episode(&mut env, policy, 20, || 1.0, &mut act, &mut tie)
        })
        .collect()
}
