//! Slotted cognitive-radio environment: channel occupancy processes, sensing and
//! listen-before-talk slot resolution.

mod channels;
mod env;
mod slot;
mod trace;

pub use channels::{
    ChannelModel, ChannelStateVector, CorrelatedPattern, MarkovChannelSet, PeriodicPattern,
};
pub use env::{make_switching_env, ChannelEnvironment, EnvSnapshot, Environment, SwitchingEnvironment};
pub use slot::{
    observe, resolve_slot, total_reward, Observation, SlotOutcome, REWARD_COLLISION,
    REWARD_SILENT, REWARD_SUCCESS,
};
pub use trace::{load_trace, write_trace, TraceTable};

use crate::error::Result;

/// Markov channels with switching probabilities drawn uniformly from `[lo, hi]`.
pub fn init_markov(num_channels: usize, seed: u64, lo: f64, hi: f64) -> Result<MarkovChannelSet> {
    MarkovChannelSet::random(num_channels, seed, lo, hi)
}
