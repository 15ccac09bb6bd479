use std::collections::VecDeque;

use rand::Rng;

use super::mixer::GlobalState;
use crate::agentnet::{ActionSpace, AgentInput, InputLayout};
use crate::envsim::{ChannelStateVector, Observation, REWARD_COLLISION, REWARD_SILENT, REWARD_SUCCESS};
use crate::error::{data, usage, Result};

/// One episode of `T` slots as seen by every agent.
///
/// Index `[t]` for states, `[t][n]` for per-agent fields. `observations[t][n]` is what agent
/// `n` saw after sensing with `actions[t][n]` in slot `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    states: Vec<ChannelStateVector>,
    actions: Vec<Vec<usize>>,
    observations: Vec<Vec<Observation>>,
    rewards: Vec<Vec<f64>>,
}

impl EpisodeRecord {
    pub fn new(
        states: Vec<ChannelStateVector>,
        actions: Vec<Vec<usize>>,
        observations: Vec<Vec<Observation>>,
        rewards: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let t = states.len();
        if t == 0 {
            return data("episode has no slots");
        }
        if actions.len() != t || observations.len() != t || rewards.len() != t {
            return data("episode fields disagree on the number of slots");
        }
        let n = actions[0].len();
        if n == 0 {
            return data("episode has no agents");
        }
        for slot in 0..t {
            if actions[slot].len() != n || observations[slot].len() != n || rewards[slot].len() != n {
                return data(format!("slot {slot} does not have {n} agents"));
            }
            if rewards[slot]
                .iter()
                .any(|r| ![REWARD_SUCCESS, REWARD_COLLISION, REWARD_SILENT].contains(r))
            {
                return data(format!("slot {slot} holds a reward outside {{-1, 0, 2}}"));
            }
        }
        Ok(EpisodeRecord {
            states,
            actions,
            observations,
            rewards,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn num_agents(&self) -> usize {
        self.actions[0].len()
    }

    pub fn num_channels(&self) -> usize {
        self.states[0].len()
    }

    pub fn states(&self) -> &[ChannelStateVector] {
        &self.states
    }

    pub fn actions(&self) -> &[Vec<usize>] {
        &self.actions
    }

    pub fn observations(&self) -> &[Vec<Observation>] {
        &self.observations
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.rewards
    }

    pub fn global_state(&self, t: usize) -> GlobalState {
        GlobalState::from(&self.states[t])
    }

    /// `s_{t+1}`, or `None` at the last slot.
    pub fn next_state(&self, t: usize) -> Option<GlobalState> {
        self.states.get(t + 1).map(GlobalState::from)
    }

    pub fn total_reward(&self, t: usize) -> f64 {
        self.rewards[t].iter().sum()
    }

    pub fn episode_reward(&self) -> f64 {
        (0..self.len()).map(|t| self.total_reward(t)).sum()
    }

    fn count(&self, r: f64) -> usize {
        self.rewards.iter().flatten().filter(|&&x| x == r).count()
    }

    pub fn successes(&self) -> usize {
        self.count(REWARD_SUCCESS)
    }

    /// User-slots that ended in a collision.
    pub fn collisions(&self) -> usize {
        self.count(REWARD_COLLISION)
    }

    /// User-slots without a transmission.
    pub fn silent(&self) -> usize {
        self.count(REWARD_SILENT)
    }

    /// Network inputs `[n][t]`: slot 0 sees an unsensed observation and no previous
    /// action, slot `t > 0` sees the observation and action of slot `t - 1`.
    pub fn agent_inputs(&self, layout: &InputLayout, space: &ActionSpace) -> Result<Vec<Vec<AgentInput>>> {
        let k = self.num_channels();
        (0..self.num_agents())
            .map(|n| {
                let mut inputs = Vec::with_capacity(self.len());
                inputs.push(layout.encode(&Observation::unsensed(k), None, n)?);
                for t in 1..self.len() {
                    let prev = space.unrank(self.actions[t - 1][n])?;
                    inputs.push(layout.encode(&self.observations[t - 1][n], Some(prev), n)?);
                }
                Ok(inputs)
            })
            .collect()
    }
}

/// FIFO episode store with oldest-first eviction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<EpisodeRecord>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return crate::error::config("replay buffer capacity must be at least 1");
        }
        Ok(ReplayBuffer {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(4096)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.episodes.clear();
    }

    pub fn get(&self, i: usize) -> Option<&EpisodeRecord> {
        self.episodes.get(i)
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.episodes.iter()
    }

    pub fn store_episode(&mut self, episode: EpisodeRecord) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    /// `batch` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.episodes.is_empty() {
            return usage("cannot sample from an empty replay buffer");
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.episodes.len())).collect())
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&EpisodeRecord>> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| &self.episodes[i])
            .collect())
    }
}
