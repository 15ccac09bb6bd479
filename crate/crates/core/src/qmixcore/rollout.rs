use rand::Rng;

use super::episode::EpisodeRecord;
use super::model::QmixModel;
use crate::agentnet::{select_action, ActionSpace, HiddenState};
use crate::baselines::oracle_upper_bound;
use crate::envsim::{observe, resolve_slot, ChannelEnvironment, Observation};
use crate::error::{config, Result};
use crate::ndmath::ParamStore;

/// Who picks the sensing actions during a rollout.
#[derive(Debug, Clone, Copy)]
pub enum ActingPolicy<'a> {
    /// Each agent acts epsilon-greedily on its own recurrent Q-network. The mixer is
    /// never consulted.
    Learned {
        model: &'a QmixModel,
        store: &'a ParamStore,
    },
    /// Every agent draws a uniform action each slot.
    Random {
        space: &'a ActionSpace,
        num_agents: usize,
    },
}

impl ActingPolicy<'_> {
    pub fn num_agents(&self) -> usize {
        match self {
            ActingPolicy::Learned { model, .. } => model.dims().num_agents,
            ActingPolicy::Random { num_agents, .. } => *num_agents,
        }
    }

    pub fn space(&self) -> &ActionSpace {
        match self {
            ActingPolicy::Learned { model, .. } => model.space(),
            ActingPolicy::Random { space, .. } => space,
        }
    }
}

/// Plays one episode of `slots` slots. `epsilon` is called once per slot and should
/// advance whatever schedule it reads.
pub fn run_episode<E, A, B>(
    env: &mut E,
    policy: ActingPolicy<'_>,
    slots: usize,
    mut epsilon: impl FnMut() -> f64,
    act_rng: &mut A,
    tie_rng: &mut B,
) -> Result<EpisodeRecord>
where
    E: ChannelEnvironment + ?Sized,
    A: Rng + ?Sized,
    B: Rng + ?Sized,
{
    let space = policy.space();
    let n = policy.num_agents();
    let k = space.num_channels();
    if env.num_channels() != k {
        return config(format!(
            "environment has {} channels, policy expects {k}",
            env.num_channels()
        ));
    }
    env.begin_episode(slots)?;
    let mut hidden: Vec<HiddenState> = match policy {
        ActingPolicy::Learned { model, .. } => vec![model.agent().initial_hidden(); n],
        ActingPolicy::Random { .. } => Vec::new(),
    };
    let mut last_obs = vec![Observation::unsensed(k); n];
    let mut last_act: Vec<Option<usize>> = vec![None; n];
    let (mut states, mut actions, mut observations, mut rewards) =
        (Vec::with_capacity(slots), Vec::with_capacity(slots), Vec::with_capacity(slots), Vec::with_capacity(slots));
    for _ in 0..slots {
        let s = env.next_slot()?;
        let eps = epsilon();
        let mut chosen = Vec::with_capacity(n);
        for agent in 0..n {
            let a = match policy {
                ActingPolicy::Learned { model, store } => {
                    let prev = last_act[agent].map(|a| space.unrank(a)).transpose()?;
                    let x = model.layout().encode(&last_obs[agent], prev, agent)?;
                    let (q, h) = model.agent().forward(store, &x, &hidden[agent])?;
                    hidden[agent] = h;
                    select_action(&q, eps, act_rng)
                }
                ActingPolicy::Random { .. } => act_rng.random_range(0..space.count()),
            };
            chosen.push(a);
        }
        let senses = chosen.iter().map(|&a| space.unrank(a)).collect::<Result<Vec<_>>>()?;
        let outcome = resolve_slot(&s, &senses, tie_rng)?;
        let obs = senses.iter().map(|&a| observe(&s, a)).collect::<Result<Vec<_>>>()?;
        last_obs.clone_from(&obs);
        last_act = chosen.iter().map(|&a| Some(a)).collect();
        states.push(s);
        actions.push(chosen);
        observations.push(obs);
        rewards.push(outcome.rewards);
    }
    EpisodeRecord::new(states, actions, observations, rewards)
}

/// Per-episode aggregates logged by training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeMetrics {
    pub successes: usize,
    pub collisions: usize,
    pub silent: usize,
    pub total_reward: f64,
    /// `successes / (N * T)`.
    pub success_rate: f64,
    pub oracle_bound: usize,
    pub epsilon: f64,
}

impl EpisodeMetrics {
    pub fn of(ep: &EpisodeRecord, epsilon: f64) -> Self {
        let demand = (ep.num_agents() * ep.len()) as f64;
        EpisodeMetrics {
            successes: ep.successes(),
            collisions: ep.collisions(),
            silent: ep.silent(),
            total_reward: ep.episode_reward(),
            success_rate: ep.successes() as f64 / demand,
            oracle_bound: oracle_upper_bound(ep.states(), ep.num_agents()).total,
            epsilon,
        }
    }

    /// `oracle_bound / (N * T)`.
    pub fn oracle_fraction(&self, num_agents: usize, slots: usize) -> f64 {
        self.oracle_bound as f64 / (num_agents * slots) as f64
    }
}
