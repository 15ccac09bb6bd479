//! Reference policies and bounds: the full-knowledge capacity bound, uniform random
//! sensing and independent learners sharing the QMIX agent network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agentnet::{argmax, ActionSpace};
use crate::envsim::{ChannelEnvironment, ChannelStateVector};
use crate::error::{config, data, Result};
use crate::ndmath::{ParamStore, Tape};
use crate::qmixcore::{
    run_episode, ActingPolicy, EpisodeMetrics, EpisodeRecord, EpochMetrics, QmixModel, Trainer,
    TrainerConfig,
};

/// Per-slot capacity when every user knows the true state and may sense any channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleReport {
    pub idle: Vec<usize>,
    /// `min(N, idle)` per slot.
    pub max_successes: Vec<usize>,
    pub total: usize,
    /// `N * T`.
    pub demand: usize,
}

pub fn oracle_upper_bound(states: &[ChannelStateVector], num_users: usize) -> OracleReport {
    let idle: Vec<usize> = states.iter().map(ChannelStateVector::idle_count).collect();
    let max_successes: Vec<usize> = idle.iter().map(|&i| i.min(num_users)).collect();
    OracleReport {
        total: max_successes.iter().sum(),
        demand: num_users * states.len(),
        idle,
        max_successes,
    }
}

/// Every user draws a uniform `M`-subset each slot.
pub fn random_policy_rollout<E: ChannelEnvironment + ?Sized>(
    env: &mut E,
    num_users: usize,
    sensed: usize,
    slots: usize,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpisodeMetrics>> {
    if num_users == 0 {
        return config("at least one user is required");
    }
    let space = ActionSpace::new(env.num_channels(), sensed)?;
    let mut tie = ChaCha8Rng::seed_from_u64(rng.random());
    let policy = ActingPolicy::Random {
        space: &space,
        num_agents: num_users,
    };
    (0..episodes)
        .map(|_| {
            let ep = run_episode(env, policy, slots, || 1.0, rng, &mut tie)?;
            Ok(EpisodeMetrics::of(&ep, 1.0))
        })
        .collect()
}

/// Per-agent targets `y[b][t][n] = r_t^n + gamma * max_a Q^n_target(t+1, a)`, terminal
/// slot without bootstrap.
pub fn iql_targets(
    model: &QmixModel,
    target: &ParamStore,
    batch: &[&EpisodeRecord],
    gamma: f64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    batch
        .iter()
        .map(|ep| {
            let inputs = ep.agent_inputs(&model.layout(), model.space())?;
            let qs = inputs
                .iter()
                .map(|x| model.unroll(target, x, true))
                .collect::<Result<Vec<_>>>()?;
            Ok((0..ep.len())
                .map(|t| {
                    (0..ep.num_agents())
                        .map(|n| {
                            let r = ep.rewards()[t][n];
                            if t + 1 < ep.len() {
                                let q = &qs[n][t + 1];
                                r + gamma * q[argmax(q)]
                            } else {
                                r
                            }
                        })
                        .collect()
                })
                .collect())
        })
        .collect()
}

fn batch_slots(batch: &[&EpisodeRecord]) -> Result<usize> {
    let Some(first) = batch.first() else {
        return data("empty training batch");
    };
    if batch.iter().any(|e| e.len() != first.len()) {
        return data("batch episodes differ in length");
    }
    Ok(first.len())
}

/// `(1 / (B T)) sum_b sum_t sum_n (y - Q^n(a^n))^2`.
pub fn iql_loss(
    model: &QmixModel,
    theta: &ParamStore,
    target: &ParamStore,
    batch: &[&EpisodeRecord],
    gamma: f64,
) -> Result<f64> {
    let slots = batch_slots(batch)?;
    let y = iql_targets(model, target, batch, gamma)?;
    let mut total = 0.0;
    for (ep, y) in batch.iter().zip(&y) {
        let inputs = ep.agent_inputs(&model.layout(), model.space())?;
        for (n, xs) in inputs.iter().enumerate() {
            let q = model.unroll(theta, xs, false)?;
            for t in 0..ep.len() {
                let d = y[t][n] - q[t][ep.actions()[t][n]];
                total += d * d;
            }
        }
    }
    Ok(total / (batch.len() * slots) as f64)
}

/// [`iql_loss`] with its gradient left in `theta`.
pub fn iql_loss_and_grad(
    model: &QmixModel,
    theta: &mut ParamStore,
    target: &ParamStore,
    batch: &[&EpisodeRecord],
    gamma: f64,
) -> Result<f64> {
    let slots = batch_slots(batch)?;
    let y = iql_targets(model, target, batch, gamma)?;
    theta.zero_grad();
    let agent = model.agent();
    let mut tape = Tape::new(theta);
    let mut taken = Vec::new();
    let mut flat_y = Vec::new();
    for (ep, y) in batch.iter().zip(&y) {
        let inputs = ep.agent_inputs(&model.layout(), model.space())?;
        for (n, xs) in inputs.iter().enumerate() {
            let mut h = tape.leaf(vec![0.0; agent.hidden_dim()])?;
            for (t, x) in xs.iter().enumerate() {
                let (q, h_new) = agent.record(&mut tape, theta, x, h, Some(vec![ep.actions()[t][n]]))?;
                h = h_new;
                taken.push(q);
                flat_y.push(y[t][n]);
            }
        }
    }
    let all = tape.concat(&taken)?;
    let se = tape.squared_error(all, flat_y)?;
    let loss = tape.scale(se, 1.0 / (batch.len() * slots) as f64)?;
    let value = tape.scalar(loss);
    tape.backward(theta, loss, 1.0)?;
    Ok(value)
}

/// Independent learners: `epochs` epochs of the shared trainer with per-agent rewards.
pub fn iql_train<E: ChannelEnvironment + ?Sized>(
    env: &mut E,
    mut config: TrainerConfig,
    epochs: usize,
) -> Result<(Trainer, Vec<EpochMetrics>)> {
    config.algorithm = crate::qmixcore::Algorithm::Iql;
    let mut trainer = Trainer::new(config)?;
    let metrics = (0..epochs)
        .map(|_| trainer.train_epoch(env))
        .collect::<Result<Vec<_>>>()?;
    Ok((trainer, metrics))
}
