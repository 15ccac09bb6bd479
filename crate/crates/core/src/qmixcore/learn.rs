use super::episode::EpisodeRecord;
use super::model::QmixModel;
use crate::agentnet::argmax;
use crate::error::{data, Result};
use crate::ndmath::{ParamStore, Tape};

/// Per-agent greedy actions; ties go to the lowest index.
pub fn greedy_joint_action(qs: &[Vec<f64>]) -> Vec<usize> {
    qs.iter().map(|q| argmax(q)).collect()
}

fn check_batch(batch: &[&EpisodeRecord]) -> Result<usize> {
    let Some(first) = batch.first() else {
        return data("empty training batch");
    };
    let t = first.len();
    if batch.iter().any(|e| e.len() != t) {
        return data("batch episodes differ in length");
    }
    Ok(t)
}

/// `y[b][t] = r_tot_t + gamma * Q_tot(s_{t+1}, greedy target actions)`, with
/// `y[b][T-1] = r_tot_{T-1}`. Everything is evaluated under `target`.
pub fn td_targets(
    model: &QmixModel,
    target: &ParamStore,
    batch: &[&EpisodeRecord],
    gamma: f64,
) -> Result<Vec<Vec<f64>>> {
    check_batch(batch)?;
    let mixer = model.require_mixer()?;
    let mut out = Vec::with_capacity(batch.len());
    for ep in batch {
        let inputs = ep.agent_inputs(&model.layout(), model.space())?;
        let qs = inputs
            .iter()
            .map(|x| model.unroll(target, x, true))
            .collect::<Result<Vec<_>>>()?;
        let mut y = Vec::with_capacity(ep.len());
        for t in 0..ep.len() {
            let mut v = ep.total_reward(t);
            if let Some(next) = ep.next_state(t) {
                let chosen: Vec<f64> = qs.iter().map(|q| q[t + 1][argmax(&q[t + 1])]).collect();
                v += gamma * mixer.forward(target, &chosen, &next)?;
            }
            y.push(v);
        }
        out.push(y);
    }
    Ok(out)
}

/// `Q_tot` under `theta` for the actions taken in `ep`, one value per slot.
pub fn taken_q_tot(model: &QmixModel, theta: &ParamStore, ep: &EpisodeRecord) -> Result<Vec<f64>> {
    let mixer = model.require_mixer()?;
    let inputs = ep.agent_inputs(&model.layout(), model.space())?;
    let per_agent = inputs
        .iter()
        .map(|x| model.unroll(theta, x, false))
        .collect::<Result<Vec<_>>>()?;
    (0..ep.len())
        .map(|t| {
            let qs: Vec<f64> = (0..ep.num_agents())
                .map(|n| per_agent[n][t][ep.actions()[t][n]])
                .collect();
            mixer.forward(theta, &qs, &ep.global_state(t))
        })
        .collect()
}

/// Mean over `B * T` of `(y_t - Q_tot_t)^2`.
pub fn qmix_loss(
    model: &QmixModel,
    theta: &ParamStore,
    target: &ParamStore,
    batch: &[&EpisodeRecord],
    gamma: f64,
) -> Result<f64> {
    let t = check_batch(batch)?;
    let y = td_targets(model, target, batch, gamma)?;
    let mut total = 0.0;
    for (ep, y) in batch.iter().zip(&y) {
        let q = taken_q_tot(model, theta, ep)?;
        total += q.iter().zip(y).map(|(q, y)| (y - q) * (y - q)).sum::<f64>();
    }
    Ok(total / (batch.len() * t) as f64)
}

/// [`qmix_loss`] with its gradient left in `theta`'s gradient fields.
pub fn qmix_loss_and_grad(
    model: &QmixModel,
    theta: &mut ParamStore,
    target: &ParamStore,
    batch: &[&EpisodeRecord],
    gamma: f64,
) -> Result<f64> {
    let slots = check_batch(batch)?;
    let mixer = model.require_mixer()?;
    let targets: Vec<f64> = td_targets(model, target, batch, gamma)?.concat();
    theta.zero_grad();
    let agent = model.agent();
    let mut tape = Tape::new(theta);
    let mut q_tot = Vec::with_capacity(targets.len());
    for ep in batch {
        let inputs = ep.agent_inputs(&model.layout(), model.space())?;
        let mut taken = vec![Vec::with_capacity(ep.num_agents()); ep.len()];
        for (n, xs) in inputs.iter().enumerate() {
            let mut h = tape.leaf(vec![0.0; agent.hidden_dim()])?;
            for (t, x) in xs.iter().enumerate() {
                let (q, h_new) = agent.record(&mut tape, theta, x, h, Some(vec![ep.actions()[t][n]]))?;
                h = h_new;
                taken[t].push(q);
            }
        }
        for (t, qs) in taken.iter().enumerate() {
            let qs = tape.concat(qs)?;
            q_tot.push(mixer.record(&mut tape, theta, qs, &ep.global_state(t))?);
        }
    }
    let all = tape.concat(&q_tot)?;
    let se = tape.squared_error(all, targets)?;
    let loss = tape.scale(se, 1.0 / (batch.len() * slots) as f64)?;
    let value = tape.scalar(loss);
    tape.backward(theta, loss, 1.0)?;
    Ok(value)
}
