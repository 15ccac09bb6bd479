use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{iql_loss, iql_loss_and_grad};
use crate::envsim::{init_markov, ChannelModel, Environment};
use crate::error::{config, Result};
use crate::ndmath::{grad_check_at, ParamStore, Tape, DEFAULT_PERTURBATION};
use crate::qmixcore::{qmix_loss, qmix_loss_and_grad, run_episode, ActingPolicy, EpisodeRecord, ModelDims, QmixModel};
use crate::rng::{stream, Stream};

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub name: &'static str,
    pub parameters: usize,
    pub max_relative_error: f64,
}

/// Builds a seeded model, draws nonzero biases so no activation sits exactly on a kink,
/// and compares analytic against central-difference gradients for the unrolled agent
/// network, the mixer, and the QMIX and independent-learner losses on one episode.
pub fn gradient_checks(dims: ModelDims, slots: usize, seed: u64) -> Result<Vec<GradientCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model_with = |rng: &mut ChaCha8Rng, mixer: bool| -> Result<(QmixModel, ParamStore)> {
        let (model, mut store) = QmixModel::build(dims, mixer, rng)?;
        for id in store.ids().collect::<Vec<_>>() {
            if store.get(id).shape().len() == 1 {
                let v: Vec<f64> = (0..store.get(id).len()).map(|_| rng.random_range(-0.3..0.3)).collect();
                store.set_values(id, &v)?;
            }
        }
        Ok((model, store))
    };
    let (model, mut theta) = model_with(&mut rng, true)?;
    let (_, target) = model_with(&mut rng, true)?;
    let ep = sample_episode(&model, slots, seed)?;
    clear_kinks(&model, &mut theta, &ep)?;
    let mut out = Vec::new();

    // agent network: a weighted sum of the taken actions' Q-values over the episode
    let inputs = ep.agent_inputs(&model.layout(), model.space())?.swap_remove(0);
    let actions: Vec<usize> = ep.actions().iter().map(|a| a[0]).collect();
    let weight = |t: usize| 1.0 + t as f64 / 10.0;
    let net = model.agent();
    let mut g = theta.clone();
    {
        let mut tape = Tape::new(&g);
        let mut h = tape.leaf(vec![0.0; net.hidden_dim()])?;
        let mut picked = Vec::with_capacity(slots);
        for (t, input) in inputs.iter().enumerate() {
            let (q, hn) = net.record(&mut tape, &g, input, h, Some(vec![actions[t]]))?;
            picked.push(tape.scale(q, weight(t))?);
            h = hn;
        }
        let cat = tape.concat(&picked)?;
        let root = tape.sum(cat)?;
        g.zero_grad();
        tape.backward(&mut g, root, 1.0)?;
    }
    let agent_loss = |s: &ParamStore| -> Result<f64> {
        let mut h = net.initial_hidden();
        let mut total = 0.0;
        for (t, input) in inputs.iter().enumerate() {
            let (q, hn) = net.forward(s, input, &h)?;
            total += q[actions[t]] * weight(t);
            h = hn;
        }
        Ok(total)
    };
    let agent_pos = positions(&g, "agent.");
    out.push(GradientCheck {
        name: "agent network",
        parameters: agent_pos.len(),
        max_relative_error: grad_check_at(agent_loss, &g, DEFAULT_PERTURBATION, &agent_pos)?,
    });

    // mixer: Q_tot at a random joint Q-vector and the first slot's state
    let mixer = model.require_mixer()?;
    let qs: Vec<f64> = (0..dims.num_agents).map(|_| rng.random_range(-2.0..2.0)).collect();
    let state = ep.global_state(0);
    let mut g = theta.clone();
    {
        let mut tape = Tape::new(&g);
        let q = tape.leaf(qs.clone())?;
        let root = mixer.record(&mut tape, &g, q, &state)?;
        g.zero_grad();
        tape.backward(&mut g, root, 1.0)?;
    }
    let mixer_pos = positions(&g, "mixer.");
    out.push(GradientCheck {
        name: "mixer",
        parameters: mixer_pos.len(),
        max_relative_error: grad_check_at(|s| mixer.forward(s, &qs, &state), &g, DEFAULT_PERTURBATION, &mixer_pos)?,
    });

    let mut g = theta.clone();
    qmix_loss_and_grad(&model, &mut g, &target, &[&ep], 1.0)?;
    let all: Vec<usize> = (0..g.num_scalars()).collect();
    out.push(GradientCheck {
        name: "qmix loss",
        parameters: all.len(),
        max_relative_error: grad_check_at(|s| qmix_loss(&model, s, &target, &[&ep], 1.0), &g, DEFAULT_PERTURBATION, &all)?,
    });

    let (iql_model, mut iql_theta) = model_with(&mut rng, false)?;
    clear_kinks(&iql_model, &mut iql_theta, &ep)?;
    let (_, iql_target) = model_with(&mut rng, false)?;
    let mut g = iql_theta.clone();
    iql_loss_and_grad(&iql_model, &mut g, &iql_target, &[&ep], 1.0)?;
    let all: Vec<usize> = (0..g.num_scalars()).collect();
    out.push(GradientCheck {
        name: "independent-learner loss",
        parameters: all.len(),
        max_relative_error: grad_check_at(
            |s| iql_loss(&iql_model, s, &iql_target, &[&ep], 1.0),
            &g,
            DEFAULT_PERTURBATION,
            &all,
        )?,
    });
    Ok(out)
}

/// Smallest distance from a ReLU or abs kink any unit may keep on the check's inputs.
const KINK_MARGIN: f64 = 1e-3;

/// Random biases still leave a unit within one perturbation of its kink now and then, where
/// the central difference straddles it. Lifts such biases just clear of every input.
fn clear_kinks(model: &QmixModel, store: &mut ParamStore, ep: &EpisodeRecord) -> Result<()> {
    let inputs: Vec<Vec<f64>> = ep
        .agent_inputs(&model.layout(), model.space())?
        .iter()
        .flatten()
        .map(|x| x.to_dense())
        .collect();
    clear_layer(store, "agent.fc1", &inputs)?;
    if store.id_of("mixer.hyper_w1.hidden.weight").is_none() {
        return Ok(());
    }
    let states: Vec<Vec<f64>> = (0..ep.len()).map(|t| ep.global_state(t).values().to_vec()).collect();
    for head in ["hyper_w1", "hyper_w2", "hyper_b2"] {
        let hidden: Vec<Vec<f64>> = clear_layer(store, &format!("mixer.{head}.hidden"), &states)?
            .into_iter()
            .map(|h| h.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
        if head != "hyper_b2" {
            clear_layer(store, &format!("mixer.{head}.out"), &hidden)?;
        }
    }
    Ok(())
}

/// Raises each bias of the dense layer `prefix` until its unit stays `KINK_MARGIN` away from
/// zero on all `inputs`, and returns the resulting pre-activations per input.
fn clear_layer(store: &mut ParamStore, prefix: &str, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let (Some(w), Some(b)) = (store.id_of(&format!("{prefix}.weight")), store.id_of(&format!("{prefix}.bias"))) else {
        return config(format!("no dense layer named {prefix}"));
    };
    let (rows, cols) = store.get(w).matrix_dims()?;
    let weights = store.get(w).values().to_vec();
    let mut bias = store.get(b).values().to_vec();
    let mut pre = vec![vec![0.0; rows]; inputs.len()];
    for (i, bi) in bias.iter_mut().enumerate() {
        let row = &weights[i * cols..(i + 1) * cols];
        let dots: Vec<f64> = inputs.iter().map(|x| row.iter().zip(x).map(|(a, v)| a * v).sum()).collect();
        // the bias only grows and each input fires at most once
        while let Some(&d) = dots.iter().find(|&&d| (d + *bi).abs() < KINK_MARGIN) {
            *bi = 2.0 * KINK_MARGIN - d;
        }
        for (p, d) in pre.iter_mut().zip(&dots) {
            p[i] = d + *bi;
        }
    }
    store.set_values(b, &bias)?;
    Ok(pre)
}

fn positions(store: &ParamStore, prefix: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (name, t) in store.iter() {
        if name.starts_with(prefix) {
            out.extend(offset..offset + t.len());
        }
        offset += t.len();
    }
    out
}

/// One uniformly random episode on a seeded Markov environment.
fn sample_episode(model: &QmixModel, slots: usize, seed: u64) -> Result<EpisodeRecord> {
    let dims = model.dims();
    let chans = init_markov(dims.num_channels, seed, 0.05, 0.95)?;
    let mut env = Environment::new(ChannelModel::Markov(chans), stream(seed, Stream::ChannelDynamics));
    let policy = ActingPolicy::Random {
        space: model.space(),
        num_agents: dims.num_agents,
    };
    run_episode(
        &mut env,
        policy,
        slots,
        || 1.0,
        &mut stream(seed, Stream::Exploration),
        &mut stream(seed, Stream::TieBreak),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes_on_a_small_model() {
        let dims = ModelDims {
            num_channels: 4,
            sensed: 2,
            num_agents: 2,
        };
        let checks = gradient_checks(dims, 4, 3).unwrap();
        assert_eq!(checks.len(), 4);
        for c in checks {
            assert!(c.parameters > 0);
            assert!(c.max_relative_error < 1e-4, "{}: {:e}", c.name, c.max_relative_error);
        }
    }
}
