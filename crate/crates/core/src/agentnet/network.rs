use rand::Rng;

use super::actions::SenseAction;
use crate::envsim::Observation;
use crate::error::{config, Result};
use crate::ndmath::{
    self, Activation, GruParams, ParamId, ParamStore, Tape, Var,
};

pub const HIDDEN_DIM: usize = 64;

/// Sizes of the agent input blocks: a 3-way one-hot per channel, the previous action,
/// and the agent identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputLayout {
    pub num_channels: usize,
    pub num_actions: usize,
    pub num_agents: usize,
}

impl InputLayout {
    pub fn len(&self) -> usize {
        3 * self.num_channels + self.num_actions + self.num_agents
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(
        &self,
        obs: &Observation,
        last_action: Option<&SenseAction>,
        agent_id: usize,
    ) -> Result<AgentInput> {
        if obs.len() != self.num_channels {
            return config(format!(
                "observation has {} channels, layout expects {}",
                obs.len(),
                self.num_channels
            ));
        }
        if agent_id >= self.num_agents {
            return config(format!("agent id {agent_id} out of range {}", self.num_agents));
        }
        let mut hot = Vec::with_capacity(self.num_channels + 2);
        for (k, &z) in obs.values().iter().enumerate() {
            // -1 unsensed, 0 busy, 1 idle
            hot.push(3 * k + (z + 1) as usize);
        }
        let action_base = 3 * self.num_channels;
        if let Some(a) = last_action {
            if a.index() >= self.num_actions {
                return config(format!("action {} out of range {}", a.index(), self.num_actions));
            }
            hot.push(action_base + a.index());
        }
        hot.push(action_base + self.num_actions + agent_id);
        Ok(AgentInput {
            len: self.len(),
            hot,
        })
    }
}

/// A binary input vector stored as the positions of its ones.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AgentInput {
    len: usize,
    hot: Vec<usize>,
}

impl AgentInput {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn hot(&self) -> &[usize] {
        &self.hot
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len];
        for &i in &self.hot {
            v[i] = 1.0;
        }
        v
    }

    fn entries(&self) -> Vec<(usize, f64)> {
        self.hot.iter().map(|&i| (i, 1.0)).collect()
    }
}

/// GRU hidden state carried across the slots of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState(pub Vec<f64>);

impl HiddenState {
    pub fn zeros(dim: usize) -> Self {
        HiddenState(vec![0.0; dim])
    }
}

/// The per-agent recurrent Q-network:
/// `dense(input -> 64) + ReLU -> GRU(64) -> dense(64 -> |A|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNet {
    layout: InputLayout,
    fc1_w: ParamId,
    fc1_b: ParamId,
    gru_w: ParamId,
    gru_u: ParamId,
    gru_b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

impl AgentNet {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        layout: InputLayout,
        rng: &mut R,
    ) -> Result<Self> {
        let d_in = layout.len();
        let h = HIDDEN_DIM;
        Ok(AgentNet {
            layout,
            fc1_w: store.add_weight("agent.fc1.weight", h, d_in, rng)?,
            fc1_b: store.add_bias("agent.fc1.bias", h)?,
            gru_w: store.add_weight("agent.gru.input_weight", 3 * h, h, rng)?,
            gru_u: store.add_weight("agent.gru.hidden_weight", 3 * h, h, rng)?,
            gru_b: store.add_bias("agent.gru.bias", 3 * h)?,
            head_w: store.add_weight("agent.head.weight", layout.num_actions, h, rng)?,
            head_b: store.add_bias("agent.head.bias", layout.num_actions)?,
        })
    }

    pub fn layout(&self) -> InputLayout {
        self.layout
    }

    pub fn hidden_dim(&self) -> usize {
        HIDDEN_DIM
    }

    pub fn initial_hidden(&self) -> HiddenState {
        HiddenState::zeros(HIDDEN_DIM)
    }

    pub fn param_ids(&self) -> [ParamId; 7] {
        [
            self.fc1_w, self.fc1_b, self.gru_w, self.gru_u, self.gru_b, self.head_w, self.head_b,
        ]
    }

    fn check_store(&self, store: &ParamStore) -> Result<()> {
        let (rows, cols) = store.get(self.fc1_w).matrix_dims()?;
        let (a, _) = store.get(self.head_w).matrix_dims()?;
        if rows != HIDDEN_DIM || cols != self.layout.len() || a != self.layout.num_actions {
            return config("parameter store does not match the agent network layout");
        }
        Ok(())
    }

    /// `(q, h')` for one slot without recording gradients.
    pub fn forward(
        &self,
        store: &ParamStore,
        input: &AgentInput,
        h: &HiddenState,
    ) -> Result<(Vec<f64>, HiddenState)> {
        self.check_store(store)?;
        let h_new = self.hidden_step(store, input, h)?;
        let q = ndmath::dense_forward(&h_new.0, store.get(self.head_w), store.get(self.head_b))?;
        Ok((q, h_new))
    }

    /// Advances the hidden state only.
    pub fn hidden_step(
        &self,
        store: &ParamStore,
        input: &AgentInput,
        h: &HiddenState,
    ) -> Result<HiddenState> {
        let x = ndmath::dense_forward_sparse(
            input.len(),
            &input.entries(),
            store.get(self.fc1_w),
            store.get(self.fc1_b),
        )?;
        let x = ndmath::activation(Activation::Relu, &x);
        let p = GruParams {
            w: store.get(self.gru_w),
            u: store.get(self.gru_u),
            b: store.get(self.gru_b),
        };
        Ok(HiddenState(ndmath::gru_cell(&x, &h.0, p)?))
    }

    /// Q-values for the listed actions only (all actions when `rows` is `None`).
    pub fn q_rows(&self, store: &ParamStore, h: &HiddenState, rows: &[usize]) -> Result<Vec<f64>> {
        ndmath::dense_forward_rows(&h.0, store.get(self.head_w), store.get(self.head_b), rows)
    }

    /// Records one slot on `tape`. Returns `(q, h')` where `q` holds only the Q-values of
    /// `rows` when given, otherwise all actions.
    pub fn record(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &AgentInput,
        h: Var,
        rows: Option<Vec<usize>>,
    ) -> Result<(Var, Var)> {
        let x = tape.dense_sparse(store, self.fc1_w, self.fc1_b, input.len(), input.entries())?;
        let x = tape.activation(Activation::Relu, x)?;
        let h_new = tape.gru(store, (self.gru_w, self.gru_u, self.gru_b), x, h)?;
        let q = match rows {
            Some(rows) => tape.dense_rows(store, self.head_w, self.head_b, h_new, rows)?,
            None => {
                let all: Vec<usize> = (0..self.layout.num_actions).collect();
                tape.dense_rows(store, self.head_w, self.head_b, h_new, all)?
            }
        };
        Ok((q, h_new))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agentnet::ActionSpace;
    use crate::envsim::{observe, ChannelStateVector};
    use crate::ndmath::{grad_check, DEFAULT_PERTURBATION};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> (ActionSpace, InputLayout) {
        let space = ActionSpace::new(4, 2).unwrap();
        let layout = InputLayout {
            num_channels: 4,
            num_actions: space.count(),
            num_agents: 3,
        };
        (space, layout)
    }

    #[test]
    fn unsensed_observation_encodes_as_minus_one_block() {
        let (_, layout) = small();
        let input = layout.encode(&Observation::unsensed(4), None, 0).unwrap();
        let dense = input.to_dense();
        for k in 0..4 {
            assert_eq!(&dense[3 * k..3 * k + 3], &[1.0, 0.0, 0.0]);
        }
        // no previous action, identity 0
        assert!(dense[12..18].iter().all(|&v| v == 0.0));
        assert_eq!(&dense[18..], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn encoding_blocks_and_identity() {
        let (space, layout) = small();
        let s = ChannelStateVector::new(vec![1, 0, 1, 0]).unwrap();
        let a = space.unrank(3).unwrap();
        let z = observe(&s, a).unwrap();
        let x0 = layout.encode(&z, Some(a), 0).unwrap();
        let again = layout.encode(&z, Some(a), 0).unwrap();
        assert_eq!(x0, again);
        let x2 = layout.encode(&z, Some(a), 2).unwrap();
        let (d0, d2) = (x0.to_dense(), x2.to_dense());
        let id_start = 12 + space.count();
        for i in 0..id_start {
            assert_eq!(d0[i], d2[i]);
        }
        assert_ne!(d0[id_start..], d2[id_start..]);
        // one hot per channel triple, one in the action block, one in the identity block
        for k in 0..4 {
            assert_eq!(d0[3 * k..3 * k + 3].iter().sum::<f64>(), 1.0);
        }
        assert_eq!(d0[12..id_start].iter().sum::<f64>(), 1.0);
        assert_eq!(d0[12 + 3], 1.0);
        assert!(layout.encode(&z, Some(a), 3).is_err());
        assert!(layout.encode(&Observation::unsensed(5), None, 0).is_err());
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let (_, layout) = small();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let net = AgentNet::register(&mut store, layout, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            let n = store.get(id).len();
            store.set_values(id, &vec![0.0; n]).unwrap();
        }
        let input = layout.encode(&Observation::unsensed(4), None, 1).unwrap();
        let (q, h) = net.forward(&store, &input, &net.initial_hidden()).unwrap();
        assert!(q.iter().all(|&v| v == 0.0));
        assert!(h.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_deterministic_and_record_agrees() {
        let (space, layout) = small();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let net = AgentNet::register(&mut store, layout, &mut rng).unwrap();
        let s = ChannelStateVector::new(vec![0, 1, 1, 0]).unwrap();
        let a = space.unrank(2).unwrap();
        let input = layout.encode(&observe(&s, a).unwrap(), Some(a), 1).unwrap();
        let h0 = net.initial_hidden();
        let (q1, h1) = net.forward(&store, &input, &h0).unwrap();
        let (q2, _) = net.forward(&store, &input, &h0).unwrap();
        assert!(q1.iter().zip(&q2).all(|(a, b)| a.to_bits() == b.to_bits()));

        let mut tape = Tape::new(&store);
        let hv = tape.leaf(h0.0.clone()).unwrap();
        let (q, hn) = net.record(&mut tape, &store, &input, hv, None).unwrap();
        assert_eq!(tape.value(q), q1.as_slice());
        assert_eq!(tape.value(hn), h1.0.as_slice());
        let (qr, _) = net.record(&mut tape, &store, &input, hv, Some(vec![4, 1])).unwrap();
        assert_eq!(tape.value(qr), &[q1[4], q1[1]]);
    }

    /// Q-value head gradient over a 20-slot unroll, against central differences.
    #[test]
    fn unrolled_agent_gradients_match_finite_differences() {
        let (space, layout) = small();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let net = AgentNet::register(&mut store, layout, &mut rng).unwrap();
        let slots = 20;
        let states: Vec<ChannelStateVector> = (0..slots)
            .map(|_| ChannelStateVector::from_idle((0..4).map(|_| rng.random_bool(0.5))))
            .collect();
        let actions: Vec<usize> = (0..slots).map(|_| rng.random_range(0..space.count())).collect();
        let mut inputs = Vec::new();
        let mut prev: Option<(Observation, &SenseAction)> = None;
        for t in 0..slots {
            let input = match &prev {
                None => layout.encode(&Observation::unsensed(4), None, 1).unwrap(),
                Some((z, a)) => layout.encode(z, Some(a), 1).unwrap(),
            };
            inputs.push(input);
            let a = space.unrank(actions[t]).unwrap();
            prev = Some((observe(&states[t], a).unwrap(), a));
        }
        let loss = |s: &ParamStore| -> Result<f64> {
            let mut h = net.initial_hidden();
            let mut total = 0.0;
            for (t, input) in inputs.iter().enumerate() {
                let (q, hn) = net.forward(s, input, &h)?;
                total += q[actions[t]] * (1.0 + t as f64 / 10.0);
                h = hn;
            }
            Ok(total)
        };
        let mut tape = Tape::new(&store);
        let mut h = tape.leaf(vec![0.0; HIDDEN_DIM]).unwrap();
        let mut picked = Vec::new();
        for (t, input) in inputs.iter().enumerate() {
            let (q, hn) = net.record(&mut tape, &store, input, h, Some(vec![actions[t]])).unwrap();
            let scaled = tape.scale(q, 1.0 + t as f64 / 10.0).unwrap();
            picked.push(scaled);
            h = hn;
        }
        let cat = tape.concat(&picked).unwrap();
        let root = tape.sum(cat).unwrap();
        assert!((tape.scalar(root) - loss(&store).unwrap()).abs() < 1e-12);
        tape.backward(&mut store, root, 1.0).unwrap();
        let err = grad_check(loss, &store, DEFAULT_PERTURBATION).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}
