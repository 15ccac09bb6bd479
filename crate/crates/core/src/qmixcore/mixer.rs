use rand::Rng;

use crate::envsim::ChannelStateVector;
use crate::error::{config, Result};
use crate::ndmath::{self, Activation, ParamId, ParamStore, Tape, Var};

/// Width of the mixing network's hidden layer.
pub const MIXING_EMBED: usize = 32;
/// Width of the hidden layer inside each hypernetwork head.
pub const HYPER_HIDDEN: usize = 32;

/// The mixer's view of the environment: true occupancy of every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState(Vec<f64>);

impl GlobalState {
    pub fn new(values: Vec<f64>) -> Self {
        GlobalState(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<&ChannelStateVector> for GlobalState {
    fn from(s: &ChannelStateVector) -> Self {
        GlobalState(s.to_f64())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Head {
    hidden_w: ParamId,
    hidden_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Mixing weights emitted by the hypernetwork for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingParams {
    /// `[N, 32]` row-major, non-negative.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `[32]`, non-negative.
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MixingParams {
    /// `w2 . elu(W1^T q + b1) + b2`. `q` must have one entry per agent.
    pub fn mix(&self, q: &[f64]) -> f64 {
        let mut total = self.b2;
        for j in 0..MIXING_EMBED {
            let mut pre = self.b1[j];
            for (n, v) in q.iter().enumerate() {
                pre += self.w1[n * MIXING_EMBED + j] * v;
            }
            total += self.w2[j] * Activation::Elu.apply(pre);
        }
        total
    }
}

/// State-conditioned monotonic mixer:
/// `Q_tot = w2 . elu(W1^T q + b1) + b2`, with `W1 = |hyper_w1(s)|` and `w2 = |hyper_w2(s)|`.
///
/// `W1`, `w2` and `b2` come from two-layer heads (`state -> 32 -> ReLU -> out`); `b1` is a
/// single linear layer of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixer {
    num_agents: usize,
    state_dim: usize,
    w1: Head,
    w2: Head,
    b2: Head,
    b1_w: ParamId,
    b1_b: ParamId,
}

impl Mixer {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        num_agents: usize,
        state_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut head = |name: &str, out: usize, store: &mut ParamStore| -> Result<Head> {
            Ok(Head {
                hidden_w: store.add_weight(format!("mixer.{name}.hidden.weight"), HYPER_HIDDEN, state_dim, rng)?,
                hidden_b: store.add_bias(format!("mixer.{name}.hidden.bias"), HYPER_HIDDEN)?,
                out_w: store.add_weight(format!("mixer.{name}.out.weight"), out, HYPER_HIDDEN, rng)?,
                out_b: store.add_bias(format!("mixer.{name}.out.bias"), out)?,
            })
        };
        let w1 = head("hyper_w1", num_agents * MIXING_EMBED, store)?;
        let w2 = head("hyper_w2", MIXING_EMBED, store)?;
        let b2 = head("hyper_b2", 1, store)?;
        let b1_w = store.add_weight("mixer.hyper_b1.weight", MIXING_EMBED, state_dim, rng)?;
        let b1_b = store.add_bias("mixer.hyper_b1.bias", MIXING_EMBED)?;
        Ok(Mixer {
            num_agents,
            state_dim,
            w1,
            w2,
            b2,
            b1_w,
            b1_b,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for h in [self.w1, self.w2, self.b2] {
            ids.extend([h.hidden_w, h.hidden_b, h.out_w, h.out_b]);
        }
        ids.extend([self.b1_w, self.b1_b]);
        ids
    }

    fn check_state(&self, state: &GlobalState) -> Result<()> {
        if state.len() != self.state_dim {
            return config(format!(
                "global state has {} entries, mixer expects {}",
                state.len(),
                self.state_dim
            ));
        }
        Ok(())
    }

    fn head_forward(store: &ParamStore, head: Head, s: &[f64]) -> Result<Vec<f64>> {
        let h = ndmath::dense_forward(s, store.get(head.hidden_w), store.get(head.hidden_b))?;
        let h = ndmath::activation(Activation::Relu, &h);
        ndmath::dense_forward(&h, store.get(head.out_w), store.get(head.out_b))
    }

    pub fn mixing_params(&self, store: &ParamStore, state: &GlobalState) -> Result<MixingParams> {
        self.check_state(state)?;
        let s = state.values();
        let abs = |v: Vec<f64>| v.into_iter().map(f64::abs).collect::<Vec<_>>();
        Ok(MixingParams {
            w1: abs(Self::head_forward(store, self.w1, s)?),
            b1: ndmath::dense_forward(s, store.get(self.b1_w), store.get(self.b1_b))?,
            w2: abs(Self::head_forward(store, self.w2, s)?),
            b2: Self::head_forward(store, self.b2, s)?[0],
        })
    }

    /// `Q_tot` without recording gradients.
    pub fn forward(&self, store: &ParamStore, agent_qs: &[f64], state: &GlobalState) -> Result<f64> {
        if agent_qs.len() != self.num_agents {
            return config(format!(
                "mixer expects {} agent values, got {}",
                self.num_agents,
                agent_qs.len()
            ));
        }
        let total = self.mixing_params(store, state)?.mix(agent_qs);
        if !total.is_finite() {
            return Err(crate::Error::NonFinite("mix"));
        }
        Ok(total)
    }

    fn head_record(tape: &mut Tape, store: &ParamStore, head: Head, s: Var) -> Result<Var> {
        let h = tape.dense(store, head.hidden_w, head.hidden_b, s)?;
        let h = tape.activation(Activation::Relu, h)?;
        tape.dense(store, head.out_w, head.out_b, h)
    }

    /// Records `Q_tot` for the agent values held in `agent_qs` (length `N`).
    pub fn record(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        agent_qs: Var,
        state: &GlobalState,
    ) -> Result<Var> {
        self.check_state(state)?;
        if tape.value(agent_qs).len() != self.num_agents {
            return config("mixer input length does not match the number of agents");
        }
        let s = tape.leaf(state.values().to_vec())?;
        let w1 = Self::head_record(tape, store, self.w1, s)?;
        let w1 = tape.abs(w1)?;
        let b1 = tape.dense(store, self.b1_w, self.b1_b, s)?;
        let pre = tape.matvec_t(w1, self.num_agents, MIXING_EMBED, agent_qs)?;
        let pre = tape.add(pre, b1)?;
        let hidden = tape.activation(Activation::Elu, pre)?;
        let w2 = Self::head_record(tape, store, self.w2, s)?;
        let w2 = tape.abs(w2)?;
        let out = tape.matvec_t(w2, MIXING_EMBED, 1, hidden)?;
        let b2 = Self::head_record(tape, store, self.b2, s)?;
        tape.add(out, b2)
    }
}

/// Free-function form of [`Mixer::forward`].
pub fn mix(mixer: &Mixer, store: &ParamStore, agent_qs: &[f64], state: &GlobalState) -> Result<f64> {
    mixer.forward(store, agent_qs, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::{grad_check, DEFAULT_PERTURBATION};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mixer(n: usize, k: usize, seed: u64) -> (Mixer, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mixer = Mixer::register(&mut store, n, k, &mut rng).unwrap();
        // non-zero biases so every path carries signal
        for id in store.ids().collect::<Vec<_>>() {
            if store.get(id).shape().len() == 1 {
                let v: Vec<f64> = (0..store.get(id).len()).map(|_| rng.random_range(-0.5..0.5)).collect();
                store.set_values(id, &v).unwrap();
            }
        }
        (mixer, store)
    }

    fn random_state(k: usize, rng: &mut ChaCha8Rng) -> GlobalState {
        GlobalState::new((0..k).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect())
    }

    #[test]
    fn zero_network_mixes_to_zero() {
        let (mixer, mut store) = random_mixer(3, 5, 1);
        for id in store.ids().collect::<Vec<_>>() {
            let n = store.get(id).len();
            store.set_values(id, &vec![0.0; n]).unwrap();
        }
        let s = GlobalState::new(vec![1.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(mixer.forward(&store, &[3.0, -2.0, 7.5], &s).unwrap(), 0.0);
    }

    #[test]
    fn emitted_weights_are_non_negative() {
        let (mixer, store) = random_mixer(4, 6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = mixer.mixing_params(&store, &random_state(6, &mut rng)).unwrap();
            assert!(p.w1.iter().all(|&w| w >= 0.0));
            assert!(p.w2.iter().all(|&w| w >= 0.0));
            assert_eq!(p.w1.len(), 4 * MIXING_EMBED);
        }
    }

    #[test]
    fn record_matches_forward_and_gradients_check() {
        let (mixer, mut store) = random_mixer(3, 4, 5);
        let s = GlobalState::new(vec![1.0, 0.0, 1.0, 1.0]);
        let qs = [0.4, -1.3, 2.2];
        let expect = mixer.forward(&store, &qs, &s).unwrap();
        let mut tape = Tape::new(&store);
        let q = tape.leaf(qs.to_vec()).unwrap();
        let out = mixer.record(&mut tape, &store, q, &s).unwrap();
        assert!((tape.scalar(out) - expect).abs() < 1e-12);
        tape.backward(&mut store, out, 1.0).unwrap();
        let err = grad_check(|p| mixer.forward(p, &qs, &s), &store, DEFAULT_PERTURBATION).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let (mixer, store) = random_mixer(2, 3, 5);
        let s = GlobalState::new(vec![1.0, 0.0, 1.0]);
        assert!(mixer.forward(&store, &[1.0], &s).is_err());
        let bad = GlobalState::new(vec![1.0]);
        let err = mixer.forward(&store, &[1.0, 2.0], &bad).unwrap_err();
        assert_eq!(err.category(), crate::Category::Configuration);
    }

    #[test]
    fn finite_difference_slopes_are_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        for probe in 0..1000u64 {
            let n = 1 + (probe % 6) as usize;
            let (mixer, store) = random_mixer(n, 4, 5000 + probe);
            let s = random_state(4, &mut rng);
            let qs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            for who in 0..n {
                let mut up = qs.clone();
                let mut down = qs.clone();
                up[who] += h;
                down[who] -= h;
                let slope = (mixer.forward(&store, &up, &s).unwrap()
                    - mixer.forward(&store, &down, &s).unwrap())
                    / (2.0 * h);
                assert!(slope >= -1e-9, "probe {probe} agent {who}: {slope}");
            }
        }
    }

    #[test]
    fn raising_any_agent_value_never_lowers_the_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for probe in 0..1000u64 {
            let n = 1 + (probe % 6) as usize;
            let (mixer, store) = random_mixer(n, 5, 100 + probe);
            let s = random_state(5, &mut rng);
            let qs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let base = mixer.forward(&store, &qs, &s).unwrap();
            let who = rng.random_range(0..n);
            let mut up = qs.clone();
            up[who] += 1.0;
            assert!(mixer.forward(&store, &up, &s).unwrap() >= base);
        }
    }
}
