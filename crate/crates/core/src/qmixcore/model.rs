use rand::Rng;

use super::mixer::Mixer;
use crate::agentnet::{ActionSpace, AgentInput, AgentNet, InputLayout};
use crate::error::{usage, Result};
use crate::ndmath::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub num_channels: usize,
    pub sensed: usize,
    pub num_agents: usize,
}

/// The shared agent network plus, for QMIX, the mixer, all registered in one store.
#[derive(Debug, Clone, PartialEq)]
pub struct QmixModel {
    dims: ModelDims,
    space: ActionSpace,
    agent: AgentNet,
    mixer: Option<Mixer>,
}

impl QmixModel {
    /// Registers fresh parameters. The store layout depends only on `dims` and
    /// `with_mixer`, so rebuilding yields a model equal to `self`.
    pub fn build<R: Rng + ?Sized>(
        dims: ModelDims,
        with_mixer: bool,
        rng: &mut R,
    ) -> Result<(Self, ParamStore)> {
        if dims.num_agents == 0 {
            return crate::error::config("at least one agent is required");
        }
        let space = ActionSpace::new(dims.num_channels, dims.sensed)?;
        let layout = InputLayout {
            num_channels: dims.num_channels,
            num_actions: space.count(),
            num_agents: dims.num_agents,
        };
        let mut store = ParamStore::new();
        let agent = AgentNet::register(&mut store, layout, rng)?;
        let mixer = if with_mixer {
            Some(Mixer::register(&mut store, dims.num_agents, dims.num_channels, rng)?)
        } else {
            None
        };
        Ok((
            QmixModel {
                dims,
                space,
                agent,
                mixer,
            },
            store,
        ))
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn layout(&self) -> InputLayout {
        self.agent.layout()
    }

    pub fn agent(&self) -> &AgentNet {
        &self.agent
    }

    pub fn mixer(&self) -> Option<&Mixer> {
        self.mixer.as_ref()
    }

    pub(crate) fn require_mixer(&self) -> Result<&Mixer> {
        match &self.mixer {
            Some(m) => Ok(m),
            None => usage("this model was built without a mixing network"),
        }
    }

    /// All-action Q-values of one agent along an input sequence, hidden state from zero.
    /// Slot 0 is left empty when `skip_first` is set.
    pub fn unroll(
        &self,
        store: &ParamStore,
        inputs: &[AgentInput],
        skip_first: bool,
    ) -> Result<Vec<Vec<f64>>> {
        let mut h = self.agent.initial_hidden();
        let mut out = Vec::with_capacity(inputs.len());
        for (t, x) in inputs.iter().enumerate() {
            if t == 0 && skip_first {
                h = self.agent.hidden_step(store, x, &h)?;
                out.push(Vec::new());
            } else {
                let (q, h_new) = self.agent.forward(store, x, &h)?;
                h = h_new;
                out.push(q);
            }
        }
        Ok(out)
    }
}
