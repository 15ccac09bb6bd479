//! Per-agent machinery: the `C(K, M)` sensing action space, input encoding, the
//! recurrent Q-network shared by all agents and epsilon-greedy exploration.

mod actions;
mod network;
mod policy;

pub use actions::{binomial, ActionSpace, SenseAction, MAX_ACTIONS};
pub use network::{AgentInput, AgentNet, HiddenState, InputLayout, HIDDEN_DIM};
pub use policy::{argmax, epsilon, select_action, EpsilonSchedule};

use crate::envsim::Observation;
use crate::error::Result;

/// Action count and rank/unrank maps for `M`-of-`K` sensing.
pub fn enumerate_actions(num_channels: usize, sensed: usize) -> Result<ActionSpace> {
    ActionSpace::new(num_channels, sensed)
}

pub fn encode_input(
    layout: &InputLayout,
    obs: &Observation,
    last_action: Option<&SenseAction>,
    agent_id: usize,
) -> Result<AgentInput> {
    layout.encode(obs, last_action, agent_id)
}
