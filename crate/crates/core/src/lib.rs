pub mod agentnet;
pub mod baselines;
pub mod envsim;
pub mod error;
pub mod harness;
pub mod ndmath;
pub mod qmixcore;
pub mod rng;

pub use error::{Category, Error, Result};
