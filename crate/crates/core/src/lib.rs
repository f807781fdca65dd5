//! Train small reward models on gridworld transitions and audit them.
//!
//! - [`tensor`]: dense MLP with exact parameter and input gradients.
//! - [`gridworld`]: the 11×11 environments, true reward, expert, datasets.
//! - [`learning`]: regression training, oracle networks, checkpoints.
//! - [`interpret`]: gradient and occlusion saliency, heatmap output.
//! - [`counterfactual`]: edited-transition probes and reward time series.
//! - [`planning`]: value iteration, policy rollouts, transfer experiments.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default); see [`exec::Exec`].

pub mod counterfactual;
pub mod error;
pub mod exec;
pub mod gridworld;
pub mod interpret;
pub mod learning;
pub mod planning;
pub mod tensor;

pub use error::{Error, Result};
pub use exec::Exec;
pub use gridworld::{Action, EnvKind, EnvSpec, EnvState, Grid, Transition};
pub use tensor::RewardNet;
