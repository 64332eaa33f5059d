//! Goal-conditioned DDPG with hindsight replay for a simulated lever task,
//! plus Shapley-value explanations of the learned policy.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod agent;
pub mod env;
pub mod nn;
pub mod replay;
mod scalar;
pub mod seeds;
pub mod shap;

pub use scalar::Scalar;

pub type Mlp32 = nn::Mlp<f32>;
pub type Mlp64 = nn::Mlp<f64>;
pub type Agent32 = agent::Agent<f32>;
pub type Agent64 = agent::Agent<f64>;
