//! Dense feed-forward networks with reverse-mode gradients, Adam and
//! Polyak target tracking.

mod adam;
mod checkpoint;
mod mlp;

pub use adam::AdamState;
pub use checkpoint::{MlpRecord, MLP_FORMAT_VERSION};
pub use mlp::{Activation, ForwardCache, Mlp, ParamGrads};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("activation cache does not belong to this network state")]
    StaleCache,
    #[error("non-finite gradient; update refused")]
    PoisonedUpdate,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint load failed: {0}")]
    Load(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
